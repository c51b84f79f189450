#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "vitol/attribution.hpp"

using namespace vitol;
using vitol::testing::random_tensor;

namespace {

// Random row-stochastic h x s x s stack entry.
Tensor random_attention(std::size_t h, std::size_t s, std::uint64_t seed) {
    Tensor a = random_tensor({h, s, s}, seed, 0.01, 1.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double sum = 0;
        for (double v : a.row(r)) sum += v;
        for (double& v : a.row(r)) v /= sum;
    }
    return a;
}

Tensor identity_block(std::size_t h, std::size_t s) {
    Tensor a({h, s, s});
    for (std::size_t k = 0; k < h; ++k)
        for (std::size_t i = 0; i < s; ++i) a.at(k, i, i) = 1.0;
    return a;
}

Tensor eye(std::size_t s) {
    Tensor a({s, s});
    for (std::size_t i = 0; i < s; ++i) a.at(i, i) = 1.0;
    return a;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.dim(0);
    Tensor c({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) c.at(i, j) += a.at(i, k) * b.at(k, j);
    return c;
}

// Scalar-by-scalar evaluation of one factor: normalize(I + mean_h(max(0, g * w))).
Tensor hand_factor(const Tensor& w, const Tensor& g) {
    const std::size_t h = w.dim(0), s = w.dim(1);
    Tensor f({s, s});
    for (std::size_t i = 0; i < s; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < s; ++j) {
            double m = 0;
            for (std::size_t k = 0; k < h; ++k) m += std::max(0.0, g.at(k, i, j) * w.at(k, i, j));
            f.at(i, j) = m / h + (i == j ? 1.0 : 0.0);
            sum += f.at(i, j);
        }
        for (std::size_t j = 0; j < s; ++j) f.at(i, j) /= sum;
    }
    return f;
}

void expect_row_stochastic(const Tensor& m, double tol = 1e-9) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double sum = 0;
        for (double v : m.row(r)) {
            EXPECT_GE(v, 0.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, tol);
    }
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << i;
}

}  // namespace

TEST(AttentionRollout, IdentityAttentionGivesIdentity) {
    const Tensor r = attention_rollout({identity_block(2, 4)});
    expect_near(r, eye(4), 0.0);
}

TEST(AttentionRollout, TwoBlockHandProduct) {
    const Tensor first({1, 2, 2}, std::vector<double>{0, 1, 0, 1});
    const Tensor r = attention_rollout({first, identity_block(1, 2)});
    expect_near(r, Tensor::from_rows({{0.5, 0.5}, {0, 1}}), 1e-15);
}

TEST(AttentionRollout, MatchesExplicitProductDeepestLeft) {
    const AttentionStack stack{random_attention(3, 5, 1), random_attention(3, 5, 2),
                               random_attention(3, 5, 3)};
    const Tensor ones({3, 5, 5}, 1.0);
    Tensor expected = hand_factor(stack[0], ones);
    for (std::size_t b = 1; b < stack.size(); ++b) {
        expected = naive_matmul(hand_factor(stack[b], ones), expected);
    }
    const Tensor r = attention_rollout(stack);
    expect_near(r, expected, 1e-14);
    expect_row_stochastic(r);
}

TEST(GradAttentionRollout, SinglePositiveEntryHandCase) {
    const Tensor m({1, 3, 3}, std::vector<double>{.2, .5, .3, .1, .8, .1, .3, .3, .4});
    Tensor g({1, 3, 3}, -1.0);
    g.at(0, 0, 2) = 2.0;
    const Tensor r = grad_attention_rollout({m}, {g});
    EXPECT_NEAR(r.at(0, 0), 0.625, 1e-15);
    EXPECT_NEAR(r.at(0, 1), 0.0, 1e-15);
    EXPECT_NEAR(r.at(0, 2), 0.375, 1e-15);
    EXPECT_EQ(r.at(1, 1), 1.0);
}

TEST(GradAttentionRollout, FullClampGivesIdentityAndZeroMap) {
    const AttentionStack stack{random_attention(2, 5, 4), random_attention(2, 5, 5)};
    const GradStack grads{random_tensor({2, 5, 5}, 6, -2.0, 0.0),
                          random_tensor({2, 5, 5}, 7, -2.0, 0.0)};
    const Tensor r = grad_attention_rollout(stack, grads);
    expect_near(r, eye(5), 0.0);
    const LocalizationMap map = extract_cls_map(r);
    for (double v : map.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(GradAttentionRollout, UnitGradientsReduceToPlainRollout) {
    const AttentionStack stack{random_attention(4, 10, 8), random_attention(4, 10, 9)};
    const GradStack ones(2, Tensor({4, 10, 10}, 1.0));
    expect_near(grad_attention_rollout(stack, ones), attention_rollout(stack), 1e-15);
}

TEST(GradAttentionRollout, MatchesHandFactorsOnRandomStacks) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const AttentionStack stack{random_attention(2, 5, seed), random_attention(2, 5, seed + 50)};
        const GradStack grads{random_tensor({2, 5, 5}, seed + 100),
                              random_tensor({2, 5, 5}, seed + 150)};
        const Tensor expected =
            naive_matmul(hand_factor(stack[1], grads[1]), hand_factor(stack[0], grads[0]));
        const Tensor r = grad_attention_rollout(stack, grads);
        expect_near(r, expected, 1e-14);
        expect_row_stochastic(r);
    }
}

TEST(GradAttentionRollout, ShapeMismatchThrows) {
    EXPECT_THROW(grad_attention_rollout({random_attention(2, 5, 1)}, {Tensor({2, 4, 4})}),
                 std::invalid_argument);
    EXPECT_THROW(grad_attention_rollout({random_attention(2, 5, 1)}, {}), std::invalid_argument);
    EXPECT_THROW(attention_rollout({}), std::invalid_argument);
}

TEST(RolloutFactor, RowStochasticAndPositivePartScalesLinearly) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Tensor w = random_attention(3, 6, seed);
        const Tensor g = random_tensor({3, 6, 6}, seed + 300, -3, 3);
        expect_row_stochastic(rollout_factor(w, &g, {}), 1e-12);
        expect_row_stochastic(rollout_factor(w, nullptr, {}), 1e-12);

        // Without normalization the factor is I + positive part, which scales with c.
        const RolloutOptions raw{true, false};
        Tensor scaled = g;
        for (double& v : scaled.data()) v *= 2.5;
        const Tensor base = rollout_factor(w, &g, raw), big = rollout_factor(w, &scaled, raw);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j) {
                const double eye = i == j ? 1.0 : 0.0;
                EXPECT_NEAR(big.at(i, j) - eye, 2.5 * (base.at(i, j) - eye), 1e-14);
            }
    }
}

TEST(RolloutFactor, ClampAfterMeanDiffersFromBefore) {
    Tensor w({2, 2, 2}, 0.5);
    Tensor g({2, 2, 2});
    g.at(0, 0, 1) = 1.0;
    g.at(1, 0, 1) = -3.0;
    const Tensor before = rollout_factor(w, &g, {true, false});
    const Tensor after = rollout_factor(w, &g, {false, false});
    EXPECT_DOUBLE_EQ(before.at(0, 1), 0.25);
    EXPECT_DOUBLE_EQ(after.at(0, 1), 0.0);
}

TEST(RelevanceRollout, EqualsGarWhenRelevanceIsAttention) {
    const AttentionStack stack{random_attention(2, 5, 20), random_attention(2, 5, 21)};
    const GradStack grads{random_tensor({2, 5, 5}, 22), random_tensor({2, 5, 5}, 23)};
    EXPECT_EQ(relevance_rollout(grads, stack), grad_attention_rollout(stack, grads));
}

TEST(RelevanceRollout, ZeroRelevanceGivesZeroMap) {
    const GradStack grads{random_tensor({2, 5, 5}, 24)};
    const Tensor r = relevance_rollout(grads, {Tensor({2, 5, 5})});
    const LocalizationMap map = extract_cls_map(r);
    for (double v : map.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(RelevanceRollout, SingleBlockHandEvaluation) {
    const Tensor rel = random_tensor({3, 5, 5}, 25, -1, 1);
    const Tensor g = random_tensor({3, 5, 5}, 26, -1, 1);
    expect_near(relevance_rollout({g}, {rel}), hand_factor(rel, g), 1e-15);
}

TEST(RelevanceRollout, MissingStackThrows) {
    EXPECT_THROW(relevance_rollout({Tensor({1, 5, 5})}, {}), std::invalid_argument);
}

TEST(ExtractClsMap, Examples) {
    Tensor r({5, 5});
    const double row0[] = {0.2, 0.1, 0.3, 0.25, 0.15};
    for (std::size_t j = 0; j < 5; ++j) r.at(0, j) = row0[j];
    const LocalizationMap m = extract_cls_map(r, MapSource::ar, 3);
    EXPECT_EQ(m.values, Tensor::from_rows({{0.1, 0.3}, {0.25, 0.15}}));
    EXPECT_EQ(m.source, MapSource::ar);
    EXPECT_EQ(m.target_class, 3u);
    EXPECT_EQ(m.grid(), 2u);
    EXPECT_EQ(extract_cls_map(Tensor({197, 197})).grid(), 14u);
    EXPECT_THROW(extract_cls_map(Tensor({11, 11})), std::invalid_argument);
    EXPECT_THROW(extract_cls_map(Tensor({5, 4})), std::invalid_argument);
}

TEST(UpsampleMap, AlignedCornersRamp) {
    const Tensor up = upsample_map(Tensor::from_rows({{0, 1}, {0, 1}}), 4);
    ASSERT_EQ(up.shape(), (std::vector<std::size_t>{4, 4}));
    for (std::size_t y = 0; y < 4; ++y) {
        EXPECT_NEAR(up.at(y, 0), 0.0, 1e-15);
        EXPECT_NEAR(up.at(y, 1), 1.0 / 3, 1e-15);
        EXPECT_NEAR(up.at(y, 2), 2.0 / 3, 1e-15);
        EXPECT_NEAR(up.at(y, 3), 1.0, 1e-15);
    }
}

TEST(UpsampleMap, ConstantsAndMonotonicity) {
    for (std::size_t size : {3u, 7u, 64u}) {
        const Tensor up = upsample_map(Tensor({3, 3}, 0.42), size);
        for (double v : up.data()) EXPECT_NEAR(v, 0.42, 1e-15);
    }
    Tensor ramp({4, 4});
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) ramp.at(y, x) = static_cast<double>(y * y + 3 * x);
    const Tensor up = upsample_map(ramp, 37);
    for (std::size_t y = 0; y < 37; ++y)
        for (std::size_t x = 1; x < 37; ++x) {
            EXPECT_GE(up.at(y, x), up.at(y, x - 1));
            EXPECT_GE(up.at(x, y), up.at(x - 1, y));
        }
    EXPECT_EQ(upsample_map(ramp, 4), ramp);
    EXPECT_THROW(upsample_map(ramp, 3), std::invalid_argument);
    EXPECT_THROW(upsample_map(Tensor({2, 3}), 8), std::invalid_argument);
}

TEST(LocalizationMap, ArIgnoresTargetClassGarDoesNot) {
    ModelConfig c = ModelConfig::toy();
    c.image_size = 16;
    const VisionTransformer model(c);
    const Tensor img = random_tensor({16, 16, 3}, 27, 0, 1);
    ForwardResult r0 = model.forward(img), r1 = model.forward(img);
    const LocalizationMap ar0 = localization_map(r0, AttributionMethod::ar, 0);
    const LocalizationMap ar1 = localization_map(r1, AttributionMethod::ar, 1);
    EXPECT_EQ(ar0.values, ar1.values);
    EXPECT_EQ(ar0.source, MapSource::ar);
    const LocalizationMap g0 = localization_map(r0, AttributionMethod::gar, 0);
    const LocalizationMap g1 = localization_map(r1, AttributionMethod::gar, 1);
    EXPECT_NE(g0.values, g1.values);
    EXPECT_EQ(g0.grid(), 4u);
    EXPECT_EQ(g1.target_class, 1u);
    EXPECT_TRUE(g0.values.all_finite());
}
