#include <gtest/gtest.h>

#include <algorithm>
#include <deque>

#include "test_support.hpp"
#include "vitol/metrics.hpp"
#include "vitol/rng.hpp"

using namespace vitol;
using vitol::testing::random_tensor;

namespace {

BinaryMask random_mask(std::size_t h, std::size_t w, double p, std::uint64_t seed) {
    Rng rng(seed);
    BinaryMask m(h, w);
    for (auto& b : m.bits) b = rng.uniform() < p;
    return m;
}

struct Blob {
    std::size_t area = 0;
    int x0, y0, x1, y1;
};

// Breadth-first flood fill in raster order of seeds.
std::vector<Blob> flood_fill(const BinaryMask& m) {
    std::vector<int> seen(m.bits.size(), 0);
    std::vector<Blob> out;
    for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) {
            if (!m.at(y, x) || seen[y * m.width + x]) continue;
            Blob b{0, int(x), int(y), int(x) + 1, int(y) + 1};
            std::deque<std::pair<int, int>> q{{int(y), int(x)}};
            seen[y * m.width + x] = 1;
            while (!q.empty()) {
                const auto [cy, cx] = q.front();
                q.pop_front();
                ++b.area;
                b.x0 = std::min(b.x0, cx);
                b.y0 = std::min(b.y0, cy);
                b.x1 = std::max(b.x1, cx + 1);
                b.y1 = std::max(b.y1, cy + 1);
                const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || nx < 0 || ny >= int(m.height) || nx >= int(m.width)) continue;
                    const std::size_t idx = std::size_t(ny) * m.width + std::size_t(nx);
                    if (m.bits[idx] && !seen[idx]) {
                        seen[idx] = 1;
                        q.push_back({ny, nx});
                    }
                }
            }
            out.push_back(b);
        }
    }
    return out;
}

// IoU by counting pixels on a grid.
double pixel_iou(const BBox& a, const BBox& b) {
    long inter = 0, uni = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const bool in_a = x >= a.x0 && x < a.x1 && y >= a.y0 && y < a.y1;
            const bool in_b = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
            inter += in_a && in_b;
            uni += in_a || in_b;
        }
    return uni ? double(inter) / double(uni) : 0.0;
}

// Brute force accuracy: threshold, flood fill, largest blob, pixel IoU.
double oracle_box_acc(const std::vector<Prediction>& preds, double delta, double tau) {
    int hits = 0;
    for (const Prediction& p : preds) {
        BinaryMask m(p.map.dim(0), p.map.dim(1));
        for (std::size_t i = 0; i < p.map.size(); ++i) m.bits[i] = p.map[i] > tau;
        const auto blobs = flood_fill(m);
        if (blobs.empty()) continue;
        Blob best = blobs[0];
        for (const Blob& b : blobs)
            if (b.area > best.area) best = b;
        const BBox box{best.x0, best.y0, best.x1, best.y1};
        bool ok = false;
        for (const BBox& gt : p.gt_boxes) ok |= pixel_iou(box, gt) > delta;
        hits += ok;
    }
    return 100.0 * hits / double(preds.size());
}

Tensor box_map(std::size_t size, const BBox& b, double inside = 1.0) {
    Tensor m({size, size});
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) m.at(std::size_t(y), std::size_t(x)) = inside;
    return m;
}

Prediction make_pred(Tensor map, std::vector<BBox> gt, std::size_t predicted = 0,
                     std::size_t label = 0) {
    return {"img", std::move(map), predicted, label, std::move(gt)};
}

// Smooth random maps over a 32 x 32 image with random ground truth.
std::vector<Prediction> random_set(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Prediction> preds;
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor coarse = random_tensor({4, 4}, seed * 100 + i, 0, 1);
        Tensor map({32, 32});
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x) map.at(y, x) = coarse.at(y / 8, x / 8);
        const int x0 = int(rng.below(20)), y0 = int(rng.below(20));
        const BBox gt{x0, y0, x0 + 4 + int(rng.below(10)), y0 + 4 + int(rng.below(10))};
        preds.push_back(make_pred(normalize_map(map), {gt}, rng.below(3), rng.below(3)));
    }
    return preds;
}

}  // namespace

TEST(NormalizeMap, Examples) {
    EXPECT_EQ(normalize_map(Tensor::from_rows({{1, 3}})), Tensor::from_rows({{0, 1}}));
    EXPECT_EQ(normalize_map(Tensor({3, 3}, 7.0)), Tensor({3, 3}));
}

TEST(NormalizeMap, AffineInvariant) {
    const Tensor m = random_tensor({6, 6}, 1);
    Tensor shifted = m;
    for (double& v : shifted.data()) v = 3.5 * v - 2.0;
    const Tensor a = normalize_map(m), b = normalize_map(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a[i], b[i], 1e-14);
        EXPECT_GE(a[i], 0.0);
        EXPECT_LE(a[i], 1.0);
    }
}

TEST(Binarize, ExamplesAndMonotonicity) {
    const BinaryMask m = binarize(Tensor::from_rows({{0.4, 0.6}}), 0.5);
    EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{0, 1}));
    EXPECT_EQ(binarize(Tensor::from_rows({{0.0, 1e-9}}), 0.0).bits,
              (std::vector<std::uint8_t>{0, 1}));
    const Tensor map = random_tensor({10, 10}, 2, 0, 1);
    BinaryMask prev = binarize(map, 0.0);
    for (double tau : threshold_grid(32)) {
        const BinaryMask cur = binarize(map, tau);
        for (std::size_t i = 0; i < cur.bits.size(); ++i) EXPECT_LE(cur.bits[i], prev.bits[i]);
        prev = cur;
    }
}

TEST(ConnectedComponents, Examples) {
    BinaryMask rect(8, 8);
    for (std::size_t y = 1; y < 4; ++y)
        for (std::size_t x = 2; x < 7; ++x) rect.at(y, x) = 1;
    const auto one = connected_components(rect);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].area, 15u);
    EXPECT_EQ(one[0].box, (BBox{2, 1, 7, 4}));

    BinaryMask diag(2, 2);
    diag.at(0, 0) = diag.at(1, 1) = 1;
    EXPECT_EQ(connected_components(diag).size(), 2u);
    EXPECT_TRUE(connected_components(BinaryMask(4, 4)).empty());
}

TEST(ConnectedComponents, MatchesFloodFill) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const BinaryMask m = random_mask(16, 16, 0.3 + 0.01 * double(seed), seed);
        const auto comps = connected_components(m);
        const auto blobs = flood_fill(m);
        ASSERT_EQ(comps.size(), blobs.size()) << seed;
        for (std::size_t i = 0; i < comps.size(); ++i) {
            EXPECT_EQ(comps[i].area, blobs[i].area);
            EXPECT_EQ(comps[i].box, (BBox{blobs[i].x0, blobs[i].y0, blobs[i].x1, blobs[i].y1}));
        }
    }
}

TEST(BoxFromMask, Examples) {
    BinaryMask m(10, 10);
    for (std::size_t y = 2; y <= 5; ++y)
        for (std::size_t x = 3; x <= 7; ++x) m.at(y, x) = 1;
    EXPECT_EQ(box_from_mask(m), (BBox{3, 2, 8, 6}));
    EXPECT_FALSE(box_from_mask(BinaryMask(5, 5)).has_value());

    BinaryMask two(10, 10);
    for (std::size_t x = 0; x < 5; ++x) two.at(0, x) = 1;
    for (std::size_t y = 5; y < 8; ++y)
        for (std::size_t x = 5; x < 8; ++x) two.at(y, x) = 1;
    EXPECT_EQ(box_from_mask(two), (BBox{5, 5, 8, 8}));

    BinaryMask tie(4, 4);
    tie.at(3, 3) = tie.at(0, 0) = 1;
    EXPECT_EQ(box_from_mask(tie), (BBox{0, 0, 1, 1}));
}

TEST(Iou, ExamplesAndSymmetry) {
    const BBox a{0, 0, 10, 10}, b{5, 0, 15, 10}, c{20, 20, 30, 30};
    EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3);
    EXPECT_EQ(iou(a, a), 1.0);
    EXPECT_EQ(iou(a, c), 0.0);
    EXPECT_EQ(iou(a, BBox{10, 0, 20, 10}), 0.0);
    Rng rng(3);
    for (int t = 0; t < 300; ++t) {
        const int x0 = int(rng.below(40)), y0 = int(rng.below(40));
        const int u0 = int(rng.below(40)), v0 = int(rng.below(40));
        const BBox p{x0, y0, x0 + 1 + int(rng.below(20)), y0 + 1 + int(rng.below(20))};
        const BBox q{u0, v0, u0 + 1 + int(rng.below(20)), v0 + 1 + int(rng.below(20))};
        EXPECT_EQ(iou(p, q), iou(q, p));
        EXPECT_NEAR(iou(p, q), pixel_iou(p, q), 1e-15);
    }
}

TEST(BoxAcc, PerfectAndEmptyPredictions) {
    const BBox gt{4, 4, 12, 10};
    const std::vector<Prediction> perfect{make_pred(box_map(16, gt), {gt})};
    for (double delta : kIouThresholds) EXPECT_EQ(box_acc(perfect, delta, 0.5), 100.0);
    const std::vector<Prediction> mixed{make_pred(box_map(16, gt), {gt}),
                                        make_pred(Tensor({16, 16}), {gt})};
    EXPECT_EQ(box_acc(mixed, 0.5, 0.5), 50.0);
    EXPECT_THROW(box_acc({}, 0.5, 0.5), std::invalid_argument);
}

TEST(BoxAcc, AnyGroundTruthBoxCounts) {
    const BBox other{0, 0, 3, 3}, gt{8, 8, 14, 14};
    const std::vector<Prediction> p{make_pred(box_map(16, gt), {other, gt})};
    EXPECT_EQ(box_acc(p, 0.7, 0.5), 100.0);
}

TEST(BoxAcc, MatchesBruteForceOracle) {
    const auto preds = random_set(12, 4);
    for (double delta : kIouThresholds) {
        for (double tau : threshold_grid(16)) {
            EXPECT_NEAR(box_acc(preds, delta, tau), oracle_box_acc(preds, delta, tau), 1e-12)
                << delta << " " << tau;
        }
    }
}

TEST(BoxAcc, BestComponentPolicyNeverWorse) {
    const auto preds = random_set(12, 5);
    for (double delta : kIouThresholds)
        for (double tau : threshold_grid(16))
            EXPECT_GE(box_acc(preds, delta, tau, ComponentPolicy::best), box_acc(preds, delta, tau));
}

TEST(ThresholdGrid, Values) {
    const auto g = threshold_grid(4);
    EXPECT_EQ(g, (std::vector<double>{0, 0.25, 0.5, 0.75}));
    EXPECT_EQ(threshold_grid(128).back(), 127.0 / 128);
}

TEST(MaxBoxAccV2, PublishedAggregates) {
    EXPECT_NEAR(aggregate_max_box_acc({86.95, 71.32, 49.25}), 69.17, 0.005);
    EXPECT_NEAR(aggregate_max_box_acc({96.68, 80.89, 39.69}), 72.42, 0.005);
}

TEST(MaxBoxAccV2, PerfectAndDisjointSets) {
    const BBox gt{2, 2, 10, 10};
    const std::vector<Prediction> perfect{make_pred(box_map(16, gt), {gt})};
    const auto grid = threshold_grid(128);
    const EvalReport r = max_box_acc_v2(perfect, grid);
    EXPECT_EQ(r.max_box_acc_v2, 100.0);
    const std::vector<Prediction> disjoint{make_pred(box_map(16, {12, 12, 16, 16}), {gt})};
    EXPECT_EQ(max_box_acc_v2(disjoint, grid).max_box_acc_v2, 0.0);
    EXPECT_EQ(gt_known(disjoint, grid), 0.0);
}

TEST(MaxBoxAccV2, MatchesOracleAndStoresMean) {
    const auto preds = random_set(15, 6);
    const auto grid = threshold_grid(16);
    const EvalReport r = max_box_acc_v2(preds, grid);
    for (std::size_t d = 0; d < 3; ++d) {
        double best = -1, best_tau = -1;
        for (double tau : grid) {
            const double acc = oracle_box_acc(preds, kIouThresholds[d], tau);
            if (acc > best) best = acc, best_tau = tau;
        }
        EXPECT_NEAR(r.box_acc[d], best, 1e-12);
        EXPECT_EQ(r.best_tau[d], best_tau) << "earliest threshold on ties";
    }
    EXPECT_EQ(r.max_box_acc_v2, (r.box_acc[0] + r.box_acc[1] + r.box_acc[2]) / 3.0);
    EXPECT_EQ(gt_known(preds, grid), r.box_acc[1]);
}

TEST(MaxBoxAccV2, RefiningGridNeverDecreases) {
    for (std::uint64_t seed = 7; seed < 12; ++seed) {
        const auto preds = random_set(10, seed);
        EXPECT_GE(max_box_acc_v2(preds, threshold_grid(32)).max_box_acc_v2,
                  max_box_acc_v2(preds, threshold_grid(16)).max_box_acc_v2);
    }
}

TEST(Top1, LocalizationCases) {
    const BBox gt{0, 0, 10, 10};
    const Tensor perfect = box_map(16, gt);
    EXPECT_EQ(top1_loc(std::vector<Prediction>{make_pred(perfect, {gt}, 1, 0)}, 0.5), 0.0);
    // IoU 0.4: 40 of 100 pixels.
    const Tensor partial = box_map(16, {0, 0, 10, 4});
    EXPECT_EQ(top1_loc(std::vector<Prediction>{make_pred(partial, {gt}, 0, 0)}, 0.5), 0.0);
    EXPECT_EQ(top1_loc(std::vector<Prediction>{make_pred(perfect, {gt}, 2, 2)}, 0.5), 100.0);
}

TEST(Top1, ClassificationCounting) {
    const auto preds = random_set(10, 13);
    int correct = 0;
    for (const auto& p : preds) correct += p.predicted_class == p.label;
    EXPECT_DOUBLE_EQ(top1_cls(preds), 10.0 * correct);
    std::vector<Prediction> all = preds;
    for (auto& p : all) p.predicted_class = p.label;
    EXPECT_EQ(top1_cls(all), 100.0);
    for (auto& p : all) p.predicted_class = p.label + 1;
    EXPECT_EQ(top1_cls(all), 0.0);
}

TEST(EvaluatePredictions, Top1LocBoundedByClsAndBoxAcc) {
    for (std::uint64_t seed = 20; seed < 30; ++seed) {
        const auto preds = random_set(20, seed);
        const EvalReport r = evaluate_predictions(preds, threshold_grid(16));
        EXPECT_EQ(r.num_images, 20u);
        EXPECT_LE(r.top1_loc, r.top1_cls);
        EXPECT_LE(r.top1_loc, box_acc(preds, 0.5, r.top1_loc_tau));
        EXPECT_EQ(r.top1_loc_tau, r.best_tau[1]);
        EXPECT_EQ(r.gt_known, r.box_acc[1]);
        for (double v : {r.max_box_acc_v2, r.gt_known, r.top1_loc, r.top1_cls}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 100.0);
        }
    }
}

TEST(EvalReport, TextFormatsMentionEveryMetric) {
    const EvalReport r = evaluate_predictions(random_set(5, 31), threshold_grid(8));
    const std::string text = r.to_text(), tsv = r.to_tsv();
    for (const char* key : {"max_box_acc_v2=", "gt_known=", "top1_loc=", "top1_cls="}) {
        EXPECT_NE(text.find(key), std::string::npos) << key;
    }
    EXPECT_NE(tsv.find('\t'), std::string::npos);
}
