#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "vitol/trainer.hpp"

using namespace vitol;

namespace {

ModelConfig model_config() {
    ModelConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.depth = 2;
    c.embed_dim = 16;
    c.heads = 2;
    c.head_dim = 8;
    c.mlp_ratio = 2.0;
    c.num_classes = 4;
    c.seed = 11;
    return c;
}

std::vector<Sample> make_data(std::size_t n, std::uint64_t seed = 7) {
    DatasetSpec spec;
    spec.num_classes = 4;
    spec.image_size = 16;
    spec.area_min = 0.15;
    spec.seed = seed;
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        RenderedSample r = render_sample(spec, Split::train, i);
        out.push_back({"img" + std::to_string(i), r.label, {r.box}, std::move(r.image)});
    }
    return out;
}

TrainConfig train_config(std::size_t epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.learning_rate = 1e-3;
    t.batch_size = 4;
    t.seed = 5;
    return t;
}

bool same_parameters(const VisionTransformer& a, const VisionTransformer& b) {
    if (a.parameters().size() != b.parameters().size()) return false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        if (a.parameters()[i].value != b.parameters()[i].value) return false;
    }
    return true;
}

}  // namespace

TEST(LrSchedule, StepDecay) {
    TrainConfig t;
    t.learning_rate = 1e-4;
    t.lr_decay = 0.1;
    t.lr_decay_interval = 3;
    EXPECT_DOUBLE_EQ(lr_schedule(0, t), 1e-4);
    EXPECT_DOUBLE_EQ(lr_schedule(2, t), 1e-4);
    EXPECT_NEAR(lr_schedule(3, t), 1e-5, 1e-20);
    EXPECT_NEAR(lr_schedule(7, t), 1e-6, 1e-21);
    t.lr_decay = 1.0;
    EXPECT_EQ(lr_schedule(100, t), 1e-4);
}

TEST(EpochLog, Format) {
    const std::vector<EpochStats> log{{0, 1e-4, 2.5, 12.5}, {1, 1e-5, 1.25, 50.0}};
    const std::string text = format_epoch_log(log);
    EXPECT_EQ(text.substr(0, text.find('\n')), "epoch\tlr\ttrain_loss\ttrain_acc");
    EXPECT_NE(text.find("\n1\t"), std::string::npos);
    std::size_t lines = 0;
    for (char ch : text) lines += ch == '\n';
    EXPECT_EQ(lines, 3u);
}

TEST(Train, ZeroEpochsLeavesInitialization) {
    const auto data = make_data(8);
    std::vector<EpochStats> log;
    const VisionTransformer trained = train_model(model_config(), train_config(0), data, &log);
    EXPECT_TRUE(log.empty());
    EXPECT_TRUE(same_parameters(trained, VisionTransformer(model_config())));
}

TEST(Train, SameSeedIsBitIdentical) {
    const auto data = make_data(12);
    const VisionTransformer a = train_model(model_config(), train_config(2), data);
    const VisionTransformer b = train_model(model_config(), train_config(2), data);
    EXPECT_TRUE(same_parameters(a, b));
    TrainConfig other = train_config(2);
    other.seed = 6;
    EXPECT_FALSE(same_parameters(a, train_model(model_config(), other, data)));
}

TEST(Train, PadlChangesTrajectoryButNotSchema) {
    const auto data = make_data(12);
    TrainConfig off = train_config(1);
    off.padl_enabled = false;
    const VisionTransformer a = train_model(model_config(), train_config(1), data);
    const VisionTransformer b = train_model(model_config(), off, data);
    EXPECT_FALSE(same_parameters(a, b));
    ASSERT_EQ(a.parameters().size(), b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
        EXPECT_EQ(a.parameters()[i].value.shape(), b.parameters()[i].value.shape());
    }
    EXPECT_EQ(a.parameter_count(), b.parameter_count());
}

TEST(Train, LossDecreasesOnToyRun) {
    const auto data = make_data(32);
    VisionTransformer model(model_config());
    const double before = mean_loss(model, data);
    std::vector<EpochStats> seen;
    const auto log = train(model, train_config(5), data,
                           [&](const EpochStats& s) { seen.push_back(s); });
    ASSERT_EQ(log.size(), 5u);
    EXPECT_EQ(seen.size(), 5u);
    EXPECT_LT(mean_loss(model, data), before);
    EXPECT_LT(log.back().train_loss, log.front().train_loss);
    for (const auto& s : log) {
        EXPECT_GE(s.train_acc, 0.0);
        EXPECT_LE(s.train_acc, 100.0);
        EXPECT_TRUE(std::isfinite(s.train_loss));
    }
}

TEST(Train, SingleSampleLossDecreasesMonotonically) {
    const auto data = make_data(1);
    VisionTransformer model(model_config());
    TrainConfig t = train_config(1);
    t.learning_rate = 1e-4;
    t.batch_size = 1;
    t.padl_enabled = false;
    double prev = mean_loss(model, data);
    for (int step = 0; step < 20; ++step) {
        t.seed = static_cast<std::uint64_t>(step);
        train(model, t, data);
        const double cur = mean_loss(model, data);
        EXPECT_LT(cur, prev) << "step " << step;
        prev = cur;
    }
}

TEST(Train, SgdAndWeightDecayRun) {
    const auto data = make_data(8);
    TrainConfig t = train_config(1);
    t.optimizer = OptimizerKind::sgd;
    t.learning_rate = 0.05;
    t.weight_decay = 1e-3;
    const VisionTransformer m = train_model(model_config(), t, data);
    EXPECT_FALSE(same_parameters(m, VisionTransformer(model_config())));
    for (const auto& p : m.parameters()) EXPECT_TRUE(p.value.all_finite()) << p.name;
}

TEST(Train, RejectsBadInputs) {
    VisionTransformer model(model_config());
    EXPECT_THROW(train(model, train_config(1), {}), std::invalid_argument);
    auto data = make_data(2);
    data[1].label = 9;
    EXPECT_THROW(train(model, train_config(1), data), std::invalid_argument);
    TrainConfig bad = train_config(1);
    bad.learning_rate = -1;
    EXPECT_ANY_THROW(train(model, bad, make_data(2)));
}

TEST(Evaluate, ReadOnlyAndConsistent) {
    const auto data = make_data(8);
    const VisionTransformer model = train_model(model_config(), train_config(1), data);
    const VisionTransformer copy = model;
    EvalOptions o;
    o.tau_grid = 16;
    const EvalReport r = evaluate(model, data, o);
    EXPECT_TRUE(same_parameters(model, copy));
    EXPECT_EQ(r.num_images, 8u);
    EXPECT_EQ(r.max_box_acc_v2, (r.box_acc[0] + r.box_acc[1] + r.box_acc[2]) / 3.0);
    o.workers = 3;
    const EvalReport threaded = evaluate(model, data, o);
    EXPECT_EQ(threaded.to_text(), r.to_text());
}

TEST(Evaluate, ArIgnoresClassSource) {
    const auto data = make_data(8);
    const VisionTransformer model(model_config());
    EvalOptions o;
    o.method = AttributionMethod::ar;
    o.tau_grid = 16;
    o.class_source = ClassSource::ground_truth;
    const auto gt = predict(model, data, o);
    o.class_source = ClassSource::predicted;
    const auto pred = predict(model, data, o);
    ASSERT_EQ(gt.size(), pred.size());
    for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_EQ(gt[i].map, pred[i].map);
    EXPECT_EQ(evaluate(model, data, o).max_box_acc_v2,
              evaluate_predictions(gt, threshold_grid(16)).max_box_acc_v2);
}

TEST(Predict, MapsAreNormalizedAtImageResolution) {
    const auto data = make_data(4);
    const VisionTransformer model(model_config());
    const auto preds = predict(model, data, {});
    ASSERT_EQ(preds.size(), 4u);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        EXPECT_EQ(preds[i].map.shape(), (std::vector<std::size_t>{16, 16}));
        EXPECT_EQ(preds[i].label, data[i].label);
        EXPECT_EQ(preds[i].gt_boxes, data[i].boxes);
        for (double v : preds[i].map.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}
