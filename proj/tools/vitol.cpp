#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vitol/attribution.hpp"
#include "vitol/config.hpp"
#include "vitol/dataset.hpp"
#include "vitol/gradcheck.hpp"
#include "vitol/io_error.hpp"
#include "vitol/metrics.hpp"
#include "vitol/tensor_io.hpp"
#include "vitol/trainer.hpp"
#include "vitol/vit.hpp"

namespace fs = std::filesystem;
using namespace vitol;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kValidation = 3 };

// Raised for problems with what the user typed, as opposed to what the data holds.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::vector<std::string> overrides;
    // Set when the user pinned keys by --config or --set.
    bool pinned = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
    cmd->add_option("--config", c.config_path, "key=value config file");
    cmd->add_option("--seed", c.seed, "run seed");
    if (needs_out) cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--set", c.overrides, "override one key, key=value (repeatable)");
}

// Parse errors are usage errors; the merged result is validated separately.
RunConfig load_config(const Common& c, const char* seed_key) {
    RunConfig rc;
    try {
        if (!c.config_path.empty()) rc.load_file(c.config_path);
        for (const auto& kv : c.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            rc.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (c.seed) rc.set(seed_key, std::to_string(*c.seed));
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    try {
        rc.validate();
    } catch (const ConfigError& e) {
        throw ValidationError(e.what());
    }
    return rc;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

bool same_architecture(ModelConfig a, ModelConfig b) {
    a.seed = b.seed = 0;
    return a == b;
}

// Fails when the user pinned model keys that disagree with the checkpoint.
void check_checkpoint(const VisionTransformer& model, const RunConfig& rc, const Common& c) {
    if (!c.pinned) return;
    if (!same_architecture(model.config(), rc.model)) {
        throw ValidationError("checkpoint architecture does not match config:\ncheckpoint:\n" +
                              model.config().to_text() + "config:\n" + rc.model.to_text());
    }
}

int cmd_gen_data(const Common& c) {
    const RunConfig rc = load_config(c, "data_seed");
    ensure_dir(c.out);
    const auto summary = generate(rc.data, c.out);
    std::printf("wrote %zu train and %zu test images to %s\n", summary.train_images,
                summary.test_images, c.out.c_str());
    return kOk;
}

int cmd_train(const Common& c, const std::string& data_dir) {
    const RunConfig rc = load_config(c, "seed");
    const auto samples = load_split((fs::path(data_dir) / "train").string(), rc.model.image_size);
    ensure_dir(c.out);
    std::vector<EpochStats> log;
    VisionTransformer model(rc.model);
    log = train(model, rc.train, samples, [](const EpochStats& e) {
        std::printf("epoch %zu  lr %.3e  loss %.4f  acc %.2f\n", e.epoch, e.learning_rate,
                    e.train_loss, e.train_acc);
        std::fflush(stdout);
    });
    const auto ckpt = fs::path(c.out) / "checkpoint.vtol";
    save_checkpoint(ckpt.string(), model);
    write_text(fs::path(c.out) / "train_log.tsv", format_epoch_log(log));
    std::printf("checkpoint %s\n", ckpt.string().c_str());
    return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data_dir,
             const std::string& split) {
    const RunConfig rc = load_config(c, "seed");
    const VisionTransformer model = load_checkpoint(checkpoint);
    check_checkpoint(model, rc, c);
    const auto samples =
        load_split((fs::path(data_dir) / split).string(), model.config().image_size);
    const EvalReport report = evaluate(model, samples, rc.eval);
    ensure_dir(c.out);
    write_text(fs::path(c.out) / "report.txt", report.to_text());
    write_text(fs::path(c.out) / "report.tsv", report.to_tsv());
    std::printf("method=%s class_source=%s\n%s", to_string(rc.eval.method).c_str(),
                to_string(rc.eval.class_source).c_str(), report.to_text().c_str());
    return kOk;
}

Tensor overlay(const Tensor& image, const Tensor& heat, const std::optional<BBox>& box) {
    const std::size_t n = heat.dim(0);
    Tensor out = image;
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double h = heat.at(y, x);
            out.at(y, x, 0) = 0.5 * image.at(y, x, 0) + 0.5 * h;
            out.at(y, x, 1) = 0.5 * image.at(y, x, 1);
            out.at(y, x, 2) = 0.5 * image.at(y, x, 2) + 0.5 * (1.0 - h);
        }
    }
    if (box) {
        auto paint = [&](int y, int x) {
            const auto yy = static_cast<std::size_t>(y), xx = static_cast<std::size_t>(x);
            out.at(yy, xx, 0) = 0.0;
            out.at(yy, xx, 1) = 1.0;
            out.at(yy, xx, 2) = 0.0;
        };
        for (int x = box->x0; x < box->x1; ++x) {
            paint(box->y0, x);
            paint(box->y1 - 1, x);
        }
        for (int y = box->y0; y < box->y1; ++y) {
            paint(y, box->x0);
            paint(y, box->x1 - 1);
        }
    }
    return out;
}

int cmd_explain(const Common& c, const std::string& checkpoint, const std::string& image_path,
                std::optional<std::size_t> target, double tau) {
    const RunConfig rc = load_config(c, "seed");
    const VisionTransformer model = load_checkpoint(checkpoint);
    check_checkpoint(model, rc, c);
    const std::size_t size = model.config().image_size;
    const Tensor image = read_image(image_path, size);
    ForwardResult r = model.forward(image);
    const std::size_t predicted = classify(r.logits.data());
    const std::size_t cls = target.value_or(predicted);
    if (cls >= model.config().num_classes) {
        throw UsageError("target class " + std::to_string(cls) + " out of range");
    }
    const LocalizationMap map =
        localization_map(r, rc.eval.method, cls, rc.eval.rollout, rc.eval.grad_target);
    const Tensor heat = normalize_map(upsample_map(map.values, size));

    std::optional<BBox> box;
    const auto comps = connected_components(binarize(heat, tau));
    if (!comps.empty()) {
        const Component* best = &comps.front();
        for (const auto& comp : comps) {
            if (comp.area > best->area) best = &comp;
        }
        box = best->box;
    }

    ensure_dir(c.out);
    std::string tsv;
    char buf[32];
    for (std::size_t i = 0; i < map.grid(); ++i) {
        for (std::size_t j = 0; j < map.grid(); ++j) {
            std::snprintf(buf, sizeof buf, "%.10g", map.values.at(i, j));
            if (j) tsv += '\t';
            tsv += buf;
        }
        tsv += '\n';
    }
    write_text(fs::path(c.out) / "map.tsv", tsv);
    write_pgm((fs::path(c.out) / "heatmap.pgm").string(), heat);
    write_ppm((fs::path(c.out) / "overlay.ppm").string(), overlay(image, heat, box));
    std::printf("predicted_class=%zu target_class=%zu method=%s box=%s\n", predicted, cls,
                to_string(rc.eval.method).c_str(), box ? to_string(*box).c_str() : "none");
    return kOk;
}

int cmd_gradcheck(const Common& c, double epsilon, bool sabotage, double tolerance) {
    RunConfig rc;
    rc.model = ModelConfig::toy();
    try {
        if (!c.config_path.empty()) rc.load_file(c.config_path);
        for (const auto& kv : c.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            rc.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (c.seed) rc.set("seed", std::to_string(*c.seed));
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    try {
        rc.model.validate();
    } catch (const ConfigError& e) {
        throw ValidationError(e.what());
    }
    const ModelConfig& mc = rc.model;
    const VisionTransformer model(mc);
    Rng rng(derive_seed({mc.seed, 0x1a6eu}));
    Tensor image({mc.image_size, mc.image_size, mc.channels});
    for (double& v : image.data()) v = rng.uniform();

    ForwardOptions opts;
    opts.softmax_jacobian = !sabotage;
    ForwardResult r = model.forward(image, opts);
    const std::size_t cls = classify(r.logits.data());
    const GradStack analytic = attention_gradients(r, cls, rc.eval.grad_target);
    const GradStack numeric =
        finite_difference_attention_grads(model, image, cls, epsilon, rc.eval.grad_target);
    for (std::size_t b = 0; b < analytic.size(); ++b) {
        std::printf("block %zu grad %s\n", b, shape_string(analytic[b].shape()).c_str());
    }
    const GradComparison cmp = compare_grad_stacks(analytic, numeric);
    std::printf("max_relative_error=%.3e max_abs_error=%.3e epsilon=%g%s\n",
                cmp.max_relative_error, cmp.max_abs_error, epsilon, sabotage ? " (sabotaged)" : "");
    if (cmp.max_relative_error < tolerance) {
        std::printf("PASS\n");
        return kOk;
    }
    std::printf("FAIL worst at block=%zu head=%zu i=%zu j=%zu analytic=%.9g numeric=%.9g\n",
                cmp.block, cmp.head, cmp.row, cmp.col, cmp.analytic, cmp.numeric);
    return kValidation;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vision transformer localization toolkit"};
    app.require_subcommand(1);

    Common common;
    auto* gen = app.add_subcommand("gen-data", "render the synthetic shapes dataset");
    add_common(gen, common);

    std::string data_dir;
    auto* tr = app.add_subcommand("train", "train a classifier and write a checkpoint");
    add_common(tr, common);
    tr->add_option("--data", data_dir, "dataset root holding train/")->required();

    std::string checkpoint, split = "test";
    std::string method, class_source, policy;
    std::optional<std::size_t> tau_grid, workers;
    auto* ev = app.add_subcommand("eval", "score localization maps on a split");
    add_common(ev, common);
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--data", data_dir, "dataset root")->required();
    ev->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
    ev->add_option("--method", method)->check(CLI::IsMember({"AR", "GAR", "ar", "gar"}));
    ev->add_option("--class-source", class_source)
        ->check(CLI::IsMember({"predicted", "ground_truth"}));
    ev->add_option("--tau-grid", tau_grid);
    ev->add_option("--component-policy", policy)->check(CLI::IsMember({"largest", "best"}));
    ev->add_option("--workers", workers);

    std::string image_path;
    std::optional<std::size_t> target;
    double tau = 0.5;
    auto* ex = app.add_subcommand("explain", "export the attribution map for one image");
    add_common(ex, common);
    ex->add_option("--checkpoint", checkpoint)->required();
    ex->add_option("--image", image_path)->required();
    ex->add_option("--method", method)->check(CLI::IsMember({"AR", "GAR", "ar", "gar"}));
    ex->add_option("--target-class", target);
    ex->add_option("--tau", tau, "binarization threshold for the burned-in box")
        ->check(CLI::Range(0.0, 1.0));

    double epsilon = 1e-3, tolerance = 1e-4;
    bool sabotage = false;
    auto* gc = app.add_subcommand("gradcheck", "compare attention gradients to finite differences");
    add_common(gc, common, false);
    gc->add_option("--epsilon", epsilon);
    gc->add_option("--tolerance", tolerance);
    gc->add_flag("--sabotage", sabotage, "drop the softmax Jacobian in backward");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    common.pinned = !common.config_path.empty() || !common.overrides.empty();
    try {
        if (!method.empty()) common.overrides.push_back("method=" + method);
        if (!class_source.empty()) common.overrides.push_back("class_source=" + class_source);
        if (tau_grid) common.overrides.push_back("tau_grid=" + std::to_string(*tau_grid));
        if (!policy.empty()) common.overrides.push_back("component_policy=" + policy);
        if (workers) common.overrides.push_back("workers=" + std::to_string(*workers));

        if (*gen) return cmd_gen_data(common);
        if (*tr) return cmd_train(common, data_dir);
        if (*ev) return cmd_eval(common, checkpoint, data_dir, split);
        if (*ex) return cmd_explain(common, checkpoint, image_path, target, tau);
        if (*gc) return cmd_gradcheck(common, epsilon, sabotage, tolerance);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    }
    return kUsage;
}
