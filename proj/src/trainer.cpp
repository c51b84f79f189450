#include "vitol/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "vitol/attribution.hpp"
#include "vitol/rng.hpp"

namespace vitol {

double lr_schedule(std::size_t epoch, const TrainConfig& config) {
    const auto steps = static_cast<double>(epoch / config.lr_decay_interval);
    return config.learning_rate * std::pow(config.lr_decay, steps);
}

std::string format_epoch_log(std::span<const EpochStats> log) {
    std::string out = "epoch\tlr\ttrain_loss\ttrain_acc\n";
    char buf[128];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%zu\t%.6e\t%.6f\t%.4f\n", e.epoch, e.learning_rate,
                      e.train_loss, e.train_acc);
        out += buf;
    }
    return out;
}

namespace {

class Optimizer {
  public:
    Optimizer(const TrainConfig& config, const std::vector<Parameter>& params) : config_(config) {
        for (const auto& p : params) {
            m_.emplace_back(p.value.size(), 0.0);
            v_.emplace_back(p.value.size(), 0.0);
        }
    }

    void step(std::vector<Parameter>& params, const std::vector<std::vector<double>>& grads,
              double lr) {
        ++t_;
        constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto w = params[p].value.data();
            const auto& g = grads[p];
            if (config_.optimizer == OptimizerKind::sgd) {
                for (std::size_t i = 0; i < w.size(); ++i) {
                    w[i] -= lr * (g[i] + config_.weight_decay * w[i]);
                }
                continue;
            }
            auto& m = m_[p];
            auto& v = v_[p];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
                // Decoupled weight decay.
                w[i] -= lr * (update + config_.weight_decay * w[i]);
            }
        }
    }

  private:
    const TrainConfig& config_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

void require_images(std::span<const Sample> data, const ModelConfig& config) {
    if (data.empty()) throw std::invalid_argument("dataset is empty");
    for (const auto& s : data) {
        if (s.image.empty()) throw std::invalid_argument("sample " + s.path + " has no pixels");
        if (s.label >= config.num_classes) {
            throw std::invalid_argument("sample " + s.path + " label " + std::to_string(s.label) +
                                        " exceeds num_classes");
        }
    }
}

}  // namespace

std::vector<EpochStats> train(VisionTransformer& model, const TrainConfig& config,
                              std::span<const Sample> data, const EpochCallback& on_epoch) {
    config.validate();
    require_images(data, model.config());
    auto& params = model.parameters();
    Optimizer opt(config, params);
    std::vector<std::vector<double>> grads;
    for (const auto& p : params) grads.emplace_back(p.value.size(), 0.0);

    std::vector<EpochStats> log;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, config);
        const auto order = shuffled(data.size(), derive_seed({config.seed, 0x5u, epoch}));
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0, step = 0; start < order.size();
             start += config.batch_size, ++step) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
            for (std::size_t slot = start; slot < end; ++slot) {
                const Sample& s = data[order[slot]];
                ForwardOptions fo;
                fo.mode = Mode::train;
                fo.padl_enabled = config.padl_enabled;
                fo.padl_seed = derive_seed({config.seed, 0x9u, epoch, step, slot - start});
                fo.param_grads = true;
                ForwardResult r = model.forward(s.image, fo);
                const NodeRef loss = r.tape.cross_entropy(r.logits_node, s.label);
                r.tape.backward(loss);
                loss_sum += r.tape.value(loss)[0];
                if (classify(r.logits.data()) == s.label) ++correct;
                for (std::size_t p = 0; p < params.size(); ++p) {
                    const Tensor g = r.tape.grad(r.param_nodes[p]);
                    auto& acc = grads[p];
                    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
                }
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& g : grads) {
                for (double& v : g) v *= inv;
            }
            opt.step(params, grads, lr);
        }
        EpochStats stats{epoch, lr, loss_sum / static_cast<double>(data.size()),
                         100.0 * static_cast<double>(correct) / static_cast<double>(data.size())};
        log.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    return log;
}

VisionTransformer train_model(const ModelConfig& model_config, const TrainConfig& config,
                              std::span<const Sample> data, std::vector<EpochStats>* log,
                              const EpochCallback& on_epoch) {
    VisionTransformer model(model_config);
    auto stats = train(model, config, data, on_epoch);
    if (log) *log = std::move(stats);
    return model;
}

double mean_loss(const VisionTransformer& model, std::span<const Sample> data) {
    require_images(data, model.config());
    double sum = 0.0;
    for (const auto& s : data) {
        ForwardResult r = model.forward(s.image);
        sum += r.tape.value(r.tape.cross_entropy(r.logits_node, s.label))[0];
    }
    return sum / static_cast<double>(data.size());
}

std::vector<Prediction> predict(const VisionTransformer& model, std::span<const Sample> data,
                                const EvalOptions& options) {
    require_images(data, model.config());
    std::vector<Prediction> preds(data.size());
    auto work = [&](std::size_t i) {
        const Sample& s = data[i];
        ForwardResult r = model.forward(s.image);
        Prediction& p = preds[i];
        p.id = s.path;
        p.label = s.label;
        p.gt_boxes = s.boxes;
        p.predicted_class = classify(r.logits.data());
        const std::size_t target =
            options.class_source == ClassSource::ground_truth ? s.label : p.predicted_class;
        const LocalizationMap m =
            localization_map(r, options.method, target, options.rollout, options.grad_target);
        p.map = normalize_map(upsample_map(m.values, model.config().image_size));
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, data.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < data.size(); ++i) work(i);
        return preds;
    }
    // Each index is written by exactly one worker, so the output order is fixed.
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i; (i = next.fetch_add(1)) < data.size() && !failed;) work(i);
            } catch (...) {
                if (!failed.exchange(true)) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return preds;
}

EvalReport evaluate(const VisionTransformer& model, std::span<const Sample> data,
                    const EvalOptions& options) {
    const auto preds = predict(model, data, options);
    return evaluate_predictions(preds, threshold_grid(options.tau_grid), options.component_policy);
}

}  // namespace vitol
