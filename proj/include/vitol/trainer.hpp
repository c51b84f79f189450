#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vitol/config.hpp"
#include "vitol/dataset.hpp"
#include "vitol/metrics.hpp"
#include "vitol/vit.hpp"

namespace vitol {

// base * decay^floor(epoch / interval)
double lr_schedule(std::size_t epoch, const TrainConfig& config);

struct EpochStats {
    std::size_t epoch = 0;
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
};

// Tab-separated log with header: epoch, lr, train_loss, train_acc.
std::string format_epoch_log(std::span<const EpochStats> log);

using EpochCallback = std::function<void(const EpochStats&)>;

// Minimizes softmax cross-entropy in place. Deterministic for a given seed:
// batch order comes from (seed, epoch), p-ADL draws from (seed, epoch, step, slot).
std::vector<EpochStats> train(VisionTransformer& model, const TrainConfig& config,
                              std::span<const Sample> data, const EpochCallback& on_epoch = {});

// Builds a model from config.seed and trains it.
VisionTransformer train_model(const ModelConfig& model_config, const TrainConfig& config,
                              std::span<const Sample> data, std::vector<EpochStats>* log = nullptr,
                              const EpochCallback& on_epoch = {});

// Eval-mode mean cross-entropy.
double mean_loss(const VisionTransformer& model, std::span<const Sample> data);

// Eval-mode forward, attribution and normalized image-resolution map per sample.
std::vector<Prediction> predict(const VisionTransformer& model, std::span<const Sample> data,
                                const EvalOptions& options);

EvalReport evaluate(const VisionTransformer& model, std::span<const Sample> data,
                    const EvalOptions& options);

}  // namespace vitol
