#pragma once

#include <cstddef>
#include <string>

#include "vitol/config.hpp"
#include "vitol/tape.hpp"
#include "vitol/tensor.hpp"
#include "vitol/vit.hpp"

namespace vitol {

// Externally computed per-block relevances, shaped like the attention stack.
using RelevanceStack = std::vector<Tensor>;

enum class MapSource { ar, gar, lrp };

std::string to_string(MapSource s);

struct LocalizationMap {
    // g x g, g = sqrt(s - 1), patches in raster order.
    Tensor values;
    MapSource source = MapSource::gar;
    std::size_t target_class = 0;

    std::size_t grid() const { return values.empty() ? 0 : values.dim(0); }
};

// Rollout over plain head-averaged attention: prod_b normalize(I + mean_h(A_b)),
// deepest block leftmost.
Tensor attention_rollout(const AttentionStack& attention, const RolloutOptions& options = {});

// Rollout over the positive part of gradient * attention.
Tensor grad_attention_rollout(const AttentionStack& attention, const GradStack& grads,
                              const RolloutOptions& options = {});

// Rollout over the positive part of gradient * relevance.
Tensor relevance_rollout(const GradStack& grads, const RelevanceStack& relevances,
                         const RolloutOptions& options = {});

// One rollout factor: normalize(I + mean_h(clamp(grad * weight))). An empty
// grad tensor means plain attention (no product, no clamp).
Tensor rollout_factor(const Tensor& weight, const Tensor* grad, const RolloutOptions& options);

// Row 0 without its first entry, reshaped to g x g.
LocalizationMap extract_cls_map(const Tensor& rollout, MapSource source = MapSource::gar,
                                std::size_t target_class = 0);

// Bilinear resize with aligned corners.
Tensor upsample_map(const Tensor& map, std::size_t out_size);

// Full pipeline for one image on an already recorded forward pass.
LocalizationMap localization_map(ForwardResult& forward, AttributionMethod method,
                                 std::size_t target_class, const RolloutOptions& rollout = {},
                                 GradTarget target = GradTarget::logit);

}  // namespace vitol
