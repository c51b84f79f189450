#include "vitol/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vitol {

std::string to_string(MapSource s) {
    switch (s) {
        case MapSource::ar: return "AR";
        case MapSource::gar: return "GAR";
        case MapSource::lrp: return "LRP";
    }
    return "?";
}

Tensor rollout_factor(const Tensor& weight, const Tensor* grad, const RolloutOptions& options) {
    if (weight.rank() != 3 || weight.dim(1) != weight.dim(2)) {
        throw std::invalid_argument("rollout expects h x s x s blocks, got " +
                                    shape_string(weight.shape()));
    }
    if (grad && !grad->same_shape(weight)) {
        throw std::invalid_argument("gradient block shape " + shape_string(grad->shape()) +
                                    " does not match " + shape_string(weight.shape()));
    }
    const std::size_t h = weight.dim(0), s = weight.dim(1);
    const double inv_h = 1.0 / static_cast<double>(h);
    Tensor a({s, s}, 0.0);
    for (std::size_t k = 0; k < h; ++k) {
        for (std::size_t i = 0; i < s * s; ++i) {
            double v = weight[k * s * s + i];
            if (grad) {
                v *= (*grad)[k * s * s + i];
                if (options.clamp_before_mean) v = std::max(v, 0.0);
            }
            a[i] += v * inv_h;
        }
    }
    if (grad && !options.clamp_before_mean) {
        for (double& v : a.data()) v = std::max(v, 0.0);
    }
    for (std::size_t i = 0; i < s; ++i) a.at(i, i) += 1.0;
    if (options.row_normalize) {
        for (std::size_t i = 0; i < s; ++i) {
            auto row = a.row(i);
            double sum = 0.0;
            for (double v : row) sum += v;
            for (double& v : row) v /= sum;
        }
    }
    return a;
}

namespace {

Tensor rollout(const std::vector<Tensor>& weights, const std::vector<Tensor>* grads,
               const RolloutOptions& options) {
    if (weights.empty()) throw std::invalid_argument("rollout needs at least one block");
    if (grads && grads->size() != weights.size()) {
        throw std::invalid_argument("stacks differ in depth: " + std::to_string(weights.size()) +
                                    " vs " + std::to_string(grads->size()));
    }
    Tensor acc;
    for (std::size_t b = 0; b < weights.size(); ++b) {
        Tensor factor = rollout_factor(weights[b], grads ? &(*grads)[b] : nullptr, options);
        // Deeper blocks compose on the left.
        acc = b == 0 ? std::move(factor) : matmul(factor, acc);
    }
    return acc;
}

}  // namespace

Tensor attention_rollout(const AttentionStack& attention, const RolloutOptions& options) {
    return rollout(attention, nullptr, options);
}

Tensor grad_attention_rollout(const AttentionStack& attention, const GradStack& grads,
                              const RolloutOptions& options) {
    return rollout(attention, &grads, options);
}

Tensor relevance_rollout(const GradStack& grads, const RelevanceStack& relevances,
                         const RolloutOptions& options) {
    if (relevances.empty()) throw std::invalid_argument("relevance stack is missing");
    return rollout(relevances, &grads, options);
}

LocalizationMap extract_cls_map(const Tensor& rollout, MapSource source, std::size_t target_class) {
    if (rollout.rank() != 2 || rollout.dim(0) != rollout.dim(1)) {
        throw std::invalid_argument("rollout must be square, got " + shape_string(rollout.shape()));
    }
    const std::size_t s = rollout.dim(0);
    const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(s - 1))));
    if (s < 2 || g * g != s - 1) {
        throw std::invalid_argument("sequence length " + std::to_string(s) +
                                    " minus one is not a perfect square");
    }
    auto row0 = rollout.row(0);
    LocalizationMap m;
    m.values = Tensor({g, g}, std::vector<double>(row0.begin() + 1, row0.end()));
    m.source = source;
    m.target_class = target_class;
    return m;
}

Tensor upsample_map(const Tensor& map, std::size_t out_size) {
    if (map.rank() != 2 || map.dim(0) != map.dim(1)) {
        throw std::invalid_argument("upsample_map expects a square map");
    }
    const std::size_t g = map.dim(0);
    if (out_size < g) throw std::invalid_argument("upsample_map output smaller than input");
    Tensor out({out_size, out_size});
    const double step =
        out_size > 1 ? static_cast<double>(g - 1) / static_cast<double>(out_size - 1) : 0.0;
    std::vector<std::size_t> lo(out_size), hi(out_size);
    std::vector<double> frac(out_size);
    for (std::size_t u = 0; u < out_size; ++u) {
        const double src = static_cast<double>(u) * step;
        lo[u] = std::min(static_cast<std::size_t>(std::floor(src)), g - 1);
        hi[u] = std::min(lo[u] + 1, g - 1);
        frac[u] = src - static_cast<double>(lo[u]);
    }
    for (std::size_t y = 0; y < out_size; ++y) {
        for (std::size_t x = 0; x < out_size; ++x) {
            // a + (b - a) * t keeps constant regions exactly constant.
            const double a = map.at(lo[y], lo[x]), b = map.at(lo[y], hi[x]);
            const double c = map.at(hi[y], lo[x]), d = map.at(hi[y], hi[x]);
            const double top = a + (b - a) * frac[x];
            const double bottom = c + (d - c) * frac[x];
            out.at(y, x) = top + (bottom - top) * frac[y];
        }
    }
    return out;
}

LocalizationMap localization_map(ForwardResult& forward, AttributionMethod method,
                                 std::size_t target_class, const RolloutOptions& rollout,
                                 GradTarget target) {
    if (method == AttributionMethod::ar) {
        return extract_cls_map(attention_rollout(forward.attention, rollout), MapSource::ar,
                               target_class);
    }
    const GradStack grads = attention_gradients(forward, target_class, target);
    return extract_cls_map(grad_attention_rollout(forward.attention, grads, rollout),
                           MapSource::gar, target_class);
}

}  // namespace vitol
