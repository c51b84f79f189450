#include "vitol/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vitol {

namespace {

double scalar_at(const VisionTransformer& model, const Tensor& image, std::size_t target_class,
                 GradTarget target, const AttentionInjection& injection) {
    ForwardOptions opts;
    opts.injected = &injection;
    ForwardResult r = model.forward(image, opts);
    if (target == GradTarget::logit) return r.logits[target_class];
    return softmax_rows(r.logits)[target_class];
}

}  // namespace

GradStack finite_difference_attention_grads(const VisionTransformer& model, const Tensor& image,
                                            std::size_t target_class, double epsilon,
                                            GradTarget target) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    if (target_class >= model.config().num_classes) {
        throw std::out_of_range("target class out of range");
    }
    const AttentionStack recorded = model.forward(image).attention;
    const std::size_t k = recorded.size();
    GradStack grads;
    grads.reserve(k);
    for (std::size_t b = 0; b < k; ++b) {
        AttentionInjection injection(k);
        injection[b] = recorded[b];
        Tensor& m = *injection[b];
        Tensor g(m.shape(), 0.0);
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double base = m[i];
            m[i] = base + epsilon;
            const double plus = scalar_at(model, image, target_class, target, injection);
            m[i] = base - epsilon;
            const double minus = scalar_at(model, image, target_class, target, injection);
            m[i] = base;
            g[i] = (plus - minus) / (2.0 * epsilon);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

GradComparison compare_grad_stacks(const GradStack& analytic, const GradStack& numeric,
                                   double floor) {
    if (analytic.size() != numeric.size()) {
        throw std::invalid_argument("gradient stacks differ in depth");
    }
    GradComparison out;
    for (std::size_t b = 0; b < analytic.size(); ++b) {
        const Tensor& a = analytic[b];
        const Tensor& n = numeric[b];
        if (!a.same_shape(n) || a.rank() != 3) {
            throw std::invalid_argument("gradient stacks differ in shape at block " +
                                        std::to_string(b));
        }
        const std::size_t s = a.dim(1);
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double diff = std::abs(a[i] - n[i]);
            const double rel = diff / std::max({std::abs(a[i]), std::abs(n[i]), floor});
            out.max_abs_error = std::max(out.max_abs_error, diff);
            if (rel > out.max_relative_error) {
                out.max_relative_error = rel;
                out.block = b;
                out.head = i / (s * s);
                out.row = (i / s) % s;
                out.col = i % s;
                out.analytic = a[i];
                out.numeric = n[i];
            }
        }
    }
    return out;
}

}  // namespace vitol
