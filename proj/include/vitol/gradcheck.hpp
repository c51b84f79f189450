#pragma once

#include <cstddef>

#include "vitol/config.hpp"
#include "vitol/tape.hpp"
#include "vitol/vit.hpp"

namespace vitol {

// Central differences of the target scalar with respect to each attention
// entry: one block at a time is injected with the perturbed probabilities and
// everything downstream (later blocks' attention included) is recomputed.
GradStack finite_difference_attention_grads(const VisionTransformer& model, const Tensor& image,
                                            std::size_t target_class, double epsilon,
                                            GradTarget target = GradTarget::logit);

struct GradComparison {
    double max_relative_error = 0.0;
    double max_abs_error = 0.0;
    // Location of the worst relative error.
    std::size_t block = 0, head = 0, row = 0, col = 0;
    double analytic = 0.0, numeric = 0.0;
};

// Per entry |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros from dividing by zero.
GradComparison compare_grad_stacks(const GradStack& analytic, const GradStack& numeric,
                                   double floor = 1e-8);

}  // namespace vitol
