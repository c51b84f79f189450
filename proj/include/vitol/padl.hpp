#pragma once

#include <span>
#include <vector>

#include "vitol/rng.hpp"
#include "vitol/tensor.hpp"

namespace vitol {

enum class Mode { train, eval };

enum class PadlBranch { drop, importance };

// Patch-based attention dropout. Operates on an s x d token matrix, one
// scalar per token, and has no trainable parameters.
struct PadlIntermediate {
    std::vector<double> mean_attention;
    std::vector<double> importance_map;
    std::vector<double> drop_mask;
    PadlBranch branch = PadlBranch::importance;
};

// Mean over the embedding axis for every token, CLS row included.
std::vector<double> mean_attention(const Tensor& tokens);

std::vector<double> importance_map(std::span<const double> mean);

// 0 where mean_i >= threshold * max(mean), 1 elsewhere. Applied as written even
// when the maximum is negative.
std::vector<double> drop_mask(std::span<const double> mean, double threshold);

// Draws p_random once; drop branch when p_random < drop_rate.
PadlBranch draw_branch(double drop_rate, Rng& rng);

struct PadlParams {
    double drop_threshold = 0.9;
    double drop_rate = 0.75;
    // Leave the CLS row untouched by both branches.
    bool exempt_cls = false;
};

// Identity in eval mode. In train mode scales each row by the drop mask or by
// the importance map, picked at random.
Tensor apply_padl(const Tensor& tokens, const PadlParams& params, Rng& rng, Mode mode,
                  PadlIntermediate* trace = nullptr);

}  // namespace vitol
