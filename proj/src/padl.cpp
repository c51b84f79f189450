#include "vitol/padl.hpp"

#include <algorithm>
#include <stdexcept>

namespace vitol {

std::vector<double> mean_attention(const Tensor& tokens) {
    if (tokens.rank() != 2) throw std::invalid_argument("mean_attention expects an s x d matrix");
    std::vector<double> mean(tokens.rows());
    const double inv_d = 1.0 / static_cast<double>(tokens.cols());
    for (std::size_t r = 0; r < tokens.rows(); ++r) {
        double sum = 0.0;
        for (double v : tokens.row(r)) sum += v;
        mean[r] = sum * inv_d;
    }
    return mean;
}

std::vector<double> importance_map(std::span<const double> mean) {
    std::vector<double> out(mean.size());
    std::transform(mean.begin(), mean.end(), out.begin(), [](double v) { return sigmoid(v); });
    return out;
}

std::vector<double> drop_mask(std::span<const double> mean, double threshold) {
    if (mean.empty()) return {};
    const double cut = threshold * *std::max_element(mean.begin(), mean.end());
    std::vector<double> mask(mean.size());
    std::transform(mean.begin(), mean.end(), mask.begin(),
                   [cut](double v) { return v >= cut ? 0.0 : 1.0; });
    return mask;
}

PadlBranch draw_branch(double drop_rate, Rng& rng) {
    return rng.uniform() < drop_rate ? PadlBranch::drop : PadlBranch::importance;
}

Tensor apply_padl(const Tensor& tokens, const PadlParams& params, Rng& rng, Mode mode,
                  PadlIntermediate* trace) {
    if (mode == Mode::eval) return tokens;

    PadlIntermediate local;
    PadlIntermediate& t = trace ? *trace : local;
    t.mean_attention = mean_attention(tokens);
    t.importance_map = importance_map(t.mean_attention);
    t.drop_mask = drop_mask(t.mean_attention, params.drop_threshold);
    t.branch = draw_branch(params.drop_rate, rng);

    const std::vector<double>& factor =
        t.branch == PadlBranch::drop ? t.drop_mask : t.importance_map;
    Tensor out = tokens;
    for (std::size_t r = params.exempt_cls ? 1 : 0; r < out.rows(); ++r) {
        for (double& v : out.row(r)) v *= factor[r];
    }
    return out;
}

}  // namespace vitol
