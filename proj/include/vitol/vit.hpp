#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vitol/config.hpp"
#include "vitol/padl.hpp"
#include "vitol/rng.hpp"
#include "vitol/tape.hpp"
#include "vitol/tensor.hpp"

namespace vitol {

// Per-block post-softmax attention, each heads x s x s.
using AttentionStack = std::vector<Tensor>;

// Per-block replacement for the softmax output; std::nullopt keeps the
// computed attention for that block.
using AttentionInjection = std::vector<std::optional<Tensor>>;

AttentionInjection inject_all(const AttentionStack& stack);

struct Parameter {
    std::string name;
    Tensor value;
};

struct ForwardOptions {
    Mode mode = Mode::eval;
    // p-ADL only acts in train mode, and only when enabled.
    bool padl_enabled = true;
    std::uint64_t padl_seed = 0;
    // Record parameters as differentiable leaves (training).
    bool param_grads = false;
    const AttentionInjection* injected = nullptr;
    bool softmax_jacobian = true;
};

// The tape aliases the model's parameters: the model must outlive the result.
struct ForwardResult {
    Tensor logits;
    AttentionStack attention;
    Tensor final_embeddings;
    Tape tape;
    NodeRef logits_node;
    std::vector<NodeRef> attention_nodes;
    // Aligned with VisionTransformer::parameters().
    std::vector<NodeRef> param_nodes;
    // One entry per block when p-ADL ran.
    std::vector<PadlIntermediate> padl;
};

// Splits an H x W x C image into (H/P)(W/P) raster-ordered patches, each
// flattened row-major to P*P*C values. Returns a patches x (P*P*C) matrix.
Tensor patchify(const Tensor& image, std::size_t patch_size);

// Argmax, lowest index on ties.
std::size_t classify(std::span<const double> logits);

class VisionTransformer {
  public:
    // Initializes weights deterministically from config.seed: fan-in scaled
    // truncated normal for linear weights, 2-D sin-cos position embeddings,
    // zero CLS token and biases, unit norm scales.
    explicit VisionTransformer(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    Tensor& param(std::string_view name);
    const Tensor& param(std::string_view name) const;
    std::size_t parameter_count() const;

    // Replaces all parameter values; names and shapes must match.
    void load_parameters(const std::vector<Parameter>& params);

    // patches (s-1) x patch_dim -> O^(0), s x d.
    Tensor embed(const Tensor& patches) const;

    // One encoder block on its own; returns (output tokens, attention).
    std::pair<Tensor, Tensor> encoder_block_forward(const Tensor& tokens, std::size_t block,
                                                    Mode mode, Rng& rng,
                                                    bool padl_enabled = true) const;

    ForwardResult forward(const Tensor& image, const ForwardOptions& options = {}) const;

  private:
    struct BlockParams {
        std::size_t norm1_w, norm1_b, qkv_w, qkv_b, proj_w, proj_b;
        std::size_t norm2_w, norm2_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };

    std::size_t add_param(std::string name, Tensor value);
    void check_image(const Tensor& image) const;

    struct Recorder;
    NodeRef record_block(Recorder& rec, NodeRef x, std::size_t block, Mode mode, Rng* rng,
                         bool padl_enabled, const Tensor* injected,
                         PadlIntermediate* trace) const;

    ModelConfig config_;
    std::vector<Parameter> params_;
    std::vector<BlockParams> blocks_;
    std::size_t patch_w_ = 0, patch_b_ = 0, cls_ = 0, pos_ = 0;
    std::size_t norm_w_ = 0, norm_b_ = 0, head_w_ = 0, head_b_ = 0;
};

// Scalar the attribution differentiates: the class logit, or its softmax probability.
NodeRef target_scalar(ForwardResult& result, std::size_t target_class, GradTarget target);

// d(target) / d(attention) for every block, from a recorded forward.
GradStack attention_gradients(ForwardResult& result, std::size_t target_class,
                              GradTarget target = GradTarget::logit);

}  // namespace vitol
