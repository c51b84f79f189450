#include "vitol/vit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vitol {

AttentionInjection inject_all(const AttentionStack& stack) {
    return AttentionInjection(stack.begin(), stack.end());
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
    if (image.rank() != 3) {
        throw std::invalid_argument("image must be H x W x C, got " + shape_string(image.shape()));
    }
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0) {
        throw std::invalid_argument("image " + shape_string(image.shape()) +
                                    " is not divisible into " + std::to_string(patch_size) +
                                    "-pixel patches");
    }
    const std::size_t gh = h / patch_size, gw = w / patch_size;
    Tensor out({gh * gw, patch_size * patch_size * c});
    for (std::size_t py = 0; py < gh; ++py) {
        for (std::size_t px = 0; px < gw; ++px) {
            double* dst = out.row(py * gw + px).data();
            for (std::size_t y = 0; y < patch_size; ++y) {
                const double* src = image.raw() + ((py * patch_size + y) * w + px * patch_size) * c;
                dst = std::copy(src, src + patch_size * c, dst);
            }
        }
    }
    return out;
}

std::size_t classify(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("classify: no logits");
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) -
                                    logits.begin());
}

std::size_t VisionTransformer::add_param(std::string name, Tensor value) {
    params_.push_back({std::move(name), std::move(value)});
    return params_.size() - 1;
}

namespace {

// Rows 1.. get a 2-D sine-cosine code of the patch (row, col): a quarter of the
// channels each for sin/cos of the row and of the column. Row 0 (CLS) is zeroed.
// Channels beyond 4 * (d / 4) keep their random values.
Tensor sincos_position_init(Tensor pos, std::size_t grid) {
    const std::size_t d = pos.cols();
    const std::size_t q = d / 4;
    for (double& v : pos.row(0)) v = 0.0;
    for (std::size_t p = 0; p + 1 < pos.rows(); ++p) {
        const double coord[2] = {static_cast<double>(p / grid), static_cast<double>(p % grid)};
        auto row = pos.row(p + 1);
        for (std::size_t axis = 0; axis < 2; ++axis) {
            for (std::size_t k = 0; k < q; ++k) {
                const double omega =
                    std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(q));
                row[axis * 2 * q + k] = std::sin(coord[axis] * omega);
                row[axis * 2 * q + q + k] = std::cos(coord[axis] * omega);
            }
        }
    }
    return pos;
}

}  // namespace

VisionTransformer::VisionTransformer(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(derive_seed({config_.seed, 0x1417}));
    const std::size_t d = config_.embed_dim;
    const std::size_t s = config_.seq_len();
    auto trunc = [&rng](std::vector<std::size_t> shape) {
        Tensor t(std::move(shape));
        for (double& v : t.data()) v = rng.truncated_normal(0.02);
        return t;
    };
    // Weights are stored in x out; the scale follows the fan-in.
    auto fan_in = [&rng](std::vector<std::size_t> shape) {
        Tensor t(std::move(shape));
        const double std = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
        for (double& v : t.data()) v = rng.truncated_normal(std);
        return t;
    };
    auto zeros = [](std::vector<std::size_t> shape) { return Tensor(std::move(shape), 0.0); };
    auto ones = [](std::vector<std::size_t> shape) { return Tensor(std::move(shape), 1.0); };

    patch_w_ = add_param("patch_embed.weight", fan_in({config_.patch_dim(), d}));
    patch_b_ = add_param("patch_embed.bias", zeros({d}));
    cls_ = add_param("cls_token", zeros({1, d}));
    pos_ = add_param("pos_embed", sincos_position_init(trunc({s, d}), config_.grid()));
    const std::size_t hidden = config_.mlp_hidden();
    for (std::size_t b = 0; b < config_.depth; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        BlockParams bp{};
        bp.norm1_w = add_param(p + "norm1.weight", ones({d}));
        bp.norm1_b = add_param(p + "norm1.bias", zeros({d}));
        bp.qkv_w = add_param(p + "attn.qkv.weight", fan_in({d, 3 * d}));
        bp.qkv_b = add_param(p + "attn.qkv.bias", zeros({3 * d}));
        bp.proj_w = add_param(p + "attn.proj.weight", fan_in({d, d}));
        bp.proj_b = add_param(p + "attn.proj.bias", zeros({d}));
        bp.norm2_w = add_param(p + "norm2.weight", ones({d}));
        bp.norm2_b = add_param(p + "norm2.bias", zeros({d}));
        bp.fc1_w = add_param(p + "mlp.fc1.weight", fan_in({d, hidden}));
        bp.fc1_b = add_param(p + "mlp.fc1.bias", zeros({hidden}));
        bp.fc2_w = add_param(p + "mlp.fc2.weight", fan_in({hidden, d}));
        bp.fc2_b = add_param(p + "mlp.fc2.bias", zeros({d}));
        blocks_.push_back(bp);
    }
    norm_w_ = add_param("norm.weight", ones({d}));
    norm_b_ = add_param("norm.bias", zeros({d}));
    head_w_ = add_param("head.weight", fan_in({d, config_.num_classes}));
    head_b_ = add_param("head.bias", zeros({config_.num_classes}));
}

Tensor& VisionTransformer::param(std::string_view name) {
    for (auto& p : params_) {
        if (p.name == name) return p.value;
    }
    throw std::out_of_range("no parameter named " + std::string(name));
}

const Tensor& VisionTransformer::param(std::string_view name) const {
    return const_cast<VisionTransformer*>(this)->param(name);
}

std::size_t VisionTransformer::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void VisionTransformer::load_parameters(const std::vector<Parameter>& params) {
    if (params.size() != params_.size()) {
        throw std::invalid_argument("parameter count mismatch: expected " +
                                    std::to_string(params_.size()) + ", got " +
                                    std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != params_[i].name || !params[i].value.same_shape(params_[i].value)) {
            throw std::invalid_argument("parameter mismatch at " + params_[i].name + " " +
                                        shape_string(params_[i].value.shape()) + " vs " +
                                        params[i].name + " " +
                                        shape_string(params[i].value.shape()));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) params_[i].value = params[i].value;
}

void VisionTransformer::check_image(const Tensor& image) const {
    const auto& c = config_;
    if (image.rank() != 3 || image.dim(0) != c.image_size || image.dim(1) != c.image_size ||
        image.dim(2) != c.channels) {
        throw std::invalid_argument("image shape " + shape_string(image.shape()) +
                                    " does not match model input [" +
                                    std::to_string(c.image_size) + "x" +
                                    std::to_string(c.image_size) + "x" +
                                    std::to_string(c.channels) + "]");
    }
}

struct VisionTransformer::Recorder {
    Tape& tape;
    std::vector<NodeRef> leaves;
    NodeRef operator()(std::size_t index) const { return leaves[index]; }
};

NodeRef VisionTransformer::record_block(Recorder& rec, NodeRef x, std::size_t block, Mode mode,
                                        Rng* rng, bool padl_enabled, const Tensor* injected,
                                        PadlIntermediate* trace) const {
    Tape& t = rec.tape;
    const BlockParams& bp = blocks_.at(block);
    const double scale =
        config_.scale_attention ? 1.0 / std::sqrt(static_cast<double>(config_.head_dim)) : 1.0;

    auto padl = [&](NodeRef in) {
        if (mode != Mode::train || !padl_enabled) return in;
        const Tensor& v = t.value(in);
        PadlIntermediate local;
        PadlIntermediate& tr = trace ? *trace : local;
        tr.mean_attention = mean_attention(v);
        tr.importance_map = importance_map(tr.mean_attention);
        tr.drop_mask = drop_mask(tr.mean_attention, config_.padl_drop_threshold);
        tr.branch = draw_branch(config_.padl_embedding_drop_rate, *rng);
        if (tr.branch == PadlBranch::drop) {
            std::vector<double> factor = tr.drop_mask;
            if (config_.padl_exempt_cls) factor[0] = 1.0;
            return t.row_scale(in, std::move(factor));
        }
        return t.importance_scale(in, config_.padl_exempt_cls);
    };

    NodeRef h = t.layer_norm(x, rec(bp.norm1_w), rec(bp.norm1_b));
    NodeRef qkv = t.linear(h, rec(bp.qkv_w), rec(bp.qkv_b));
    NodeRef probs;
    if (injected) {
        probs = t.constant(*injected);
    } else {
        NodeRef scores = t.attention_scores(qkv, config_.heads, scale);
        probs = t.softmax(scores);
    }
    t.watch(probs);
    NodeRef z = t.attention_apply(probs, qkv, config_.heads);
    x = t.add(x, t.linear(z, rec(bp.proj_w), rec(bp.proj_b)));
    if (config_.padl_position == PadlPosition::between_msa_mlp) x = padl(x);
    NodeRef h2 = t.layer_norm(x, rec(bp.norm2_w), rec(bp.norm2_b));
    NodeRef f = t.gelu(t.linear(h2, rec(bp.fc1_w), rec(bp.fc1_b)));
    x = t.add(x, t.linear(f, rec(bp.fc2_w), rec(bp.fc2_b)));
    if (config_.padl_position == PadlPosition::after_mlp) x = padl(x);
    return x;
}

Tensor VisionTransformer::embed(const Tensor& patches) const {
    if (patches.rank() != 2 || patches.dim(0) + 1 != config_.seq_len() ||
        patches.dim(1) != config_.patch_dim()) {
        throw std::invalid_argument("embed: expected " + std::to_string(config_.num_patches()) +
                                    " patches of length " + std::to_string(config_.patch_dim()) +
                                    ", got " + shape_string(patches.shape()));
    }
    Tape t;
    NodeRef p = t.constant(patches);
    NodeRef pe = t.linear(p, t.parameter(params_[patch_w_].value, false),
                          t.parameter(params_[patch_b_].value, false));
    NodeRef x = t.prepend_row(t.parameter(params_[cls_].value, false), pe);
    x = t.add(x, t.parameter(params_[pos_].value, false));
    return t.value(x);
}

std::pair<Tensor, Tensor> VisionTransformer::encoder_block_forward(const Tensor& tokens,
                                                                   std::size_t block, Mode mode,
                                                                   Rng& rng,
                                                                   bool padl_enabled) const {
    if (block >= config_.depth) throw std::out_of_range("block index");
    if (tokens.rank() != 2 || tokens.dim(0) != config_.seq_len() ||
        tokens.dim(1) != config_.embed_dim) {
        throw std::invalid_argument("encoder block input shape " + shape_string(tokens.shape()));
    }
    Tape t;
    Recorder rec{t, {}};
    for (const auto& p : params_) rec.leaves.push_back(t.parameter(p.value, false));
    NodeRef x = t.constant(tokens);
    NodeRef out = record_block(rec, x, block, mode, &rng, padl_enabled, nullptr, nullptr);
    return {t.value(out), t.value(t.watched().back())};
}

ForwardResult VisionTransformer::forward(const Tensor& image, const ForwardOptions& options) const {
    check_image(image);
    const std::size_t k = config_.depth;
    const std::size_t s = config_.seq_len();
    if (options.injected) {
        const auto& inj = *options.injected;
        if (inj.size() != k) {
            throw std::invalid_argument("injected attention has " + std::to_string(inj.size()) +
                                        " blocks, model has " + std::to_string(k));
        }
        for (const auto& blk : inj) {
            if (blk && blk->shape() != std::vector<std::size_t>{config_.heads, s, s}) {
                throw std::invalid_argument("injected attention block shape " +
                                            shape_string(blk->shape()));
            }
        }
    }

    ForwardResult r;
    Tape& t = r.tape;
    t.set_softmax_jacobian(options.softmax_jacobian);
    Recorder rec{t, {}};
    for (const auto& p : params_) rec.leaves.push_back(t.parameter(p.value, options.param_grads));
    r.param_nodes = rec.leaves;

    NodeRef patches = t.constant(patchify(image, config_.patch_size));
    NodeRef x = t.linear(patches, rec(patch_w_), rec(patch_b_));
    x = t.prepend_row(rec(cls_), x);
    x = t.add(x, rec(pos_));

    const bool padl_on = options.mode == Mode::train && options.padl_enabled;
    Rng rng(options.padl_seed);
    if (padl_on) r.padl.resize(k);
    for (std::size_t b = 0; b < k; ++b) {
        const Tensor* injected = nullptr;
        if (options.injected && (*options.injected)[b]) injected = &*(*options.injected)[b];
        x = record_block(rec, x, b, options.mode, &rng, options.padl_enabled, injected,
                         padl_on ? &r.padl[b] : nullptr);
    }
    r.final_embeddings = t.value(x);
    NodeRef y = t.layer_norm(x, rec(norm_w_), rec(norm_b_));
    NodeRef logits = t.linear(t.select_row(y, 0), rec(head_w_), rec(head_b_));
    r.logits_node = logits;
    const Tensor& lv = t.value(logits);
    r.logits = Tensor({lv.size()}, std::vector<double>(lv.data().begin(), lv.data().end()));
    r.attention_nodes = t.watched();
    for (NodeRef n : r.attention_nodes) r.attention.push_back(t.value(n));
    return r;
}

NodeRef target_scalar(ForwardResult& result, std::size_t target_class, GradTarget target) {
    if (target_class >= result.logits.size()) {
        throw std::out_of_range("target class " + std::to_string(target_class) +
                                " out of range");
    }
    return target == GradTarget::logit ? result.tape.pick(result.logits_node, target_class)
                                       : result.tape.softmax_pick(result.logits_node, target_class);
}

GradStack attention_gradients(ForwardResult& result, std::size_t target_class, GradTarget target) {
    return backward_attention_grads(result.tape, target_scalar(result, target_class, target));
}

}  // namespace vitol
