#include "vitol/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include "vitol/io_error.hpp"

namespace vitol {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("invalid unsigned integer for '" + std::string(key) + "': '" +
                          std::string(v) + "'");
    }
    return out;
}

double parse_real(std::string_view key, std::string_view v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError("invalid number for '" + std::string(key) + "': '" + std::string(v) +
                          "'");
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("invalid boolean for '" + std::string(key) + "': '" + std::string(v) + "'");
}

std::string fmt_real(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

[[noreturn]] void bad_choice(std::string_view key, std::string_view v) {
    throw ConfigError("invalid value for '" + std::string(key) + "': '" + std::string(v) + "'");
}

PadlPosition parse_position(std::string_view key, std::string_view v) {
    if (v == "after_mlp") return PadlPosition::after_mlp;
    if (v == "between_msa_mlp") return PadlPosition::between_msa_mlp;
    bad_choice(key, v);
}

}  // namespace

std::string to_string(AttributionMethod m) { return m == AttributionMethod::ar ? "AR" : "GAR"; }

std::string to_string(ClassSource c) {
    return c == ClassSource::predicted ? "predicted" : "ground_truth";
}

std::string to_string(PadlPosition p) {
    return p == PadlPosition::after_mlp ? "after_mlp" : "between_msa_mlp";
}

std::size_t ModelConfig::mlp_hidden() const {
    return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(embed_dim)));
}

void ModelConfig::validate() const {
    if (image_size == 0 || channels == 0 || patch_size == 0 || depth == 0 || embed_dim == 0 ||
        heads == 0 || num_classes == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (image_size % patch_size != 0) {
        throw ConfigError("image_size " + std::to_string(image_size) +
                          " is not divisible by patch_size " + std::to_string(patch_size));
    }
    if (embed_dim != heads * head_dim) {
        throw ConfigError("embed_dim must equal heads * head_dim");
    }
    if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) throw ConfigError("mlp_ratio must be positive");
    if (!(padl_drop_threshold > 0.0 && padl_drop_threshold <= 1.0)) {
        throw ConfigError("padl_drop_threshold must lie in (0, 1]");
    }
    if (!(padl_embedding_drop_rate >= 0.0 && padl_embedding_drop_rate <= 1.0)) {
        throw ConfigError("padl_embedding_drop_rate must lie in [0, 1]");
    }
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "image_size=" << image_size << '\n'
       << "channels=" << channels << '\n'
       << "patch_size=" << patch_size << '\n'
       << "depth=" << depth << '\n'
       << "embed_dim=" << embed_dim << '\n'
       << "heads=" << heads << '\n'
       << "head_dim=" << head_dim << '\n'
       << "mlp_ratio=" << fmt_real(mlp_ratio) << '\n'
       << "num_classes=" << num_classes << '\n'
       << "padl_drop_threshold=" << fmt_real(padl_drop_threshold) << '\n'
       << "padl_embedding_drop_rate=" << fmt_real(padl_embedding_drop_rate) << '\n'
       << "padl_position=" << to_string(padl_position) << '\n'
       << "padl_exempt_cls=" << (padl_exempt_cls ? "true" : "false") << '\n'
       << "scale_attention=" << (scale_attention ? "true" : "false") << '\n'
       << "seed=" << seed << '\n';
    return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
    ModelConfig c;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("malformed model config line");
        const auto k = line.substr(0, eq);
        const auto v = line.substr(eq + 1);
        if (k == "image_size") c.image_size = parse_uint(k, v);
        else if (k == "channels") c.channels = parse_uint(k, v);
        else if (k == "patch_size") c.patch_size = parse_uint(k, v);
        else if (k == "depth") c.depth = parse_uint(k, v);
        else if (k == "embed_dim") c.embed_dim = parse_uint(k, v);
        else if (k == "heads") c.heads = parse_uint(k, v);
        else if (k == "head_dim") c.head_dim = parse_uint(k, v);
        else if (k == "mlp_ratio") c.mlp_ratio = parse_real(k, v);
        else if (k == "num_classes") c.num_classes = parse_uint(k, v);
        else if (k == "padl_drop_threshold") c.padl_drop_threshold = parse_real(k, v);
        else if (k == "padl_embedding_drop_rate") c.padl_embedding_drop_rate = parse_real(k, v);
        else if (k == "padl_position") c.padl_position = parse_position(k, v);
        else if (k == "padl_exempt_cls") c.padl_exempt_cls = parse_bool(k, v);
        else if (k == "scale_attention") c.scale_attention = parse_bool(k, v);
        else if (k == "seed") c.seed = parse_uint(k, v);
        else throw ConfigError("unknown model config key '" + std::string(k) + "'");
    }
    c.validate();
    return c;
}

ModelConfig ModelConfig::deit_small() {
    ModelConfig c;
    c.image_size = 224;
    c.patch_size = 16;
    c.depth = 12;
    c.embed_dim = 384;
    c.heads = 6;
    c.head_dim = 64;
    c.num_classes = 1000;
    return c;
}

ModelConfig ModelConfig::deit_base() {
    ModelConfig c = deit_small();
    c.embed_dim = 768;
    c.heads = 12;
    return c;
}

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.depth = 2;
    c.embed_dim = 16;
    c.heads = 2;
    c.head_dim = 8;
    c.num_classes = 3;
    return c;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
    if (lr_decay_interval == 0) throw ConfigError("lr_decay_interval must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
}

void DatasetSpec::validate() const {
    if (num_classes == 0 || train_images == 0 || test_images == 0) {
        throw ConfigError("dataset counts must be positive");
    }
    if (num_classes > 8) throw ConfigError("the shapes dataset has at most 8 classes");
    if (image_size < 16) throw ConfigError("image_size must be at least 16");
    if (!(area_min > 0.0 && area_min <= area_max && area_max < 1.0)) {
        throw ConfigError("area fractions must satisfy 0 < area_min <= area_max < 1");
    }
    if (clutter_density < 0.0) throw ConfigError("clutter_density must be nonnegative");
}

std::string DatasetSpec::to_text() const {
    std::ostringstream os;
    os << "num_classes=" << num_classes << '\n'
       << "train_images=" << train_images << '\n'
       << "test_images=" << test_images << '\n'
       << "image_size=" << image_size << '\n'
       << "area_min=" << fmt_real(area_min) << '\n'
       << "area_max=" << fmt_real(area_max) << '\n'
       << "clutter_density=" << fmt_real(clutter_density) << '\n'
       << "seed=" << seed << '\n';
    return os.str();
}

void RunConfig::set(std::string_view key, std::string_view raw) {
    const auto k = trim(key);
    const auto v = trim(raw);
    // Shared keys.
    if (k == "image_size") {
        model.image_size = data.image_size = parse_uint(k, v);
    } else if (k == "num_classes") {
        model.num_classes = data.num_classes = parse_uint(k, v);
    } else if (k == "seed") {
        model.seed = train.seed = parse_uint(k, v);
    }
    // Model.
    else if (k == "channels") model.channels = parse_uint(k, v);
    else if (k == "patch_size") model.patch_size = parse_uint(k, v);
    else if (k == "depth") model.depth = parse_uint(k, v);
    else if (k == "embed_dim") {
        model.embed_dim = parse_uint(k, v);
        if (model.heads) model.head_dim = model.embed_dim / model.heads;
    } else if (k == "heads") {
        model.heads = parse_uint(k, v);
        if (model.heads) model.head_dim = model.embed_dim / model.heads;
    } else if (k == "head_dim") model.head_dim = parse_uint(k, v);
    else if (k == "mlp_ratio") model.mlp_ratio = parse_real(k, v);
    else if (k == "padl_drop_threshold") model.padl_drop_threshold = parse_real(k, v);
    else if (k == "padl_embedding_drop_rate") model.padl_embedding_drop_rate = parse_real(k, v);
    else if (k == "padl_position") model.padl_position = parse_position(k, v);
    else if (k == "padl_exempt_cls") model.padl_exempt_cls = parse_bool(k, v);
    else if (k == "scale_attention") model.scale_attention = parse_bool(k, v);
    // Training.
    else if (k == "epochs") train.epochs = parse_uint(k, v);
    else if (k == "learning_rate") train.learning_rate = parse_real(k, v);
    else if (k == "weight_decay") train.weight_decay = parse_real(k, v);
    else if (k == "lr_decay") train.lr_decay = parse_real(k, v);
    else if (k == "lr_decay_interval") train.lr_decay_interval = parse_uint(k, v);
    else if (k == "batch_size") train.batch_size = parse_uint(k, v);
    else if (k == "padl_enabled") train.padl_enabled = parse_bool(k, v);
    else if (k == "optimizer") {
        if (v == "adam") train.optimizer = OptimizerKind::adam;
        else if (v == "sgd") train.optimizer = OptimizerKind::sgd;
        else bad_choice(k, v);
    }
    // Dataset.
    else if (k == "train_images") data.train_images = parse_uint(k, v);
    else if (k == "test_images") data.test_images = parse_uint(k, v);
    else if (k == "area_min") data.area_min = parse_real(k, v);
    else if (k == "area_max") data.area_max = parse_real(k, v);
    else if (k == "clutter_density") data.clutter_density = parse_real(k, v);
    else if (k == "data_seed") data.seed = parse_uint(k, v);
    // Evaluation.
    else if (k == "method") {
        if (v == "AR" || v == "ar") eval.method = AttributionMethod::ar;
        else if (v == "GAR" || v == "gar") eval.method = AttributionMethod::gar;
        else bad_choice(k, v);
    } else if (k == "class_source") {
        if (v == "predicted") eval.class_source = ClassSource::predicted;
        else if (v == "ground_truth") eval.class_source = ClassSource::ground_truth;
        else bad_choice(k, v);
    } else if (k == "tau_grid") eval.tau_grid = parse_uint(k, v);
    else if (k == "component_policy") {
        if (v == "largest") eval.component_policy = ComponentPolicy::largest;
        else if (v == "best") eval.component_policy = ComponentPolicy::best;
        else bad_choice(k, v);
    } else if (k == "grad_target") {
        if (v == "logit") eval.grad_target = GradTarget::logit;
        else if (v == "probability") eval.grad_target = GradTarget::probability;
        else bad_choice(k, v);
    } else if (k == "clamp_before_mean") eval.rollout.clamp_before_mean = parse_bool(k, v);
    else if (k == "row_normalize") eval.rollout.row_normalize = parse_bool(k, v);
    else if (k == "workers") eval.workers = parse_uint(k, v);
    else throw ConfigError("unknown config key '" + std::string(k) + "'");
}

void RunConfig::apply_text(std::string_view text, std::string_view origin) {
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) +
                              ": expected key=value");
        }
        try {
            set(line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " +
                              e.what());
        }
    }
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str(), path);
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    data.validate();
    if (eval.tau_grid == 0) throw ConfigError("tau_grid must be positive");
    if (model.image_size != data.image_size || model.num_classes != data.num_classes) {
        throw ConfigError("model and dataset disagree on image_size/num_classes");
    }
}

}  // namespace vitol
