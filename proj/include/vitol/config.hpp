#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vitol {

// Malformed or inconsistent configuration.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class PadlPosition { after_mlp, between_msa_mlp };

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t channels = 3;
    std::size_t patch_size = 8;
    std::size_t depth = 4;
    std::size_t embed_dim = 64;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    double mlp_ratio = 4.0;
    std::size_t num_classes = 8;
    double padl_drop_threshold = 0.9;
    double padl_embedding_drop_rate = 0.75;
    PadlPosition padl_position = PadlPosition::after_mlp;
    bool padl_exempt_cls = false;
    // Divide attention logits by sqrt(head_dim).
    bool scale_attention = true;
    std::uint64_t seed = 0;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t seq_len() const { return num_patches() + 1; }
    std::size_t patch_dim() const { return patch_size * patch_size * channels; }
    std::size_t mlp_hidden() const;

    void validate() const;

    // key=value lines, one field per line, fixed order.
    std::string to_text() const;
    static ModelConfig from_text(std::string_view text);

    static ModelConfig deit_small();
    static ModelConfig deit_base();
    // K=2, d=16, h=2, s=5.
    static ModelConfig toy();

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    std::size_t epochs = 12;
    double learning_rate = 5e-4;
    double weight_decay = 0.0;
    double lr_decay = 0.1;
    std::size_t lr_decay_interval = 10;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    bool padl_enabled = true;
    OptimizerKind optimizer = OptimizerKind::adam;

    void validate() const;
};

struct DatasetSpec {
    std::size_t num_classes = 8;
    std::size_t train_images = 2000;
    std::size_t test_images = 500;
    std::size_t image_size = 64;
    double area_min = 0.05;
    double area_max = 0.30;
    double clutter_density = 1.0;
    std::uint64_t seed = 7;

    void validate() const;
    std::string to_text() const;
};

enum class AttributionMethod { ar, gar };
enum class ClassSource { predicted, ground_truth };
enum class ComponentPolicy { largest, best };
enum class GradTarget { logit, probability };

struct RolloutOptions {
    // Clamp gradient*attention before the head mean (otherwise after).
    bool clamp_before_mean = true;
    bool row_normalize = true;
};

struct EvalOptions {
    AttributionMethod method = AttributionMethod::gar;
    ClassSource class_source = ClassSource::ground_truth;
    std::size_t tau_grid = 128;
    ComponentPolicy component_policy = ComponentPolicy::largest;
    GradTarget grad_target = GradTarget::logit;
    RolloutOptions rollout;
    std::size_t workers = 1;
};

// Everything a command may need, read from a flat key=value file.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DatasetSpec data;
    EvalOptions eval;

    // Applies one assignment; unknown keys and bad values throw ConfigError.
    void set(std::string_view key, std::string_view value);
    // Parses "key=value" lines, '#' starts a comment.
    void apply_text(std::string_view text, std::string_view origin = "config");
    void load_file(const std::string& path);
    void validate() const;
};

std::string to_string(AttributionMethod m);
std::string to_string(ClassSource c);
std::string to_string(PadlPosition p);

}  // namespace vitol
