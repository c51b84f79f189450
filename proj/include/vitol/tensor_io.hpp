#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vitol/attribution.hpp"
#include "vitol/vit.hpp"

namespace vitol {

// Binary named-tensor container shared by checkpoints and attribution stacks.
// All integers and floats are little-endian:
//
//   "VTOL"                      4 bytes
//   format version              u32
//   config block length         u32, followed by that many bytes of UTF-8
//                               key=value lines (empty for stack files)
//   repeated until end of file:
//     name length               u32
//     name                      UTF-8 bytes
//     rank                      u32
//     dims                      rank x u64
//     values                    prod(dims) x f64
inline constexpr std::array<char, 4> kFileMagic{'V', 'T', 'O', 'L'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct TensorFile {
    std::string config_text;
    std::vector<Parameter> tensors;
};

std::string encode_tensor_file(const TensorFile& file);
TensorFile decode_tensor_file(const std::string& bytes);

void write_tensor_file(const std::string& path, const TensorFile& file);
TensorFile read_tensor_file(const std::string& path);

void save_checkpoint(const std::string& path, const VisionTransformer& model);
VisionTransformer load_checkpoint(const std::string& path);

// Interchange for relevance rollout: tensors "attn.b", "grad.b", "rel.b".
struct StackFile {
    AttentionStack attention;
    GradStack grads;
    RelevanceStack relevances;
};

void save_stacks(const std::string& path, const StackFile& stacks);
StackFile load_stacks(const std::string& path);

}  // namespace vitol
