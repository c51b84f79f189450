#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vitol/config.hpp"
#include "vitol/metrics.hpp"
#include "vitol/tensor.hpp"

namespace vitol {

// One labeled image. `image` stays empty until the pixels are loaded.
struct Sample {
    std::string path;
    std::size_t label = 0;
    std::vector<BBox> boxes;
    Tensor image;
};

enum class Split { train, test };

std::string to_string(Split split);

// Foreground geometry per class, in box-normalized coordinates.
enum class ShapeKind { ellipse, rectangle, triangle, diamond, cross, ring, star, ell };

ShapeKind shape_for_class(std::size_t label);
std::string to_string(ShapeKind kind);
// Is the box-normalized point (u, v) in [0,1]^2 inside the shape?
bool shape_contains(ShapeKind kind, double u, double v);
// Exact fraction of the unit box covered by the shape.
double shape_area_fraction(ShapeKind kind);

struct RenderedSample {
    Tensor image;
    std::size_t label = 0;
    BBox box;
    BinaryMask shape_mask;
};

// Deterministic function of (spec, split, index).
RenderedSample render_sample(const DatasetSpec& spec, Split split, std::size_t index);

struct GenerateSummary {
    std::size_t train_images = 0;
    std::size_t test_images = 0;
};

// Writes out_dir/{train,test}/ each holding images/*.ppm, annotations.tsv and spec.txt.
GenerateSummary generate(const DatasetSpec& spec, const std::string& out_dir);

// Parses an annotation index. When image_size > 0 boxes must lie inside it.
std::vector<Sample> load_annotations(const std::string& path, std::size_t image_size = 0);

// Annotations plus pixels for one split directory.
std::vector<Sample> load_split(const std::string& split_dir, std::size_t image_size);

// Binary P6 with maxval 255, scaled to [0, 1].
Tensor read_image(const std::string& path, std::size_t expected_size = 0);
void write_ppm(const std::string& path, const Tensor& image);
// Grayscale P5 from an H x W map in [0, 1].
void write_pgm(const std::string& path, const Tensor& map);
std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(const std::string& bytes);

}  // namespace vitol
