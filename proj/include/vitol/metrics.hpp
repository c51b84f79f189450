#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vitol/config.hpp"
#include "vitol/tensor.hpp"

namespace vitol {

// Half-open pixel box [x0, x1) x [y0, y1).
struct BBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    long long area() const { return static_cast<long long>(x1 - x0) * (y1 - y0); }
    bool valid() const { return x0 >= 0 && y0 >= 0 && x0 < x1 && y0 < y1; }
    bool within(int width, int height) const { return valid() && x1 <= width && y1 <= height; }

    friend bool operator==(const BBox&, const BBox&) = default;
};

std::string to_string(const BBox& b);

struct BinaryMask {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}
    std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
    std::size_t count() const;
};

struct Component {
    std::size_t area = 0;
    BBox box;
};

// Min-max normalization to [0, 1]; a constant map becomes all zeros.
Tensor normalize_map(const Tensor& map);

// mask = map > tau.
BinaryMask binarize(const Tensor& map, double tau);

// 4-connected components, ordered by the raster position of their first pixel.
std::vector<Component> connected_components(const BinaryMask& mask);

// Tight box around the largest component (earliest on ties); nullopt when empty.
std::optional<BBox> box_from_mask(const BinaryMask& mask);

double iou(const BBox& a, const BBox& b);

struct Prediction {
    std::string id;
    // Normalized to [0, 1], image resolution.
    Tensor map;
    std::size_t predicted_class = 0;
    std::size_t label = 0;
    std::vector<BBox> gt_boxes;
};

inline constexpr std::array<double, 3> kIouThresholds{0.3, 0.5, 0.7};

// {k / n : k = 0..n-1}.
std::vector<double> threshold_grid(std::size_t n);

// Best IoU against any ground-truth box for the box extracted at tau; 0 for an
// empty mask. With ComponentPolicy::best every component's box is tried.
double localization_iou(const Prediction& pred, double tau,
                        ComponentPolicy policy = ComponentPolicy::largest);

// Percentage of images whose box has IoU > delta with some ground-truth box.
double box_acc(std::span<const Prediction> preds, double delta, double tau,
               ComponentPolicy policy = ComponentPolicy::largest);

struct EvalReport {
    std::size_t num_images = 0;
    std::array<double, 3> box_acc{};
    std::array<double, 3> best_tau{};
    double max_box_acc_v2 = 0.0;
    double gt_known = 0.0;
    double top1_loc = 0.0;
    double top1_cls = 0.0;
    // Threshold used for Top-1-Loc (best tau at IoU 0.5).
    double top1_loc_tau = 0.0;

    std::string to_text() const;
    std::string to_tsv() const;
};

// Mean of the three per-threshold box accuracies.
double aggregate_max_box_acc(const std::array<double, 3>& per_delta);

// Best accuracy over the grid for each IoU threshold plus their mean.
// Fills box_acc, best_tau and max_box_acc_v2.
EvalReport max_box_acc_v2(std::span<const Prediction> preds, std::span<const double> grid,
                          ComponentPolicy policy = ComponentPolicy::largest);

double gt_known(std::span<const Prediction> preds, std::span<const double> grid,
                ComponentPolicy policy = ComponentPolicy::largest);

// Correct class and IoU > 0.5 at the given threshold.
double top1_loc(std::span<const Prediction> preds, double tau,
                ComponentPolicy policy = ComponentPolicy::largest);

double top1_cls(std::span<const Prediction> preds);

// Every metric; Top-1-Loc uses the threshold that maximizes GT-known.
EvalReport evaluate_predictions(std::span<const Prediction> preds, std::span<const double> grid,
                                ComponentPolicy policy = ComponentPolicy::largest);

}  // namespace vitol
