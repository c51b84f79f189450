#include "vitol/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace vitol {

namespace {

void require_nonempty(std::span<const Prediction> preds) {
    if (preds.empty()) throw std::invalid_argument("no predictions to evaluate");
}

double percent(std::size_t hits, std::size_t total) {
    return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// IoU of each image at each grid threshold.
std::vector<std::vector<double>> iou_table(std::span<const Prediction> preds,
                                           std::span<const double> grid,
                                           ComponentPolicy policy) {
    std::vector<std::vector<double>> table(preds.size(), std::vector<double>(grid.size()));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (std::size_t t = 0; t < grid.size(); ++t) {
            table[i][t] = localization_iou(preds[i], grid[t], policy);
        }
    }
    return table;
}

}  // namespace

std::string to_string(const BBox& b) {
    return std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
           std::to_string(b.y1);
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Tensor normalize_map(const Tensor& map) {
    if (map.empty()) return map;
    const auto [mn, mx] = std::minmax_element(map.data().begin(), map.data().end());
    const double lo = *mn, range = *mx - *mn;
    Tensor out(map.shape(), 0.0);
    if (!(range > 0.0)) return out;
    for (std::size_t i = 0; i < map.size(); ++i) out[i] = (map[i] - lo) / range;
    return out;
}

BinaryMask binarize(const Tensor& map, double tau) {
    if (map.rank() != 2) throw std::invalid_argument("binarize expects a 2-D map");
    BinaryMask mask(map.dim(0), map.dim(1));
    for (std::size_t i = 0; i < map.size(); ++i) mask.bits[i] = map[i] > tau ? 1 : 0;
    return mask;
}

std::vector<Component> connected_components(const BinaryMask& mask) {
    const std::size_t h = mask.height, w = mask.width;
    std::vector<std::uint8_t> seen(h * w, 0);
    std::vector<std::size_t> stack;
    std::vector<Component> out;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (!mask.bits[start] || seen[start]) continue;
        Component c;
        int x0 = std::numeric_limits<int>::max(), y0 = x0, x1 = -1, y1 = -1;
        seen[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const auto y = static_cast<int>(p / w), x = static_cast<int>(p % w);
            ++c.area;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x + 1);
            y1 = std::max(y1, y + 1);
            auto visit = [&](std::size_t q) {
                if (mask.bits[q] && !seen[q]) {
                    seen[q] = 1;
                    stack.push_back(q);
                }
            };
            if (x > 0) visit(p - 1);
            if (static_cast<std::size_t>(x) + 1 < w) visit(p + 1);
            if (y > 0) visit(p - w);
            if (static_cast<std::size_t>(y) + 1 < h) visit(p + w);
        }
        c.box = {x0, y0, x1, y1};
        out.push_back(c);
    }
    return out;
}

std::optional<BBox> box_from_mask(const BinaryMask& mask) {
    const auto comps = connected_components(mask);
    if (comps.empty()) return std::nullopt;
    const Component* best = &comps.front();
    for (const auto& c : comps) {
        if (c.area > best->area) best = &c;
    }
    return best->box;
}

double iou(const BBox& a, const BBox& b) {
    const int ix = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const int iy = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const long long inter = static_cast<long long>(ix) * iy;
    const long long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

std::vector<double> threshold_grid(std::size_t n) {
    std::vector<double> grid(n);
    for (std::size_t k = 0; k < n; ++k) grid[k] = static_cast<double>(k) / static_cast<double>(n);
    return grid;
}

double localization_iou(const Prediction& pred, double tau, ComponentPolicy policy) {
    if (pred.gt_boxes.empty()) throw std::invalid_argument("prediction without ground truth");
    const BinaryMask mask = binarize(pred.map, tau);
    auto best_vs_gt = [&pred](const BBox& box) {
        double best = 0.0;
        for (const auto& gt : pred.gt_boxes) best = std::max(best, iou(box, gt));
        return best;
    };
    if (policy == ComponentPolicy::largest) {
        const auto box = box_from_mask(mask);
        return box ? best_vs_gt(*box) : 0.0;
    }
    double best = 0.0;
    for (const auto& c : connected_components(mask)) best = std::max(best, best_vs_gt(c.box));
    return best;
}

double box_acc(std::span<const Prediction> preds, double delta, double tau,
               ComponentPolicy policy) {
    require_nonempty(preds);
    std::size_t hits = 0;
    for (const auto& p : preds) {
        if (localization_iou(p, tau, policy) > delta) ++hits;
    }
    return percent(hits, preds.size());
}

double aggregate_max_box_acc(const std::array<double, 3>& per_delta) {
    return (per_delta[0] + per_delta[1] + per_delta[2]) / 3.0;
}

namespace {

// Fills the per-delta bests from a precomputed table. Earliest tau wins ties.
void sweep(const std::vector<std::vector<double>>& table, std::span<const double> grid,
           EvalReport& report) {
    const std::size_t n = table.size();
    for (std::size_t d = 0; d < kIouThresholds.size(); ++d) {
        double best = -1.0;
        double best_tau = grid.empty() ? 0.0 : grid[0];
        for (std::size_t t = 0; t < grid.size(); ++t) {
            std::size_t hits = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (table[i][t] > kIouThresholds[d]) ++hits;
            }
            const double acc = percent(hits, n);
            if (acc > best) {
                best = acc;
                best_tau = grid[t];
            }
        }
        report.box_acc[d] = best;
        report.best_tau[d] = best_tau;
    }
    report.max_box_acc_v2 = aggregate_max_box_acc(report.box_acc);
    report.gt_known = report.box_acc[1];
    report.top1_loc_tau = report.best_tau[1];
}

}  // namespace

EvalReport max_box_acc_v2(std::span<const Prediction> preds, std::span<const double> grid,
                          ComponentPolicy policy) {
    require_nonempty(preds);
    if (grid.empty()) throw std::invalid_argument("empty threshold grid");
    EvalReport report;
    report.num_images = preds.size();
    sweep(iou_table(preds, grid, policy), grid, report);
    return report;
}

double gt_known(std::span<const Prediction> preds, std::span<const double> grid,
                ComponentPolicy policy) {
    return max_box_acc_v2(preds, grid, policy).gt_known;
}

double top1_loc(std::span<const Prediction> preds, double tau, ComponentPolicy policy) {
    require_nonempty(preds);
    std::size_t hits = 0;
    for (const auto& p : preds) {
        if (p.predicted_class == p.label && localization_iou(p, tau, policy) > 0.5) ++hits;
    }
    return percent(hits, preds.size());
}

double top1_cls(std::span<const Prediction> preds) {
    require_nonempty(preds);
    const auto hits = std::count_if(preds.begin(), preds.end(), [](const Prediction& p) {
        return p.predicted_class == p.label;
    });
    return percent(static_cast<std::size_t>(hits), preds.size());
}

EvalReport evaluate_predictions(std::span<const Prediction> preds, std::span<const double> grid,
                                ComponentPolicy policy) {
    require_nonempty(preds);
    if (grid.empty()) throw std::invalid_argument("empty threshold grid");
    EvalReport report;
    report.num_images = preds.size();
    const auto table = iou_table(preds, grid, policy);
    sweep(table, grid, report);
    const std::size_t tau_index = static_cast<std::size_t>(
        std::find(grid.begin(), grid.end(), report.top1_loc_tau) - grid.begin());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].predicted_class == preds[i].label && table[i][tau_index] > 0.5) ++hits;
    }
    report.top1_loc = percent(hits, preds.size());
    report.top1_cls = top1_cls(preds);
    return report;
}

std::string EvalReport::to_text() const {
    std::string s;
    s += "num_images=" + std::to_string(num_images) + "\n";
    for (std::size_t d = 0; d < kIouThresholds.size(); ++d) {
        const std::string tag = std::to_string(static_cast<int>(kIouThresholds[d] * 100 + 0.5));
        s += "box_acc_iou" + tag + "=" + fmt(box_acc[d]) + "\n";
        s += "best_tau_iou" + tag + "=" + fmt(best_tau[d]) + "\n";
    }
    s += "max_box_acc_v2=" + fmt(max_box_acc_v2) + "\n";
    s += "gt_known=" + fmt(gt_known) + "\n";
    s += "top1_loc=" + fmt(top1_loc) + "\n";
    s += "top1_loc_tau=" + fmt(top1_loc_tau) + "\n";
    s += "top1_cls=" + fmt(top1_cls) + "\n";
    return s;
}

std::string EvalReport::to_tsv() const {
    std::string s = "metric\tdelta\ttau\tvalue\n";
    for (std::size_t d = 0; d < kIouThresholds.size(); ++d) {
        s += "box_acc\t" + fmt(kIouThresholds[d]) + "\t" + fmt(best_tau[d]) + "\t" +
             fmt(box_acc[d]) + "\n";
    }
    s += "max_box_acc_v2\tmean\t-\t" + fmt(max_box_acc_v2) + "\n";
    s += "gt_known\t" + fmt(0.5) + "\t" + fmt(best_tau[1]) + "\t" + fmt(gt_known) + "\n";
    s += "top1_loc\t" + fmt(0.5) + "\t" + fmt(top1_loc_tau) + "\t" + fmt(top1_loc) + "\n";
    s += "top1_cls\t-\t-\t" + fmt(top1_cls) + "\n";
    return s;
}

}  // namespace vitol
