#include "vitol/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "vitol/io_error.hpp"
#include "vitol/rng.hpp"

namespace fs = std::filesystem;

namespace vitol {

namespace {

struct Point {
    double x, y;
};

// Five-pointed star normalized to its own bounding box.
const std::vector<Point>& star_polygon() {
    static const std::vector<Point> poly = [] {
        std::vector<Point> p;
        for (int k = 0; k < 10; ++k) {
            const double r = k % 2 == 0 ? 1.0 : 0.45;
            const double a = -std::numbers::pi / 2 + k * std::numbers::pi / 5;
            p.push_back({r * std::cos(a), r * std::sin(a)});
        }
        double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
        for (const auto& q : p) {
            x0 = std::min(x0, q.x);
            x1 = std::max(x1, q.x);
            y0 = std::min(y0, q.y);
            y1 = std::max(y1, q.y);
        }
        for (auto& q : p) q = {(q.x - x0) / (x1 - x0), (q.y - y0) / (y1 - y0)};
        return p;
    }();
    return poly;
}

bool in_polygon(const std::vector<Point>& poly, double x, double y) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point& a = poly[i];
        const Point& b = poly[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) {
            inside = !inside;
        }
    }
    return inside;
}

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    }
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Paints `color` with opacity `alpha` wherever inside(x, y) holds (pixel centers).
template <class Inside>
void paint(Tensor& img, const std::array<double, 3>& color, double alpha, Inside inside) {
    const std::size_t n = img.dim(0);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            if (!inside(x + 0.5, y + 0.5)) continue;
            for (std::size_t c = 0; c < 3; ++c) {
                double& v = img.at(y, x, c);
                v = (1.0 - alpha) * v + alpha * color[c];
            }
        }
    }
}

}  // namespace

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

ShapeKind shape_for_class(std::size_t label) {
    static constexpr std::array<ShapeKind, 8> kinds{
        ShapeKind::ellipse, ShapeKind::rectangle, ShapeKind::triangle, ShapeKind::diamond,
        ShapeKind::cross,   ShapeKind::ring,      ShapeKind::star,     ShapeKind::ell};
    return kinds.at(label);
}

std::string to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::ellipse: return "ellipse";
        case ShapeKind::rectangle: return "rectangle";
        case ShapeKind::triangle: return "triangle";
        case ShapeKind::diamond: return "diamond";
        case ShapeKind::cross: return "cross";
        case ShapeKind::ring: return "ring";
        case ShapeKind::star: return "star";
        case ShapeKind::ell: return "ell";
    }
    return "?";
}

bool shape_contains(ShapeKind kind, double u, double v) {
    if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) return false;
    const double cx = 2.0 * u - 1.0, cy = 2.0 * v - 1.0;
    switch (kind) {
        case ShapeKind::ellipse: return cx * cx + cy * cy <= 1.0;
        case ShapeKind::rectangle: return true;
        case ShapeKind::triangle: return std::abs(cx) <= v;
        case ShapeKind::diamond: return std::abs(cx) + std::abs(cy) <= 1.0;
        case ShapeKind::cross: return std::abs(cx) <= 1.0 / 3.0 || std::abs(cy) <= 1.0 / 3.0;
        case ShapeKind::ring: {
            const double r2 = cx * cx + cy * cy;
            return r2 <= 1.0 && r2 >= 0.25;
        }
        case ShapeKind::star: return in_polygon(star_polygon(), u, v);
        case ShapeKind::ell: return u <= 0.4 || v >= 0.6;
    }
    return false;
}

double shape_area_fraction(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::ellipse: return std::numbers::pi / 4.0;
        case ShapeKind::rectangle: return 1.0;
        case ShapeKind::triangle: return 0.5;
        case ShapeKind::diamond: return 0.5;
        case ShapeKind::cross: return 5.0 / 9.0;
        case ShapeKind::ring: return std::numbers::pi / 4.0 * 0.75;
        case ShapeKind::star: {
            const auto& p = star_polygon();
            double twice = 0.0;
            for (std::size_t i = 0, j = p.size() - 1; i < p.size(); j = i++) {
                twice += p[j].x * p[i].y - p[i].x * p[j].y;
            }
            return std::abs(twice) / 2.0;
        }
        case ShapeKind::ell: return 1.0 - 0.6 * 0.6;
    }
    return 0.0;
}

RenderedSample render_sample(const DatasetSpec& spec, Split split, std::size_t index) {
    Rng rng(derive_seed({spec.seed, split == Split::train ? 1u : 2u, index}));
    const std::size_t n = spec.image_size;
    const double size = static_cast<double>(n);

    RenderedSample out;
    out.label = index % spec.num_classes;
    const ShapeKind kind = shape_for_class(out.label);

    // Textured background: base tone, linear gradient, per-pixel grain.
    Tensor img({n, n, 3});
    const double base = rng.uniform(0.15, 0.4);
    std::array<double, 3> tint{};
    for (double& t : tint) t = rng.uniform(-0.08, 0.08);
    const double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double ramp = gx * (x / size - 0.5) + gy * (y / size - 0.5);
            for (std::size_t c = 0; c < 3; ++c) {
                img.at(y, x, c) = base + tint[c] + ramp + rng.uniform(-0.06, 0.06);
            }
        }
    }

    // Clutter: faint strokes and low-contrast blobs made of a few overlapping discs.
    const auto strokes = static_cast<std::size_t>(std::lround(4.0 * spec.clutter_density));
    const auto blobs = static_cast<std::size_t>(std::lround(5.0 * spec.clutter_density));
    for (std::size_t i = 0; i < strokes; ++i) {
        const double x0 = rng.uniform(0, size), y0 = rng.uniform(0, size);
        const double ang = rng.uniform(0, std::numbers::pi);
        const double len = rng.uniform(0.3, 0.9) * size;
        const double dx = std::cos(ang), dy = std::sin(ang);
        const double half_width = rng.uniform(0.5, 1.2);
        std::array<double, 3> col{};
        const double shift = rng.uniform(-0.15, 0.15);
        for (double& c : col) c = base + shift + rng.uniform(-0.05, 0.05);
        paint(img, col, 0.7, [&](double px, double py) {
            const double t = (px - x0) * dx + (py - y0) * dy;
            const double dist = std::abs(-(px - x0) * dy + (py - y0) * dx);
            return t >= 0.0 && t <= len && dist <= half_width;
        });
    }
    for (std::size_t i = 0; i < blobs; ++i) {
        const double cx = rng.uniform(0, size), cy = rng.uniform(0, size);
        const double r = rng.uniform(0.04, 0.11) * size;
        std::array<std::array<double, 3>, 3> discs{};
        for (auto& d : discs) {
            d = {cx + rng.uniform(-r, r), cy + rng.uniform(-r, r), r * rng.uniform(0.5, 1.0)};
        }
        std::array<double, 3> col{};
        const double shift = rng.uniform(-0.15, 0.2);
        for (double& c : col) c = base + shift + rng.uniform(-0.08, 0.08);
        paint(img, col, 0.8, [&](double px, double py) {
            for (const auto& d : discs) {
                if ((px - d[0]) * (px - d[0]) + (py - d[1]) * (py - d[1]) <= d[2] * d[2]) {
                    return true;
                }
            }
            return false;
        });
    }

    // Foreground shape, sized so its own pixel area is the sampled fraction of the image.
    const double frac = shape_area_fraction(kind);
    const double area = rng.uniform(spec.area_min, spec.area_max) * size * size / frac;
    const double aspect = std::exp(rng.uniform(std::log(0.75), std::log(4.0 / 3.0)));
    double w = std::sqrt(area * aspect), h = area / w;
    w = std::clamp(w, 6.0, size - 2.0);
    h = std::clamp(h, 6.0, size - 2.0);
    const double bx = rng.uniform(0.0, size - w), by = rng.uniform(0.0, size - h);

    // Lighter than the background by a fixed-sign margin, with a random tint.
    const double lift = rng.uniform(0.4, 0.55);
    std::array<double, 3> fg{};
    for (double& c : fg) c = std::clamp(base + lift + rng.uniform(-0.15, 0.15), 0.0, 1.0);

    out.shape_mask = BinaryMask(n, n);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double u = (x + 0.5 - bx) / w, v = (y + 0.5 - by) / h;
            if (!shape_contains(kind, u, v)) continue;
            out.shape_mask.at(y, x) = 1;
            for (std::size_t c = 0; c < 3; ++c) {
                img.at(y, x, c) = fg[c] + rng.uniform(-0.04, 0.04);
            }
        }
    }
    for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);

    int x0 = static_cast<int>(n), y0 = static_cast<int>(n), x1 = 0, y1 = 0;
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            if (!out.shape_mask.at(y, x)) continue;
            x0 = std::min(x0, static_cast<int>(x));
            y0 = std::min(y0, static_cast<int>(y));
            x1 = std::max(x1, static_cast<int>(x) + 1);
            y1 = std::max(y1, static_cast<int>(y) + 1);
        }
    }
    out.box = {x0, y0, x1, y1};
    out.image = std::move(img);
    return out;
}

GenerateSummary generate(const DatasetSpec& spec, const std::string& out_dir) {
    spec.validate();
    GenerateSummary summary;
    for (Split split : {Split::train, Split::test}) {
        const fs::path dir = fs::path(out_dir) / to_string(split);
        ensure_dir(dir / "images");
        const std::size_t count = split == Split::train ? spec.train_images : spec.test_images;
        std::string index;
        for (std::size_t i = 0; i < count; ++i) {
            const RenderedSample s = render_sample(spec, split, i);
            char name[32];
            std::snprintf(name, sizeof name, "images/%05zu.ppm", i);
            write_file(dir / name, encode_ppm(s.image));
            index += std::string(name) + "\t" + std::to_string(s.label) + "\t" +
                     to_string(s.box) + "\n";
        }
        write_file(dir / "annotations.tsv", index);
        write_file(dir / "spec.txt", spec.to_text() + "split=" + to_string(split) + "\n");
        (split == Split::train ? summary.train_images : summary.test_images) = count;
    }
    return summary;
}

namespace {

[[noreturn]] void bad_line(const std::string& path, std::size_t line, const std::string& why) {
    throw IoError(path + ":" + std::to_string(line) + ": " + why);
}

int parse_int(std::string_view s, const std::string& path, std::size_t line) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        bad_line(path, line, "malformed integer '" + std::string(s) + "'");
    }
    return v;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t pos = 0;
    for (;;) {
        const auto next = s.find(sep, pos);
        parts.push_back(s.substr(pos, next - pos));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return parts;
}

}  // namespace

std::vector<Sample> load_annotations(const std::string& path, std::size_t image_size) {
    const std::string text = read_file(path);
    std::vector<Sample> out;
    std::size_t line_no = 0;
    for (std::string_view line : split_on(text, '\n')) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        const auto fields = split_on(line, '\t');
        if (fields.size() != 3) bad_line(path, line_no, "expected path<TAB>label<TAB>boxes");
        if (fields[0].empty()) bad_line(path, line_no, "empty image path");
        Sample s;
        s.path = std::string(fields[0]);
        const int label = parse_int(fields[1], path, line_no);
        if (label < 0) bad_line(path, line_no, "negative label");
        s.label = static_cast<std::size_t>(label);
        for (std::string_view box : split_on(fields[2], ';')) {
            const auto c = split_on(box, ',');
            if (c.size() != 4) bad_line(path, line_no, "box needs x0,y0,x1,y1");
            BBox b{parse_int(c[0], path, line_no), parse_int(c[1], path, line_no),
                   parse_int(c[2], path, line_no), parse_int(c[3], path, line_no)};
            if (!b.valid()) bad_line(path, line_no, "box " + to_string(b) + " is empty or inverted");
            if (image_size > 0 && !b.within(static_cast<int>(image_size),
                                            static_cast<int>(image_size))) {
                bad_line(path, line_no, "box " + to_string(b) + " exceeds image bounds");
            }
            s.boxes.push_back(b);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> load_split(const std::string& split_dir, std::size_t image_size) {
    std::vector<Sample> samples =
        load_annotations((fs::path(split_dir) / "annotations.tsv").string(), image_size);
    for (auto& s : samples) {
        s.image = read_image((fs::path(split_dir) / s.path).string(), image_size);
    }
    return samples;
}

std::string encode_ppm(const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw std::invalid_argument("PPM needs an H x W x 3 image");
    }
    std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) +
                      "\n255\n";
    out.reserve(out.size() + image.size());
    for (double v : image.data()) out.push_back(static_cast<char>(quantize(v)));
    return out;
}

Tensor decode_ppm(const std::string& bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&]() -> std::size_t {
        skip_space();
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
        if (ec != std::errc()) throw IoError("malformed PPM header");
        pos = static_cast<std::size_t>(ptr - bytes.data());
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw IoError("bad magic: not a binary PPM (P6)");
    }
    pos = 2;
    const std::size_t w = number(), h = number(), maxval = number();
    if (w == 0 || h == 0) throw IoError("PPM has zero size");
    if (maxval != 255) throw IoError("only 8-bit PPM is supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw IoError("malformed PPM header");
    }
    ++pos;
    if (bytes.size() - pos < w * h * 3) throw IoError("truncated PPM payload");
    Tensor img({h, w, 3});
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    }
    return img;
}

Tensor read_image(const std::string& path, std::size_t expected_size) {
    try {
        Tensor img = decode_ppm(read_file(path));
        if (expected_size > 0 && (img.dim(0) != expected_size || img.dim(1) != expected_size)) {
            throw IoError("image is " + std::to_string(img.dim(1)) + "x" +
                          std::to_string(img.dim(0)) + ", expected " +
                          std::to_string(expected_size) + "x" + std::to_string(expected_size));
        }
        return img;
    } catch (const IoError& e) {
        if (std::string_view(e.what()).starts_with(path)) throw;
        throw IoError(path + ": " + e.what());
    }
}

void write_ppm(const std::string& path, const Tensor& image) { write_file(path, encode_ppm(image)); }

void write_pgm(const std::string& path, const Tensor& map) {
    if (map.rank() != 2) throw std::invalid_argument("PGM needs a 2-D map");
    std::string out = "P5\n" + std::to_string(map.dim(1)) + " " + std::to_string(map.dim(0)) +
                      "\n255\n";
    for (double v : map.data()) out.push_back(static_cast<char>(quantize(v)));
    write_file(path, out);
}

}  // namespace vitol
