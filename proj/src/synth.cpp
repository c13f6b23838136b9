#include "dconn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "dconn/metrics.hpp"

namespace dconn {

namespace {

constexpr double kPi = 3.141592653589793;
constexpr int kMaxAttempts = 200;

bool in_bounds(const SegMask& m, long r, long c) {
    return r >= 0 && c >= 0 && r < static_cast<long>(m.height) && c < static_cast<long>(m.width);
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Image render(const SegMask& mask, std::size_t classes, double noise, Rng& rng) {
    Image img{mask.height, mask.width, std::vector<double>(mask.labels.size())};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double base = 0.2 + 0.6 * static_cast<double>(mask.labels[i]) / static_cast<double>(classes);
        img.pixels[i] = quantize(base + noise * rng.normal());
    }
    return img;
}

void stamp(SegMask& mask, long r, long c, int width) {
    const long lo = width == 3 ? -1 : 0;
    const long hi = width == 1 ? 0 : 1;
    for (long dr = lo; dr <= hi; ++dr)
        for (long dc = lo; dc <= hi; ++dc)
            if (in_bounds(mask, r + dr, c + dc)) mask.at(r + dr, c + dc) = 1;
}

bool draw_blobs(SegMask& mask, Rng& rng, const DatasetSpec& spec, std::uint8_t label, bool only_background) {
    const auto n = rng.range(1, 3);
    for (std::int64_t i = 0; i < n; ++i) draw_ellipse(mask, sample_ellipse(rng, spec), label, only_background);
    return true;
}

bool draw_rings(SegMask& mask, Rng& rng, const DatasetSpec& spec) {
    const double size = static_cast<double>(spec.size);
    const auto n = rng.range(1, 2);
    std::vector<std::array<double, 3>> placed;
    for (std::int64_t i = 0; i < n; ++i) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            const double outer = rng.uniform(6.0, std::max(6.5, size / 4.0));
            const double inner = rng.uniform(2.0, outer - 2.0);
            if (size - 2.0 * outer - 3.0 <= 0.0) return false;
            const double cy = rng.uniform(outer + 1.0, size - 2.0 - outer);
            const double cx = rng.uniform(outer + 1.0, size - 2.0 - outer);
            bool clear = std::all_of(placed.begin(), placed.end(), [&](const auto& p) {
                return std::hypot(cy - p[0], cx - p[1]) > outer + p[2] + 2.0;
            });
            if (!clear) continue;
            for (std::size_t r = 0; r < mask.height; ++r)
                for (std::size_t c = 0; c < mask.width; ++c) {
                    const double d = std::hypot(static_cast<double>(r) - cy, static_cast<double>(c) - cx);
                    if (d >= inner && d <= outer) mask.at(r, c) = 1;
                }
            placed.push_back({cy, cx, outer});
            break;
        }
    }
    return !placed.empty();
}

bool draw_vessels(SegMask& mask, Rng& rng, const DatasetSpec& spec) {
    const double size = static_cast<double>(spec.size);
    const auto curves = rng.range(1, 3);
    for (std::int64_t i = 0; i < curves; ++i) {
        double y = rng.uniform(0.0, size - 1.0), x = rng.uniform(0.0, size - 1.0);
        double angle = rng.uniform(0.0, 2.0 * kPi);
        const int width = static_cast<int>(rng.range(1, 3));
        const auto steps = rng.range(24, 64);
        for (std::int64_t s = 0; s < steps; ++s) {
            const long r = std::lround(y), c = std::lround(x);
            if (!in_bounds(mask, r, c)) break;
            stamp(mask, r, c, width);
            angle += 0.3 * rng.normal();
            y += std::sin(angle);
            x += std::cos(angle);
        }
    }
    return true;
}

}  // namespace

DatasetKind parse_kind(const std::string& name) {
    if (name == "blobs") return DatasetKind::Blobs;
    if (name == "rings") return DatasetKind::Rings;
    if (name == "vessels") return DatasetKind::Vessels;
    if (name == "multiclass") return DatasetKind::Multiclass;
    throw std::invalid_argument("unknown dataset kind '" + name + "'");
}

std::string kind_name(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::Blobs:
            return "blobs";
        case DatasetKind::Rings:
            return "rings";
        case DatasetKind::Vessels:
            return "vessels";
        case DatasetKind::Multiclass:
            return "multiclass";
    }
    return "unknown";
}

void DatasetSpec::validate() const {
    if (count < 1) throw std::invalid_argument("dataset count must be at least 1");
    if (size == 0 || size % 16 != 0) throw std::invalid_argument("dataset image size must be a positive multiple of 16");
    if (!(min_area >= 2.0 && max_area >= min_area)) throw std::invalid_argument("dataset area range is invalid");
    if (!(noise >= 0.0)) throw std::invalid_argument("dataset noise must be non-negative");
}

Ellipse sample_ellipse(Rng& rng, const DatasetSpec& spec) {
    const double area = std::exp(rng.uniform(std::log(spec.min_area), std::log(spec.max_area)));
    const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    Ellipse e{};
    e.a = std::sqrt(area * aspect / kPi);
    e.b = std::sqrt(area / (aspect * kPi));
    e.theta = rng.uniform(0.0, kPi);
    const double size = static_cast<double>(spec.size);
    const double margin = std::min(std::max(e.a, e.b) + 1.0, size / 2.0 - 1.0);
    e.cy = rng.uniform(margin, size - 1.0 - margin);
    e.cx = rng.uniform(margin, size - 1.0 - margin);
    return e;
}

void draw_ellipse(SegMask& mask, const Ellipse& e, std::uint8_t label, bool only_background) {
    const double ct = std::cos(e.theta), st = std::sin(e.theta);
    for (std::size_t r = 0; r < mask.height; ++r)
        for (std::size_t c = 0; c < mask.width; ++c) {
            const double dy = static_cast<double>(r) - e.cy, dx = static_cast<double>(c) - e.cx;
            const double u = (dx * ct + dy * st) / e.a, v = (-dx * st + dy * ct) / e.b;
            if (u * u + v * v > 1.0) continue;
            if (only_background && mask.at(r, c) != 0) continue;
            mask.at(r, c) = label;
        }
}

namespace {

bool isolated(const SegMask& mask, long r, long c) {
    const std::uint8_t l = mask.at(r, c);
    for (const auto& o : kDirectionTable)
        if (in_bounds(mask, r + o.dr, c + o.dc) && mask.at(r + o.dr, c + o.dc) == l) return false;
    return true;
}

}  // namespace

std::size_t remove_isolated_pixels(SegMask& mask) {
    std::vector<std::size_t> doomed;
    for (long r = 0; r < static_cast<long>(mask.height); ++r)
        for (long c = 0; c < static_cast<long>(mask.width); ++c)
            if (mask.at(r, c) && isolated(mask, r, c)) doomed.push_back(static_cast<std::size_t>(r) * mask.width + c);
    // An isolated pixel has no same-class neighbour, so clearing it never
    // isolates another pixel.
    for (auto i : doomed) mask.labels[i] = 0;
    return doomed.size();
}

bool has_isolated_pixel(const SegMask& mask) {
    for (long r = 0; r < static_cast<long>(mask.height); ++r)
        for (long c = 0; c < static_cast<long>(mask.width); ++c)
            if (mask.at(r, c) && isolated(mask, r, c)) return true;
    return false;
}

Sample generate_sample(const DatasetSpec& spec, std::size_t index) {
    spec.validate();
    Rng rng = Rng(spec.seed).split(index);
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        SegMask mask(spec.size, spec.size);
        bool ok = false;
        switch (spec.kind) {
            case DatasetKind::Blobs:
                ok = draw_blobs(mask, rng, spec, 1, false);
                break;
            case DatasetKind::Rings:
                ok = draw_rings(mask, rng, spec);
                break;
            case DatasetKind::Vessels:
                ok = draw_vessels(mask, rng, spec);
                break;
            case DatasetKind::Multiclass:
                ok = draw_blobs(mask, rng, spec, 1, false) && draw_blobs(mask, rng, spec, 2, true);
                break;
        }
        if (!ok) continue;
        remove_isolated_pixels(mask);
        bool valid = true;
        for (std::size_t k = 1; k <= spec.classes(); ++k) valid = valid && mask.count(static_cast<std::uint8_t>(k)) >= 2;
        if (valid && spec.kind == DatasetKind::Rings) valid = betti_numbers(mask).b1 >= 1;
        if (!valid) continue;
        char name[32];
        std::snprintf(name, sizeof name, "%04zu", index);
        return {name, render(mask, spec.classes(), spec.noise, rng), std::move(mask)};
    }
    throw std::runtime_error("generate: infeasible geometry for sample " + std::to_string(index) + " of kind " +
                             kind_name(spec.kind));
}

std::vector<Sample> generate(const DatasetSpec& spec) {
    spec.validate();
    std::vector<Sample> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) out.push_back(generate_sample(spec, i));
    return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split(const std::vector<Sample>& data, double train_fraction,
                                                          std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("split: fraction must lie in (0,1)");
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.size())));
    if (n_train == 0 || n_train >= data.size()) {
        throw std::invalid_argument("split: fraction " + std::to_string(train_fraction) + " of " +
                                    std::to_string(data.size()) + " items leaves an empty side");
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::pair<std::vector<Sample>, std::vector<Sample>> out;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? out.first : out.second).push_back(data[order[i]]);
    return out;
}

Tensor image_batch(const std::vector<const Image*>& images) {
    if (images.empty()) throw ShapeError("image_batch: no images");
    const std::size_t H = images.front()->height, W = images.front()->width;
    std::vector<double> data;
    data.reserve(images.size() * H * W);
    for (const Image* img : images) {
        if (img->height != H || img->width != W) throw ShapeError("image_batch: images differ in size");
        data.insert(data.end(), img->pixels.begin(), img->pixels.end());
    }
    return Tensor({images.size(), 1, H, W}, std::move(data));
}

void write_pgm(std::ostream& out, const Gray8& img) {
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw FormatError("failed writing PGM");
}

namespace {

std::size_t read_header_int(std::istream& in, const char* field) {
    // Skip whitespace and '#' comments.
    for (;;) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (ch == ' ' || ch == '\n' || ch == '\r' || ch == '\t') {
            in.get();
        } else {
            break;
        }
    }
    long long v = -1;
    if (!(in >> v) || v <= 0) throw FormatError(std::string("bad PGM field '") + field + "'");
    return static_cast<std::size_t>(v);
}

}  // namespace

Gray8 read_pgm(std::istream& in) {
    char magic[2];
    if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '5') throw FormatError("bad PGM magic");
    Gray8 img;
    img.width = read_header_int(in, "width");
    img.height = read_header_int(in, "height");
    const std::size_t maxval = read_header_int(in, "maxval");
    if (maxval > 255) throw FormatError("bad PGM field 'maxval': only 8-bit images are supported");
    in.get();  // single whitespace before the raster
    img.pixels.resize(img.width * img.height);
    if (!in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
        throw FormatError("truncated PGM raster");
    }
    return img;
}

void write_pgm_file(const std::string& path, const Gray8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_pgm(out, img);
}

Gray8 read_pgm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    return read_pgm(in);
}

Gray8 to_gray(const Image& image) {
    Gray8 g{image.height, image.width, std::vector<std::uint8_t>(image.pixels.size())};
    for (std::size_t i = 0; i < g.pixels.size(); ++i) {
        g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
    }
    return g;
}

Image from_gray(const Gray8& gray) {
    Image img{gray.height, gray.width, std::vector<double>(gray.pixels.size())};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = gray.pixels[i] / 255.0;
    return img;
}

Gray8 to_gray(const SegMask& mask) { return {mask.height, mask.width, mask.labels}; }

SegMask mask_from_gray(const Gray8& gray) {
    SegMask m(gray.height, gray.width);
    m.labels = gray.pixels;
    return m;
}

void write_dataset(const std::string& dir, const std::vector<Sample>& samples, std::size_t classes) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw FormatError("cannot write manifest in '" + dir + "'");
    manifest << "classes " << classes << '\n';
    for (const auto& s : samples) {
        const std::string img = "img_" + s.name + ".pgm", mask = "mask_" + s.name + ".pgm";
        write_pgm_file((fs::path(dir) / img).string(), to_gray(s.image));
        write_pgm_file((fs::path(dir) / mask).string(), to_gray(s.mask));
        manifest << img << '\t' << mask;
        for (std::size_t k = 1; k <= classes; ++k) manifest << '\t' << s.mask.count(static_cast<std::uint8_t>(k));
        manifest << '\n';
    }
}

Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw FormatError("missing manifest.txt in '" + dir + "'");
    Dataset ds;
    std::string key;
    if (!(manifest >> key >> ds.classes) || key != "classes" || ds.classes == 0 || ds.classes > 255) {
        throw FormatError("bad manifest field 'classes'");
    }
    std::string line;
    std::getline(manifest, line);
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string img, mask;
        if (!(ls >> img >> mask)) throw FormatError("bad manifest row '" + line + "'");
        Sample s;
        s.name = img.substr(0, img.rfind('.'));
        if (s.name.rfind("img_", 0) == 0) s.name = s.name.substr(4);
        s.image = from_gray(read_pgm_file((fs::path(dir) / img).string()));
        s.mask = mask_from_gray(read_pgm_file((fs::path(dir) / mask).string()));
        if (s.mask.height != s.image.height || s.mask.width != s.image.width) {
            throw FormatError("image and mask sizes differ for '" + img + "'");
        }
        if (s.mask.max_label() > ds.classes) throw FormatError("mask '" + mask + "' has labels beyond 'classes'");
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw FormatError("manifest in '" + dir + "' lists no samples");
    return ds;
}

}  // namespace dconn
