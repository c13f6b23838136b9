#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dconn/codec.hpp"
#include "dconn/rng.hpp"
#include "dconn/tensor.hpp"

namespace dconn {

enum class DatasetKind { Blobs, Rings, Vessels, Multiclass };

DatasetKind parse_kind(const std::string& name);
std::string kind_name(DatasetKind kind);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Blobs;
    std::size_t count = 20;
    std::size_t size = 64;
    std::uint64_t seed = 1;
    // Blob areas are drawn log-uniformly from [min_area, max_area] pixels.
    double min_area = 30.0;
    double max_area = 600.0;
    double noise = 0.05;

    std::size_t classes() const { return kind == DatasetKind::Multiclass ? 2 : 1; }
    void validate() const;
};

// Grayscale image in [0, 1], quantized to 8-bit levels.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;
    bool operator==(const Image&) const = default;
};

struct Sample {
    std::string name;
    Image image;
    SegMask mask;
    bool operator==(const Sample&) const = default;
};

struct Ellipse {
    double cy, cx;
    double a, b;  // semi-axes
    double theta;
    double area() const { return 3.141592653589793 * a * b; }
};

Ellipse sample_ellipse(Rng& rng, const DatasetSpec& spec);
void draw_ellipse(SegMask& mask, const Ellipse& e, std::uint8_t label, bool only_background = false);

// Removes foreground pixels with no same-class 8-neighbour. Returns the count removed.
std::size_t remove_isolated_pixels(SegMask& mask);
bool has_isolated_pixel(const SegMask& mask);

// Each sample i draws from stream i of the seed, so samples are independent
// of generation order. Throws std::runtime_error when geometry stays
// infeasible after bounded retries.
std::vector<Sample> generate(const DatasetSpec& spec);
Sample generate_sample(const DatasetSpec& spec, std::size_t index);

// Deterministic shuffled split; train gets round(fraction * n) items.
std::pair<std::vector<Sample>, std::vector<Sample>> split(const std::vector<Sample>& data, double train_fraction,
                                                          std::uint64_t seed);

// [N, 1, H, W] batch of images.
Tensor image_batch(const std::vector<const Image*>& images);

// Binary P5 PGM, maxval 255.
struct Gray8 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;
};
void write_pgm(std::ostream& out, const Gray8& img);
Gray8 read_pgm(std::istream& in);
void write_pgm_file(const std::string& path, const Gray8& img);
Gray8 read_pgm_file(const std::string& path);

Gray8 to_gray(const Image& image);
Image from_gray(const Gray8& gray);
Gray8 to_gray(const SegMask& mask);
SegMask mask_from_gray(const Gray8& gray);

// Writes img_XXXX.pgm / mask_XXXX.pgm plus manifest.txt listing file names
// and per-class foreground sizes.
void write_dataset(const std::string& dir, const std::vector<Sample>& samples, std::size_t classes);
struct Dataset {
    std::size_t classes = 1;
    std::vector<Sample> samples;
};
Dataset read_dataset(const std::string& dir);

}  // namespace dconn
