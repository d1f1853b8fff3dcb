#pragma once

// Dataset ingestion: IDX parsing, the 7x7 binarised variant, label
// concatenation and deterministic mini-batching.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boltzdef/binary_io.hpp"
#include "boltzdef/error.hpp"

namespace boltzdef {

/// Row-major greyscale image with intensities in [0, 1].
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    Eigen::VectorXd pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(Eigen::VectorXd::Zero(w * h)) {}
    Image(std::size_t w, std::size_t h, Eigen::VectorXd px) : width(w), height(h), pixels(std::move(px)) {
        detail::require_dim(static_cast<std::size_t>(pixels.size()) == w * h,
                            "image pixel count does not match width*height");
    }

    std::size_t size() const { return width * height; }
    double& at(std::size_t row, std::size_t col) { return pixels[static_cast<Eigen::Index>(row * width + col)]; }
    double at(std::size_t row, std::size_t col) const {
        return pixels[static_cast<Eigen::Index>(row * width + col)];
    }

    bool in_unit_box() const {
        return pixels.size() == 0 || (pixels.minCoeff() >= 0.0 && pixels.maxCoeff() <= 1.0);
    }

    /// Same geometry, new pixels.
    Image with_pixels(Eigen::VectorXd px) const { return Image(width, height, std::move(px)); }

    friend bool operator==(const Image& a, const Image& b) {
        return a.width == b.width && a.height == b.height && a.pixels == b.pixels;
    }
};

struct Dataset {
    std::vector<Image> images;
    std::vector<int> labels;
    int num_classes = 10;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }
    std::size_t width() const { return images.empty() ? 0 : images.front().width; }
    std::size_t height() const { return images.empty() ? 0 : images.front().height; }
    std::size_t image_dim() const { return width() * height(); }

    void push_back(Image img, int label) {
        images.push_back(std::move(img));
        labels.push_back(label);
    }

    /// Checks every invariant: equal lengths, uniform geometry, pixels in
    /// [0,1], labels in range.
    void validate() const {
        if (images.size() != labels.size()) throw InconsistencyError("images and labels differ in length");
        if (num_classes <= 0) throw ArgumentError("num_classes must be positive");
        for (std::size_t i = 0; i < images.size(); ++i) {
            const auto& img = images[i];
            if (img.width != width() || img.height != height())
                throw DimensionError("dataset mixes image geometries");
            if (!img.in_unit_box()) throw ArgumentError("pixel outside [0,1] in item " + std::to_string(i));
            if (labels[i] < 0 || labels[i] >= num_classes)
                throw ArgumentError("label out of range in item " + std::to_string(i));
        }
    }

    /// The first `n` items (or all of them when n exceeds the size).
    Dataset head(std::size_t n) const {
        Dataset out;
        out.num_classes = num_classes;
        n = std::min(n, size());
        out.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n));
        out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
        return out;
    }
};

/// Image pixels followed by a one-hot label block.
struct VisibleVector {
    Eigen::VectorXd values;
    std::size_t image_dim = 0;
    std::size_t label_dim = 0;

    Eigen::VectorXd image_part() const { return values.head(static_cast<Eigen::Index>(image_dim)); }
    Eigen::VectorXd label_part() const { return values.tail(static_cast<Eigen::Index>(label_dim)); }
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label pair. Bytes are scaled by 1/255 exactly.
inline Dataset load_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
                        int num_classes = 10) {
    const auto img = io::read_file(image_path);
    const auto lab = io::read_file(label_path);
    if (img.size() < 16) throw IoError("truncated IDX image file " + image_path.string());
    if (lab.size() < 8) throw IoError("truncated IDX label file " + label_path.string());
    if (io::read_be_u32(img.data()) != kIdxImageMagic)
        throw FormatError("bad IDX image magic in " + image_path.string());
    if (io::read_be_u32(lab.data()) != kIdxLabelMagic)
        throw FormatError("bad IDX label magic in " + label_path.string());

    const std::size_t n = io::read_be_u32(img.data() + 4);
    const std::size_t rows = io::read_be_u32(img.data() + 8);
    const std::size_t cols = io::read_be_u32(img.data() + 12);
    const std::size_t n_labels = io::read_be_u32(lab.data() + 4);
    if (n != n_labels)
        throw InconsistencyError("IDX image count " + std::to_string(n) + " != label count " +
                                 std::to_string(n_labels));
    if (img.size() < 16 + n * rows * cols) throw IoError("truncated IDX image payload " + image_path.string());
    if (lab.size() < 8 + n) throw IoError("truncated IDX label payload " + label_path.string());

    Dataset ds;
    ds.num_classes = num_classes;
    ds.images.reserve(n);
    ds.labels.reserve(n);
    const std::size_t dim = rows * cols;
    for (std::size_t i = 0; i < n; ++i) {
        Image im(cols, rows);
        const unsigned char* src = img.data() + 16 + i * dim;
        for (std::size_t p = 0; p < dim; ++p) im.pixels[static_cast<Eigen::Index>(p)] = src[p] / 255.0;
        const int label = lab[8 + i];
        if (label >= num_classes) throw FormatError("IDX label " + std::to_string(label) + " out of range");
        ds.push_back(std::move(im), label);
    }
    return ds;
}

/// Writes an IDX pair; pixels are quantised to round(255 p).
inline void write_idx(const Dataset& ds, const std::filesystem::path& image_path,
                      const std::filesystem::path& label_path) {
    std::vector<unsigned char> img;
    std::vector<unsigned char> lab;
    io::append_be_u32(img, kIdxImageMagic);
    io::append_be_u32(img, static_cast<std::uint32_t>(ds.size()));
    io::append_be_u32(img, static_cast<std::uint32_t>(ds.height()));
    io::append_be_u32(img, static_cast<std::uint32_t>(ds.width()));
    io::append_be_u32(lab, kIdxLabelMagic);
    io::append_be_u32(lab, static_cast<std::uint32_t>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (Eigen::Index p = 0; p < ds.images[i].pixels.size(); ++p)
            img.push_back(static_cast<unsigned char>(std::lround(std::clamp(ds.images[i].pixels[p], 0.0, 1.0) * 255.0)));
        lab.push_back(static_cast<unsigned char>(ds.labels[i]));
    }
    io::write_file(image_path, img);
    io::write_file(label_path, lab);
}

/// 28x28 -> 7x7: each output pixel is 1 iff the mean of its 4x4 source
/// block exceeds `threshold`.
inline Image downscale_binarize(const Image& img, double threshold = 0.5) {
    if (img.width != 28 || img.height != 28) throw DimensionError("downscale_binarize expects a 28x28 image");
    detail::require_arg(threshold > 0.0 && threshold < 1.0, "threshold must lie in (0,1)");
    Image out(7, 7);
    for (std::size_t r = 0; r < 7; ++r) {
        for (std::size_t c = 0; c < 7; ++c) {
            double sum = 0.0;
            for (std::size_t dr = 0; dr < 4; ++dr)
                for (std::size_t dc = 0; dc < 4; ++dc) sum += img.at(4 * r + dr, 4 * c + dc);
            out.at(r, c) = (sum / 16.0 > threshold) ? 1.0 : 0.0;
        }
    }
    return out;
}

inline Dataset downscale_binarize(const Dataset& ds, double threshold = 0.5) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.labels = ds.labels;
    out.images.reserve(ds.size());
    for (const auto& img : ds.images) out.images.push_back(downscale_binarize(img, threshold));
    return out;
}

inline VisibleVector concat_label(const Eigen::VectorXd& pixels, int label, int num_classes) {
    detail::require_arg(num_classes > 0, "num_classes must be positive");
    detail::require_arg(label >= 0 && label < num_classes, "label out of range");
    VisibleVector v;
    v.image_dim = static_cast<std::size_t>(pixels.size());
    v.label_dim = static_cast<std::size_t>(num_classes);
    v.values = Eigen::VectorXd::Zero(pixels.size() + num_classes);
    v.values.head(pixels.size()) = pixels;
    v.values[pixels.size() + label] = 1.0;
    return v;
}

inline VisibleVector concat_label(const Image& img, int label, int num_classes) {
    return concat_label(img.pixels, label, num_classes);
}

/// Every labelled example as a visible row (n x (D + C)).
inline Eigen::MatrixXd visible_matrix(const Dataset& ds) {
    const auto d = static_cast<Eigen::Index>(ds.image_dim());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ds.size()), d + ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        out.row(row).head(d) = ds.images[i].pixels.transpose();
        out(row, d + ds.labels[i]) = 1.0;
    }
    return out;
}

/// Shuffled partition of 0..n-1 into batches of `size`; the last batch keeps
/// the remainder. Deterministic in `seed`.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t size, std::uint64_t seed) {
    detail::require_arg(size >= 1, "batch size must be at least 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += size) {
        const std::size_t end = std::min(n, start + size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

inline std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t size, std::uint64_t seed) {
    return batches(ds.size(), size, seed);
}

// Prepared-dataset container:
//   "BZDS" | version u8 | width u32 | height u32 | num_classes u32 | count u32
//   | labels u32[count] | pixels f64[count*width*height]       (little-endian)
inline constexpr std::string_view kDatasetMagic = "BZDS";
inline constexpr std::uint8_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    io::Writer w;
    w.magic(kDatasetMagic);
    w.u8(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(ds.width()));
    w.u32(static_cast<std::uint32_t>(ds.height()));
    w.u32(static_cast<std::uint32_t>(ds.num_classes));
    w.u32(static_cast<std::uint32_t>(ds.size()));
    for (int label : ds.labels) w.u32(static_cast<std::uint32_t>(label));
    for (const auto& img : ds.images)
        for (Eigen::Index p = 0; p < img.pixels.size(); ++p) w.f64(img.pixels[p]);
    io::write_file(path, w.bytes());
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::Reader r(bytes, path.string());
    if (!r.magic(kDatasetMagic)) throw FormatError("not a prepared dataset: " + path.string());
    if (const auto v = r.u8(); v != kDatasetVersion)
        throw FormatError("unsupported dataset container version " + std::to_string(v));
    const std::size_t width = r.u32();
    const std::size_t height = r.u32();
    Dataset ds;
    ds.num_classes = static_cast<int>(r.u32());
    const std::size_t n = r.u32();
    ds.labels.resize(n);
    for (auto& label : ds.labels) label = static_cast<int>(r.u32());
    ds.images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Image img(width, height);
        for (Eigen::Index p = 0; p < img.pixels.size(); ++p) img.pixels[p] = r.f64();
        ds.images.push_back(std::move(img));
    }
    if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
    ds.validate();
    return ds;
}

/// Resolves a dataset argument that may name either a container file or a
/// directory holding `data.bzds`.
inline std::filesystem::path dataset_file(const std::filesystem::path& p) {
    return std::filesystem::is_directory(p) ? p / "data.bzds" : p;
}

} // namespace boltzdef
