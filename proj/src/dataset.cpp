#include "unoranic/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "binio.hpp"
#include "unoranic/error.hpp"
#include "unoranic/rng.hpp"

namespace unoranic {

namespace {

constexpr char kMagic[4] = {'O', 'R', 'N', 'C'};

std::uint8_t quantize(float p) {
    const double v = std::clamp(static_cast<double>(p), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

float dequantize(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

std::uint32_t narrow_u32(std::size_t v, const char* field) {
    if (v > UINT32_MAX) throw FormatError(std::string("dataset ") + field + " does not fit in u32");
    return static_cast<std::uint32_t>(v);
}

DatasetHeader parse_header(std::istream& is, const std::string& path, std::uint64_t actual_bytes) {
    binio::Reader r(is, "dataset " + path);
    char magic[4];
    r.raw(magic, 4, "magic");
    if (!std::equal(magic, magic + 4, kMagic)) {
        throw FormatError("dataset " + path + ": bad magic at byte offset 0 (expected ORNC)");
    }
    DatasetHeader h;
    h.version = r.le<std::uint32_t>("version");
    if (h.version != kDatasetVersion) {
        throw FormatError("dataset " + path + ": unsupported version " + std::to_string(h.version) +
                          " at byte offset 4");
    }
    h.count = r.le<std::uint32_t>("count");
    h.channels = r.le<std::uint32_t>("channels");
    h.height = r.le<std::uint32_t>("height");
    h.width = r.le<std::uint32_t>("width");
    h.num_classes = r.le<std::uint32_t>("num_classes");
    if (h.channels == 0 || h.height == 0 || h.width == 0) {
        throw FormatError("dataset " + path + ": zero image extent in header at byte offset 12");
    }
    if (h.num_classes == 0 || h.num_classes > 256) {
        throw FormatError("dataset " + path + ": num_classes " + std::to_string(h.num_classes) +
                          " outside 1..256 at byte offset 24");
    }
    if (actual_bytes != h.file_bytes()) {
        throw FormatError("dataset " + path + ": expected " + std::to_string(h.file_bytes()) + " bytes, file has " +
                          std::to_string(actual_bytes) + (actual_bytes < h.file_bytes() ? " (truncated at byte offset "
                                                                                         : " (trailing data from byte offset ") +
                          std::to_string(std::min(actual_bytes, h.file_bytes())) + ")");
    }
    return h;
}

std::uint64_t file_size_of(const std::string& path) {
    std::error_code ec;
    const auto n = std::filesystem::file_size(path, ec);
    if (ec) throw IoError("cannot stat " + path + ": " + ec.message());
    return n;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return is;
}

void check_labels(const std::vector<std::uint8_t>& labels, const DatasetHeader& h, const std::string& path) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= h.num_classes) {
            throw FormatError("dataset " + path + ": label " + std::to_string(labels[i]) + " >= num_classes " +
                              std::to_string(h.num_classes) + " at byte offset " +
                              std::to_string(kDatasetHeaderBytes + h.count * h.image_bytes() + i));
        }
    }
}

std::vector<std::uint8_t> read_labels(std::istream& is, const DatasetHeader& h, const std::string& path) {
    is.seekg(static_cast<std::streamoff>(kDatasetHeaderBytes + h.count * h.image_bytes()));
    std::vector<std::uint8_t> labels(h.count);
    binio::Reader r(is, "dataset " + path);
    r.raw(labels.data(), labels.size(), "labels");
    check_labels(labels, h, path);
    return labels;
}

// --- procedural shapes -----------------------------------------------------

struct ShapeParams {
    double cx, cy, radius, intensity;
};

// Coverage test for one sample point, in pixel units relative to the centre.
bool inside(std::size_t family, double dx, double dy, double r) {
    const double d = std::hypot(dx, dy);
    switch (family) {
        case 0:
            return d < r;
        case 1:
            return std::max(std::abs(dx), std::abs(dy)) < 0.8 * r;
        case 2: {
            const double arm = 0.3 * r;
            return (std::abs(dx) < arm && std::abs(dy) < r) || (std::abs(dy) < arm && std::abs(dx) < r);
        }
        case 3:
            return (d < r && d > 0.7 * r) || d < 0.35 * r;
        default: {
            const double theta = static_cast<double>(family - 4) * std::numbers::pi / 4.0;
            const double u = dx * std::cos(theta) + dy * std::sin(theta);
            const double period = std::max(3.0, 0.6 * r);
            return d < r && std::sin(2.0 * std::numbers::pi * u / period) > 0.0;
        }
    }
}

void draw_image(std::span<float> img, std::size_t h, std::size_t w, std::size_t family, std::size_t classes,
                rng::Rng& gen) {
    const double size = static_cast<double>(std::min(h, w));
    // Background: a smooth low-amplitude texture. In the two-class variant
    // the classes differ in background level (dark vs bright) as well as in
    // shape; shapes are always bright.
    const double base = classes == 2 ? (family == 0 ? gen.uniform(0.08, 0.14) : gen.uniform(0.36, 0.42))
                                     : gen.uniform(0.08, 0.2);
    const double amp = gen.uniform(0.02, 0.05);
    const double fx = gen.uniform(0.15, 0.45);
    const double fy = gen.uniform(0.15, 0.45);
    const double px = gen.uniform(0.0, 2.0 * std::numbers::pi);
    const double py = gen.uniform(0.0, 2.0 * std::numbers::pi);

    ShapeParams s{};
    s.radius = gen.uniform(0.25, 0.38) * size;
    s.cx = gen.uniform(s.radius, static_cast<double>(w) - s.radius);
    s.cy = gen.uniform(s.radius, static_cast<double>(h) - s.radius);
    s.intensity = classes == 2 ? gen.uniform(0.85, 0.95) : gen.uniform(0.75, 0.95);

    constexpr std::array<double, 2> sub = {0.25, 0.75};
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double bg = base + amp * std::sin(fx * static_cast<double>(x) + px) * std::sin(fy * static_cast<double>(y) + py);
            double cover = 0.0;
            for (const double oy : sub)
                for (const double ox : sub) {
                    cover += inside(family, static_cast<double>(x) + ox - s.cx, static_cast<double>(y) + oy - s.cy, s.radius)
                                 ? 0.25
                                 : 0.0;
                }
            img[y * w + x] = static_cast<float>(bg + cover * (s.intensity - bg));
        }
    }
}

}  // namespace

void write_dataset(const std::string& path, const ImageBatch& images, std::uint32_t num_classes) {
    if (num_classes == 0 || num_classes > 256) throw ConfigError("num_classes must be in 1..256");
    if (images.pixels.size() != images.count * images.image_size()) throw DimensionError("image batch pixel count mismatch");
    std::vector<std::uint8_t> labels(images.count, 0);
    for (std::size_t i = 0; i < images.count; ++i) {
        const int l = i < images.labels.size() ? images.labels[i] : 0;
        if (l < 0 || static_cast<std::uint32_t>(l) >= num_classes) {
            throw ConfigError("label " + std::to_string(l) + " of image " + std::to_string(i) + " outside [0," +
                              std::to_string(num_classes) + ")");
        }
        labels[i] = static_cast<std::uint8_t>(l);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os.write(kMagic, 4);
    binio::put_le(os, kDatasetVersion);
    binio::put_le(os, narrow_u32(images.count, "count"));
    binio::put_le(os, narrow_u32(images.channels, "channels"));
    binio::put_le(os, narrow_u32(images.height, "height"));
    binio::put_le(os, narrow_u32(images.width, "width"));
    binio::put_le(os, num_classes);
    std::vector<std::uint8_t> bytes(images.pixels.size());
    std::transform(images.pixels.begin(), images.pixels.end(), bytes.begin(), quantize);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
    if (!os) throw IoError("failed while writing " + path);
}

DatasetHeader read_dataset_header(const std::string& path) {
    const auto bytes = file_size_of(path);
    auto is = open_input(path);
    return parse_header(is, path, bytes);
}

ImageBatch read_dataset(const std::string& path) {
    const auto bytes = file_size_of(path);
    auto is = open_input(path);
    const auto h = parse_header(is, path, bytes);
    auto out = ImageBatch::zeros(h.count, h.channels, h.height, h.width);
    std::vector<std::uint8_t> px(h.count * h.image_bytes());
    binio::Reader r(is, "dataset " + path);
    r.raw(px.data(), px.size(), "pixels");
    std::transform(px.begin(), px.end(), out.pixels.begin(), dequantize);
    const auto labels = read_labels(is, h, path);
    std::copy(labels.begin(), labels.end(), out.labels.begin());
    return out;
}

DatasetReader::DatasetReader(const std::string& path, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed)
    : path_(path), batch_size_(batch_size), shuffle_seed_(shuffle_seed) {
    if (batch_size_ == 0) throw ConfigError("batch size must be at least 1");
    const auto bytes = file_size_of(path);
    file_ = open_input(path);
    header_ = parse_header(file_, path, bytes);
    labels_ = read_labels(file_, header_, path);
    start_epoch(0);
}

void DatasetReader::start_epoch(std::size_t epoch) {
    order_.resize(header_.count);
    for (std::uint32_t i = 0; i < header_.count; ++i) order_[i] = i;
    if (shuffle_seed_) {
        rng::Rng gen(rng::combine(*shuffle_seed_, epoch));
        for (std::size_t i = order_.size(); i > 1; --i) {
            std::swap(order_[i - 1], order_[gen.below(i)]);
        }
    }
    cursor_ = 0;
}

void DatasetReader::skip(std::size_t batches) {
    cursor_ = std::min(order_.size(), cursor_ + batches * batch_size_);
}

bool DatasetReader::next(ImageBatch& out) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
    out = ImageBatch::zeros(n, header_.channels, header_.height, header_.width);
    const auto img = header_.image_bytes();
    std::vector<std::uint8_t> px(n * img);
    file_.clear();
    binio::Reader r(file_, "dataset " + path_);
    for (std::size_t k = 0; k < n;) {
        // Coalesce runs of consecutive indices into one read.
        std::size_t run = 1;
        while (k + run < n && order_[cursor_ + k + run] == order_[cursor_ + k] + run) ++run;
        file_.seekg(static_cast<std::streamoff>(kDatasetHeaderBytes + order_[cursor_ + k] * img));
        r.raw(px.data() + k * img, run * img, "pixels");
        k += run;
    }
    std::transform(px.begin(), px.end(), out.pixels.begin(), dequantize);
    for (std::size_t k = 0; k < n; ++k) out.labels[k] = labels_[order_[cursor_ + k]];
    cursor_ += n;
    return true;
}

ImageBatch generate_synthetic(const SyntheticSpec& spec) {
    if (spec.classes < 2 || spec.classes > 8) {
        throw ConfigError("synthetic datasets support 2..8 classes, got " + std::to_string(spec.classes));
    }
    if (spec.height < 8 || spec.width < 8) throw ConfigError("synthetic images must be at least 8x8");
    auto out = ImageBatch::zeros(spec.count, 1, spec.height, spec.width);
    for (std::size_t i = 0; i < spec.count; ++i) {
        const std::size_t label = i % spec.classes;
        rng::Rng gen(rng::combine(spec.seed, i));
        draw_image(out.image(i), spec.height, spec.width, label, spec.classes, gen);
        out.labels[i] = static_cast<int>(label);
    }
    // Round-trip through bytes so in-memory and on-disk datasets agree.
    for (auto& p : out.pixels) p = dequantize(quantize(p));
    return out;
}

DatasetSplit split_811(const ImageBatch& all) {
    const std::size_t val = all.count / 10;
    const std::size_t test = all.count / 10;
    const std::size_t train = all.count - val - test;
    return {all.slice(0, train), all.slice(train, val), all.slice(train + val, test)};
}

std::uint64_t file_hash(const std::string& path) {
    auto is = open_input(path);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    std::array<char, 65536> buf{};
    while (is) {
        is.read(buf.data(), buf.size());
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

}  // namespace unoranic
