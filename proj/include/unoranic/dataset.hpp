#pragma once

// ORNC dataset files and the procedural dataset generator.
//
// Layout (all integers little-endian u32):
//   "ORNC" version count channels height width num_classes
//   count*C*H*W pixel bytes, row-major per image
//   count label bytes
// Pixels load as byte/255.

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "unoranic/image.hpp"

namespace unoranic {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 28;

struct DatasetHeader {
    std::uint32_t version = kDatasetVersion;
    std::uint32_t count = 0;
    std::uint32_t channels = 1;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t num_classes = 0;

    std::uint64_t image_bytes() const noexcept { return std::uint64_t{channels} * height * width; }
    std::uint64_t file_bytes() const noexcept { return kDatasetHeaderBytes + count * image_bytes() + count; }
};

/// Pixels are rounded to the nearest byte after clamping to [0,1]. Labels
/// must lie in [0, num_classes).
void write_dataset(const std::string& path, const ImageBatch& images, std::uint32_t num_classes);

/// Validates magic, version, exact length and label range.
DatasetHeader read_dataset_header(const std::string& path);

/// Whole file in memory.
ImageBatch read_dataset(const std::string& path);

/// Streams fixed-size batches; the last batch may be partial. With a shuffle
/// seed each epoch visits the images in a permutation derived from
/// (seed, epoch); without one, file order. Only the current batch is held.
class DatasetReader {
public:
    DatasetReader(const std::string& path, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed = {});

    const DatasetHeader& header() const noexcept { return header_; }
    std::size_t size() const noexcept { return header_.count; }
    std::size_t batch_size() const noexcept { return batch_size_; }
    std::size_t batches_per_epoch() const noexcept { return (size() + batch_size_ - 1) / batch_size_; }

    /// Rewinds to the start of `epoch`.
    void start_epoch(std::size_t epoch);
    /// Skips batches without reading pixels (used when resuming mid-epoch).
    void skip(std::size_t batches);
    /// False once the epoch is exhausted.
    bool next(ImageBatch& out);

    /// Image indices of the current epoch in visiting order.
    const std::vector<std::uint32_t>& order() const noexcept { return order_; }

private:
    std::string path_;
    std::ifstream file_;
    DatasetHeader header_;
    std::vector<std::uint8_t> labels_;
    std::size_t batch_size_;
    std::optional<std::uint64_t> shuffle_seed_;
    std::vector<std::uint32_t> order_;
    std::size_t cursor_ = 0;
};

struct SyntheticSpec {
    std::size_t count = 1000;
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t classes = 2;
    std::uint64_t seed = 0;
};

/// Procedural images on a smooth textured background. Image i has label
/// i % classes; class c draws shape family c: disc, square, cross, rings,
/// then stripes at 0, 45, 90 and 135 degrees. With two classes the disc
/// class sits on a dark background and the square class on a bright one.
/// classes must be in 2..8.
ImageBatch generate_synthetic(const SyntheticSpec& spec);

struct DatasetSplit {
    ImageBatch train;
    ImageBatch val;
    ImageBatch test;
};

/// Contiguous 8:1:1 split; val and test get floor(count/10) each.
DatasetSplit split_811(const ImageBatch& all);

/// FNV-1a 64 of a file's bytes.
std::uint64_t file_hash(const std::string& path);

}  // namespace unoranic
