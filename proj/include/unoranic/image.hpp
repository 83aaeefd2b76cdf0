#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "unoranic/tensor.hpp"

namespace unoranic {

/// N x C x H x W block of pixels in [0,1] with per-image labels and
/// free-form annotations (e.g. the corruption spec applied to each image).
struct ImageBatch {
    std::size_t count = 0;
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;
    std::vector<int> labels;
    std::vector<std::string> annotations;

    static ImageBatch zeros(std::size_t count, std::size_t channels, std::size_t height, std::size_t width);

    std::size_t image_size() const noexcept { return channels * height * width; }
    std::span<float> image(std::size_t i) { return {pixels.data() + i * image_size(), image_size()}; }
    std::span<const float> image(std::size_t i) const { return {pixels.data() + i * image_size(), image_size()}; }

    /// Copy of images [first, first+n) with their labels and annotations.
    ImageBatch slice(std::size_t first, std::size_t n) const;
    /// Appends all images of `other`; geometry must match.
    void append(const ImageBatch& other);

    Tensor to_tensor() const;
    /// Wraps a [N,C,H,W] tensor; labels and annotations are left empty.
    static ImageBatch from_tensor(const Tensor& t);
    /// Clamps every pixel to [0,1].
    void clamp01();
};

}  // namespace unoranic
