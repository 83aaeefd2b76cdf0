#include "unoranic/image.hpp"

#include <algorithm>

#include "unoranic/error.hpp"

namespace unoranic {

ImageBatch ImageBatch::zeros(std::size_t count, std::size_t channels, std::size_t height, std::size_t width) {
    ImageBatch b;
    b.count = count;
    b.channels = channels;
    b.height = height;
    b.width = width;
    b.pixels.assign(count * channels * height * width, 0.0f);
    b.labels.assign(count, 0);
    b.annotations.assign(count, "");
    return b;
}

ImageBatch ImageBatch::slice(std::size_t first, std::size_t n) const {
    if (first + n > count) throw DimensionError("image slice out of range");
    ImageBatch b;
    b.count = n;
    b.channels = channels;
    b.height = height;
    b.width = width;
    const auto sz = image_size();
    b.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(first * sz),
                    pixels.begin() + static_cast<std::ptrdiff_t>((first + n) * sz));
    if (!labels.empty()) b.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                                         labels.begin() + static_cast<std::ptrdiff_t>(first + n));
    if (!annotations.empty()) b.annotations.assign(annotations.begin() + static_cast<std::ptrdiff_t>(first),
                                                   annotations.begin() + static_cast<std::ptrdiff_t>(first + n));
    return b;
}

void ImageBatch::append(const ImageBatch& other) {
    if (count == 0 && pixels.empty()) {
        *this = other;
        return;
    }
    if (other.channels != channels || other.height != height || other.width != width) {
        throw DimensionError("cannot append images of different geometry");
    }
    pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
    auto pad = [](auto& v, std::size_t n, const auto& src, auto fill) {
        if (src.empty()) v.insert(v.end(), n, fill);
        else v.insert(v.end(), src.begin(), src.end());
    };
    labels.resize(count, 0);
    annotations.resize(count);
    pad(labels, other.count, other.labels, 0);
    pad(annotations, other.count, other.annotations, std::string());
    count += other.count;
}

Tensor ImageBatch::to_tensor() const {
    return Tensor::from_data({count, channels, height, width}, pixels);
}

ImageBatch ImageBatch::from_tensor(const Tensor& t) {
    if (t.rank() != 4) throw DimensionError("image tensor must be [N,C,H,W], got " + shape_str(t.shape()));
    ImageBatch b;
    b.count = t.dim(0);
    b.channels = t.dim(1);
    b.height = t.dim(2);
    b.width = t.dim(3);
    b.pixels.assign(t.data().begin(), t.data().end());
    return b;
}

void ImageBatch::clamp01() {
    for (auto& p : pixels) p = std::clamp(p, 0.0f, 1.0f);
}

}  // namespace unoranic
