#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <map>

#include "support.hpp"
#include "unoranic/corruption.hpp"
#include "unoranic/error.hpp"
#include "unoranic/metrics.hpp"

using namespace unoranic;

namespace {

ImageBatch random_batch(std::size_t n, std::uint64_t seed) {
    auto b = ImageBatch::zeros(n, 1, 28, 28);
    b.pixels = testing::random_pixels(b.pixels.size(), seed);
    b.labels.assign(n, 0);
    return b;
}

ImageBatch constant_batch(std::size_t n, float value) {
    auto b = ImageBatch::zeros(n, 1, 28, 28);
    std::fill(b.pixels.begin(), b.pixels.end(), value);
    return b;
}

double mean_psnr(const ImageBatch& a, const ImageBatch& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.count; ++i) acc += psnr(a.image(i), b.image(i));
    return acc / static_cast<double>(a.count);
}

const std::array<CorruptionKind, 9> kAllKinds = {
    CorruptionKind::gaussian_noise, CorruptionKind::salt_pepper, CorruptionKind::brightness,
    CorruptionKind::contrast,       CorruptionKind::gamma,       CorruptionKind::gaussian_blur,
    CorruptionKind::solarize,       CorruptionKind::box_blur,    CorruptionKind::pixelate,
};

}  // namespace

TEST_CASE("severity table values") {
    CHECK(CorruptionSpec::make(CorruptionKind::gaussian_noise, 2, 1).value == 0.10);
    CHECK(CorruptionSpec::make(CorruptionKind::salt_pepper, 3, 1).value == 0.08);
    CHECK(CorruptionSpec::make(CorruptionKind::gaussian_blur, 1, 1).value == 0.5);
    CHECK(CorruptionSpec::make(CorruptionKind::solarize, 2, 1).value == 0.75);
    CHECK(CorruptionSpec::make(CorruptionKind::box_blur, 3, 1).value == 3.0);
    CHECK(CorruptionSpec::make(CorruptionKind::pixelate, 3, 1).value == 7.0);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const double c = CorruptionSpec::make(CorruptionKind::contrast, 3, s).value;
        CHECK((c == 0.4 || c == 2.2));
        const double b = CorruptionSpec::make(CorruptionKind::brightness, 1, s).value;
        CHECK((b == 0.1 || b == -0.1));
    }
    CHECK(CorruptionSpec::make(CorruptionKind::gamma, 0, 1).is_identity());
    CHECK_THROWS_AS(CorruptionSpec::make(CorruptionKind::gamma, 4, 1), ConfigError);
}

TEST_CASE("names and spec strings") {
    for (const auto kind : kAllKinds) CHECK(parse_kind(kind_name(kind)) == kind);
    CHECK_THROWS_AS(parse_kind("rotate"), ConfigError);
    const auto spec = CorruptionSpec::make(CorruptionKind::gamma, 2, 12345);
    CHECK(spec.to_string() == "gamma:2:12345");
    CHECK(CorruptionSpec::parse(spec.to_string()) == spec);
    CHECK_THROWS_AS(CorruptionSpec::parse("gamma:2"), ConfigError);
    CHECK_THROWS_AS(CorruptionSpec::parse("gamma:x:1"), ConfigError);
    CHECK(detection_label(CorruptionKind::identity) == 0);
    CHECK(detection_label(CorruptionKind::gaussian_noise) == 1);
    CHECK(detection_label(CorruptionKind::solarize) == 7);
    CHECK_THROWS_AS(detection_label(CorruptionKind::pixelate), ConfigError);
}

TEST_CASE("identity cases leave images bitwise unchanged") {
    const auto images = random_batch(4, 1);
    const auto same = apply(images, CorruptionSpec::identity());
    CHECK(std::memcmp(same.pixels.data(), images.pixels.data(), images.pixels.size() * sizeof(float)) == 0);
    const CorruptionSpec zero_shift{CorruptionKind::brightness, 1, 7, 0.0};
    CHECK(apply(images, zero_shift).pixels == images.pixels);
    const CorruptionSpec unit_contrast{CorruptionKind::contrast, 1, 7, 1.0};
    const auto c = apply(images, unit_contrast);
    for (std::size_t i = 0; i < c.pixels.size(); ++i) CHECK(c.pixels[i] == doctest::Approx(images.pixels[i]).epsilon(1e-6));
}

TEST_CASE("contrast scales around the image mean") {
    const auto images = random_batch(1, 2);
    const CorruptionSpec spec{CorruptionKind::contrast, 2, 0, 0.6};
    const auto out = apply(images, spec);
    double m = 0.0;
    for (const float v : images.pixels) m += v;
    m /= static_cast<double>(images.pixels.size());
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const double expect = std::clamp(m + 0.6 * (images.pixels[i] - m), 0.0, 1.0);
        CHECK(out.pixels[i] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("gaussian noise has the requested spread") {
    const auto images = constant_batch(1, 0.5f);
    const CorruptionSpec spec{CorruptionKind::gaussian_noise, 2, 99, 0.10};
    const auto out = apply(images, spec);
    double mean = 0.0;
    for (const float v : out.pixels) mean += v;
    mean /= static_cast<double>(out.pixels.size());
    double var = 0.0;
    for (const float v : out.pixels) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(out.pixels.size() - 1));
    CHECK(sd >= 0.085);
    CHECK(sd <= 0.115);
}

TEST_CASE("salt and pepper replaces the requested fraction") {
    const auto images = constant_batch(20, 0.5f);
    const auto out = apply(images, CorruptionSpec::make(CorruptionKind::salt_pepper, 3, 5));
    std::size_t flipped = 0;
    for (const float v : out.pixels) {
        if (v != 0.5f) {
            CHECK((v == 0.0f || v == 1.0f));
            ++flipped;
        }
    }
    CHECK(static_cast<double>(flipped) / static_cast<double>(out.pixels.size()) == doctest::Approx(0.08).epsilon(0.15));
}

TEST_CASE("outputs are deterministic, in range and annotated") {
    const auto images = random_batch(3, 3);
    for (const auto kind : kAllKinds) {
        for (const int sev : kSeverities) {
            const auto spec = CorruptionSpec::make(kind, sev, 42);
            const auto a = apply(images, spec);
            const auto b = apply(images, spec);
            CHECK(std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * sizeof(float)) == 0);
            for (const float v : a.pixels) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
            CHECK(a.annotations.at(2) == spec.to_string());
            CHECK(a.labels == images.labels);
        }
    }
}

TEST_CASE("degradation grows strictly with severity") {
    const auto images = random_batch(100, 4);
    for (const auto kind : kAllKinds) {
        double prev = 1e9;
        for (const int sev : kSeverities) {
            const auto out = apply(images, CorruptionSpec::make(kind, sev, rng::combine(7, sev)));
            const double p = mean_psnr(out, images);
            INFO(kind_name(kind) << " severity " << sev << " psnr " << p);
            CHECK(p < prev);
            prev = p;
        }
    }
}

TEST_CASE("training spec sampler") {
    CHECK(sample_training_spec(17) == sample_training_spec(17));
    std::map<CorruptionKind, int> counts;
    std::map<int, int> severities;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const auto spec = sample_training_spec(rng::combine(123, i));
        CHECK_FALSE((spec.kind == CorruptionKind::box_blur || spec.kind == CorruptionKind::pixelate));
        ++counts[spec.kind];
        if (!spec.is_identity()) ++severities[spec.severity];
    }
    CHECK(counts.size() == 8);
    for (const auto& [kind, n] : counts) {
        INFO(kind_name(kind));
        CHECK(std::abs(static_cast<double>(n) / draws - 0.125) <= 0.02);
    }
    CHECK(severities.size() == 3);
}

TEST_CASE("severity sweep layout") {
    const auto images = random_batch(5, 6);
    const std::array kinds = {CorruptionKind::box_blur, CorruptionKind::pixelate};
    const auto sweep = severity_sweep(images, kinds, kSeverities, 9);
    CHECK(sweep.count == 30);
    CHECK(sweep.annotations[0].rfind("box_blur:1:", 0) == 0);
    CHECK(sweep.annotations[29].rfind("pixelate:3:", 0) == 0);
    const std::array zero = {0};
    const auto same = severity_sweep(images, kinds, zero, 9);
    CHECK(same.count == 10);
    CHECK(same.slice(0, 5).pixels == images.pixels);
}
