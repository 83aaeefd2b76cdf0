#include "unoranic/corruption.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "unoranic/error.hpp"
#include "unoranic/rng.hpp"

namespace unoranic {

namespace {

struct KindEntry {
    CorruptionKind kind;
    std::string_view name;
    std::array<double, 3> low;   // value per severity (first option)
    std::array<double, 3> high;  // alternative option; equal to low when there is no choice
};

// Severity 1..3 parameter table.
constexpr std::array<KindEntry, 9> kTable = {{
    {CorruptionKind::gaussian_noise, "gaussian_noise", {0.05, 0.10, 0.20}, {0.05, 0.10, 0.20}},
    {CorruptionKind::salt_pepper, "salt_pepper", {0.01, 0.03, 0.08}, {0.01, 0.03, 0.08}},
    {CorruptionKind::brightness, "brightness", {-0.1, -0.2, -0.35}, {0.1, 0.2, 0.35}},
    {CorruptionKind::contrast, "contrast", {0.8, 0.6, 0.4}, {1.25, 1.6, 2.2}},
    {CorruptionKind::gamma, "gamma", {0.8, 0.6, 0.5}, {1.25, 1.6, 2.0}},
    {CorruptionKind::gaussian_blur, "gaussian_blur", {0.5, 1.0, 1.5}, {0.5, 1.0, 1.5}},
    {CorruptionKind::solarize, "solarize", {0.9, 0.75, 0.6}, {0.9, 0.75, 0.6}},
    {CorruptionKind::box_blur, "box_blur", {1, 2, 3}, {1, 2, 3}},
    {CorruptionKind::pixelate, "pixelate", {2, 4, 7}, {2, 4, 7}},
}};

const KindEntry& entry(CorruptionKind kind) {
    for (const auto& e : kTable) {
        if (e.kind == kind) return e;
    }
    throw ConfigError("corruption kind has no parameter table");
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Separable filter with replicated borders, applied to one H x W plane.
void filter_separable(std::span<float> plane, std::size_t h, std::size_t w, const std::vector<double>& taps) {
    const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
    std::vector<double> tmp(h * w);
    auto clampi = [](std::ptrdiff_t v, std::size_t n) {
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
    };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
                acc += taps[static_cast<std::size_t>(t + radius)] *
                       plane[y * w + clampi(static_cast<std::ptrdiff_t>(x) + t, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
                acc += taps[static_cast<std::size_t>(t + radius)] * tmp[clampi(static_cast<std::ptrdiff_t>(y) + t, h) * w + x];
            }
            plane[y * w + x] = clamp01(acc);
        }
    }
}

std::vector<double> gaussian_taps(double sigma) {
    const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(radius);
        taps[i] = std::exp(-0.5 * d * d / (sigma * sigma));
        total += taps[i];
    }
    for (auto& t : taps) t /= total;
    return taps;
}

void pixelate_plane(std::span<float> plane, std::size_t h, std::size_t w, std::size_t factor) {
    for (std::size_t y0 = 0; y0 < h; y0 += factor) {
        for (std::size_t x0 = 0; x0 < w; x0 += factor) {
            const std::size_t y1 = std::min(h, y0 + factor);
            const std::size_t x1 = std::min(w, x0 + factor);
            double acc = 0.0;
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x) acc += plane[y * w + x];
            const float avg = clamp01(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x) plane[y * w + x] = avg;
        }
    }
}

void corrupt_image(std::span<float> img, std::size_t channels, std::size_t h, std::size_t w, const CorruptionSpec& spec,
                   const rng::CounterRng& noise) {
    const double v = spec.value;
    switch (spec.kind) {
        case CorruptionKind::identity:
            return;
        case CorruptionKind::gaussian_noise:
            for (std::size_t i = 0; i < img.size(); ++i) img[i] = clamp01(img[i] + v * noise.normal(i));
            return;
        case CorruptionKind::salt_pepper:
            for (std::size_t i = 0; i < img.size(); ++i) {
                if (noise.uniform(2 * i) < v) img[i] = noise.uniform(2 * i + 1) < 0.5 ? 0.0f : 1.0f;
            }
            return;
        case CorruptionKind::brightness:
            for (auto& p : img) p = clamp01(p + v);
            return;
        case CorruptionKind::contrast: {
            double m = 0.0;
            for (const float p : img) m += p;
            m /= static_cast<double>(img.size());
            for (auto& p : img) p = clamp01(m + v * (p - m));
            return;
        }
        case CorruptionKind::gamma:
            for (auto& p : img) p = clamp01(std::pow(static_cast<double>(p), v));
            return;
        case CorruptionKind::gaussian_blur: {
            const auto taps = gaussian_taps(v);
            for (std::size_t c = 0; c < channels; ++c) filter_separable(img.subspan(c * h * w, h * w), h, w, taps);
            return;
        }
        case CorruptionKind::solarize:
            for (auto& p : img) {
                if (p >= v) p = 1.0f - p;
            }
            return;
        case CorruptionKind::box_blur: {
            const auto r = static_cast<std::size_t>(v);
            const std::vector<double> taps(2 * r + 1, 1.0 / static_cast<double>(2 * r + 1));
            for (std::size_t c = 0; c < channels; ++c) filter_separable(img.subspan(c * h * w, h * w), h, w, taps);
            return;
        }
        case CorruptionKind::pixelate:
            for (std::size_t c = 0; c < channels; ++c) {
                pixelate_plane(img.subspan(c * h * w, h * w), h, w, static_cast<std::size_t>(v));
            }
            return;
    }
}

}  // namespace

std::string_view kind_name(CorruptionKind kind) noexcept {
    if (kind == CorruptionKind::identity) return "identity";
    for (const auto& e : kTable) {
        if (e.kind == kind) return e.name;
    }
    return "unknown";
}

CorruptionKind parse_kind(std::string_view name) {
    if (name == "identity") return CorruptionKind::identity;
    for (const auto& e : kTable) {
        if (e.name == name) return e.kind;
    }
    throw ConfigError("unknown corruption kind '" + std::string(name) + "'");
}

bool is_training_kind(CorruptionKind kind) noexcept {
    return std::find(kTrainingKinds.begin(), kTrainingKinds.end(), kind) != kTrainingKinds.end();
}

int detection_label(CorruptionKind kind) {
    if (kind == CorruptionKind::identity) return 0;
    const auto it = std::find(kTrainingKinds.begin(), kTrainingKinds.end(), kind);
    if (it == kTrainingKinds.end()) {
        throw ConfigError("held-out kind " + std::string(kind_name(kind)) + " has no detection label");
    }
    return static_cast<int>(it - kTrainingKinds.begin()) + 1;
}

CorruptionSpec CorruptionSpec::make(CorruptionKind kind, int severity, std::uint64_t seed) {
    if (severity < 0 || severity > kMaxSeverity) {
        throw ConfigError("severity must be in 0.." + std::to_string(kMaxSeverity) + ", got " + std::to_string(severity));
    }
    if (kind == CorruptionKind::identity || severity == 0) return identity();
    const auto& e = entry(kind);
    const auto s = static_cast<std::size_t>(severity - 1);
    // Bit 0 of the spec's first counter draw picks between the two options.
    const bool pick_high = (rng::CounterRng(seed).bits(UINT64_MAX) & 1U) != 0;
    return {kind, severity, seed, pick_high ? e.high[s] : e.low[s]};
}

std::string CorruptionSpec::to_string() const {
    return std::string(kind_name(kind)) + ":" + std::to_string(severity) + ":" + std::to_string(seed);
}

CorruptionSpec CorruptionSpec::parse(std::string_view text) {
    const auto a = text.find(':');
    const auto b = a == std::string_view::npos ? a : text.find(':', a + 1);
    if (b == std::string_view::npos) throw ConfigError("corruption spec '" + std::string(text) + "' is not kind:severity:seed");
    int severity = 0;
    std::uint64_t seed = 0;
    const auto sev = text.substr(a + 1, b - a - 1);
    const auto sd = text.substr(b + 1);
    auto r1 = std::from_chars(sev.data(), sev.data() + sev.size(), severity);
    auto r2 = std::from_chars(sd.data(), sd.data() + sd.size(), seed);
    if (r1.ec != std::errc{} || r1.ptr != sev.data() + sev.size() || r2.ec != std::errc{} ||
        r2.ptr != sd.data() + sd.size()) {
        throw ConfigError("corruption spec '" + std::string(text) + "' has a malformed severity or seed");
    }
    const auto kind = parse_kind(text.substr(0, a));
    auto spec = make(kind, severity, seed);
    if (spec.is_identity()) spec.seed = seed;
    return spec;
}

ImageBatch apply(const ImageBatch& images, const CorruptionSpec& spec) {
    ImageBatch out = images;
    out.annotations.assign(out.count, spec.to_string());
    if (out.labels.size() != out.count) out.labels.resize(out.count, 0);
    if (spec.is_identity()) return out;
    for (std::size_t i = 0; i < out.count; ++i) {
        const rng::CounterRng noise(rng::combine(spec.seed, i));
        corrupt_image(out.image(i), out.channels, out.height, out.width, spec, noise);
    }
    return out;
}

CorruptionSpec sample_training_spec(std::uint64_t rng_seed) {
    rng::Rng gen(rng_seed);
    const auto choice = gen.below(kTrainingKinds.size() + 1);
    const auto severity = static_cast<int>(gen.below(kMaxSeverity)) + 1;
    const auto seed = gen.next();
    if (choice == 0) {
        auto spec = CorruptionSpec::identity();
        spec.seed = seed;
        return spec;
    }
    return CorruptionSpec::make(kTrainingKinds[choice - 1], severity, seed);
}

ImageBatch severity_sweep(const ImageBatch& images, std::span<const CorruptionKind> kinds,
                          std::span<const int> severities, std::uint64_t seed) {
    ImageBatch out;
    for (const auto kind : kinds) {
        for (const int severity : severities) {
            const auto spec_seed = rng::combine(seed, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(severity));
            out.append(apply(images, CorruptionSpec::make(kind, severity, spec_seed)));
        }
    }
    return out;
}

}  // namespace unoranic
