#pragma once

// Seeded image distortions: the seven training kinds that make up A_S, two
// held-out kinds for robustness sweeps, and three severity grades each.
//
// Severity table (value resolved per spec; "a/b" pairs pick one side by seed):
//   gaussian_noise  sigma      0.05   0.10   0.20
//   salt_pepper     fraction   0.01   0.03   0.08
//   brightness      shift      +-0.1  +-0.2  +-0.35
//   contrast        scale      0.8/1.25  0.6/1.6  0.4/2.2   (around the image mean)
//   gamma           exponent   0.8/1.25  0.6/1.6  0.5/2.0
//   gaussian_blur   sigma      0.5    1.0    1.5
//   solarize        threshold  0.9    0.75   0.6
//   box_blur        radius     1      2      3              (held out)
//   pixelate        factor     2      4      7              (held out)

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unoranic/image.hpp"

namespace unoranic {

enum class CorruptionKind {
    identity,
    gaussian_noise,
    salt_pepper,
    brightness,
    contrast,
    gamma,
    gaussian_blur,
    solarize,
    box_blur,
    pixelate,
};

inline constexpr std::array<CorruptionKind, 7> kTrainingKinds = {
    CorruptionKind::gaussian_noise, CorruptionKind::salt_pepper,   CorruptionKind::brightness,
    CorruptionKind::contrast,       CorruptionKind::gamma,         CorruptionKind::gaussian_blur,
    CorruptionKind::solarize,
};
inline constexpr std::array<CorruptionKind, 2> kHeldOutKinds = {CorruptionKind::box_blur, CorruptionKind::pixelate};
inline constexpr int kMaxSeverity = 3;
inline constexpr std::array<int, 3> kSeverities = {1, 2, 3};

std::string_view kind_name(CorruptionKind kind) noexcept;
/// Throws ConfigError for unknown names.
CorruptionKind parse_kind(std::string_view name);
bool is_training_kind(CorruptionKind kind) noexcept;

/// Detection label: 0 = clean, 1..7 = index into kTrainingKinds + 1.
int detection_label(CorruptionKind kind);

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::identity;
    int severity = 0;
    std::uint64_t seed = 0;
    double value = 0.0;  // resolved parameter from the severity table

    /// Resolves the table value. Severity 0 (or kind identity) yields the
    /// identity spec; severities outside 0..3 raise ConfigError.
    static CorruptionSpec make(CorruptionKind kind, int severity, std::uint64_t seed);
    static CorruptionSpec identity() { return {}; }

    bool is_identity() const noexcept { return kind == CorruptionKind::identity; }

    /// "kind:severity:seed"
    std::string to_string() const;
    static CorruptionSpec parse(std::string_view text);

    bool operator==(const CorruptionSpec&) const = default;
};

/// Distorts every image in the batch. Image i draws its noise from the
/// counter stream keyed by (spec.seed, i), so the result is a pure function
/// of (batch, spec). Outputs are clamped to [0,1]; labels are kept and the
/// spec string is written into the annotations.
ImageBatch apply(const ImageBatch& images, const CorruptionSpec& spec);

/// One draw of A_S: identity with probability 1/8, otherwise a uniformly
/// chosen training kind at a uniformly chosen severity.
CorruptionSpec sample_training_spec(std::uint64_t rng_seed);

/// One corrupted copy of `images` per (kind, severity), kinds outermost.
/// Severity 0 produces an identity copy.
ImageBatch severity_sweep(const ImageBatch& images, std::span<const CorruptionKind> kinds,
                          std::span<const int> severities, std::uint64_t seed);

}  // namespace unoranic
