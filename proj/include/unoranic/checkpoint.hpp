#pragma once

// UORP checkpoint files.
//
//   "UORP" version:u32
//   config length:u32, config text (sorted "key=value\n" lines)
//   tensor count:u32, then per tensor:
//     name length:u16, name, rank:u8, extents:u32[rank], f32 data
// Optimizer moments travel as ordinary tensors named opt.m.<param> and
// opt.v.<param>.

#include <cstdint>
#include <map>
#include <string>

#include "unoranic/model.hpp"

namespace unoranic {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using ConfigMap = std::map<std::string, std::string>;

struct CheckpointFile {
    ConfigMap config;
    NamedTensors tensors;

    const Tensor* find(const std::string& name) const;
    /// Throws ConfigError when the key is absent or not an unsigned integer.
    std::uint64_t config_uint(const std::string& key) const;
    std::uint64_t config_uint(const std::string& key, std::uint64_t fallback) const;
};

/// Writes to a sibling temporary file and renames it into place.
void write_checkpoint(const std::string& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::string& path);

/// "key=value" lines; blank lines and lines starting with '#' are skipped.
ConfigMap parse_config_text(const std::string& text);
std::string format_config_text(const ConfigMap& config);
ConfigMap read_config_file(const std::string& path);

/// Copies checkpoint tensors into `targets` by name. Every mismatch is
/// collected and reported in one ConfigError: shape differences, targets
/// absent from the file (unless `allow_missing` accepts the name), and file
/// tensors with no target. Names starting with "opt." are ignored.
void load_parameters(const CheckpointFile& file, const NamedTensors& targets,
                     bool (*allow_missing)(const std::string& name) = nullptr);

struct TrainingState {
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    bool has_moments = false;
};

/// Full model checkpoint. `extra` is merged into the config text (training
/// hyperparameters, for instance); `moments` holds opt.* tensors if any.
CheckpointFile make_model_checkpoint(const UnoranicPlusModel& model, const TrainingState& state,
                                     const ConfigMap& extra = {}, const NamedTensors& moments = {});
void save_model(const std::string& path, const UnoranicPlusModel& model, const TrainingState& state,
                const ConfigMap& extra = {}, const NamedTensors& moments = {});

TrainingState training_state(const CheckpointFile& file);

/// Builds a model from the checkpoint's own config and loads it strictly.
/// With `encoder_only`, decoder tensors may be absent (the decoders keep
/// their initialization); encoder tensors are always required.
UnoranicPlusModel load_model(const CheckpointFile& file, bool encoder_only = false);
UnoranicPlusModel load_model(const std::string& path, bool encoder_only = false);

/// Loads into an existing model; the stored config must equal the model's.
void load_into(const CheckpointFile& file, UnoranicPlusModel& model);

}  // namespace unoranic
