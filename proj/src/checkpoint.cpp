#include "unoranic/checkpoint.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "unoranic/error.hpp"

namespace unoranic {

namespace {

constexpr char kMagic[4] = {'U', 'O', 'R', 'P'};

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(text, &used);
        if (used != text.size() || text.empty() || text[0] == '-') throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " has non-integer value '" + text + "'");
    }
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

const Tensor* CheckpointFile::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::uint64_t CheckpointFile::config_uint(const std::string& key) const {
    const auto it = config.find(key);
    if (it == config.end()) throw ConfigError("checkpoint config lacks key " + key);
    return parse_uint(key, it->second);
}

std::uint64_t CheckpointFile::config_uint(const std::string& key, std::uint64_t fallback) const {
    return config.count(key) ? config_uint(key) : fallback;
}

ConfigMap parse_config_text(const std::string& text) {
    ConfigMap out;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        }
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

std::string format_config_text(const ConfigMap& config) {
    std::string out;
    for (const auto& [k, v] : config) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ConfigError("config entry '" + k + "' cannot be serialized");
        }
        out += k + "=" + v + "\n";
    }
    return out;
}

ConfigMap read_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

void write_checkpoint(const std::string& path, const CheckpointFile& file) {
    std::set<std::string> seen;
    for (const auto& [name, t] : file.tensors) {
        if (!seen.insert(name).second) throw ConfigError("duplicate tensor name " + name + " in checkpoint");
        if (name.empty() || name.size() > UINT16_MAX) throw ConfigError("tensor name length out of range");
        if (t.rank() > UINT8_MAX) throw ConfigError("tensor rank out of range for " + name);
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write checkpoint " + tmp);
        os.write(kMagic, 4);
        binio::put_le(os, kCheckpointVersion);
        const auto text = format_config_text(file.config);
        binio::put_le(os, static_cast<std::uint32_t>(text.size()));
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        binio::put_le(os, static_cast<std::uint32_t>(file.tensors.size()));
        for (const auto& [name, t] : file.tensors) {
            binio::put_le(os, static_cast<std::uint16_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            binio::put_le(os, static_cast<std::uint8_t>(t.rank()));
            for (const auto e : t.shape()) {
                if (e > UINT32_MAX) throw ConfigError("tensor extent out of range for " + name);
                binio::put_le(os, static_cast<std::uint32_t>(e));
            }
            for (const float v : t.data()) binio::put_f32(os, v);
        }
        if (!os) throw IoError("failed while writing checkpoint " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

CheckpointFile read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path);
    binio::Reader r(is, "checkpoint " + path);
    char magic[4];
    r.raw(magic, 4, "magic");
    if (!std::equal(magic, magic + 4, kMagic)) {
        throw FormatError("checkpoint " + path + ": bad magic at byte offset 0 (expected UORP)");
    }
    const auto version = r.le<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint " + path + ": unsupported version " + std::to_string(version) + " at byte offset 4");
    }
    CheckpointFile out;
    const auto text_len = r.le<std::uint32_t>("config length");
    std::string text(text_len, '\0');
    r.raw(text.data(), text_len, "config");
    out.config = parse_config_text(text);
    const auto count = r.le<std::uint32_t>("tensor count");
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto at = r.offset();
        const auto name_len = r.le<std::uint16_t>("tensor name length");
        std::string name(name_len, '\0');
        r.raw(name.data(), name_len, "tensor name");
        if (!seen.insert(name).second) {
            throw FormatError("checkpoint " + path + ": duplicate tensor " + name + " at byte offset " + std::to_string(at));
        }
        const auto rank = r.le<std::uint8_t>("tensor rank");
        Shape shape(rank);
        for (auto& e : shape) {
            e = r.le<std::uint32_t>("tensor extent");
            if (e == 0) throw FormatError("checkpoint " + path + ": zero extent in " + name + " at byte offset " +
                                          std::to_string(r.offset() - 4));
        }
        std::vector<float> data(shape_numel(shape));
        for (auto& v : data) v = r.f32("tensor data");
        out.tensors.emplace_back(std::move(name), Tensor::from_data(shape, std::move(data)));
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw FormatError("checkpoint " + path + ": trailing bytes from byte offset " + std::to_string(r.offset()));
    }
    return out;
}

void load_parameters(const CheckpointFile& file, const NamedTensors& targets, bool (*allow_missing)(const std::string&)) {
    std::vector<std::string> problems;
    std::set<std::string> wanted;
    for (const auto& [name, target] : targets) {
        wanted.insert(name);
        const auto* src = file.find(name);
        if (!src) {
            if (!allow_missing || !allow_missing(name)) problems.push_back("missing " + name);
            continue;
        }
        if (src->shape() != target.shape()) {
            problems.push_back("shape " + name + ": checkpoint " + shape_str(src->shape()) + ", model " +
                               shape_str(target.shape()));
        }
    }
    for (const auto& [name, t] : file.tensors) {
        if (!starts_with(name, "opt.") && !wanted.count(name)) problems.push_back("unknown " + name);
    }
    if (!problems.empty()) {
        std::string msg = "checkpoint does not match the model (" + std::to_string(problems.size()) + " problems):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }
    for (const auto& [name, target] : targets) {
        if (const auto* src = file.find(name)) {
            auto dst = target;  // shares storage
            std::copy(src->data().begin(), src->data().end(), dst.mutable_data().begin());
        }
    }
}

CheckpointFile make_model_checkpoint(const UnoranicPlusModel& model, const TrainingState& state, const ConfigMap& extra,
                                     const NamedTensors& moments) {
    CheckpointFile f;
    f.config = extra;
    for (const auto& [k, v] : model.config().to_kv()) f.config[k] = v;
    f.config["state.epoch"] = std::to_string(state.epoch);
    f.config["state.step"] = std::to_string(state.step);
    f.config["state.seed"] = std::to_string(state.seed);
    f.config["state.has_moments"] = moments.empty() ? "0" : "1";
    for (const auto& [name, t] : model.named_parameters()) f.tensors.emplace_back(name, t.detach());
    for (const auto& [name, t] : moments) f.tensors.emplace_back(name, t);
    return f;
}

void save_model(const std::string& path, const UnoranicPlusModel& model, const TrainingState& state,
                const ConfigMap& extra, const NamedTensors& moments) {
    write_checkpoint(path, make_model_checkpoint(model, state, extra, moments));
}

TrainingState training_state(const CheckpointFile& file) {
    TrainingState s;
    s.epoch = file.config_uint("state.epoch", 0);
    s.step = file.config_uint("state.step", 0);
    s.seed = file.config_uint("state.seed", 0);
    s.has_moments = file.config_uint("state.has_moments", 0) != 0;
    return s;
}

UnoranicPlusModel load_model(const CheckpointFile& file, bool encoder_only) {
    const auto config = ModelConfig::from_kv(file.config);
    UnoranicPlusModel model(config, file.config_uint("state.seed", 0));
    auto decoder_name = +[](const std::string& name) { return !starts_with(name, "encoder."); };
    load_parameters(file, model.named_parameters(), encoder_only ? decoder_name : nullptr);
    return model;
}

UnoranicPlusModel load_model(const std::string& path, bool encoder_only) {
    return load_model(read_checkpoint(path), encoder_only);
}

void load_into(const CheckpointFile& file, UnoranicPlusModel& model) {
    const auto stored = ModelConfig::from_kv(file.config).to_kv();
    const auto wanted = model.config().to_kv();
    std::string diff;
    for (const auto& [k, v] : wanted) {
        const auto it = stored.find(k);
        if (it->second != v) diff += "\n  " + k + ": checkpoint " + it->second + ", model " + v;
    }
    if (!diff.empty()) throw ConfigError("checkpoint config does not match the model:" + diff);
    load_parameters(file, model.named_parameters());
}

}  // namespace unoranic
