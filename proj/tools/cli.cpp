#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include "unoranic/checkpoint.hpp"
#include "unoranic/dataset.hpp"
#include "unoranic/error.hpp"
#include "unoranic/train.hpp"

namespace unoranic::cli {

namespace fs = std::filesystem;

namespace {

// Epoch tag for the fixed corruption draw applied to detection test sets.
constexpr std::uint64_t kEvalEpoch = 1ULL << 40;

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

class Manifest {
public:
    explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
        entries_["command"] = std::move(command);
        entries_["tool.version"] = kToolVersion;
    }

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    void merge(const ConfigMap& kv) {
        for (const auto& [k, v] : kv) entries_[k] = v;
    }
    void input(const std::string& name, const std::string& path) {
        entries_["input." + name + ".path"] = path;
        entries_["input." + name + ".fnv1a64"] = hex64(file_hash(path));
    }
    void artifact(const std::string& name, const std::string& path) {
        entries_["artifact." + name + ".path"] = path;
        entries_["artifact." + name + ".fnv1a64"] = hex64(file_hash(path));
    }

    void write(const fs::path& dir) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::ostringstream wall;
        wall << std::fixed << std::setprecision(3) << secs;
        entries_["wall_clock_seconds"] = wall.str();
        const auto path = (dir / "manifest.txt").string();
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write manifest " + path);
        os << format_config_text(entries_);
        if (!os) throw IoError("failed while writing manifest " + path);
    }

private:
    ConfigMap entries_;
    std::chrono::steady_clock::time_point start_;
};

fs::path prepare_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
    const auto probe = fs::path(dir) / ".write_test";
    std::ofstream os(probe);
    if (!os) throw IoError("output directory " + dir + " is not writable");
    os.close();
    fs::remove(probe, ec);
    return dir;
}

struct ModelFlags {
    std::string preset = "small";
    std::optional<std::size_t> depth, dim, heads, patch, probe_depth;

    void attach(CLI::App* app) {
        app->add_option("--preset", preset, "Model preset")->check(CLI::IsMember({"small", "large"}))->capture_default_str();
        app->add_option("--depth", depth, "Transformer blocks per encoder/decoder (overrides preset)");
        app->add_option("--dim", dim, "Embedding dimension (overrides preset)");
        app->add_option("--heads", heads, "Attention heads (overrides preset)");
        app->add_option("--patch", patch, "Patch size (overrides preset)");
        app->add_option("--probe-depth", probe_depth, "Transformer blocks in the probe head");
    }
};

struct TrainFlags {
    std::optional<std::size_t> epochs, batch, warmup_epochs, max_steps;
    std::optional<double> lr, weight_decay;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* app) {
        app->add_option("--epochs", epochs, "Training epochs (default 150)");
        app->add_option("--batch", batch, "Batch size (default 64)");
        app->add_option("--seed", seed, "Root seed for all randomness (default 0)");
        app->add_option("--lr", lr, "Base learning rate at batch 64; scaled by batch/64 (default 1.5e-4)");
        app->add_option("--warmup-epochs", warmup_epochs, "Linear warmup epochs (default 10)");
        app->add_option("--weight-decay", weight_decay, "Decoupled weight decay (default 0.05)");
        app->add_option("--steps", max_steps, "Cap on optimizer steps (default: no cap)");
    }
};

void check_config_keys(const ConfigMap& file) {
    const auto model_keys = ModelConfig{}.to_kv();
    const auto train_keys = TrainConfig{}.to_kv();
    for (const auto& [k, v] : file) {
        if (!model_keys.count(k) && !train_keys.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
}

ModelConfig resolve_model(const ModelFlags& flags, const ConfigMap& file) {
    auto kv = ModelConfig::preset(flags.preset).to_kv();
    for (const auto& [k, v] : file) {
        if (kv.count(k)) kv[k] = v;
    }
    auto c = ModelConfig::from_kv(kv);
    if (flags.depth) c.depth = *flags.depth;
    if (flags.dim) c.embed_dim = *flags.dim;
    if (flags.heads) c.heads = *flags.heads;
    if (flags.patch) c.patch_size = *flags.patch;
    if (flags.probe_depth) c.probe_depth = *flags.probe_depth;
    c.validate();
    return c;
}

TrainConfig resolve_train(const TrainFlags& flags, const ConfigMap& file) {
    TrainConfig t;
    t.update_from(file);
    if (flags.epochs) t.epochs = *flags.epochs;
    if (flags.batch) t.batch_size = *flags.batch;
    if (flags.seed) t.seed = *flags.seed;
    if (flags.lr) t.base_lr = *flags.lr;
    if (flags.warmup_epochs) t.warmup_epochs = *flags.warmup_epochs;
    if (flags.weight_decay) t.weight_decay = *flags.weight_decay;
    if (flags.max_steps) t.max_steps = *flags.max_steps;
    t.validate();
    return t;
}

ConfigMap load_config(const std::string& path) {
    if (path.empty()) return {};
    auto kv = read_config_file(path);
    check_config_keys(kv);
    return kv;
}

void require_geometry(const ModelConfig& c, const DatasetHeader& h, const std::string& path) {
    if (c.channels != h.channels || c.image_h != h.height || c.image_w != h.width) {
        throw ConfigError("checkpoint expects " + std::to_string(c.channels) + "x" + std::to_string(c.image_h) + "x" +
                          std::to_string(c.image_w) + " images but " + path + " holds " + std::to_string(h.channels) +
                          "x" + std::to_string(h.height) + "x" + std::to_string(h.width));
    }
}

void print_aggregates(std::ostream& out, const EvalReport& report) {
    for (const auto& a : report.aggregates()) {
        out << a.metric << ' ' << (a.group.empty() ? "-" : a.group) << ' ' << std::fixed << std::setprecision(6)
            << a.value << '\n';
    }
}

// --- commands --------------------------------------------------------------

struct GenDataArgs {
    std::string out;
    std::size_t count = 1000;
    std::size_t size = 28;
    std::size_t classes = 2;
    std::uint64_t seed = 0;
};

void gen_data(const GenDataArgs& a, std::ostream& out) {
    Manifest manifest("gen-data");
    const auto dir = prepare_out_dir(a.out);
    const auto split = split_811(generate_synthetic({a.count, a.size, a.size, a.classes, a.seed}));
    manifest.set("seed", std::to_string(a.seed));
    manifest.set("data.count", std::to_string(a.count));
    manifest.set("data.size", std::to_string(a.size));
    manifest.set("data.classes", std::to_string(a.classes));
    for (const auto& [name, part] : {std::pair{"train", &split.train}, {"val", &split.val}, {"test", &split.test}}) {
        const auto path = (dir / (std::string(name) + ".ornc")).string();
        write_dataset(path, *part, static_cast<std::uint32_t>(a.classes));
        manifest.artifact(name, path);
        out << name << ' ' << part->count << ' ' << path << '\n';
    }
    manifest.write(dir);
}

struct PretrainArgs {
    std::string data;
    std::string out;
    std::string config;
    std::optional<std::string> resume;
    std::optional<std::size_t> stop_epoch;
    ModelFlags model;
    TrainFlags train;
};

void pretrain_cmd(const PretrainArgs& a, std::ostream& out) {
    Manifest manifest("pretrain");
    const auto file_cfg = load_config(a.config);
    const auto mc = resolve_model(a.model, file_cfg);
    const auto tc = resolve_train(a.train, file_cfg);
    const auto dir = prepare_out_dir(a.out);
    const auto header = read_dataset_header(a.data);
    require_geometry(mc, header, a.data);

    UnoranicPlusModel model(mc, tc.seed);
    DatasetReader reader(a.data, tc.batch_size, tc.seed);
    PretrainOptions options;
    options.checkpoint_path = (dir / "model.uorp").string();
    options.resume_from = a.resume;
    options.stop_after_epoch = a.stop_epoch;
    const auto result = pretrain(model, reader, tc, options);
    const auto history = (dir / "loss.csv").string();
    write_loss_history(history, result.history);

    manifest.merge(mc.to_kv());
    manifest.merge(tc.to_kv());
    manifest.set("seed", std::to_string(tc.seed));
    manifest.set("preset", a.model.preset);
    manifest.input("data", a.data);
    if (!a.config.empty()) manifest.input("config", a.config);
    if (a.resume) manifest.input("resume", *a.resume);
    manifest.set("state.epoch", std::to_string(result.state.epoch));
    manifest.set("state.step", std::to_string(result.state.step));
    manifest.artifact("checkpoint", options.checkpoint_path);
    manifest.artifact("loss_history", history);
    manifest.write(dir);
    out << "steps " << result.history.size() << " epoch " << result.state.epoch << '\n';
    if (!result.history.empty()) {
        out << "loss first " << result.history.front().total << " last " << result.history.back().total << '\n';
    }
    out << "checkpoint " << options.checkpoint_path << '\n';
}

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string out;
    std::string protocol = "reconstruction";
    std::uint64_t seed = 0;
    std::size_t batch = 100;
};

void eval_cmd(const EvalArgs& a, std::ostream& out) {
    Manifest manifest("eval");
    const auto dir = prepare_out_dir(a.out);
    const auto model = load_model(a.ckpt);
    const auto test = read_dataset(a.data);
    require_geometry(model.config(), read_dataset_header(a.data), a.data);
    const auto report = a.protocol == "reconstruction" ? evaluate_reconstruction(model, test, a.batch)
                                                       : evaluate_revision(model, test, a.seed, a.batch);
    const auto path = (dir / "report.csv").string();
    report.write_csv(path);
    manifest.set("protocol", a.protocol);
    manifest.set("seed", std::to_string(a.seed));
    manifest.merge(model.config().to_kv());
    manifest.input("checkpoint", a.ckpt);
    manifest.input("data", a.data);
    manifest.artifact("report", path);
    manifest.write(dir);
    print_aggregates(out, report);
}

struct ReviseArgs {
    std::string ckpt;
    std::string data;
    std::string out;
    std::string kind = "gaussian_noise";
    int severity = 2;
    std::uint64_t seed = 0;
    std::size_t limit = 16;
};

void revise_cmd(const ReviseArgs& a, std::ostream& out) {
    Manifest manifest("revise");
    const auto dir = prepare_out_dir(a.out);
    const auto model = load_model(a.ckpt);
    require_geometry(model.config(), read_dataset_header(a.data), a.data);
    const auto all = read_dataset(a.data);
    const auto clean = all.slice(0, std::min(a.limit, all.count));
    const auto spec = CorruptionSpec::make(parse_kind(a.kind), a.severity, a.seed);
    const auto corrupted = apply(clean, spec);
    const auto rec = reconstruct(model, corrupted, 100);

    // Per image: clean I, corrupted S, revised I_hat_A, each C*H*W bytes.
    const auto path = (dir / "triplets.u8").string();
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write " + path);
        auto put = [&](std::span<const float> img) {
            for (const float p : img) {
                const auto b = static_cast<unsigned char>(std::lround(std::clamp(static_cast<double>(p), 0.0, 1.0) * 255.0));
                os.put(static_cast<char>(b));
            }
        };
        for (std::size_t i = 0; i < clean.count; ++i) {
            put(clean.image(i));
            put(corrupted.image(i));
            put(rec.anatomy.image(i));
        }
        if (!os) throw IoError("failed while writing " + path);
    }
    EvalReport report;
    for (std::size_t i = 0; i < clean.count; ++i) {
        std::ostringstream id;
        id << std::setw(6) << std::setfill('0') << i;
        report.add_row(id.str(), "psnr_corrupted", psnr(corrupted.image(i), clean.image(i)), spec.to_string());
        report.add_row(id.str(), "psnr_revised", psnr(rec.anatomy.image(i), clean.image(i)), spec.to_string());
    }
    report.aggregate_means();
    const auto report_path = (dir / "report.csv").string();
    report.write_csv(report_path);

    manifest.set("spec", spec.to_string());
    manifest.set("seed", std::to_string(a.seed));
    manifest.set("triplets.count", std::to_string(clean.count));
    manifest.set("triplets.layout", "per image: clean, corrupted, revised; each channels*height*width u8");
    manifest.set("triplets.channels", std::to_string(clean.channels));
    manifest.set("triplets.height", std::to_string(clean.height));
    manifest.set("triplets.width", std::to_string(clean.width));
    manifest.input("checkpoint", a.ckpt);
    manifest.input("data", a.data);
    manifest.artifact("triplets", path);
    manifest.artifact("report", report_path);
    manifest.write(dir);
    print_aggregates(out, report);
    out << "triplets " << path << '\n';
}

struct ProbeArgs {
    std::string ckpt;
    std::string data;
    std::string test;
    std::string out;
    std::string task = "disease";
    std::string config;
    bool allow_missing = false;
    TrainFlags train;
};

void probe_cmd(const ProbeArgs& a, std::ostream& out) {
    Manifest manifest("probe");
    const auto tc = resolve_train(a.train, load_config(a.config));
    const auto task = parse_task(a.task);
    const auto dir = prepare_out_dir(a.out);
    const auto model = load_model(a.ckpt, a.allow_missing);
    const auto header = read_dataset_header(a.data);
    require_geometry(model.config(), header, a.data);

    DatasetReader reader(a.data, tc.batch_size, tc.seed);
    const auto result = train_probe(model.encoder(), reader, task, tc, header.num_classes);
    const auto probe_path = (dir / "probe.uorp").string();
    save_probe(probe_path, *result.probe, task, tc.to_kv());
    const auto history = (dir / "loss.csv").string();
    write_loss_history(history, result.history);

    manifest.merge(model.config().to_kv());
    manifest.merge(tc.to_kv());
    manifest.set("seed", std::to_string(tc.seed));
    manifest.set("task", a.task);
    manifest.set("allow_missing", a.allow_missing ? "1" : "0");
    manifest.input("checkpoint", a.ckpt);
    manifest.input("data", a.data);
    manifest.artifact("probe", probe_path);
    manifest.artifact("loss_history", history);
    if (!a.test.empty()) {
        require_geometry(model.config(), read_dataset_header(a.test), a.test);
        auto test = read_dataset(a.test);
        if (task == ProbeTask::detect) {
            std::vector<std::uint32_t> idx(test.count);
            std::iota(idx.begin(), idx.end(), 0U);
            test = detection_batch(test, idx, tc.seed, kEvalEpoch);
        }
        const auto report = evaluate_classification(*result.probe, test, 100, a.task);
        const auto report_path = (dir / "report.csv").string();
        report.write_csv(report_path);
        manifest.input("test", a.test);
        manifest.artifact("report", report_path);
        print_aggregates(out, report);
    }
    manifest.write(dir);
    out << "probe " << probe_path << '\n';
}

struct RobustnessArgs {
    std::string ckpt;
    std::string probe_ckpt;
    std::string data;
    std::string out;
    std::uint64_t seed = 0;
    bool allow_missing = false;
};

void robustness_cmd(const RobustnessArgs& a, std::ostream& out) {
    Manifest manifest("robustness");
    const auto dir = prepare_out_dir(a.out);
    const auto model = load_model(a.ckpt, a.allow_missing);
    require_geometry(model.config(), read_dataset_header(a.data), a.data);
    ProbeTask task{};
    const auto probe = load_probe(a.probe_ckpt, model.encoder(), &task);
    if (task != ProbeTask::disease) throw ConfigError("robustness needs a disease probe, got a " + std::string(task_name(task)) + " probe");
    const auto test = read_dataset(a.data);
    const auto report = evaluate_robustness(*probe, test, a.seed, 100);
    const auto path = (dir / "report.csv").string();
    report.write_csv(path);
    manifest.set("seed", std::to_string(a.seed));
    manifest.merge(model.config().to_kv());
    manifest.input("checkpoint", a.ckpt);
    manifest.input("probe_checkpoint", a.probe_ckpt);
    manifest.input("data", a.data);
    manifest.artifact("report", path);
    manifest.write(dir);
    print_aggregates(out, report);
}

template <typename Fn>
int guarded(Fn&& fn, std::ostream& err) {
    try {
        fn();
        return kOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return kFormat;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << '\n';
        return kIo;
    } catch (const DimensionError& e) {
        err << "dimension error: " << e.what() << '\n';
        return kDimension;
    } catch (const StateError& e) {
        err << "state error: " << e.what() << '\n';
        return kState;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const UndefinedMetricError& e) {
        err << "undefined metric: " << e.what() << '\n';
        return kUndefinedMetric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"unORANIC+ pretraining, probing and evaluation"};
    app.name("unoranic");
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset as train/val/test ORNC files (8:1:1)");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--count", gen.count, "Total images")->capture_default_str();
    gen_cmd->add_option("--size", gen.size, "Image height and width")->capture_default_str();
    gen_cmd->add_option("--classes", gen.classes, "Classes (2..8)")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();

    PretrainArgs pre;
    auto* pre_cmd = app.add_subcommand("pretrain", "Train the encoder and both decoders");
    pre_cmd->add_option("--data", pre.data, "Training ORNC file")->required();
    pre_cmd->add_option("--out", pre.out, "Output directory (model.uorp, loss.csv, manifest.txt)")->required();
    pre_cmd->add_option("--config", pre.config, "key=value file with model.* and train.* keys");
    pre_cmd->add_option("--resume", pre.resume, "Resume from a checkpoint written by an earlier run");
    pre_cmd->add_option("--stop-epoch", pre.stop_epoch, "Stop after this many completed epochs");
    pre.model.attach(pre_cmd);
    pre.train.attach(pre_cmd);

    EvalArgs ev;
    auto* ev_cmd = app.add_subcommand("eval", "Reconstruction or revision report for a checkpoint");
    ev_cmd->add_option("--ckpt", ev.ckpt, "Model checkpoint")->required();
    ev_cmd->add_option("--data", ev.data, "Test ORNC file")->required();
    ev_cmd->add_option("--out", ev.out, "Output directory")->required();
    ev_cmd->add_option("--protocol", ev.protocol, "Evaluation protocol")
        ->check(CLI::IsMember({"reconstruction", "revision"}))
        ->capture_default_str();
    ev_cmd->add_option("--seed", ev.seed, "Corruption seed for revision")->capture_default_str();
    ev_cmd->add_option("--batch", ev.batch, "Inference batch size")->capture_default_str();

    ReviseArgs rv;
    auto* rv_cmd = app.add_subcommand("revise", "Dump (clean, corrupted, revised) u8 triplets");
    rv_cmd->add_option("--ckpt", rv.ckpt, "Model checkpoint")->required();
    rv_cmd->add_option("--data", rv.data, "ORNC file")->required();
    rv_cmd->add_option("--out", rv.out, "Output directory")->required();
    rv_cmd->add_option("--kind", rv.kind, "Corruption kind")->capture_default_str();
    rv_cmd->add_option("--severity", rv.severity, "Severity 0..3")->capture_default_str();
    rv_cmd->add_option("--seed", rv.seed, "Corruption seed")->capture_default_str();
    rv_cmd->add_option("--limit", rv.limit, "Images to dump")->capture_default_str();

    ProbeArgs pb;
    auto* pb_cmd = app.add_subcommand("probe", "Train a classifier head on the frozen encoder");
    pb_cmd->add_option("--ckpt", pb.ckpt, "Pretrained model checkpoint")->required();
    pb_cmd->add_option("--data", pb.data, "Training ORNC file")->required();
    pb_cmd->add_option("--out", pb.out, "Output directory")->required();
    pb_cmd->add_option("--test", pb.test, "Test ORNC file; writes report.csv with ACC and AUC");
    pb_cmd->add_option("--task", pb.task, "Probe task")->check(CLI::IsMember({"disease", "detect"}))->capture_default_str();
    pb_cmd->add_option("--config", pb.config, "key=value file with train.* keys");
    pb_cmd->add_flag("--allow-missing", pb.allow_missing, "Accept checkpoints without decoder tensors");
    pb.train.attach(pb_cmd);

    RobustnessArgs rb;
    auto* rb_cmd = app.add_subcommand("robustness", "Probe ACC/AUC under held-out corruptions per severity");
    rb_cmd->add_option("--ckpt", rb.ckpt, "Pretrained model checkpoint")->required();
    rb_cmd->add_option("--probe-ckpt", rb.probe_ckpt, "Disease probe checkpoint")->required();
    rb_cmd->add_option("--data", rb.data, "Test ORNC file")->required();
    rb_cmd->add_option("--out", rb.out, "Output directory")->required();
    rb_cmd->add_option("--seed", rb.seed, "Corruption seed")->capture_default_str();
    rb_cmd->add_flag("--allow-missing", rb.allow_missing, "Accept checkpoints without decoder tensors");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << "run '" << sub->get_name() << " --help' for the list of flags\n";
        return kUsage;
    }

    if (gen_cmd->parsed()) return guarded([&] { gen_data(gen, out); }, err);
    if (pre_cmd->parsed()) return guarded([&] { pretrain_cmd(pre, out); }, err);
    if (ev_cmd->parsed()) return guarded([&] { eval_cmd(ev, out); }, err);
    if (rv_cmd->parsed()) return guarded([&] { revise_cmd(rv, out); }, err);
    if (pb_cmd->parsed()) return guarded([&] { probe_cmd(pb, out); }, err);
    if (rb_cmd->parsed()) return guarded([&] { robustness_cmd(rb, out); }, err);
    return kUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"unoranic"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace unoranic::cli
