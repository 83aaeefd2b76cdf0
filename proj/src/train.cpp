#include "unoranic/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "unoranic/error.hpp"
#include "unoranic/ops.hpp"
#include "unoranic/rng.hpp"

namespace unoranic {

namespace {

// Per-step activations are large enough to cross glibc's mmap threshold, so
// every step would otherwise map and unmap them afresh.
void tune_allocator() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)once;
#endif
}

std::string sample_id(std::size_t i) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << i;
    return os.str();
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

double parse_double(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " has non-numeric value '" + text + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        if (text.empty() || text[0] == '-') throw std::invalid_argument(key);
        const auto v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " has non-integer value '" + text + "'");
    }
}

void check_geometry(const ModelConfig& c, const DatasetHeader& h) {
    if (c.channels != h.channels || c.image_h != h.height || c.image_w != h.width) {
        throw ConfigError("model expects " + std::to_string(c.channels) + "x" + std::to_string(c.image_h) + "x" +
                          std::to_string(c.image_w) + " images but the dataset holds " + std::to_string(h.channels) +
                          "x" + std::to_string(h.height) + "x" + std::to_string(h.width));
    }
}

std::vector<std::uint32_t> batch_indices(const DatasetReader& data, std::size_t batch, std::size_t n) {
    const auto& order = data.order();
    const auto first = batch * data.batch_size();
    return {order.begin() + static_cast<std::ptrdiff_t>(first), order.begin() + static_cast<std::ptrdiff_t>(first + n)};
}

double scalar_of(const Tensor& t) { return static_cast<double>(t.item()); }

}  // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (epochs > 0 && warmup_epochs >= epochs) {
        throw ConfigError("warmup_epochs (" + std::to_string(warmup_epochs) + ") must be below epochs (" +
                          std::to_string(epochs) + ")");
    }
    if (!(base_lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("learning rate and weight decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

ConfigMap TrainConfig::to_kv() const {
    return {
        {"train.epochs", std::to_string(epochs)},
        {"train.batch_size", std::to_string(batch_size)},
        {"train.base_lr", fmt_double(base_lr)},
        {"train.weight_decay", fmt_double(weight_decay)},
        {"train.warmup_epochs", std::to_string(warmup_epochs)},
        {"train.seed", std::to_string(seed)},
        {"train.beta1", fmt_double(beta1)},
        {"train.beta2", fmt_double(beta2)},
        {"train.eps", fmt_double(eps)},
        {"train.max_steps", std::to_string(max_steps)},
    };
}

void TrainConfig::update_from(const ConfigMap& kv) {
    auto u = [&](const char* key, auto& field) {
        if (const auto it = kv.find(key); it != kv.end()) field = static_cast<std::remove_reference_t<decltype(field)>>(parse_u64(key, it->second));
    };
    auto d = [&](const char* key, double& field) {
        if (const auto it = kv.find(key); it != kv.end()) field = parse_double(key, it->second);
    };
    u("train.epochs", epochs);
    u("train.batch_size", batch_size);
    d("train.base_lr", base_lr);
    d("train.weight_decay", weight_decay);
    u("train.warmup_epochs", warmup_epochs);
    u("train.seed", seed);
    d("train.beta1", beta1);
    d("train.beta2", beta2);
    d("train.eps", eps);
    u("train.max_steps", max_steps);
}

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr) {
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double floor = base_lr / 100.0;
    if (total_steps <= warmup_steps + 1) return base_lr;
    const double span = static_cast<double>(total_steps - 1 - warmup_steps);
    const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
    return floor + (base_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

AdamW::AdamW(NamedTensors params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& [name, p] : params_) {
        m_.emplace_back(p.numel(), 0.0f);
        v_.emplace_back(p.numel(), 0.0f);
        decays_.push_back(parameter_decays(name));
    }
}

void AdamW::step(double lr) {
    for (const auto& [name, p] : params_) {
        if (!p.has_grad()) continue;
        for (const float g : p.grad()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + name);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto p = params_[k].second;
        const bool has = p.has_grad();
        auto w = p.mutable_data();
        const auto g = has ? p.grad() : std::span<const float>{};
        auto& m = m_[k];
        auto& v = v_[k];
        const double decay = decays_[k] ? lr * wd_ : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = has ? static_cast<double>(g[i]) : 0.0;
            const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
            const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double update = (mi / c1) / (std::sqrt(vi / c2) + eps_);
            w[i] = static_cast<float>(static_cast<double>(w[i]) - decay * w[i] - lr * update);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

NamedTensors AdamW::export_moments() const {
    NamedTensors out;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& [name, p] = params_[k];
        out.emplace_back("opt.m." + name, Tensor::from_data(p.shape(), m_[k]));
        out.emplace_back("opt.v." + name, Tensor::from_data(p.shape(), v_[k]));
    }
    // The step count as two exact 24-bit halves so it survives float storage.
    out.emplace_back("opt.t", Tensor::from_data({2}, {static_cast<float>(t_ & 0xFFFFFF), static_cast<float>(t_ >> 24)}));
    return out;
}

void AdamW::import_moments(const CheckpointFile& file) {
    std::string missing;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& [name, p] = params_[k];
        const auto* m = file.find("opt.m." + name);
        const auto* v = file.find("opt.v." + name);
        if (!m || !v || m->shape() != p.shape() || v->shape() != p.shape()) {
            missing += "\n  " + name;
            continue;
        }
        std::copy(m->data().begin(), m->data().end(), m_[k].begin());
        std::copy(v->data().begin(), v->data().end(), v_[k].begin());
    }
    const auto* t = file.find("opt.t");
    if (!t || t->numel() != 2) missing += "\n  opt.t";
    if (!missing.empty()) throw StateError("checkpoint lacks optimizer state for:" + missing);
    t_ = static_cast<std::uint64_t>(t->data()[0]) | (static_cast<std::uint64_t>(t->data()[1]) << 24);
}

void write_loss_history(const std::string& path, const std::vector<LossRecord>& history) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write loss history " + path);
    os << "step,lr,loss_total,loss_rs,loss_ri\n";
    for (const auto& r : history) {
        os << r.step << ',' << fmt_double(r.lr) << ',' << fmt_double(r.total) << ',' << fmt_double(r.synthetic) << ','
           << fmt_double(r.anatomy) << '\n';
    }
    if (!os) throw IoError("failed while writing loss history " + path);
}

std::vector<LossRecord> read_loss_history(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open loss history " + path);
    std::string line;
    std::getline(is, line);
    if (line != "step,lr,loss_total,loss_rs,loss_ri") throw FormatError("loss history " + path + " has an unexpected header");
    std::vector<LossRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string f[5];
        for (auto& s : f) std::getline(ls, s, ',');
        out.push_back({parse_u64("step", f[0]), parse_double("lr", f[1]), parse_double("loss_total", f[2]),
                       parse_double("loss_rs", f[3]), parse_double("loss_ri", f[4])});
    }
    return out;
}

ImageBatch corrupt_each(const ImageBatch& batch, const std::vector<CorruptionSpec>& specs) {
    if (specs.size() != batch.count) throw DimensionError("one corruption spec per image is required");
    ImageBatch out;
    for (std::size_t k = 0; k < batch.count; ++k) out.append(apply(batch.slice(k, 1), specs[k]));
    return out;
}

CorruptionSpec training_spec_for(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
    return sample_training_spec(rng::combine(seed, epoch, index));
}

std::size_t total_steps(const TrainConfig& config, std::size_t dataset_size) {
    const std::size_t per_epoch = (dataset_size + config.batch_size - 1) / config.batch_size;
    const std::size_t full = config.epochs * per_epoch;
    return config.max_steps > 0 ? std::min(full, config.max_steps) : full;
}

PretrainResult pretrain(UnoranicPlusModel& model, DatasetReader& data, const TrainConfig& config,
                        const PretrainOptions& options) {
    tune_allocator();
    config.validate();
    check_geometry(model.config(), data.header());
    if (data.batch_size() != config.batch_size) throw ConfigError("reader batch size differs from the training config");

    const std::size_t per_epoch = data.batches_per_epoch();
    PretrainResult result;
    result.total_steps = total_steps(config, data.size());
    const std::size_t warmup = config.warmup_epochs * per_epoch;
    const double base_lr = config.scaled_lr();

    AdamW opt(model.named_parameters(), config);
    TrainingState& state = result.state;
    state.seed = config.seed;
    if (options.resume_from) {
        const auto file = read_checkpoint(*options.resume_from);
        load_into(file, model);
        state = training_state(file);
        if (!state.has_moments) throw StateError("checkpoint " + *options.resume_from + " has no optimizer state");
        if (state.seed != config.seed) throw ConfigError("resume seed differs from the checkpoint's seed");
        opt.import_moments(file);
        if (opt.steps_taken() != state.step) throw StateError("optimizer step count disagrees with the checkpoint");
    }

    const auto extra = config.to_kv();
    auto save = [&] {
        if (!options.checkpoint_path.empty()) save_model(options.checkpoint_path, model, state, extra, opt.export_moments());
    };

    ImageBatch clean;
    for (std::size_t epoch = state.epoch; epoch < config.epochs && state.step < result.total_steps; ++epoch) {
        data.start_epoch(epoch);
        std::size_t batch = 0;
        if (state.step > epoch * per_epoch) {
            batch = state.step - epoch * per_epoch;
            data.skip(batch);
        }
        while (state.step < result.total_steps && data.next(clean)) {
            const auto indices = batch_indices(data, batch, clean.count);
            std::vector<CorruptionSpec> specs;
            specs.reserve(clean.count);
            for (const auto idx : indices) specs.push_back(training_spec_for(config.seed, epoch, idx));
            const auto distorted = corrupt_each(clean, specs);

            const double lr = lr_schedule(state.step, result.total_steps, warmup, base_lr);
            LossRecord rec{state.step, lr, 0.0, 0.0, 0.0};
            try {
                const auto terms = model.loss(clean.to_tensor(), distorted.to_tensor());
                rec.total = scalar_of(terms.total);
                rec.synthetic = scalar_of(terms.synthetic);
                rec.anatomy = scalar_of(terms.anatomy);
                backward(terms.total);
                opt.step(lr);
            } catch (const NumericError& e) {
                throw NumericError("pretraining step " + std::to_string(state.step) + ": " + e.what());
            }
            opt.zero_grad();
            result.history.push_back(rec);
            if (options.on_step) options.on_step(rec);
            ++state.step;
            ++batch;
        }
        if (batch < per_epoch) break;  // stopped by the step cap
        state.epoch = epoch + 1;
        save();
        if (options.stop_after_epoch && state.epoch >= *options.stop_after_epoch) break;
    }
    save();
    return result;
}

std::string_view task_name(ProbeTask task) noexcept { return task == ProbeTask::disease ? "disease" : "detect"; }

ProbeTask parse_task(std::string_view name) {
    if (name == "disease") return ProbeTask::disease;
    if (name == "detect") return ProbeTask::detect;
    throw ConfigError("unknown probe task '" + std::string(name) + "' (expected disease or detect)");
}

std::size_t probe_classes(ProbeTask task, std::size_t dataset_classes) {
    return task == ProbeTask::detect ? kTrainingKinds.size() + 1 : dataset_classes;
}

ImageBatch detection_batch(const ImageBatch& images, std::span<const std::uint32_t> indices, std::uint64_t seed,
                           std::uint64_t epoch) {
    if (indices.size() != images.count) throw DimensionError("one index per image is required");
    std::vector<CorruptionSpec> specs;
    for (const auto idx : indices) specs.push_back(sample_training_spec(rng::combine(seed, epoch, idx, 0xD37EC7ULL)));
    auto out = corrupt_each(images, specs);
    for (std::size_t k = 0; k < out.count; ++k) out.labels[k] = detection_label(specs[k].kind);
    return out;
}

ProbeResult train_probe(std::shared_ptr<const Encoder> encoder, DatasetReader& data, ProbeTask task,
                        const TrainConfig& config, std::size_t dataset_classes) {
    tune_allocator();
    config.validate();
    if (!encoder) throw StateError("probe training needs a pretrained encoder");
    check_geometry(encoder->config(), data.header());
    if (data.batch_size() != config.batch_size) throw ConfigError("reader batch size differs from the training config");

    const std::size_t classes = probe_classes(task, dataset_classes);
    ProbeResult result;
    result.probe = std::make_unique<ProbeClassifier>(encoder, classes, rng::combine(config.seed, 0x9B0BEULL));
    auto& probe = *result.probe;
    AdamW opt(probe.named_parameters(), config);

    const std::size_t per_epoch = data.batches_per_epoch();
    const std::size_t total = total_steps(config, data.size());
    const std::size_t warmup = config.warmup_epochs * per_epoch;
    std::size_t step = 0;
    ImageBatch batch;
    for (std::size_t epoch = 0; epoch < config.epochs && step < total; ++epoch) {
        data.start_epoch(epoch);
        std::size_t b = 0;
        while (step < total && data.next(batch)) {
            const auto indices = batch_indices(data, b, batch.count);
            if (task == ProbeTask::detect) batch = detection_batch(batch, indices, config.seed, epoch);
            const double lr = lr_schedule(step, total, warmup, config.scaled_lr());
            LossRecord rec{step, lr, 0.0, 0.0, 0.0};
            try {
                const auto loss = cross_entropy(probe(batch), batch.labels);
                rec.total = scalar_of(loss);
                backward(loss);
                opt.step(lr);
            } catch (const NumericError& e) {
                throw NumericError("probe step " + std::to_string(step) + ": " + e.what());
            }
            opt.zero_grad();
            result.history.push_back(rec);
            ++step;
            ++b;
        }
    }
    return result;
}

void save_probe(const std::string& path, const ProbeClassifier& probe, ProbeTask task, const ConfigMap& extra) {
    CheckpointFile f;
    f.config = extra;
    for (const auto& [k, v] : probe.encoder().config().to_kv()) f.config[k] = v;
    f.config["probe.classes"] = std::to_string(probe.classes());
    f.config["probe.task"] = std::string(task_name(task));
    for (const auto& [name, t] : probe.named_parameters()) f.tensors.emplace_back(name, t.detach());
    write_checkpoint(path, f);
}

std::unique_ptr<ProbeClassifier> load_probe(const std::string& path, std::shared_ptr<const Encoder> encoder,
                                            ProbeTask* task) {
    if (!encoder) throw StateError("loading a probe needs its encoder");
    const auto file = read_checkpoint(path);
    if (!file.config.count("probe.classes")) throw ConfigError(path + " is not a probe checkpoint");
    if (ModelConfig::from_kv(file.config) != encoder->config()) {
        throw ConfigError("probe checkpoint " + path + " was trained on a differently configured encoder");
    }
    auto probe = std::make_unique<ProbeClassifier>(encoder, file.config_uint("probe.classes"), 0);
    load_parameters(file, probe->named_parameters());
    if (task) *task = parse_task(file.config.at("probe.task"));
    return probe;
}

std::vector<float> predict_logits(const ProbeClassifier& probe, const ImageBatch& images, std::size_t batch_size) {
    NoGradGuard no_grad;
    std::vector<float> out;
    out.reserve(images.count * probe.classes());
    for (std::size_t first = 0; first < images.count; first += batch_size) {
        const auto n = std::min(batch_size, images.count - first);
        const auto logits = probe(images.slice(first, n));
        out.insert(out.end(), logits.data().begin(), logits.data().end());
    }
    return out;
}

Reconstructions reconstruct(const UnoranicPlusModel& model, const ImageBatch& inputs, std::size_t batch_size) {
    NoGradGuard no_grad;
    Reconstructions out;
    for (std::size_t first = 0; first < inputs.count; first += batch_size) {
        const auto n = std::min(batch_size, inputs.count - first);
        const auto latent = model.encode(inputs.slice(first, n));
        out.synthetic.append(ImageBatch::from_tensor(model.decode_synthetic(latent)));
        out.anatomy.append(ImageBatch::from_tensor(model.decode_anatomy(latent)));
    }
    out.synthetic.clamp01();
    out.anatomy.clamp01();
    return out;
}

EvalReport evaluate_reconstruction(const UnoranicPlusModel& model, const ImageBatch& test, std::size_t batch_size) {
    const auto rec = reconstruct(model, test, batch_size);
    const ImageDims dims{test.channels, test.height, test.width};
    EvalReport report;
    for (std::size_t i = 0; i < test.count; ++i) {
        const auto id = sample_id(i);
        report.add_row(id, "psnr_reconstruction", psnr(rec.synthetic.image(i), test.image(i)), "clean");
        report.add_row(id, "ssim_reconstruction", ssim(rec.synthetic.image(i), test.image(i), dims), "clean");
        report.add_row(id, "psnr_anatomy", psnr(rec.anatomy.image(i), test.image(i)), "clean");
        report.add_row(id, "ssim_anatomy", ssim(rec.anatomy.image(i), test.image(i), dims), "clean");
    }
    report.aggregate_means();
    return report;
}

EvalReport evaluate_revision(const UnoranicPlusModel& model, const ImageBatch& test, std::uint64_t seed,
                             std::size_t batch_size, std::span<const int> severities) {
    EvalReport report;
    for (const auto kind : kTrainingKinds) {
        for (const int severity : severities) {
            const auto spec = CorruptionSpec::make(kind, severity, rng::combine(seed, static_cast<std::uint64_t>(kind),
                                                                                static_cast<std::uint64_t>(severity)));
            const auto corrupted = apply(test, spec);
            const auto rec = reconstruct(model, corrupted, batch_size);
            const auto tag = spec.to_string();
            for (std::size_t i = 0; i < test.count; ++i) {
                const auto id = sample_id(i);
                report.add_row(id, "psnr_corrupted", psnr(corrupted.image(i), test.image(i)), tag);
                report.add_row(id, "psnr_revised", psnr(rec.anatomy.image(i), test.image(i)), tag);
                report.add_row(id, "psnr_synthetic", psnr(rec.synthetic.image(i), corrupted.image(i)), tag);
            }
        }
    }
    report.aggregate_means();
    return report;
}

namespace {

void classification_rows(EvalReport& report, const std::vector<float>& logits, std::size_t classes,
                         const ImageBatch& images, const std::string& annotation, const std::string& group) {
    for (std::size_t i = 0; i < images.count; ++i) {
        const auto row = std::span<const float>(logits).subspan(i * classes, classes);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        report.add_row(sample_id(i), "correct", best == images.labels[i] ? 1.0 : 0.0, annotation);
    }
    report.add_aggregate("accuracy", group, accuracy(logits, classes, images.labels), images.count);
    report.add_aggregate("auc", group, classification_auc(logits, classes, images.labels), images.count);
}

}  // namespace

EvalReport evaluate_classification(const ProbeClassifier& probe, const ImageBatch& test, std::size_t batch_size,
                                   const std::string& group) {
    EvalReport report;
    classification_rows(report, predict_logits(probe, test, batch_size), probe.classes(), test, group, group);
    return report;
}

EvalReport evaluate_robustness(const ProbeClassifier& probe, const ImageBatch& test, std::uint64_t seed,
                               std::size_t batch_size, std::span<const int> severities) {
    EvalReport report;
    for (const auto kind : kHeldOutKinds) {
        for (const int severity : severities) {
            const auto spec = CorruptionSpec::make(kind, severity, rng::combine(seed, static_cast<std::uint64_t>(kind),
                                                                                static_cast<std::uint64_t>(severity)));
            const auto corrupted = apply(test, spec);
            const auto group = std::string(kind_name(kind)) + ":" + std::to_string(severity);
            classification_rows(report, predict_logits(probe, corrupted, batch_size), probe.classes(), corrupted,
                                spec.to_string(), group);
        }
    }
    return report;
}

}  // namespace unoranic
