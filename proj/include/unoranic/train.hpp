#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "unoranic/checkpoint.hpp"
#include "unoranic/corruption.hpp"
#include "unoranic/dataset.hpp"
#include "unoranic/metrics.hpp"
#include "unoranic/model.hpp"

namespace unoranic {

struct TrainConfig {
    std::size_t epochs = 150;
    std::size_t batch_size = 64;
    double base_lr = 1.5e-4;  // at batch 64; see scaled_lr()
    double weight_decay = 0.05;
    std::size_t warmup_epochs = 10;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    std::size_t max_steps = 0;  // 0: no cap beyond epochs

    /// base_lr * batch_size / 64.
    double scaled_lr() const noexcept { return base_lr * static_cast<double>(batch_size) / 64.0; }
    void validate() const;

    ConfigMap to_kv() const;
    /// Keys "train.*"; missing keys keep the current values.
    void update_from(const ConfigMap& kv);
};

/// Linear warmup from 0 over `warmup_steps`, then cosine decay from base_lr
/// to base_lr/100 reached at step total_steps-1.
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr);

/// Adam with decoupled weight decay. Decay applies only where
/// parameter_decays(name) holds (".weight" tensors).
class AdamW {
public:
    AdamW(NamedTensors params, double beta1, double beta2, double eps, double weight_decay);
    AdamW(NamedTensors params, const TrainConfig& config)
        : AdamW(std::move(params), config.beta1, config.beta2, config.eps, config.weight_decay) {}

    /// One update from the current gradients. A non-finite gradient raises
    /// NumericError naming the parameter, before anything is modified.
    void step(double lr);
    void zero_grad();

    std::uint64_t steps_taken() const noexcept { return t_; }

    /// Moments as opt.m.<name> / opt.v.<name> tensors plus a scalar opt.t.
    NamedTensors export_moments() const;
    void import_moments(const CheckpointFile& file);

private:
    NamedTensors params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::vector<bool> decays_;
    double beta1_, beta2_, eps_, wd_;
    std::uint64_t t_ = 0;
};

struct LossRecord {
    std::uint64_t step = 0;
    double lr = 0.0;
    double total = 0.0;
    double synthetic = 0.0;
    double anatomy = 0.0;
};

/// CSV `step,lr,loss_total,loss_rs,loss_ri`, round-trip precision.
void write_loss_history(const std::string& path, const std::vector<LossRecord>& history);
std::vector<LossRecord> read_loss_history(const std::string& path);

/// Distorts image k of `batch` with its own spec.
ImageBatch corrupt_each(const ImageBatch& batch, const std::vector<CorruptionSpec>& specs);

/// Spec for image `index` in `epoch` of a run seeded with `seed`.
CorruptionSpec training_spec_for(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

struct PretrainOptions {
    std::string checkpoint_path;                 // written after every epoch and at the end
    std::optional<std::string> resume_from;      // checkpoint with optimizer moments
    std::optional<std::size_t> stop_after_epoch; // stop once this many epochs are complete
    std::function<void(const LossRecord&)> on_step;
};

struct PretrainResult {
    std::vector<LossRecord> history;
    TrainingState state;
    std::size_t total_steps = 0;
};

std::size_t total_steps(const TrainConfig& config, std::size_t dataset_size);

/// Runs the pretraining loop over `data`, whose shuffle order is reseeded
/// each epoch from the config seed. The model must match the data geometry.
PretrainResult pretrain(UnoranicPlusModel& model, DatasetReader& data, const TrainConfig& config,
                        const PretrainOptions& options = {});

enum class ProbeTask { disease, detect };

std::string_view task_name(ProbeTask task) noexcept;
ProbeTask parse_task(std::string_view name);

/// Number of classes the probe predicts: dataset classes, or 8 for detection.
std::size_t probe_classes(ProbeTask task, std::size_t dataset_classes);

/// Detection copy of `images`: each image gets a spec from
/// sample_training_spec keyed by (seed, epoch, index) and its label becomes
/// detection_label(kind).
ImageBatch detection_batch(const ImageBatch& images, std::span<const std::uint32_t> indices, std::uint64_t seed,
                           std::uint64_t epoch);

struct ProbeResult {
    std::unique_ptr<ProbeClassifier> probe;
    std::vector<LossRecord> history;  // synthetic/anatomy columns unused
};

ProbeResult train_probe(std::shared_ptr<const Encoder> encoder, DatasetReader& data, ProbeTask task,
                        const TrainConfig& config, std::size_t dataset_classes);

void save_probe(const std::string& path, const ProbeClassifier& probe, ProbeTask task, const ConfigMap& extra = {});
/// Encoder supplies the frozen trunk; the probe file holds only probe.* tensors.
std::unique_ptr<ProbeClassifier> load_probe(const std::string& path, std::shared_ptr<const Encoder> encoder,
                                            ProbeTask* task = nullptr);

/// Logits [N,K] computed in batches without gradient recording.
std::vector<float> predict_logits(const ProbeClassifier& probe, const ImageBatch& images, std::size_t batch_size);

struct Reconstructions {
    ImageBatch synthetic;  // S_hat, clamped
    ImageBatch anatomy;    // I_hat_A, clamped
};

Reconstructions reconstruct(const UnoranicPlusModel& model, const ImageBatch& inputs, std::size_t batch_size);

/// Per image: psnr/ssim of D's reconstruction and of D_A's, all against the
/// clean input. Four mean aggregates in group "clean".
EvalReport evaluate_reconstruction(const UnoranicPlusModel& model, const ImageBatch& test, std::size_t batch_size);

/// Every training kind at every severity: psnr_corrupted = PSNR(S,I),
/// psnr_revised = PSNR(I_hat_A,I), psnr_synthetic = PSNR(S_hat,S). Rows are
/// annotated with the spec string; aggregates are per spec.
EvalReport evaluate_revision(const UnoranicPlusModel& model, const ImageBatch& test, std::uint64_t seed,
                             std::size_t batch_size, std::span<const int> severities = kSeverities);

/// Per-image `correct` rows and set-level accuracy and auc aggregates in
/// group `group`.
EvalReport evaluate_classification(const ProbeClassifier& probe, const ImageBatch& test, std::size_t batch_size,
                                   const std::string& group = "clean");

/// Accuracy and AUC per held-out (kind, severity), groups "kind:severity".
EvalReport evaluate_robustness(const ProbeClassifier& probe, const ImageBatch& test, std::uint64_t seed,
                               std::size_t batch_size, std::span<const int> severities = kSeverities);

}  // namespace unoranic
