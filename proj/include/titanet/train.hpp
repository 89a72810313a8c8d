#pragma once

// Additive-angular-margin training at desk scale: the loss configuration,
// SGD with momentum under a cosine-annealed learning rate, a deterministic
// synthetic-speaker corpus generator, and the epoch loop with a per-speaker
// validation split and best-checkpoint tracking.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "titanet/io.hpp"
#include "titanet/pooldec.hpp"

namespace titanet {

struct AAMConfig {
    double margin = 0.2;  // radians added to the target angle
    double scale = 30.0;  // logit multiplier

    void validate() const;  // 0 <= margin < pi/2, scale > 0
};

struct TrainConfig {
    int epochs = 250;
    double initial_lr = 0.08;
    double min_lr = 1e-4;
    double momentum = 0.9;
    int batch_size = 32;
    uint64_t seed = 0;

    void validate() const;  // epochs >= 1, initial_lr >= min_lr >= 0, batch_size >= 2
};

// min_lr + 0.5*(initial_lr - min_lr)*(1 + cos(pi*step/total_steps)); steps
// past the end clamp to min_lr. Monotone non-increasing in step.
double cosine_annealing_lr(int64_t step, int64_t total_steps, const TrainConfig& cfg);

// Heavy-ball SGD. Velocities persist here, one per parameter, zero-initialized.
struct SgdState {
    std::vector<Parameter*> params;
    std::vector<Tensor> velocity;

    explicit SgdState(std::vector<Parameter*> ps);
};

// v <- momentum*v + grad; p <- p - lr*v; gradients zeroed afterwards.
void sgd_step(SgdState& state, double lr, double momentum);

// ===== synthetic corpus =====

// Speakers are distinguished by fixed formant-like resonances excited by a
// pitched pulse train; utterances vary pitch, formant jitter, and cadence.
struct SyntheticSpec {
    int n_speakers = 20;
    int utterances_per_speaker = 50;
    std::vector<double> duration_choices = {1.5, 2.0, 2.5, 3.0};  // seconds
    int sample_rate = 16000;
    uint64_t seed = 0;
};

// Writes `spkNNN_uttNNN.wav` files plus `manifest.tsv` under `dir` (created
// if missing) and returns the manifest entries. Bit-identical given a seed.
std::vector<ManifestEntry> generate_synthetic_corpus(const SyntheticSpec& spec,
                                                     const std::string& dir);

// ===== training loop =====

struct CorpusSplit {
    std::vector<ManifestEntry> train;
    std::vector<ManifestEntry> val;
};

// Holds out `val_fraction` of each speaker's utterances (at least one when
// the speaker has two or more), chosen by seeded shuffle.
CorpusSplit split_manifest(const std::vector<ManifestEntry>& all, double val_fraction,
                           uint64_t seed);

// Sorted unique speaker labels; class index = position in this list.
std::vector<std::string> speaker_classes(const std::vector<ManifestEntry>& entries);

struct EpochMetrics {
    int epoch = 0;  // 1-based
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    int best_epoch = 0;  // epoch with the highest validation accuracy
    double best_val_acc = 0.0;
    CorpusSplit split;
};

// Trains `model` on the manifest. The model head must match the corpus class
// count. Metrics stream to `metrics_csv` when given (header
// `epoch,lr,train_loss,train_acc,val_acc`); the best model by validation
// accuracy is saved to `checkpoint_path` when nonempty. A non-finite loss
// aborts with a diagnostic. Fixed seeds give identical metric logs.
TrainResult train_model(SpeakerModel& model, const std::vector<ManifestEntry>& manifest,
                        const TrainConfig& tcfg, const AAMConfig& acfg,
                        const std::string& checkpoint_path = "",
                        std::ostream* metrics_csv = nullptr);

// Balanced verification trials over held-out utterances: n_trials/2 same-
// speaker pairs and the rest different-speaker pairs, sampled with a seed.
std::vector<Trial> make_trials(const std::vector<ManifestEntry>& heldout, int n_trials,
                               uint64_t seed);

}  // namespace titanet
