#include "titanet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "titanet/checkpoint.hpp"
#include "titanet/features.hpp"

namespace titanet {

namespace {

constexpr double kPi = 3.14159265358979323846;

void fail(const std::string& msg) { throw std::invalid_argument(msg); }

template <typename T>
void rng_shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(i));
        std::swap(v[i - 1], v[j]);
    }
}

std::string fmt9(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

void AAMConfig::validate() const {
    if (!(margin >= 0.0 && margin < kPi / 2))
        fail("AAMConfig: margin must be in [0, pi/2), got " + std::to_string(margin));
    if (!(scale > 0.0)) fail("AAMConfig: scale must be positive, got " + std::to_string(scale));
}

void TrainConfig::validate() const {
    if (epochs < 1) fail("TrainConfig: epochs must be >= 1");
    // Equality initial_lr == min_lr is allowed so that a frozen (lr = 0) run
    // is expressible; the schedule then degenerates to the constant min_lr.
    if (!(initial_lr >= min_lr && min_lr >= 0.0))
        fail("TrainConfig: need initial_lr >= min_lr >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("TrainConfig: momentum must be in [0, 1)");
    if (batch_size < 2) fail("TrainConfig: batch_size must be >= 2 (batchnorm needs company)");
}

double cosine_annealing_lr(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
    if (step < 0) fail("cosine_annealing_lr: negative step");
    if (total_steps < 1) fail("cosine_annealing_lr: total_steps must be >= 1");
    if (step > total_steps) return cfg.min_lr;
    const double x = static_cast<double>(step) / static_cast<double>(total_steps);
    return cfg.min_lr + 0.5 * (cfg.initial_lr - cfg.min_lr) * (1.0 + std::cos(kPi * x));
}

SgdState::SgdState(std::vector<Parameter*> ps) : params(std::move(ps)) {
    velocity.reserve(params.size());
    for (const Parameter* p : params) velocity.push_back(Tensor::zeros(p->value.shape));
}

void sgd_step(SgdState& state, double lr, double momentum) {
    for (size_t i = 0; i < state.params.size(); ++i) {
        Parameter& p = *state.params[i];
        Tensor& v = state.velocity[i];
        for (int64_t j = 0; j < p.value.numel(); ++j) {
            v.data[j] = momentum * v.data[j] + p.grad.data[j];
            p.value.data[j] -= lr * v.data[j];
        }
        p.zero_grad();
    }
}

// ===== synthetic corpus =====

namespace {

// Two-pole resonance at center frequency f with bandwidth bw: the standard
// digital formant filter. Peak gain is irrelevant; utterances are peak-
// normalized afterwards.
struct Resonator {
    double a1, a2, y1 = 0.0, y2 = 0.0;

    Resonator(double f_hz, double bw_hz, int sr) {
        const double r = std::exp(-kPi * bw_hz / sr);
        a1 = 2.0 * r * std::cos(2.0 * kPi * f_hz / sr);
        a2 = -r * r;
    }
    double step(double x) {
        const double y = x + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        return y;
    }
};

}  // namespace

std::vector<ManifestEntry> generate_synthetic_corpus(const SyntheticSpec& spec,
                                                     const std::string& dir) {
    if (spec.n_speakers < 1) fail("generate_synthetic_corpus: need at least one speaker");
    if (spec.utterances_per_speaker < 1) fail("generate_synthetic_corpus: need utterances");
    if (spec.sample_rate != 16000) fail("generate_synthetic_corpus: sample rate must be 16000");
    if (spec.duration_choices.empty()) fail("generate_synthetic_corpus: no duration choices");
    for (double d : spec.duration_choices)
        if (d < 0.1) fail("generate_synthetic_corpus: durations must be >= 0.1 s");
    std::filesystem::create_directories(dir);

    const int sr = spec.sample_rate;
    const Rng root(spec.seed);
    std::vector<ManifestEntry> entries;
    entries.reserve(static_cast<size_t>(spec.n_speakers) * spec.utterances_per_speaker);

    for (int s = 0; s < spec.n_speakers; ++s) {
        // Fixed per-speaker voice: pitch plus three formant-like resonances.
        Rng sp = root.fork(0xA11CE, static_cast<uint64_t>(s));
        const double f0_base = sp.uniform(85.0, 240.0);
        const double formant[3] = {sp.uniform(380.0, 880.0), sp.uniform(1000.0, 2300.0),
                                   sp.uniform(2500.0, 3700.0)};
        const double bandwidth[3] = {sp.uniform(60.0, 130.0), sp.uniform(90.0, 180.0),
                                     sp.uniform(120.0, 260.0)};
        const double famp[3] = {1.0, sp.uniform(0.35, 0.85), sp.uniform(0.12, 0.45)};

        char spk_name[16];
        std::snprintf(spk_name, sizeof spk_name, "spk%03d", s);

        for (int u = 0; u < spec.utterances_per_speaker; ++u) {
            Rng ur = root.fork(static_cast<uint64_t>(s) + 1, static_cast<uint64_t>(u));
            const double dur =
                spec.duration_choices[ur.uniform_int(spec.duration_choices.size())];
            const int n = static_cast<int>(std::llround(dur * sr));

            const double f0 = f0_base * ur.uniform(0.94, 1.06);
            const double vib_rate = ur.uniform(4.0, 6.5);
            const double vib_depth = ur.uniform(0.01, 0.03);
            const double syl_rate = ur.uniform(2.0, 4.5);
            const double syl_phase = ur.uniform(0.0, 2.0 * kPi);
            const double noise_amp = ur.uniform(0.008, 0.02);

            Resonator res[3] = {
                Resonator(formant[0] * ur.uniform(0.97, 1.03), bandwidth[0], sr),
                Resonator(formant[1] * ur.uniform(0.97, 1.03), bandwidth[1], sr),
                Resonator(formant[2] * ur.uniform(0.97, 1.03), bandwidth[2], sr)};

            AudioSignal a;
            a.sample_rate = sr;
            a.samples.resize(static_cast<size_t>(n));
            double phase = 1.0;  // emit a pulse on the first sample
            double peak = 0.0;
            for (int i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / sr;
                const double f_inst = f0 * (1.0 + vib_depth * std::sin(2.0 * kPi * vib_rate * t));
                phase += f_inst / sr;
                double exc = noise_amp * ur.normal();
                if (phase >= 1.0) {
                    phase -= 1.0;
                    exc += 1.0;
                }
                double y = 0.0;
                for (int k = 0; k < 3; ++k) y += famp[k] * res[k].step(exc);
                // Syllable-ish amplitude cadence in [0.5, 1].
                y *= 0.75 + 0.25 * std::sin(2.0 * kPi * syl_rate * t + syl_phase);
                // 30 ms raised-cosine edges against clicks.
                const double edge = 0.030 * sr;
                if (i < edge) y *= 0.5 - 0.5 * std::cos(kPi * i / edge);
                if (n - 1 - i < edge) y *= 0.5 - 0.5 * std::cos(kPi * (n - 1 - i) / edge);
                a.samples[static_cast<size_t>(i)] = y;
                peak = std::max(peak, std::abs(y));
            }
            const double gain = peak > 0.0 ? 0.45 * ur.uniform(0.85, 1.15) / peak : 0.0;
            for (double& v : a.samples) v *= gain;

            char utt_name[32];
            std::snprintf(utt_name, sizeof utt_name, "%s_utt%03d", spk_name, u);
            const std::string path = dir + "/" + utt_name + ".wav";
            save_wav(path, a);
            entries.push_back({path, static_cast<double>(n) / sr, spk_name});
        }
    }
    write_manifest(dir + "/manifest.tsv", entries);
    return entries;
}

// ===== split / classes =====

CorpusSplit split_manifest(const std::vector<ManifestEntry>& all, double val_fraction,
                           uint64_t seed) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        fail("split_manifest: val_fraction must be in [0, 1)");
    // Group indices per speaker in order of first appearance.
    std::vector<std::string> order;
    std::map<std::string, std::vector<size_t>> by_speaker;
    for (size_t i = 0; i < all.size(); ++i) {
        if (!by_speaker.count(all[i].speaker)) order.push_back(all[i].speaker);
        by_speaker[all[i].speaker].push_back(i);
    }
    CorpusSplit split;
    const Rng root(seed);
    for (size_t si = 0; si < order.size(); ++si) {
        std::vector<size_t> idx = by_speaker[order[si]];
        Rng rng = root.fork(0x5B117, si);
        rng_shuffle(idx, rng);
        size_t n_val = static_cast<size_t>(std::floor(static_cast<double>(idx.size()) * val_fraction));
        if (val_fraction > 0.0 && idx.size() >= 2 && n_val == 0) n_val = 1;
        for (size_t k = 0; k < idx.size(); ++k)
            (k < n_val ? split.val : split.train).push_back(all[idx[k]]);
    }
    return split;
}

std::vector<std::string> speaker_classes(const std::vector<ManifestEntry>& entries) {
    std::vector<std::string> out;
    for (const ManifestEntry& e : entries) out.push_back(e.speaker);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ===== training loop =====

namespace {

struct Chunk {
    Tensor mel;  // [T, n_mels], normalized per frequency
    int label;
};

// Loads every utterance, cuts training-style chunks, and normalizes each
// chunk after slicing (statistics must describe what the model actually sees).
std::vector<Chunk> load_chunks(const std::vector<ManifestEntry>& ents,
                               const std::map<std::string, int>& class_of, uint64_t seed,
                               uint64_t tag) {
    std::vector<Chunk> out;
    for (size_t i = 0; i < ents.size(); ++i) {
        const AudioSignal audio = load_wav(ents[i].path);
        const MelSpectrogram mel = compute_mel_spectrogram(audio);
        const std::vector<MelSpectrogram> chunks =
            chunk_training_utterance(mel, hash_combine(hash_combine(seed, tag), i));
        const int label = class_of.at(ents[i].speaker);
        for (const MelSpectrogram& c : chunks)
            out.push_back({normalize_per_frequency(c).values, label});
    }
    return out;
}

std::map<int, std::vector<int>> bucket_by_length(const std::vector<Chunk>& chunks) {
    std::map<int, std::vector<int>> buckets;
    for (size_t i = 0; i < chunks.size(); ++i)
        buckets[chunks[i].mel.dim(0)].push_back(static_cast<int>(i));
    return buckets;
}

Tensor stack_chunks(const std::vector<Chunk>& chunks, const std::vector<int>& idx) {
    const int T = chunks[static_cast<size_t>(idx[0])].mel.dim(0);
    const int F = chunks[static_cast<size_t>(idx[0])].mel.dim(1);
    Tensor batch({static_cast<int>(idx.size()), T, F});
    for (size_t b = 0; b < idx.size(); ++b)
        std::copy(chunks[static_cast<size_t>(idx[b])].mel.data.begin(),
                  chunks[static_cast<size_t>(idx[b])].mel.data.end(),
                  batch.data.begin() + static_cast<int64_t>(b) * T * F);
    return batch;
}

// Argmax per row; lowest index wins ties.
int row_argmax(const Tensor& logits, int row) {
    int best = 0;
    for (int j = 1; j < logits.dim(1); ++j)
        if (logits.at(row, j) > logits.at(row, best)) best = j;
    return best;
}

}  // namespace

TrainResult train_model(SpeakerModel& model, const std::vector<ManifestEntry>& manifest,
                        const TrainConfig& tcfg, const AAMConfig& acfg,
                        const std::string& checkpoint_path, std::ostream* metrics_csv) {
    tcfg.validate();
    acfg.validate();
    if (manifest.empty()) fail("train_model: empty manifest");
    const std::vector<std::string> classes = speaker_classes(manifest);
    if (static_cast<int>(classes.size()) != model.n_classes)
        fail("train_model: corpus has " + std::to_string(classes.size()) +
             " speakers but the model head has " + std::to_string(model.n_classes) + " classes");
    std::map<std::string, int> class_of;
    for (size_t i = 0; i < classes.size(); ++i) class_of[classes[i]] = static_cast<int>(i);

    TrainResult res;
    res.split = split_manifest(manifest, 0.1, tcfg.seed);
    const std::vector<Chunk> train_chunks = load_chunks(res.split.train, class_of, tcfg.seed, 1);
    const std::vector<Chunk> val_chunks = load_chunks(res.split.val, class_of, tcfg.seed, 2);
    if (train_chunks.empty()) fail("train_model: no training chunks after the split");

    const std::map<int, std::vector<int>> buckets = bucket_by_length(train_chunks);
    const std::map<int, std::vector<int>> val_buckets = bucket_by_length(val_chunks);

    // Batch counts are fixed across epochs (bucket sizes never change), so the
    // schedule length is known up front.
    int64_t batches_per_epoch = 0;
    for (const auto& [t, idx] : buckets) {
        (void)t;
        const int64_t n = static_cast<int64_t>(idx.size());
        const int64_t full = n / tcfg.batch_size;
        const int64_t rem = n % tcfg.batch_size;
        batches_per_epoch += full + (rem >= 2 ? 1 : 0);
    }
    if (batches_per_epoch == 0)
        fail("train_model: every batch would be a singleton; lower batch_size or add data");
    const int64_t total_steps = batches_per_epoch * tcfg.epochs;

    SgdState opt(model.parameters());
    Rng dropout_rng(hash_combine(tcfg.seed, 0xD2009u));
    const Rng root(tcfg.seed);
    int64_t global_step = 0;

    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        Rng erng = root.fork(0xE90C4, static_cast<uint64_t>(epoch));
        std::vector<std::vector<int>> batches;
        for (const auto& [t, idx] : buckets) {
            (void)t;
            std::vector<int> order = idx;
            rng_shuffle(order, erng);
            // Singleton leftovers are dropped: batchnorm needs >= 2 rows.
            for (size_t at = 0; at + 2 <= order.size();
                 at += static_cast<size_t>(tcfg.batch_size)) {
                const size_t take =
                    std::min(static_cast<size_t>(tcfg.batch_size), order.size() - at);
                batches.emplace_back(order.begin() + static_cast<int64_t>(at),
                                     order.begin() + static_cast<int64_t>(at + take));
            }
        }
        rng_shuffle(batches, erng);

        const double lr_epoch = cosine_annealing_lr(global_step, total_steps, tcfg);
        double loss_sum = 0.0;
        int64_t seen = 0, correct = 0;
        for (const std::vector<int>& batch : batches) {
            const double lr = cosine_annealing_lr(global_step, total_steps, tcfg);
            Graph g;
            const Tensor mel = stack_chunks(train_chunks, batch);
            const ForwardNodes f = model_forward(model, g, mel, Mode::train, &dropout_rng);
            std::vector<int> labels;
            labels.reserve(batch.size());
            for (int ci : batch) labels.push_back(train_chunks[static_cast<size_t>(ci)].label);
            const int loss_id = g.aam_loss(f.logits, labels, acfg.margin, acfg.scale);
            const double loss = g.val(loss_id).at(0);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_model: loss diverged to " + std::to_string(loss) +
                                         " at epoch " + std::to_string(epoch) + ", step " +
                                         std::to_string(global_step) +
                                         " — lower the learning rate or scale");
            const Tensor& logits = g.val(f.logits);
            for (size_t b = 0; b < batch.size(); ++b)
                correct += row_argmax(logits, static_cast<int>(b)) == labels[b];
            loss_sum += loss * static_cast<double>(batch.size());
            seen += static_cast<int64_t>(batch.size());
            g.backward(loss_id);
            sgd_step(opt, lr, tcfg.momentum);
            ++global_step;
        }

        int64_t val_seen = 0, val_correct = 0;
        for (const auto& [t, idx] : val_buckets) {
            (void)t;
            for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(tcfg.batch_size)) {
                const size_t take = std::min(static_cast<size_t>(tcfg.batch_size), idx.size() - at);
                const std::vector<int> batch(idx.begin() + static_cast<int64_t>(at),
                                             idx.begin() + static_cast<int64_t>(at + take));
                Graph g;
                const ForwardNodes f =
                    model_forward(model, g, stack_chunks(val_chunks, batch), Mode::eval);
                const Tensor& logits = g.val(f.logits);
                for (size_t b = 0; b < batch.size(); ++b)
                    val_correct += row_argmax(logits, static_cast<int>(b)) ==
                                   val_chunks[static_cast<size_t>(batch[b])].label;
                val_seen += static_cast<int64_t>(take);
            }
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr_epoch;
        em.train_loss = loss_sum / static_cast<double>(seen);
        em.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        em.val_acc = val_seen ? static_cast<double>(val_correct) / static_cast<double>(val_seen)
                              : 0.0;
        res.history.push_back(em);
        if (metrics_csv) {
            if (epoch == 1) *metrics_csv << "epoch,lr,train_loss,train_acc,val_acc\n";
            *metrics_csv << epoch << ',' << fmt9(em.lr) << ',' << fmt9(em.train_loss) << ','
                         << fmt9(em.train_acc) << ',' << fmt9(em.val_acc) << '\n';
        }

        if (res.best_epoch == 0 || em.val_acc > res.best_val_acc) {
            res.best_epoch = epoch;
            res.best_val_acc = em.val_acc;
            if (!checkpoint_path.empty()) {
                CheckpointMeta meta;
                meta.aam = acfg;
                meta.train = tcfg;
                meta.metrics = {{"epoch", static_cast<double>(epoch)},
                                {"train_loss", em.train_loss},
                                {"train_acc", em.train_acc},
                                {"val_acc", em.val_acc}};
                save_checkpoint(checkpoint_path, model, meta);
            }
        }
    }
    return res;
}

std::vector<Trial> make_trials(const std::vector<ManifestEntry>& heldout, int n_trials,
                               uint64_t seed) {
    if (n_trials < 2) fail("make_trials: need at least 2 trials");
    std::vector<std::string> order;
    std::map<std::string, std::vector<size_t>> by_speaker;
    for (size_t i = 0; i < heldout.size(); ++i) {
        if (!by_speaker.count(heldout[i].speaker)) order.push_back(heldout[i].speaker);
        by_speaker[heldout[i].speaker].push_back(i);
    }
    std::vector<size_t> multi;  // speakers with >= 2 utterances, for target pairs
    for (size_t si = 0; si < order.size(); ++si)
        if (by_speaker[order[si]].size() >= 2) multi.push_back(si);
    if (multi.empty()) fail("make_trials: no speaker has two held-out utterances");
    if (order.size() < 2) fail("make_trials: need at least two speakers");

    Rng rng(hash_combine(seed, 0x791A15u));
    std::vector<Trial> out;
    out.reserve(static_cast<size_t>(n_trials));
    const int n_target = n_trials / 2;
    for (int t = 0; t < n_trials; ++t) {
        Trial trial;
        trial.target = t < n_target;
        if (trial.target) {
            const std::vector<size_t>& utts =
                by_speaker[order[multi[rng.uniform_int(multi.size())]]];
            const size_t i = rng.uniform_int(utts.size());
            size_t j = rng.uniform_int(utts.size() - 1);
            if (j >= i) ++j;
            trial.enroll_id = utterance_id(heldout[utts[i]].path);
            trial.test_id = utterance_id(heldout[utts[j]].path);
        } else {
            const size_t a = rng.uniform_int(order.size());
            size_t b = rng.uniform_int(order.size() - 1);
            if (b >= a) ++b;
            const std::vector<size_t>& ua = by_speaker[order[a]];
            const std::vector<size_t>& ub = by_speaker[order[b]];
            trial.enroll_id = utterance_id(heldout[ua[rng.uniform_int(ua.size())]].path);
            trial.test_id = utterance_id(heldout[ub[rng.uniform_int(ub.size())]].path);
        }
        out.push_back(std::move(trial));
    }
    return out;
}

}  // namespace titanet
