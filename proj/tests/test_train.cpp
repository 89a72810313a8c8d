// Loss/schedule/optimizer contracts, the synthetic corpus generator, the
// split bookkeeping, and short end-to-end training runs.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "titanet/checkpoint.hpp"
#include "titanet/features.hpp"
#include "titanet/train.hpp"

using namespace titanet;

namespace {

std::string tmp_dir(const std::string& tag) {
    const std::string dir =
        (std::filesystem::temp_directory_path() / ("titanet_train_" + tag + "_" +
                                                   std::to_string(::getpid())))
            .string();
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

}  // namespace

// ===== configs and schedule =====

TEST_CASE("config validation") {
    CHECK_NOTHROW(AAMConfig{}.validate());
    CHECK_THROWS_AS((AAMConfig{-0.1, 30.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((AAMConfig{1.6, 30.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((AAMConfig{0.2, 0.0}.validate()), std::invalid_argument);

    CHECK_NOTHROW(TrainConfig{}.validate());
    TrainConfig t;
    t.epochs = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.min_lr = 0.5;  // above initial_lr
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.momentum = 1.0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.batch_size = 1;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = TrainConfig{};
    t.initial_lr = t.min_lr = 0.0;  // frozen run is expressible
    CHECK_NOTHROW(t.validate());
}

TEST_CASE("cosine annealing endpoints, midpoint, clamp, monotonicity") {
    TrainConfig cfg;
    cfg.initial_lr = 0.08;
    cfg.min_lr = 1e-4;
    CHECK(cosine_annealing_lr(0, 100, cfg) == 0.08);
    CHECK(cosine_annealing_lr(100, 100, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(cosine_annealing_lr(50, 100, cfg) ==
          doctest::Approx((0.08 + 1e-4) / 2).epsilon(1e-12));
    CHECK(cosine_annealing_lr(250, 100, cfg) == 1e-4);

    double prev = cosine_annealing_lr(0, 337, cfg);
    for (int s = 1; s <= 337; ++s) {
        const double lr = cosine_annealing_lr(s, 337, cfg);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
    CHECK_THROWS_AS(cosine_annealing_lr(-1, 10, cfg), std::invalid_argument);
    CHECK_THROWS_AS(cosine_annealing_lr(0, 0, cfg), std::invalid_argument);
}

// ===== optimizer =====

TEST_CASE("sgd without momentum moves against the gradient and zeroes it") {
    Parameter p("p", Tensor::full({3}, 1.0));
    p.grad.fill(2.0);
    SgdState opt({&p});
    sgd_step(opt, 0.1, 0.0);
    for (double v : p.value.data) CHECK(v == doctest::Approx(0.8).epsilon(1e-15));
    for (double v : p.grad.data) CHECK(v == 0.0);
}

TEST_CASE("momentum accumulates: two constant-gradient steps total lr*g*2.9") {
    Parameter p("p", Tensor::zeros({4}));
    SgdState opt({&p});
    const double lr = 0.01, g = 3.0;
    p.grad.fill(g);
    sgd_step(opt, lr, 0.9);
    p.grad.fill(g);
    sgd_step(opt, lr, 0.9);
    // v1 = g, v2 = 0.9 g + g -> total displacement lr*(v1+v2) = lr*g*2.9
    for (double v : p.value.data) CHECK(v == doctest::Approx(-lr * g * 2.9).epsilon(1e-12));
}

TEST_CASE("zero gradient leaves parameters untouched") {
    Parameter p("p", Tensor::full({5}, 0.7));
    SgdState opt({&p});
    sgd_step(opt, 0.5, 0.9);
    for (double v : p.value.data) CHECK(v == 0.7);
}

// ===== synthetic corpus =====

TEST_CASE("corpus generator is deterministic and writes what it promises") {
    SyntheticSpec spec;
    spec.n_speakers = 3;
    spec.utterances_per_speaker = 4;
    spec.duration_choices = {1.5};
    spec.seed = 404;
    const std::string dir_a = tmp_dir("corpus_a");
    const std::string dir_b = tmp_dir("corpus_b");
    const auto entries = generate_synthetic_corpus(spec, dir_a);
    REQUIRE(entries.size() == 12);
    for (const ManifestEntry& e : entries) {
        CHECK(std::filesystem::exists(e.path));
        CHECK(e.duration == doctest::Approx(1.5).epsilon(1e-12));
    }
    const auto manifest = read_manifest(dir_a + "/manifest.tsv");
    REQUIRE(manifest.size() == entries.size());
    for (size_t i = 0; i < entries.size(); ++i) CHECK(manifest[i].path == entries[i].path);

    const auto entries_b = generate_synthetic_corpus(spec, dir_b);
    for (size_t i = 0; i < entries.size(); ++i)
        CHECK(read_bytes(entries[i].path) == read_bytes(entries_b[i].path));

    spec.seed = 405;
    const std::string dir_c = tmp_dir("corpus_c");
    const auto entries_c = generate_synthetic_corpus(spec, dir_c);
    CHECK(read_bytes(entries[0].path) != read_bytes(entries_c[0].path));
}

TEST_CASE("same-speaker utterances correlate more than cross-speaker ones") {
    SyntheticSpec spec;
    spec.n_speakers = 4;
    spec.utterances_per_speaker = 3;
    spec.duration_choices = {1.5};
    spec.seed = 19;
    const auto entries = generate_synthetic_corpus(spec, tmp_dir("corpus_corr"));

    // Time-averaged log-mel profile per utterance; Pearson correlation between
    // profiles as the similarity.
    std::vector<std::vector<double>> profile;
    std::vector<std::string> speaker;
    for (const ManifestEntry& e : entries) {
        const MelSpectrogram mel = compute_mel_spectrogram(load_wav(e.path));
        std::vector<double> p(static_cast<size_t>(mel.values.dim(1)), 0.0);
        for (int t = 0; t < mel.values.dim(0); ++t)
            for (int m = 0; m < mel.values.dim(1); ++m)
                p[static_cast<size_t>(m)] += mel.values.at(t, m) / mel.values.dim(0);
        profile.push_back(std::move(p));
        speaker.push_back(e.speaker);
    }
    auto pearson = [](const std::vector<double>& a, const std::vector<double>& b) {
        const size_t n = a.size();
        double ma = 0, mb = 0;
        for (size_t i = 0; i < n; ++i) ma += a[i], mb += b[i];
        ma /= static_cast<double>(n), mb /= static_cast<double>(n);
        double num = 0, da = 0, db = 0;
        for (size_t i = 0; i < n; ++i) {
            num += (a[i] - ma) * (b[i] - mb);
            da += (a[i] - ma) * (a[i] - ma);
            db += (b[i] - mb) * (b[i] - mb);
        }
        return num / std::sqrt(da * db);
    };
    double same_sum = 0, cross_sum = 0;
    int same_n = 0, cross_n = 0;
    for (size_t i = 0; i < profile.size(); ++i)
        for (size_t j = i + 1; j < profile.size(); ++j) {
            const double c = pearson(profile[i], profile[j]);
            if (speaker[i] == speaker[j])
                same_sum += c, ++same_n;
            else
                cross_sum += c, ++cross_n;
        }
    REQUIRE(same_n > 0);
    REQUIRE(cross_n > 0);
    CHECK(same_sum / same_n > cross_sum / cross_n);
}

TEST_CASE("corpus generator validates its spec") {
    SyntheticSpec spec;
    spec.n_speakers = 0;
    CHECK_THROWS_AS(generate_synthetic_corpus(spec, "/tmp/x"), std::invalid_argument);
    spec = SyntheticSpec{};
    spec.sample_rate = 8000;
    CHECK_THROWS_AS(generate_synthetic_corpus(spec, "/tmp/x"), std::invalid_argument);
    spec = SyntheticSpec{};
    spec.duration_choices = {};
    CHECK_THROWS_AS(generate_synthetic_corpus(spec, "/tmp/x"), std::invalid_argument);
}

// ===== split and classes =====

TEST_CASE("per-speaker split holds out 10% and keeps the sets disjoint") {
    std::vector<ManifestEntry> all;
    for (int s = 0; s < 4; ++s)
        for (int u = 0; u < 50; ++u)
            all.push_back({"s" + std::to_string(s) + "_u" + std::to_string(u) + ".wav", 2.0,
                           "spk" + std::to_string(s)});
    const CorpusSplit split = split_manifest(all, 0.1, 7);
    CHECK(split.val.size() == 20);  // 5 per speaker
    CHECK(split.train.size() == 180);
    std::map<std::string, int> val_per_spk;
    for (const auto& e : split.val) ++val_per_spk[e.speaker];
    for (const auto& [spk, n] : val_per_spk) CHECK(n == 5);

    std::map<std::string, int> where;
    for (const auto& e : split.train) where[e.path] = 1;
    for (const auto& e : split.val) {
        CHECK(where.count(e.path) == 0);
        where[e.path] = 2;
    }
    CHECK(where.size() == all.size());

    // Deterministic under the seed; different seeds move the boundary.
    const CorpusSplit again = split_manifest(all, 0.1, 7);
    REQUIRE(again.val.size() == split.val.size());
    for (size_t i = 0; i < split.val.size(); ++i) CHECK(again.val[i].path == split.val[i].path);
}

TEST_CASE("split keeps singleton speakers in training, gives duos one val utterance") {
    std::vector<ManifestEntry> all = {{"a.wav", 1.0, "solo"},
                                      {"b.wav", 1.0, "duo"},
                                      {"c.wav", 1.0, "duo"}};
    const CorpusSplit split = split_manifest(all, 0.1, 3);
    REQUIRE(split.val.size() == 1);
    CHECK(split.val[0].speaker == "duo");
    CHECK(split.train.size() == 2);
    const CorpusSplit none = split_manifest(all, 0.0, 3);
    CHECK(none.val.empty());
    CHECK(none.train.size() == 3);
}

TEST_CASE("speaker classes are sorted and unique") {
    std::vector<ManifestEntry> all = {{"1", 1, "b"}, {"2", 1, "a"}, {"3", 1, "b"}, {"4", 1, "c"}};
    const auto classes = speaker_classes(all);
    REQUIRE(classes.size() == 3);
    CHECK(classes[0] == "a");
    CHECK(classes[1] == "b");
    CHECK(classes[2] == "c");
}

// ===== trials =====

TEST_CASE("make_trials is balanced, label-consistent, and deterministic") {
    std::vector<ManifestEntry> heldout;
    for (int s = 0; s < 6; ++s)
        for (int u = 0; u < 3; ++u) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "dir/spk%03d_utt%03d.wav", s, u);
            heldout.push_back({buf, 1.5, "spk" + std::to_string(s)});
        }
    std::map<std::string, std::string> spk_of;
    for (const auto& e : heldout) spk_of[utterance_id(e.path)] = e.speaker;

    const std::vector<Trial> trials = make_trials(heldout, 500, 42);
    REQUIRE(trials.size() == 500);
    int targets = 0;
    for (const Trial& t : trials) {
        REQUIRE(spk_of.count(t.enroll_id) == 1);
        REQUIRE(spk_of.count(t.test_id) == 1);
        CHECK(t.enroll_id != t.test_id);
        if (t.target) {
            ++targets;
            CHECK(spk_of.at(t.enroll_id) == spk_of.at(t.test_id));
        } else {
            CHECK(spk_of.at(t.enroll_id) != spk_of.at(t.test_id));
        }
    }
    CHECK(targets == 250);

    const std::vector<Trial> again = make_trials(heldout, 500, 42);
    for (size_t i = 0; i < trials.size(); ++i) {
        CHECK(again[i].enroll_id == trials[i].enroll_id);
        CHECK(again[i].test_id == trials[i].test_id);
        CHECK(again[i].target == trials[i].target);
    }

    std::vector<ManifestEntry> singletons = {{"a.wav", 1, "x"}, {"b.wav", 1, "y"}};
    CHECK_THROWS_AS(make_trials(singletons, 10, 0), std::invalid_argument);
}

// ===== training loop =====

namespace {

struct ToyRun {
    std::vector<ManifestEntry> manifest;
    EncoderConfig cfg;
    TrainConfig tcfg;
    AAMConfig acfg;
};

ToyRun toy_run(const std::string& tag, int n_speakers, int utts, int epochs) {
    ToyRun r;
    SyntheticSpec spec;
    spec.n_speakers = n_speakers;
    spec.utterances_per_speaker = utts;
    spec.duration_choices = {1.5};
    spec.seed = 1234;
    r.manifest = generate_synthetic_corpus(spec, tmp_dir(tag));
    r.cfg = encoder_preset("toy");
    r.tcfg.epochs = epochs;
    r.tcfg.initial_lr = 0.05;
    r.tcfg.min_lr = 1e-4;
    r.tcfg.batch_size = 16;
    r.tcfg.seed = 5;
    return r;
}

}  // namespace

TEST_CASE("toy training reduces the loss over the first epochs and logs metrics") {
    ToyRun r = toy_run("loop", 20, 3, 5);
    SpeakerModel model = build_model(r.cfg, 20, 77, kEmbeddingDim, 16);
    std::ostringstream csv;
    const std::string ckpt = tmp_dir("loop_ckpt") + "/best.ckpt";
    const TrainResult res = train_model(model, r.manifest, r.tcfg, r.acfg, ckpt, &csv);

    REQUIRE(res.history.size() == 5);
    CHECK(res.history[1].train_loss < res.history[0].train_loss);
    CHECK(res.history[2].train_loss < res.history[1].train_loss);
    for (const EpochMetrics& em : res.history) {
        CHECK(std::isfinite(em.train_loss));
        CHECK(em.train_acc >= 0.0);
        CHECK(em.train_acc <= 1.0);
        CHECK(em.val_acc >= 0.0);
        CHECK(em.val_acc <= 1.0);
        CHECK(em.lr <= r.tcfg.initial_lr);
        CHECK(em.lr >= r.tcfg.min_lr);
    }
    // One header plus one row per epoch.
    std::istringstream lines(csv.str());
    std::string line;
    int n_lines = 0;
    while (std::getline(lines, line)) ++n_lines;
    CHECK(n_lines == 6);
    CHECK(csv.str().rfind("epoch,lr,train_loss,train_acc,val_acc\n", 0) == 0);

    // The best checkpoint reloads with the recorded validation accuracy.
    REQUIRE(std::filesystem::exists(ckpt));
    const LoadedCheckpoint lc = load_checkpoint(ckpt);
    double recorded = -1.0;
    for (const auto& [k, v] : lc.meta.metrics)
        if (k == "val_acc") recorded = v;
    CHECK(recorded == doctest::Approx(res.best_val_acc).epsilon(1e-12));
    CHECK(res.best_epoch >= 1);
}

TEST_CASE("fixed seeds reproduce the metric log byte for byte") {
    ToyRun r = toy_run("determinism", 6, 3, 2);
    std::ostringstream csv_a, csv_b;
    SpeakerModel model_a = build_model(r.cfg, 6, 42, kEmbeddingDim, 16);
    SpeakerModel model_b = build_model(r.cfg, 6, 42, kEmbeddingDim, 16);
    train_model(model_a, r.manifest, r.tcfg, r.acfg, "", &csv_a);
    train_model(model_b, r.manifest, r.tcfg, r.acfg, "", &csv_b);
    CHECK(csv_a.str() == csv_b.str());

    // And the trained weights agree exactly.
    const auto pa = model_a.parameters();
    const auto pb = model_b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        for (int64_t j = 0; j < pa[i]->value.numel(); ++j)
            CHECK(pa[i]->value.data[j] == pb[i]->value.data[j]);
}

TEST_CASE("a frozen run (lr = 0) leaves every parameter bit-identical") {
    ToyRun r = toy_run("frozen", 4, 2, 2);
    r.tcfg.initial_lr = 0.0;
    r.tcfg.min_lr = 0.0;
    SpeakerModel model = build_model(r.cfg, 4, 9, kEmbeddingDim, 16);
    std::vector<double> before;
    for (Parameter* p : model.parameters())
        before.insert(before.end(), p->value.data.begin(), p->value.data.end());
    train_model(model, r.manifest, r.tcfg, r.acfg);
    std::vector<double> after;
    for (Parameter* p : model.parameters())
        after.insert(after.end(), p->value.data.begin(), p->value.data.end());
    REQUIRE(before.size() == after.size());
    for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("class-count mismatch and empty manifests are rejected") {
    ToyRun r = toy_run("mismatch", 3, 2, 1);
    SpeakerModel model = build_model(r.cfg, 5, 1, kEmbeddingDim, 16);
    CHECK_THROWS_WITH_AS(train_model(model, r.manifest, r.tcfg, r.acfg),
                         doctest::Contains("classes"), std::invalid_argument);
    CHECK_THROWS_AS(train_model(model, {}, r.tcfg, r.acfg), std::invalid_argument);
}

TEST_CASE("margin makes the task harder when the target is already the argmax") {
    Rng rng(88);
    for (int rep = 0; rep < 20; ++rep) {
        const int B = 4, N = 6;
        Tensor logits({B, N});
        std::vector<int> labels;
        for (int b = 0; b < B; ++b) {
            for (int j = 0; j < N; ++j) logits.at(b, j) = rng.uniform(-0.8, 0.6);
            const int y = static_cast<int>(rng.uniform_int(N));
            logits.at(b, y) = rng.uniform(0.65, 0.9);  // clear argmax
            labels.push_back(y);
        }
        double prev = -1.0;
        for (double m : {0.0, 0.1, 0.2, 0.4, 0.8}) {
            Graph g;
            const int loss = g.aam_loss(g.leaf(logits), labels, m, 30.0);
            const double v = g.val(loss).at(0);
            CHECK(v >= 0.0);
            CHECK(v >= prev - 1e-12);
            prev = v;
        }
    }
}
