// On-disk formats: manifests, trials, RTTM, the embedding store, config
// files, and checkpoint round-trips with corruption diagnostics.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "titanet/checkpoint.hpp"
#include "titanet/features.hpp"
#include "titanet/io.hpp"
#include "titanet/rng.hpp"

using namespace titanet;

namespace {

std::string tmp_dir() {
    static int counter = 0;
    const std::string dir =
        (std::filesystem::temp_directory_path() / ("titanet_io_" + std::to_string(::getpid()) +
                                                   "_" + std::to_string(counter++)))
            .string();
    std::filesystem::create_directories(dir);
    return dir;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

// Millisecond-quantized random time, so the %.6f text round-trip is exact.
double ms_quantized(Rng& rng, double lo, double hi) {
    return std::round(rng.uniform(lo, hi) * 1000.0) / 1000.0;
}

}  // namespace

// ===== manifest =====

TEST_CASE("manifest round-trips and rejects malformed rows") {
    const std::string dir = tmp_dir();
    const std::string path = dir + "/m.tsv";

    std::vector<ManifestEntry> entries;
    Rng rng(31);
    for (int i = 0; i < 50; ++i)
        entries.push_back({"corpus/utt_" + std::to_string(i) + ".wav", ms_quantized(rng, 0.5, 30.0),
                           "spk" + std::to_string(i % 7)});
    write_manifest(path, entries);
    const std::vector<ManifestEntry> back = read_manifest(path);
    REQUIRE(back.size() == entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        CHECK(back[i].path == entries[i].path);
        CHECK(back[i].duration == doctest::Approx(entries[i].duration).epsilon(1e-12));
        CHECK(back[i].speaker == entries[i].speaker);
    }

    write_text(path, "a.wav\t1.0\tspk0\nb.wav\t1.0\n");
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("line 2"), std::runtime_error);
    write_text(path, "a.wav\tnope\tspk0\n");
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("duration"), std::runtime_error);
    write_text(path, "a.wav\t-1.0\tspk0\n");
    CHECK_THROWS_AS(read_manifest(path), std::runtime_error);
    CHECK_THROWS_AS(read_manifest(dir + "/missing.tsv"), std::runtime_error);
}

TEST_CASE("utterance ids strip directory and extension") {
    CHECK(utterance_id("corpus/spk003_utt007.wav") == "spk003_utt007");
    CHECK(utterance_id("/a/b/c.flac") == "c");
    CHECK(utterance_id("plain.wav") == "plain");
    CHECK(utterance_id("noext") == "noext");
    CHECK(utterance_id("dir.with.dots/file.tar.gz") == "file.tar");
}

// ===== trials =====

TEST_CASE("trial files round-trip and validate labels") {
    const std::string path = tmp_dir() + "/trials.txt";
    std::vector<Trial> trials = {{"u1", "u2", true}, {"u3", "u4", false}, {"u1", "u4", false}};
    write_trials(path, trials);
    const std::vector<Trial> back = read_trials(path);
    REQUIRE(back.size() == 3);
    for (size_t i = 0; i < trials.size(); ++i) {
        CHECK(back[i].enroll_id == trials[i].enroll_id);
        CHECK(back[i].test_id == trials[i].test_id);
        CHECK(back[i].target == trials[i].target);
    }

    write_text(path, "1 a b\n2 c d\n");
    CHECK_THROWS_WITH_AS(read_trials(path), doctest::Contains("line 2"), std::runtime_error);
    write_text(path, "1 a\n");
    CHECK_THROWS_AS(read_trials(path), std::runtime_error);
}

// ===== RTTM =====

TEST_CASE("rttm parses the standard 10-field SPEAKER line") {
    const std::string path = tmp_dir() + "/ref.rttm";
    write_text(path,
               "SPEAKER s1 1 0.50 1.25 <NA> <NA> spkA <NA> <NA>\n"
               "SPKR-INFO s1 1 <NA> <NA> <NA> unknown spkA <NA> <NA>\n"
               "SPEAKER s2 1 3.00 0.75 <NA> <NA> spkB <NA> <NA>\n"
               "SPEAKER s1 1 2.00 1.00 <NA> <NA> spkB <NA> <NA>\n");
    const auto by_session = parse_rttm(path);
    REQUIRE(by_session.size() == 2);
    REQUIRE(by_session.at("s1").size() == 2);
    CHECK(by_session.at("s1")[0] == RttmSegment{"s1", 0.50, 1.25, "spkA"});
    CHECK(by_session.at("s1")[1] == RttmSegment{"s1", 2.00, 1.00, "spkB"});
    CHECK(by_session.at("s2")[0] == RttmSegment{"s2", 3.00, 0.75, "spkB"});
}

TEST_CASE("rttm ignores other record types and handles empty files") {
    const std::string path = tmp_dir() + "/empty.rttm";
    write_text(path, "");
    CHECK(parse_rttm(path).empty());
    write_text(path, "LEXEME s1 1 0.1 0.2 word lex spkA 0.9 <NA>\n\n;; comment\n");
    CHECK(parse_rttm(path).empty());
}

TEST_CASE("rttm write/parse round trip on random segments") {
    const std::string path = tmp_dir() + "/rt.rttm";
    Rng rng(77);
    std::vector<RttmSegment> segs;
    for (int i = 0; i < 40; ++i) {
        RttmSegment s;
        s.session = "sess" + std::to_string(i % 3);
        s.onset = ms_quantized(rng, 0.0, 500.0);
        s.duration = ms_quantized(rng, 0.001, 20.0);
        s.speaker = "spk" + std::to_string(static_cast<int>(rng.uniform_int(5)));
        segs.push_back(std::move(s));
    }
    write_rttm(path, segs);
    const auto back = parse_rttm(path);
    size_t total = 0;
    for (const auto& [sess, v] : back) total += v.size();
    REQUIRE(total == segs.size());
    // Grouped per session but in file order within each group.
    std::map<std::string, std::vector<RttmSegment>> expect;
    for (const RttmSegment& s : segs) expect[s.session].push_back(s);
    for (const auto& [sess, v] : expect) {
        REQUIRE(back.count(sess) == 1);
        REQUIRE(back.at(sess).size() == v.size());
        for (size_t i = 0; i < v.size(); ++i) CHECK(back.at(sess)[i] == v[i]);
    }
}

TEST_CASE("rttm rejects malformed SPEAKER lines with line numbers") {
    const std::string path = tmp_dir() + "/bad.rttm";
    write_text(path, "SPEAKER s1 1 0.5 1.0 <NA> <NA> spkA <NA>\n");
    CHECK_THROWS_WITH_AS(parse_rttm(path), doctest::Contains("line 1"), std::runtime_error);
    write_text(path, "SPEAKER s1 1 x 1.0 <NA> <NA> spkA <NA> <NA>\n");
    CHECK_THROWS_WITH_AS(parse_rttm(path), doctest::Contains("onset"), std::runtime_error);
    write_text(path, "SPEAKER s1 1 0.5 0.0 <NA> <NA> spkA <NA> <NA>\n");
    CHECK_THROWS_AS(parse_rttm(path), std::runtime_error);
    write_text(path, "SPEAKER s1 1 -0.5 1.0 <NA> <NA> spkA <NA> <NA>\n");
    CHECK_THROWS_AS(parse_rttm(path), std::runtime_error);
}

// ===== embedding store =====

TEST_CASE("embedding store round-trips bit-exactly") {
    const std::string path = tmp_dir() + "/emb.bin";
    Rng rng(5150);
    std::vector<std::pair<std::string, Tensor>> embs;
    for (int i = 0; i < 17; ++i) {
        Tensor e({kEmbeddingDim});
        for (double& v : e.data) v = rng.normal();
        embs.emplace_back("utt_" + std::to_string(i), std::move(e));
    }
    write_embeddings(path, embs);
    const auto back = read_embeddings(path);
    REQUIRE(back.size() == embs.size());
    for (size_t i = 0; i < embs.size(); ++i) {
        CHECK(back[i].first == embs[i].first);
        REQUIRE(back[i].second.shape == embs[i].second.shape);
        for (int64_t j = 0; j < embs[i].second.numel(); ++j)
            CHECK(back[i].second.data[j] == embs[i].second.data[j]);
    }

    write_text(path, "");
    CHECK(read_embeddings(path).empty());
}

TEST_CASE("embedding store rejects bad shapes and truncation") {
    const std::string path = tmp_dir() + "/emb.bin";
    CHECK_THROWS_AS(write_embeddings(path, {{"x", Tensor({kEmbeddingDim, 1})}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(write_embeddings(path, {{"x", Tensor({64})}}), std::invalid_argument);
    CHECK_THROWS_AS(write_embeddings(path, {{"", Tensor({kEmbeddingDim})}}),
                    std::invalid_argument);

    write_embeddings(path, {{"ok", Tensor({kEmbeddingDim})}});
    std::string bytes = read_bytes(path);
    write_text(path, bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_WITH_AS(read_embeddings(path), doctest::Contains("truncated"),
                         std::runtime_error);
    // An id length far beyond anything sane reads as corruption.
    write_text(path, std::string("\xff\xff\xff\x7f", 4) + "rest");
    CHECK_THROWS_WITH_AS(read_embeddings(path), doctest::Contains("id length"),
                         std::runtime_error);
}

// ===== config files =====

TEST_CASE("config parser handles comments, blanks, and whitespace") {
    const auto kv = parse_config_text(
        "# corpus settings\n"
        "\n"
        "epochs = 30\n"
        "  preset=titanet_s  # inline comment\n"
        "out_dir=/tmp/run 1\n");
    REQUIRE(kv.size() == 3);
    CHECK(kv.at("epochs") == "30");
    CHECK(kv.at("preset") == "titanet_s");
    CHECK(kv.at("out_dir") == "/tmp/run 1");
}

TEST_CASE("config parser rejects malformed lines") {
    CHECK_THROWS_WITH_AS(parse_config_text("epochs 30\n"), doctest::Contains("line 1"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("a=1\na=2\n"), doctest::Contains("duplicate"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("=5\n"), doctest::Contains("empty key"),
                         std::runtime_error);
    CHECK_THROWS_AS(read_config("/nonexistent/config.txt"), std::runtime_error);
}

// ===== checkpoints =====

namespace {

// Synthetic probe utterance long enough for a real spectrogram.
MelSpectrogram probe_mel() {
    AudioSignal a;
    a.sample_rate = 16000;
    a.samples.resize(16000);
    for (size_t i = 0; i < a.samples.size(); ++i) {
        const double t = static_cast<double>(i) / 16000.0;
        a.samples[i] = 0.4 * std::sin(2 * 3.14159265358979 * 310.0 * t) +
                       0.2 * std::sin(2 * 3.14159265358979 * 1170.0 * t);
    }
    return compute_mel_spectrogram(a);
}

SpeakerModel toy_model(int n_classes, uint64_t seed) {
    return build_model(encoder_preset("toy"), n_classes, seed, /*emb_dim=*/kEmbeddingDim,
                       /*d_att=*/16);
}

}  // namespace

TEST_CASE("checkpoint round-trip reproduces forward output bit-exactly") {
    const std::string path = tmp_dir() + "/model.ckpt";
    SpeakerModel m = toy_model(4, 11);
    // Perturb running stats away from init so they must survive the trip too.
    for (BnState* s : m.bn_states()) {
        for (double& v : s->running_mean.data) v = 0.01;
        for (double& v : s->running_var.data) v = 1.25;
    }
    CheckpointMeta meta;
    meta.aam = {0.3, 25.0};
    meta.train.epochs = 7;
    meta.train.seed = 99;
    meta.metrics = {{"val_acc", 0.875}, {"epoch", 3.0}};
    save_checkpoint(path, m, meta);

    LoadedCheckpoint lc = load_checkpoint(path);
    CHECK(lc.meta.encoder.channels == m.encoder.cfg.channels);
    CHECK(lc.meta.encoder.epilogue_channels == m.encoder.cfg.epilogue_channels);
    CHECK(lc.meta.n_classes == 4);
    CHECK(lc.meta.emb_dim == kEmbeddingDim);
    CHECK(lc.meta.d_att == 16);
    CHECK(lc.meta.aam.margin == 0.3);
    CHECK(lc.meta.aam.scale == 25.0);
    CHECK(lc.meta.train.epochs == 7);
    CHECK(lc.meta.train.seed == 99);
    REQUIRE(lc.meta.metrics.size() == 2);
    CHECK(lc.meta.metrics[0].first == "val_acc");
    CHECK(lc.meta.metrics[0].second == 0.875);

    const MelSpectrogram probe = probe_mel();
    const Tensor e0 = extract_embedding(m, probe);
    const Tensor e1 = extract_embedding(lc.model, probe);
    REQUIRE(e0.shape == e1.shape);
    for (int64_t i = 0; i < e0.numel(); ++i) CHECK(e0.data[i] == e1.data[i]);
}

TEST_CASE("checkpoint loads into a matching shell; mismatched shell is a shape error") {
    const std::string path = tmp_dir() + "/model.ckpt";
    SpeakerModel m = toy_model(3, 21);
    save_checkpoint(path, m, CheckpointMeta{});

    SpeakerModel shell = toy_model(3, 909);  // same architecture, different init
    load_checkpoint_into(path, shell);
    const MelSpectrogram probe = probe_mel();
    const Tensor e0 = extract_embedding(m, probe);
    const Tensor e1 = extract_embedding(shell, probe);
    for (int64_t i = 0; i < e0.numel(); ++i) CHECK(e0.data[i] == e1.data[i]);

    EncoderConfig wide = encoder_preset("toy");
    wide.channels = 16;
    SpeakerModel other = build_model(wide, 3, 1, kEmbeddingDim, 16);
    CHECK_THROWS_WITH_AS(load_checkpoint_into(path, other), doctest::Contains("shape"),
                         std::runtime_error);
    SpeakerModel fewer = toy_model(2, 1);
    CHECK_THROWS_AS(load_checkpoint_into(path, fewer), std::runtime_error);
}

TEST_CASE("corrupt checkpoints fail loudly and leave the shell untouched") {
    const std::string dir = tmp_dir();
    const std::string path = dir + "/model.ckpt";
    SpeakerModel m = toy_model(2, 33);
    save_checkpoint(path, m, CheckpointMeta{});
    const std::string bytes = read_bytes(path);

    SUBCASE("bad magic") {
        write_text(path, "NOTMAGIC" + bytes.substr(8));
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                             std::runtime_error);
    }
    SUBCASE("future version") {
        std::string v = bytes;
        v[8] = 9;  // version u32 little-endian starts at byte 8
        write_text(path, v);
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"),
                             std::runtime_error);
    }
    SUBCASE("truncation at several depths leaves the shell unmodified") {
        SpeakerModel shell = toy_model(2, 71);
        std::vector<double> before;
        for (Parameter* p : shell.parameters())
            before.insert(before.end(), p->value.data.begin(), p->value.data.end());
        for (size_t keep : {size_t(10), size_t(40), bytes.size() / 2, bytes.size() - 3}) {
            write_text(path, bytes.substr(0, keep));
            CHECK_THROWS_AS(load_checkpoint_into(path, shell), std::runtime_error);
        }
        std::vector<double> after;
        for (Parameter* p : shell.parameters())
            after.insert(after.end(), p->value.data.begin(), p->value.data.end());
        REQUIRE(before.size() == after.size());
        for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
    }
    SUBCASE("trailing garbage is rejected") {
        write_text(path, bytes + "extra");
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("trailing"),
                             std::runtime_error);
    }
}
