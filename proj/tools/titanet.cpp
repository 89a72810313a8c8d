// Command-line front end: corpus synthesis, training, embedding extraction,
// verification scoring, diarization, DER scoring, and parameter counting.
// Every subcommand accepts --config <file> with flat key=value lines that
// mirror its flags. Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "titanet/checkpoint.hpp"
#include "titanet/diarize.hpp"
#include "titanet/encoder.hpp"
#include "titanet/features.hpp"
#include "titanet/io.hpp"
#include "titanet/pooldec.hpp"
#include "titanet/train.hpp"
#include "titanet/verify.hpp"

namespace {

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string pct(double ratio) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * ratio);
    return buf;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        size_t used = 0;
        out.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument("bad list entry '" + item + "'");
    }
    if (out.empty()) throw std::invalid_argument("empty list");
    return out;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    for (double v : parse_double_list(text)) out.push_back(static_cast<int>(v));
    return out;
}

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// `--config FILE` holds flat key=value lines mirroring the subcommand's
// flags. Expand them into `--key=value` tokens placed before the explicit
// flags; every option takes the last value given, so explicit flags win.
void expand_config_tokens(const CLI::App& app, std::vector<std::string>& args) {
    const CLI::App* sub = nullptr;
    size_t sub_pos = 0;
    for (size_t i = 0; i < args.size(); ++i) {
        if (!args[i].empty() && args[i][0] != '-') {
            sub = app.get_subcommand_no_throw(args[i]);
            sub_pos = i;
            break;
        }
    }
    if (sub == nullptr) return;  // no subcommand: leave the error to the parser

    std::string path;
    for (size_t i = sub_pos + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return;

    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::vector<std::string> expanded;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::string where = path + ": line " + std::to_string(lineno);
        const size_t eq = t.find('=');
        if (eq == std::string::npos) throw std::runtime_error(where + ": expected key=value");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        while (!key.empty() && key.front() == '-') key.erase(key.begin());
        if (key.empty()) throw std::runtime_error(where + ": empty key");
        if (key == "config") throw std::runtime_error(where + ": config files cannot nest");
        if (val.size() >= 2 && ((val.front() == '"' && val.back() == '"') ||
                                (val.front() == '\'' && val.back() == '\''))) {
            val = val.substr(1, val.size() - 2);
        }
        if (sub->get_option_no_throw("--" + key) == nullptr) {
            throw std::runtime_error(where + ": unknown key '" + key + "' for subcommand '" +
                                     sub->get_name() + "'");
        }
        expanded.push_back("--" + key + "=" + val);
    }
    args.insert(args.begin() + sub_pos + 1, expanded.begin(), expanded.end());
}

titanet::DiarizationDomain parse_domain(const std::string& name) {
    if (name == "telephonic") return titanet::DiarizationDomain::telephonic;
    if (name == "nontelephonic") return titanet::DiarizationDomain::nontelephonic;
    throw std::invalid_argument("unknown domain '" + name +
                                "' (expected telephonic|nontelephonic)");
}

void print_der_row(const std::string& name, const titanet::DerResult& r) {
    std::printf("%s DER %s (miss %s, falarm %s, confusion %s; scored %s s)\n", name.c_str(),
                pct(r.der).c_str(), pct(r.missed / r.scored_speech).c_str(),
                pct(r.falarm / r.scored_speech).c_str(),
                pct(r.confusion / r.scored_speech).c_str(), fmt9(r.scored_speech).c_str());
}

// ===== subcommand options =====

struct SynthOpts {
    std::string out_dir;
    titanet::SyntheticSpec spec;
    std::string durations;
};

struct TrainOpts {
    std::string manifest;
    std::string out;
    std::string preset = "toy";
    std::string metrics;
    std::string kernels;
    int mega_blocks = 0;  // 0 = keep preset value
    int repeats = 0;
    int channels = 0;
    int epilogue = 0;
    int d_att = 128;
    int emb_dim = 192;
    titanet::TrainConfig tcfg;
    titanet::AAMConfig acfg;
};

struct EmbedOpts {
    std::string model;
    std::string manifest;
    std::string out;
};

struct VerifyOpts {
    std::string embeddings;
    std::string trials;
    std::string det;
    std::string scores;
    titanet::DcfConfig dcf;
};

struct DiarizeOpts {
    std::string model;
    std::string audio;
    std::string rttm;
    std::string out;
    std::string domain = "telephonic";
    int max_speakers = 8;
    int known_k = 0;  // 0 = estimate
    uint64_t seed = 0;
    titanet::DerConfig der;
    bool keep_overlap = false;
};

struct ScoreDerOpts {
    std::string ref;
    std::string hyp;
    titanet::DerConfig der;
    bool keep_overlap = false;
};

struct ParamsOpts {
    std::string preset;
};

// ===== subcommand bodies =====

void run_synth(const SynthOpts& o) {
    titanet::SyntheticSpec spec = o.spec;
    if (!o.durations.empty()) spec.duration_choices = parse_double_list(o.durations);
    const auto entries = titanet::generate_synthetic_corpus(spec, o.out_dir);
    std::printf("wrote %zu utterances (%d speakers) under %s\n", entries.size(), spec.n_speakers,
                o.out_dir.c_str());
    std::printf("manifest %s/manifest.tsv\n", o.out_dir.c_str());
}

void run_train(const TrainOpts& o) {
    const auto entries = titanet::read_manifest(o.manifest);
    const auto classes = titanet::speaker_classes(entries);

    titanet::EncoderConfig cfg = titanet::encoder_preset(o.preset);
    if (o.mega_blocks > 0) cfg.mega_blocks = o.mega_blocks;
    if (o.repeats > 0) cfg.repeats = o.repeats;
    if (o.channels > 0) cfg.channels = o.channels;
    if (o.epilogue > 0) cfg.epilogue_channels = o.epilogue;
    if (!o.kernels.empty()) cfg.mega_kernels = parse_int_list(o.kernels);
    cfg.validate();

    titanet::SpeakerModel model =
        titanet::build_model(cfg, static_cast<int>(classes.size()), o.tcfg.seed, o.emb_dim,
                             o.d_att);
    std::printf("training on %zu utterances, %zu speakers (%lld trainable parameters)\n",
                entries.size(), classes.size(),
                static_cast<long long>(titanet::count_parameters(model)));

    std::ofstream metrics;
    std::ostream* metrics_ptr = nullptr;
    if (!o.metrics.empty()) {
        metrics.open(o.metrics, std::ios::binary);
        if (!metrics) throw std::runtime_error("cannot open " + o.metrics + " for writing");
        metrics_ptr = &metrics;
    }
    const titanet::TrainResult result =
        titanet::train_model(model, entries, o.tcfg, o.acfg, o.out, metrics_ptr);
    std::printf("best epoch %d val_acc %s\n", result.best_epoch,
                fmt9(result.best_val_acc).c_str());
    std::printf("checkpoint %s\n", o.out.c_str());
}

void run_embed(const EmbedOpts& o) {
    titanet::LoadedCheckpoint ckpt = titanet::load_checkpoint(o.model);
    const auto entries = titanet::read_manifest(o.manifest);
    std::vector<std::pair<std::string, titanet::Tensor>> store;
    store.reserve(entries.size());
    for (const auto& e : entries) {
        const titanet::AudioSignal audio = titanet::load_wav(e.path);
        const titanet::MelSpectrogram mel = titanet::compute_mel_spectrogram(audio);
        store.emplace_back(titanet::utterance_id(e.path),
                           titanet::extract_embedding(ckpt.model, mel));
    }
    titanet::write_embeddings(o.out, store);
    std::printf("wrote %zu embeddings to %s\n", store.size(), o.out.c_str());
}

void run_verify(const VerifyOpts& o) {
    const auto store = titanet::read_embeddings(o.embeddings);
    const auto trials = titanet::read_trials(o.trials);
    const titanet::ScoredTrials st = titanet::score_trials(trials, store);

    if (!o.scores.empty()) {
        std::ofstream out(o.scores, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + o.scores + " for writing");
        for (size_t i = 0; i < trials.size(); ++i) {
            out << trials[i].enroll_id << ' ' << trials[i].test_id << ' ' << fmt9(st.scores[i])
                << '\n';
        }
        std::printf("scores %s\n", o.scores.c_str());
    }

    size_t targets = 0;
    for (char t : st.targets) targets += t ? 1 : 0;
    const titanet::EerResult eer = titanet::compute_eer(st);
    const titanet::DcfResult dcf = titanet::compute_min_dcf(st, o.dcf);
    std::printf("trials %zu (%zu target, %zu nontarget)\n", st.scores.size(), targets,
                st.scores.size() - targets);
    std::printf("eer %s (threshold %s)\n", fmt9(eer.eer).c_str(), fmt9(eer.threshold).c_str());
    std::printf("min_dcf %s (threshold %s)\n", fmt9(dcf.min_dcf).c_str(),
                fmt9(dcf.threshold).c_str());

    if (!o.det.empty()) {
        titanet::write_det_csv(o.det, titanet::det_points(st));
        std::printf("det csv %s\n", o.det.c_str());
    }
}

void run_diarize(const DiarizeOpts& o) {
    titanet::LoadedCheckpoint ckpt = titanet::load_checkpoint(o.model);
    const auto sessions = titanet::parse_rttm(o.rttm);
    if (sessions.size() != 1) {
        throw std::invalid_argument("diarize expects a single-session reference RTTM, got " +
                                    std::to_string(sessions.size()) + " sessions");
    }
    const std::string& session = sessions.begin()->first;
    const std::vector<titanet::RttmSegment>& ref = sessions.begin()->second;

    const titanet::AudioSignal audio = titanet::load_wav(o.audio);
    const auto regions = titanet::speech_regions_from_segments(ref);
    std::optional<int> known_k;
    if (o.known_k > 0) known_k = o.known_k;
    const titanet::DiarizationHypothesis hyp =
        titanet::diarize_audio(ckpt.model, audio, regions, parse_domain(o.domain),
                               o.max_speakers, known_k, o.seed);
    if (!o.out.empty()) {
        titanet::write_rttm(o.out, titanet::hypothesis_to_rttm(hyp, session));
        std::printf("hypothesis %s\n", o.out.c_str());
    }

    titanet::DerConfig der = o.der;
    der.ignore_overlap = !o.keep_overlap;
    const titanet::DerResult r = titanet::compute_der(ref, hyp, der);
    print_der_row(session, r);
    print_der_row("ALL", r);
}

void run_score_der(const ScoreDerOpts& o) {
    const auto ref_sessions = titanet::parse_rttm(o.ref);
    const auto hyp_sessions = titanet::parse_rttm(o.hyp);
    if (ref_sessions.empty()) throw std::invalid_argument("reference RTTM has no sessions");
    for (const auto& [session, segs] : hyp_sessions) {
        if (!ref_sessions.count(session)) {
            throw std::invalid_argument("hypothesis session '" + session +
                                        "' is absent from the reference");
        }
    }

    titanet::DerConfig der = o.der;
    der.ignore_overlap = !o.keep_overlap;
    titanet::DerResult total;
    for (const auto& [session, segs] : ref_sessions) {
        titanet::DiarizationHypothesis hyp;
        const auto it = hyp_sessions.find(session);
        if (it != hyp_sessions.end()) hyp = titanet::hypothesis_from_rttm(it->second);
        const titanet::DerResult r = titanet::compute_der(segs, hyp, der);
        print_der_row(session, r);
        total.missed += r.missed;
        total.falarm += r.falarm;
        total.confusion += r.confusion;
        total.scored_speech += r.scored_speech;
    }
    total.der = (total.missed + total.falarm + total.confusion) / total.scored_speech;
    print_der_row("ALL", total);
}

void run_params(const ParamsOpts& o) {
    const titanet::EncoderConfig cfg = titanet::encoder_preset(o.preset);
    titanet::SpeakerModel model = titanet::build_model(cfg, 0, 0);
    const long long count = titanet::count_parameters(model);
    static const std::map<std::string, std::string> reference = {
        {"titanet_s", "6.4M"},
        {"titanet_m", "13.4M"},
        {"titanet_l", "25.3M"},
    };
    std::printf("preset %s\n", o.preset.c_str());
    std::printf("parameters %lld (%.2fM)\n", count, static_cast<double>(count) / 1e6);
    const auto it = reference.find(o.preset);
    std::printf("reference value %s\n", it == reference.end() ? "n/a" : it->second.c_str());
    for (const auto& [group, n] : titanet::parameter_breakdown(model)) {
        std::printf("  %-24s %lld\n", group.c_str(), static_cast<long long>(n));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TitaNet speaker embeddings: synthesis, training, verification, diarization"};
    app.require_subcommand(1);

    // Last value wins everywhere so config-file tokens (inserted first) yield
    // to explicit flags.
    std::string config_file;
    const auto add_sub = [&](const std::string& name, const std::string& desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        return sub;
    };
    const auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_file,
                        "Flat key=value file mirroring this subcommand's flags");
    };

    SynthOpts synth;
    auto* synth_cmd = add_sub("synth", "Generate a synthetic training corpus");
    synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
    synth_cmd->add_option("--speakers", synth.spec.n_speakers, "Number of speakers");
    synth_cmd->add_option("--utterances", synth.spec.utterances_per_speaker,
                          "Utterances per speaker");
    synth_cmd->add_option("--durations", synth.durations,
                          "Comma-separated utterance durations in seconds");
    synth_cmd->add_option("--seed", synth.spec.seed, "Corpus seed");
    add_config(synth_cmd);
    synth_cmd->callback([&] { run_synth(synth); });

    TrainOpts train;
    auto* train_cmd = add_sub("train", "Train a speaker embedding model");
    train_cmd->add_option("--manifest", train.manifest, "Corpus manifest (tsv)")->required();
    train_cmd->add_option("--out", train.out, "Checkpoint output path")->required();
    train_cmd->add_option("--preset", train.preset,
                          "Encoder preset: toy|titanet_s|titanet_m|titanet_l");
    train_cmd->add_option("--blocks", train.mega_blocks, "Override mega block count");
    train_cmd->add_option("--repeats", train.repeats, "Override repeats per mega block");
    train_cmd->add_option("--channels", train.channels, "Override mega block channels");
    train_cmd->add_option("--epilogue", train.epilogue, "Override epilogue channels");
    train_cmd->add_option("--kernels", train.kernels, "Override mega kernel sizes, e.g. 7,11,15");
    train_cmd->add_option("--d-att", train.d_att, "Attention hidden width");
    train_cmd->add_option("--emb-dim", train.emb_dim, "Embedding dimension");
    train_cmd->add_option("--epochs", train.tcfg.epochs, "Training epochs");
    train_cmd->add_option("--batch-size", train.tcfg.batch_size, "Batch size");
    train_cmd->add_option("--lr", train.tcfg.initial_lr, "Initial learning rate");
    train_cmd->add_option("--min-lr", train.tcfg.min_lr, "Final learning rate");
    train_cmd->add_option("--momentum", train.tcfg.momentum, "SGD momentum");
    train_cmd->add_option("--margin", train.acfg.margin, "Additive angular margin (radians)");
    train_cmd->add_option("--scale", train.acfg.scale, "Logit scale");
    train_cmd->add_option("--seed", train.tcfg.seed, "Training seed");
    train_cmd->add_option("--metrics", train.metrics, "Per-epoch metrics CSV path");
    add_config(train_cmd);
    train_cmd->callback([&] { run_train(train); });

    EmbedOpts embed;
    auto* embed_cmd = add_sub("embed", "Extract embeddings for a manifest");
    embed_cmd->add_option("--model", embed.model, "Checkpoint path")->required();
    embed_cmd->add_option("--manifest", embed.manifest, "Corpus manifest (tsv)")->required();
    embed_cmd->add_option("--out", embed.out, "Embedding store output path")->required();
    add_config(embed_cmd);
    embed_cmd->callback([&] { run_embed(embed); });

    VerifyOpts verify;
    auto* verify_cmd = add_sub("verify", "Score verification trials");
    verify_cmd->add_option("--embeddings", verify.embeddings, "Embedding store")->required();
    verify_cmd->add_option("--trials", verify.trials, "Trial list file")->required();
    verify_cmd->add_option("--scores", verify.scores, "Write per-trial scores here");
    verify_cmd->add_option("--det", verify.det, "Write DET curve CSV here");
    verify_cmd->add_option("--p-target", verify.dcf.p_target, "DCF target prior");
    verify_cmd->add_option("--c-fa", verify.dcf.c_fa, "DCF false-accept cost");
    verify_cmd->add_option("--c-miss", verify.dcf.c_miss, "DCF miss cost");
    add_config(verify_cmd);
    verify_cmd->callback([&] { run_verify(verify); });

    DiarizeOpts diarize;
    auto* diarize_cmd = add_sub("diarize", "Diarize one session with oracle regions");
    diarize_cmd->add_option("--model", diarize.model, "Checkpoint path")->required();
    diarize_cmd->add_option("--audio", diarize.audio, "Session WAV")->required();
    diarize_cmd->add_option("--rttm", diarize.rttm, "Reference RTTM (single session)")
        ->required();
    diarize_cmd->add_option("--out", diarize.out, "Hypothesis RTTM output path");
    diarize_cmd->add_option("--domain", diarize.domain, "telephonic|nontelephonic");
    diarize_cmd->add_option("--max-speakers", diarize.max_speakers, "Speaker count cap");
    diarize_cmd->add_option("--known-k", diarize.known_k, "Known speaker count (0 = estimate)");
    diarize_cmd->add_option("--collar", diarize.der.collar, "Scoring collar in seconds");
    diarize_cmd->add_flag("--keep-overlap", diarize.keep_overlap,
                          "Score reference overlap regions too");
    diarize_cmd->add_option("--seed", diarize.seed, "Clustering seed");
    add_config(diarize_cmd);
    diarize_cmd->callback([&] { run_diarize(diarize); });

    ScoreDerOpts score;
    auto* score_cmd = add_sub("score-der", "Score hypothesis RTTM against reference");
    score_cmd->add_option("--ref", score.ref, "Reference RTTM")->required();
    score_cmd->add_option("--hyp", score.hyp, "Hypothesis RTTM")->required();
    score_cmd->add_option("--collar", score.der.collar, "Scoring collar in seconds");
    score_cmd->add_flag("--keep-overlap", score.keep_overlap,
                        "Score reference overlap regions too");
    add_config(score_cmd);
    score_cmd->callback([&] { run_score_der(score); });

    ParamsOpts params;
    auto* params_cmd = add_sub("params", "Report model size for a preset");
    params_cmd->add_option("--preset", params.preset,
                           "Encoder preset: toy|titanet_s|titanet_m|titanet_l")
        ->required();
    add_config(params_cmd);
    params_cmd->callback([&] { run_params(params); });

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        expand_config_tokens(app, args);
        std::reverse(args.begin(), args.end());  // the vector overload pops from the back
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
