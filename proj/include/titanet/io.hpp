#pragma once

// Text and binary exchange formats: corpus manifests, verification trial
// lists, RTTM segment files, the embedding store, and flat key=value config
// files. Every parser reports malformed input with a line (or byte-offset)
// diagnostic instead of truncating silently.

#include <map>
#include <string>
#include <vector>

#include "titanet/tensor.hpp"

namespace titanet {

// ===== corpus manifest =====

// One training/eval utterance: `path<TAB>duration_seconds<TAB>speaker`.
struct ManifestEntry {
    std::string path;
    double duration = 0.0;  // seconds
    std::string speaker;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Utterance key used by the embedding store and trial files: the file name
// without directory or extension ("corpus/spk003_utt007.wav" -> "spk003_utt007").
std::string utterance_id(const std::string& path);

// ===== verification trials =====

// One line per trial: `<label 0|1> <enroll_id> <test_id>`.
struct Trial {
    std::string enroll_id;
    std::string test_id;
    bool target = false;
};

std::vector<Trial> read_trials(const std::string& path);
void write_trials(const std::string& path, const std::vector<Trial>& trials);

// ===== RTTM =====

// One `SPEAKER` line: session id, onset and duration in seconds, speaker name.
struct RttmSegment {
    std::string session;
    double onset = 0.0;
    double duration = 0.0;
    std::string speaker;

    bool operator==(const RttmSegment& o) const = default;
};

// Parses 10-field `SPEAKER` lines grouped by session id (file order kept
// within each session); lines of any other type are ignored.
std::map<std::string, std::vector<RttmSegment>> parse_rttm(const std::string& path);
void write_rttm(const std::string& path, const std::vector<RttmSegment>& segments);

// ===== embedding store =====

inline constexpr int kEmbeddingDim = 192;

// Concatenated binary records `[u32 id-length][id utf-8][192 x f64 LE]`.
void write_embeddings(const std::string& path,
                      const std::vector<std::pair<std::string, Tensor>>& embeddings);
std::vector<std::pair<std::string, Tensor>> read_embeddings(const std::string& path);

// ===== config files =====

// Flat `key=value` lines; '#' starts a comment; duplicate keys are an error.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin = "<config>");
std::map<std::string, std::string> read_config(const std::string& path);

}  // namespace titanet
