#pragma once

// Diarization pipeline: sliding-window embedding extraction over speech
// regions, cosine affinity, spectral clustering with an auto-tuned
// binarization sweep, hypothesis assembly, and DER scoring against RTTM
// references.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "titanet/features.hpp"
#include "titanet/io.hpp"
#include "titanet/pooldec.hpp"
#include "titanet/tensor.hpp"

namespace titanet {

// ===== windowed embeddings =====

// Window/shift presets in seconds: telephonic 1.5/0.75, nontelephonic
// 3.0/1.75.
enum class DiarizationDomain {
    telephonic,
    nontelephonic,
};

double domain_window(DiarizationDomain d);
double domain_shift(DiarizationDomain d);

struct WindowEmbeddings {
    std::vector<Tensor> embeddings;  // unit-norm [emb_dim], parallel to spans
    std::vector<TimeSpan> spans;
};

// Computes the session spectrogram once, slices it per planned window, and
// extracts one embedding per window (eval mode, deterministic). Windows that
// contain no frame centers (possible only in the trailing partial frame of
// the session) are dropped together with their spans. Errors when no speech
// regions are given or no window yields frames.
WindowEmbeddings embed_windows(SpeakerModel& model, const AudioSignal& audio,
                               const std::vector<TimeSpan>& speech_regions,
                               DiarizationDomain domain);

// ===== affinity =====

// A[i,j] = dot(e_i, e_j) clamped to [-1, 1], diagonal forced to exactly 1,
// symmetric by construction. Requires n >= 1 equal-length vectors.
Tensor cosine_affinity(const std::vector<Tensor>& embeddings);

// ===== spectral clustering =====

// Row-wise top-p binarization of a symmetric affinity matrix followed by the
// unnormalized graph Laplacian: set each row's entries >= its p-th largest
// value to 1 (ties all survive, so the diagonal is always kept), average
// with the transpose, and return L = D - A_hat. Exposed for the clustering
// diagnostics tests.
Tensor binarized_laplacian(const Tensor& affinity, int p);

// Per-candidate-p diagnostics from the binarization sweep.
struct NmeTraceEntry {
    int p = 0;
    double g_p = 0.0;        // max eigengap / lambda_max of the binarized Laplacian
    double r_p = 0.0;        // p / (n * g_p); +inf for degenerate (edgeless) graphs
    int eigengap_k = 0;      // argmax eigengap in [1, max_speakers]
};

struct ClusterResult {
    std::vector<int> labels;  // [n], values in [0, estimated_k)
    int estimated_k = 1;
    int chosen_p = 0;
    std::vector<NmeTraceEntry> nme_trace;
};

// Sweeps p over {1, ..., min(n-1, 30)}: binarize, build the Laplacian, take
// ascending eigenvalues, score g_p = (max eigengap in [1, max_speakers]) /
// lambda_max and pick the p minimizing r(p) = p / (n * g_p). The speaker
// count is the eigengap argmax at that p (or known_k when supplied); labels
// come from seeded k-means++ (10 restarts) on the rows of the n x k matrix
// of eigenvectors for the k smallest eigenvalues. max_speakers clamps to
// n - 1; n = 1 returns a single label without sweeping.
ClusterResult nme_sc_cluster(const Tensor& affinity, int max_speakers,
                             std::optional<int> known_k = {}, uint64_t seed = 0);

// ===== hypothesis =====

struct HypothesisSegment {
    double start = 0.0;
    double end = 0.0;
    int speaker = 0;
};

struct DiarizationHypothesis {
    std::vector<HypothesisSegment> segments;  // time-sorted, non-overlapping
};

// Turns labeled windows into segments: where consecutive spans overlap, a
// label change puts the boundary at the overlap midpoint; same-label spans
// merge. The result is clipped to the speech regions. Empty input gives an
// empty hypothesis.
DiarizationHypothesis assemble_hypothesis(const std::vector<int>& labels,
                                          const std::vector<TimeSpan>& spans,
                                          const std::vector<TimeSpan>& speech_regions);

// Union of the segments' extents, merged and sorted: the oracle speech
// regions used when diarizing with a reference transcript's activity marks.
std::vector<TimeSpan> speech_regions_from_segments(const std::vector<RttmSegment>& segments);

// RTTM bridging. Speakers are named "spk<label>" on the way out; on the way
// in, names map to label indices in first-appearance order.
std::vector<RttmSegment> hypothesis_to_rttm(const DiarizationHypothesis& hyp,
                                            const std::string& session);
DiarizationHypothesis hypothesis_from_rttm(const std::vector<RttmSegment>& segments);

// Full pipeline for one session: embed windows, cluster, assemble.
DiarizationHypothesis diarize_audio(SpeakerModel& model, const AudioSignal& audio,
                                    const std::vector<TimeSpan>& speech_regions,
                                    DiarizationDomain domain, int max_speakers = 8,
                                    std::optional<int> known_k = {}, uint64_t seed = 0);

// ===== DER =====

struct DerConfig {
    double collar = 0.25;        // seconds excluded around every reference boundary
    bool ignore_overlap = true;  // exclude regions where >= 2 reference speakers talk

    void validate() const;  // collar >= 0
};

// Components in seconds of scored time plus their ratio to the scored
// reference speech.
struct DerResult {
    double der = 0.0;
    double missed = 0.0;
    double falarm = 0.0;
    double confusion = 0.0;
    double scored_speech = 0.0;
};

// Interval-sweep scoring with exclusion zones of +-collar around every
// reference segment edge. Reference/hypothesis speakers are matched by the
// one-to-one mapping maximizing jointly-attributed time (exhaustive bitmask
// assignment up to 10 speakers, Hungarian assignment beyond). The session
// field of the reference segments is ignored; pass one session at a time.
// Errors: empty reference, or nothing left to score after exclusion.
DerResult compute_der(const std::vector<RttmSegment>& reference,
                      const DiarizationHypothesis& hypothesis, const DerConfig& cfg = {});

}  // namespace titanet
