#pragma once

// Speaker-verification scoring: cosine trial scoring against an embedding
// store, detection-error sweep (DET points), equal error rate, and minimum
// normalized detection cost.

#include <string>
#include <utility>
#include <vector>

#include "titanet/io.hpp"
#include "titanet/tensor.hpp"

namespace titanet {

// ===== trial scoring =====

// Parallel arrays: one cosine score per trial plus its ground-truth label
// (1 = same speaker, 0 = impostor).
struct ScoredTrials {
    std::vector<double> scores;
    std::vector<char> targets;

    // Equal lengths, at least one trial of each class, finite scores.
    void validate() const;
};

// Dot product of two equal-length vectors. Inputs are expected to be
// unit-normalized embeddings, so the result lies in [-1, 1]; zero vectors
// are rejected.
double cosine_score(const Tensor& a, const Tensor& b);

// Resolves both utterance ids of every trial against the embedding store and
// scores them. Unknown or duplicate ids are errors.
ScoredTrials score_trials(const std::vector<Trial>& trials,
                          const std::vector<std::pair<std::string, Tensor>>& embeddings);

// ===== detection metrics =====

// One operating point per sweep threshold. Thresholds sit at the midpoints
// between adjacent distinct scores, plus -inf/+inf sentinels, so tied scores
// always move together. A trial is accepted when score > threshold; the
// sweep therefore starts at (p_fa=1, p_miss=0) and ends at (0, 1).
struct DetPoint {
    double threshold = 0.0;
    double p_fa = 0.0;
    double p_miss = 0.0;
};

std::vector<DetPoint> det_points(const ScoredTrials& st);

// CSV with header `p_fa,p_miss`, one row per sweep point in threshold order.
void write_det_csv(const std::string& path, const std::vector<DetPoint>& points);

// Equal error rate: the crossing of p_fa(t) and p_miss(t), linearly
// interpolated between the bracketing sweep points where the sign of
// (p_fa - p_miss) flips. For the reported threshold the +-inf sentinels are
// replaced by the extreme scores before interpolating (the rate value is
// unaffected).
struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

EerResult compute_eer(const ScoredTrials& st);

// Detection-cost weighting. Defaults: rare-target operating point with
// symmetric costs.
struct DcfConfig {
    double p_target = 0.01;
    double c_fa = 1.0;
    double c_miss = 1.0;

    void validate() const;  // 0 < p_target < 1, positive costs
};

// min over the sweep of
//   (c_miss * p_target * p_miss + c_fa * (1 - p_target) * p_fa)
//     / min(c_miss * p_target, c_fa * (1 - p_target)).
// The normalizer is the cost of the better blind policy (accept-all or
// reject-all), so the minimum is always in [0, 1]. Ties keep the lowest
// threshold.
struct DcfResult {
    double min_dcf = 0.0;
    double threshold = 0.0;
};

DcfResult compute_min_dcf(const ScoredTrials& st, const DcfConfig& cfg = {});

}  // namespace titanet
