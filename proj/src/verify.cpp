#include "titanet/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace titanet {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

// ===== trial scoring =====

void ScoredTrials::validate() const {
    if (scores.size() != targets.size()) {
        fail("scored trials: " + std::to_string(scores.size()) + " scores vs " +
             std::to_string(targets.size()) + " targets");
    }
    if (scores.empty()) fail("scored trials: empty");
    size_t n_target = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            fail("scored trials: non-finite score at trial " + std::to_string(i));
        }
        if (targets[i]) ++n_target;
    }
    if (n_target == 0) fail("scored trials: no target trials");
    if (n_target == scores.size()) fail("scored trials: no nontarget trials");
}

double cosine_score(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || !a.same_shape(b)) {
        fail("cosine_score: need two vectors of the same length, got " + a.shape_str() +
             " and " + b.shape_str());
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        dot += a.data[static_cast<size_t>(i)] * b.data[static_cast<size_t>(i)];
        na += a.data[static_cast<size_t>(i)] * a.data[static_cast<size_t>(i)];
        nb += b.data[static_cast<size_t>(i)] * b.data[static_cast<size_t>(i)];
    }
    if (na == 0.0 || nb == 0.0) fail("cosine_score: zero vector");
    return dot;
}

ScoredTrials score_trials(const std::vector<Trial>& trials,
                          const std::vector<std::pair<std::string, Tensor>>& embeddings) {
    std::unordered_map<std::string, const Tensor*> by_id;
    by_id.reserve(embeddings.size());
    for (const auto& [id, emb] : embeddings) {
        if (!by_id.emplace(id, &emb).second) fail("embedding store: duplicate id '" + id + "'");
    }

    const int n = static_cast<int>(trials.size());
    std::vector<const Tensor*> enroll(trials.size());
    std::vector<const Tensor*> test(trials.size());
    for (int i = 0; i < n; ++i) {
        auto resolve = [&](const std::string& id) -> const Tensor* {
            auto it = by_id.find(id);
            if (it == by_id.end()) {
                fail("trial " + std::to_string(i) + ": unknown utterance id '" + id + "'");
            }
            return it->second;
        };
        enroll[static_cast<size_t>(i)] = resolve(trials[static_cast<size_t>(i)].enroll_id);
        test[static_cast<size_t>(i)] = resolve(trials[static_cast<size_t>(i)].test_id);
    }

    ScoredTrials st;
    st.scores.resize(trials.size());
    st.targets.resize(trials.size());
    // cosine_score throws only on shape/zero-vector problems; surface those
    // serially on the first trial pair before entering the parallel loop.
    if (n > 0) (void)cosine_score(*enroll[0], *test[0]);
#pragma omp parallel for schedule(static) if (n > 4096)
    for (int i = 0; i < n; ++i) {
        st.scores[static_cast<size_t>(i)] =
            cosine_score(*enroll[static_cast<size_t>(i)], *test[static_cast<size_t>(i)]);
        st.targets[static_cast<size_t>(i)] = trials[static_cast<size_t>(i)].target ? 1 : 0;
    }
    return st;
}

// ===== detection metrics =====

std::vector<DetPoint> det_points(const ScoredTrials& st) {
    st.validate();

    std::vector<double> tar;
    std::vector<double> non;
    for (size_t i = 0; i < st.scores.size(); ++i) {
        (st.targets[i] ? tar : non).push_back(st.scores[i]);
    }
    std::sort(tar.begin(), tar.end());
    std::sort(non.begin(), non.end());

    std::vector<double> uniq = st.scores;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    std::vector<double> thresholds;
    thresholds.reserve(uniq.size() + 1);
    thresholds.push_back(-kInf);
    for (size_t i = 0; i + 1 < uniq.size(); ++i) {
        thresholds.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    }
    thresholds.push_back(kInf);

    const double n_tar = static_cast<double>(tar.size());
    const double n_non = static_cast<double>(non.size());
    std::vector<DetPoint> points;
    points.reserve(thresholds.size());
    for (double t : thresholds) {
        // Accepted iff score > t: misses are targets <= t, false accepts are
        // nontargets > t. upper_bound applies the rule exactly even if a
        // midpoint rounds onto one of its neighboring scores.
        const auto missed = std::upper_bound(tar.begin(), tar.end(), t) - tar.begin();
        const auto accepted = non.end() - std::upper_bound(non.begin(), non.end(), t);
        points.push_back({t, static_cast<double>(accepted) / n_non,
                          static_cast<double>(missed) / n_tar});
    }
    return points;
}

void write_det_csv(const std::string& path, const std::vector<DetPoint>& points) {
    std::string out = "p_fa,p_miss\n";
    char buf[80];
    for (const DetPoint& p : points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.p_fa, p.p_miss);
        out += buf;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("det csv: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("det csv: write failed for " + path);
}

EerResult compute_eer(const ScoredTrials& st) {
    const std::vector<DetPoint> points = det_points(st);

    // Stand-ins for the infinite sentinel thresholds when interpolating the
    // reported threshold: the extreme scores bound every useful cut.
    const auto [lo_it, hi_it] = std::minmax_element(st.scores.begin(), st.scores.end());
    auto finite_threshold = [&](const DetPoint& p) {
        if (p.threshold == -kInf) return *lo_it;
        if (p.threshold == kInf) return *hi_it;
        return p.threshold;
    };

    // p_fa - p_miss walks from +1 at -inf to -1 at +inf; find the flip.
    for (size_t k = 0; k < points.size(); ++k) {
        const double d = points[k].p_fa - points[k].p_miss;
        if (d == 0.0) return {points[k].p_fa, finite_threshold(points[k])};
        if (d < 0.0) {
            const DetPoint& a = points[k - 1];  // k >= 1: the -inf point has d = +1
            const DetPoint& b = points[k];
            const double da = a.p_fa - a.p_miss;
            const double lam = da / (da - d);
            const double eer = a.p_fa + lam * (b.p_fa - a.p_fa);
            const double ta = finite_threshold(a);
            const double tb = finite_threshold(b);
            return {eer, ta + lam * (tb - ta)};
        }
    }
    fail("compute_eer: no sign flip in sweep");  // unreachable: d(+inf) = -1
}

void DcfConfig::validate() const {
    if (!(p_target > 0.0) || !(p_target < 1.0)) {
        fail("dcf config: p_target must be in (0, 1), got " + std::to_string(p_target));
    }
    if (!(c_fa > 0.0) || !(c_miss > 0.0)) fail("dcf config: costs must be positive");
}

DcfResult compute_min_dcf(const ScoredTrials& st, const DcfConfig& cfg) {
    cfg.validate();
    const std::vector<DetPoint> points = det_points(st);

    const double w_miss = cfg.c_miss * cfg.p_target;
    const double w_fa = cfg.c_fa * (1.0 - cfg.p_target);
    const double norm = std::min(w_miss, w_fa);

    DcfResult best{kInf, 0.0};
    for (const DetPoint& p : points) {
        const double dcf = (w_miss * p.p_miss + w_fa * p.p_fa) / norm;
        if (dcf < best.min_dcf) best = {dcf, p.threshold};
    }
    return best;
}

}  // namespace titanet
