#include "titanet/diarize.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "titanet/eig.hpp"
#include "titanet/kmeans.hpp"
#include "titanet/rng.hpp"

namespace titanet {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

constexpr double kInf = std::numeric_limits<double>::infinity();

// Sort by start and merge overlapping or near-touching (1e-9 s) spans.
std::vector<TimeSpan> merge_spans(std::vector<TimeSpan> spans) {
    std::sort(spans.begin(), spans.end(),
              [](const TimeSpan& a, const TimeSpan& b) { return a.start < b.start; });
    std::vector<TimeSpan> merged;
    for (const TimeSpan& s : spans) {
        if (!merged.empty() && s.start <= merged.back().end + 1e-9) {
            merged.back().end = std::max(merged.back().end, s.end);
        } else {
            merged.push_back(s);
        }
    }
    return merged;
}

}  // namespace

// ===== windowed embeddings =====

double domain_window(DiarizationDomain d) {
    return d == DiarizationDomain::telephonic ? 1.5 : 3.0;
}

double domain_shift(DiarizationDomain d) {
    return d == DiarizationDomain::telephonic ? 0.75 : 1.75;
}

WindowEmbeddings embed_windows(SpeakerModel& model, const AudioSignal& audio,
                               const std::vector<TimeSpan>& speech_regions,
                               DiarizationDomain domain) {
    if (speech_regions.empty()) fail("embed_windows: no speech regions");

    const MelSpectrogram mel = compute_mel_spectrogram(audio);
    const WindowPlan plan =
        plan_windows(speech_regions, domain_window(domain), domain_shift(domain));

    const int n_mels = mel.values.dim(1);
    WindowEmbeddings out;
    for (const TimeSpan& span : plan.spans) {
        // Frames whose centers fall in [start, end).
        const auto first =
            std::lower_bound(mel.frame_times.begin(), mel.frame_times.end(), span.start);
        const auto last =
            std::lower_bound(mel.frame_times.begin(), mel.frame_times.end(), span.end);
        const int i0 = static_cast<int>(first - mel.frame_times.begin());
        const int i1 = static_cast<int>(last - mel.frame_times.begin());
        if (i0 >= i1) continue;  // window past the final frame center

        MelSpectrogram slice;
        slice.values = Tensor({i1 - i0, n_mels});
        std::copy(mel.values.data.begin() + static_cast<size_t>(i0) * n_mels,
                  mel.values.data.begin() + static_cast<size_t>(i1) * n_mels,
                  slice.values.data.begin());
        slice.frame_times.assign(mel.frame_times.begin() + i0, mel.frame_times.begin() + i1);

        out.embeddings.push_back(extract_embedding(model, slice));
        out.spans.push_back(span);
    }
    if (out.embeddings.empty()) fail("embed_windows: no window contains any frames");
    return out;
}

// ===== affinity =====

Tensor cosine_affinity(const std::vector<Tensor>& embeddings) {
    const int n = static_cast<int>(embeddings.size());
    if (n < 1) fail("cosine_affinity: need at least one embedding");
    for (const Tensor& e : embeddings) {
        if (e.rank() != 1 || !e.same_shape(embeddings[0])) {
            fail("cosine_affinity: embeddings must be equal-length vectors");
        }
    }
    const int64_t d = embeddings[0].numel();
    Tensor a({n, n});
    for (int i = 0; i < n; ++i) {
        a.at(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (int64_t k = 0; k < d; ++k) {
                dot += embeddings[static_cast<size_t>(i)].data[static_cast<size_t>(k)] *
                       embeddings[static_cast<size_t>(j)].data[static_cast<size_t>(k)];
            }
            dot = std::clamp(dot, -1.0, 1.0);
            a.at(i, j) = dot;
            a.at(j, i) = dot;
        }
    }
    return a;
}

// ===== spectral clustering =====

namespace {

void require_square_symmetric(const Tensor& a, const char* what) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1) || a.dim(0) < 1) {
        fail(std::string(what) + ": need a square matrix, got " + a.shape_str());
    }
    const int n = a.dim(0);
    double scale = 1.0;
    for (double v : a.data) scale = std::max(scale, std::abs(v));
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (std::abs(a.at(i, j) - a.at(j, i)) > 1e-9 * scale) {
                fail(std::string(what) + ": matrix is not symmetric at (" + std::to_string(i) +
                     ", " + std::to_string(j) + ")");
            }
        }
    }
}

}  // namespace

Tensor binarized_laplacian(const Tensor& affinity, int p) {
    require_square_symmetric(affinity, "binarized_laplacian");
    const int n = affinity.dim(0);
    if (p < 1 || p > n) {
        fail("binarized_laplacian: p must be in [1, " + std::to_string(n) + "], got " +
             std::to_string(p));
    }

    // Row-wise top-p mask: keep every entry >= the row's p-th largest value,
    // so ties survive together and the result needs no tie-breaking order.
    // The diagonal is the row maximum for an affinity matrix and is always
    // kept. Tie-free rows keep exactly p entries.
    Tensor b({n, n});
    std::vector<double> row(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) row[static_cast<size_t>(j)] = affinity.at(i, j);
        std::nth_element(row.begin(), row.begin() + (p - 1), row.end(), std::greater<>());
        const double cutoff = row[static_cast<size_t>(p - 1)];
        for (int j = 0; j < n; ++j) {
            if (affinity.at(i, j) >= cutoff) b.at(i, j) = 1.0;
        }
    }

    // Symmetrize by averaging, then L = D - A_hat. Self-loops cancel: they
    // enter the degree and the subtracted entry equally.
    Tensor lap({n, n});
    for (int i = 0; i < n; ++i) {
        double degree = 0.0;
        for (int j = 0; j < n; ++j) {
            const double ahat = 0.5 * (b.at(i, j) + b.at(j, i));
            lap.at(i, j) = -ahat;
            degree += ahat;
        }
        lap.at(i, i) += degree;
    }
    return lap;
}

ClusterResult nme_sc_cluster(const Tensor& affinity, int max_speakers,
                             std::optional<int> known_k, uint64_t seed) {
    require_square_symmetric(affinity, "nme_sc_cluster");
    const int n = affinity.dim(0);
    if (max_speakers < 1) fail("nme_sc_cluster: max_speakers must be >= 1");
    if (known_k && (*known_k < 1 || *known_k > n)) {
        fail("nme_sc_cluster: known_k must be in [1, " + std::to_string(n) + "], got " +
             std::to_string(*known_k));
    }

    ClusterResult result;
    if (n == 1) {
        result.labels = {0};
        result.estimated_k = 1;
        result.chosen_p = 0;
        return result;
    }

    max_speakers = std::min(max_speakers, n - 1);
    const int p_max = std::min(n - 1, 30);

    SymEig best_eig;
    int best_idx = -1;
    for (int p = 1; p <= p_max; ++p) {
        SymEig eig = sym_eig(binarized_laplacian(affinity, p));

        double best_gap = -kInf;
        int gap_arg = 1;
        for (int i = 1; i <= max_speakers; ++i) {
            const double gap = eig.eigenvalues.at(i) - eig.eigenvalues.at(i - 1);
            if (gap > best_gap) {
                best_gap = gap;
                gap_arg = i;
            }
        }

        const double lambda_max = eig.eigenvalues.at(n - 1);
        NmeTraceEntry entry;
        entry.p = p;
        entry.eigengap_k = gap_arg;
        if (lambda_max <= 1e-12) {  // edgeless graph (p = 1): no usable gap
            entry.g_p = 0.0;
            entry.r_p = kInf;
        } else {
            entry.g_p = best_gap / lambda_max;
            entry.r_p = entry.g_p > 0.0 ? static_cast<double>(p) / (n * entry.g_p) : kInf;
        }
        result.nme_trace.push_back(entry);

        if (best_idx < 0 || entry.r_p < result.nme_trace[static_cast<size_t>(best_idx)].r_p) {
            best_idx = p - 1;
            best_eig = std::move(eig);
        }
    }

    const NmeTraceEntry& chosen = result.nme_trace[static_cast<size_t>(best_idx)];
    result.chosen_p = chosen.p;
    result.estimated_k = known_k ? *known_k : chosen.eigengap_k;

    const int k = result.estimated_k;
    if (k == 1) {
        result.labels.assign(static_cast<size_t>(n), 0);
        return result;
    }

    // Rows of the n x k matrix of eigenvectors for the k smallest
    // eigenvalues are the spectral embedding.
    Tensor points({n, k});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) points.at(i, j) = best_eig.eigenvectors.at(i, j);
    }
    Rng rng(hash_combine(seed, 0x5C1A7));
    result.labels = kmeans(points, k, rng).labels;
    return result;
}

// ===== hypothesis =====

DiarizationHypothesis assemble_hypothesis(const std::vector<int>& labels,
                                          const std::vector<TimeSpan>& spans,
                                          const std::vector<TimeSpan>& speech_regions) {
    if (labels.size() != spans.size()) {
        fail("assemble_hypothesis: " + std::to_string(labels.size()) + " labels vs " +
             std::to_string(spans.size()) + " spans");
    }
    DiarizationHypothesis hyp;
    if (labels.empty()) return hyp;

    std::vector<size_t> idx(labels.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        return spans[a].start < spans[b].start;
    });

    std::vector<HypothesisSegment> segs;
    segs.reserve(labels.size());
    for (size_t i : idx) segs.push_back({spans[i].start, spans[i].end, labels[i]});

    // Resolve overlaps of consecutive windows: label changes cut at the
    // overlap midpoint; same-label overlaps are merged below.
    for (size_t i = 0; i + 1 < segs.size(); ++i) {
        if (segs[i].end > segs[i + 1].start && segs[i].speaker != segs[i + 1].speaker) {
            const double mid = 0.5 * (segs[i + 1].start + segs[i].end);
            segs[i].end = mid;
            segs[i + 1].start = mid;
        }
    }

    std::vector<HypothesisSegment> merged;
    for (const HypothesisSegment& s : segs) {
        if (s.end <= s.start) continue;  // emptied by midpoint cuts
        if (!merged.empty() && merged.back().speaker == s.speaker &&
            s.start <= merged.back().end + 1e-9) {
            merged.back().end = std::max(merged.back().end, s.end);
        } else {
            merged.push_back(s);
        }
    }

    const std::vector<TimeSpan> regions = merge_spans(speech_regions);
    for (const HypothesisSegment& s : merged) {
        for (const TimeSpan& r : regions) {
            const double lo = std::max(s.start, r.start);
            const double hi = std::min(s.end, r.end);
            if (hi > lo) hyp.segments.push_back({lo, hi, s.speaker});
        }
    }
    return hyp;
}

std::vector<TimeSpan> speech_regions_from_segments(const std::vector<RttmSegment>& segments) {
    std::vector<TimeSpan> spans;
    spans.reserve(segments.size());
    for (const RttmSegment& s : segments) spans.push_back({s.onset, s.onset + s.duration});
    return merge_spans(std::move(spans));
}

std::vector<RttmSegment> hypothesis_to_rttm(const DiarizationHypothesis& hyp,
                                            const std::string& session) {
    std::vector<RttmSegment> out;
    out.reserve(hyp.segments.size());
    for (const HypothesisSegment& s : hyp.segments) {
        out.push_back({session, s.start, s.end - s.start, "spk" + std::to_string(s.speaker)});
    }
    return out;
}

DiarizationHypothesis hypothesis_from_rttm(const std::vector<RttmSegment>& segments) {
    DiarizationHypothesis hyp;
    std::map<std::string, int> ids;
    for (const RttmSegment& s : segments) {
        const auto it = ids.emplace(s.speaker, static_cast<int>(ids.size())).first;
        hyp.segments.push_back({s.onset, s.onset + s.duration, it->second});
    }
    return hyp;
}

DiarizationHypothesis diarize_audio(SpeakerModel& model, const AudioSignal& audio,
                                    const std::vector<TimeSpan>& speech_regions,
                                    DiarizationDomain domain, int max_speakers,
                                    std::optional<int> known_k, uint64_t seed) {
    const WindowEmbeddings we = embed_windows(model, audio, speech_regions, domain);
    const Tensor affinity = cosine_affinity(we.embeddings);
    const ClusterResult clusters = nme_sc_cluster(affinity, max_speakers, known_k, seed);
    return assemble_hypothesis(clusters.labels, we.spans, speech_regions);
}

// ===== DER =====

void DerConfig::validate() const {
    if (!(collar >= 0.0) || !std::isfinite(collar)) {
        fail("der config: collar must be >= 0, got " + std::to_string(collar));
    }
}

namespace {

// Best one-to-one matching value between rows and columns of a nonnegative
// score matrix, exhaustive over column subsets. Columns must be the smaller
// side (<= 20 or so).
double assignment_by_subsets(const Tensor& scores) {
    const int rows = scores.dim(0);
    const int cols = scores.dim(1);
    std::vector<double> dp(size_t{1} << cols, 0.0);
    std::vector<double> next(dp.size());
    for (int i = 0; i < rows; ++i) {
        for (size_t mask = 0; mask < dp.size(); ++mask) {
            double best = dp[mask];  // row i left unmatched
            for (int j = 0; j < cols; ++j) {
                if (mask & (size_t{1} << j)) {
                    best = std::max(best, dp[mask ^ (size_t{1} << j)] + scores.at(i, j));
                }
            }
            next[mask] = best;
        }
        dp.swap(next);
    }
    return dp.back();
}

// Hungarian algorithm (potentials formulation) on a square min-cost matrix.
double hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> match(static_cast<size_t>(n) + 1, 0);  // match[col] = row
    std::vector<int> way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = match[static_cast<size_t>(j0)];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
                                   u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    double total = 0.0;
    for (int j = 1; j <= n; ++j) {
        total += cost[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)]
                     [static_cast<size_t>(j - 1)];
    }
    return total;
}

double max_assignment(const Tensor& scores) {
    const int rows = scores.dim(0);
    const int cols = scores.dim(1);
    if (rows == 0 || cols == 0) return 0.0;
    if (std::min(rows, cols) <= 10) {
        if (cols <= rows) return assignment_by_subsets(scores);
        Tensor t({cols, rows});
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) t.at(j, i) = scores.at(i, j);
        }
        return assignment_by_subsets(t);
    }
    // Pad to square; negate so minimum cost is maximum score. Unassigned
    // padding contributes zero, matching the partial-assignment optimum for
    // nonnegative scores.
    const int n = std::max(rows, cols);
    std::vector<std::vector<double>> cost(static_cast<size_t>(n),
                                          std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) cost[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            -scores.at(i, j);
    }
    return -hungarian_min_cost(cost);
}

struct TimedSegment {
    double start;
    double end;
    int speaker;
};

}  // namespace

DerResult compute_der(const std::vector<RttmSegment>& reference,
                      const DiarizationHypothesis& hypothesis, const DerConfig& cfg) {
    cfg.validate();
    if (reference.empty()) fail("compute_der: empty reference");

    std::map<std::string, int> ref_ids;
    std::vector<TimedSegment> ref;
    ref.reserve(reference.size());
    for (const RttmSegment& s : reference) {
        const auto it = ref_ids.emplace(s.speaker, static_cast<int>(ref_ids.size())).first;
        ref.push_back({s.onset, s.onset + s.duration, it->second});
    }
    std::map<int, int> hyp_ids;
    std::vector<TimedSegment> hyp;
    hyp.reserve(hypothesis.segments.size());
    for (const HypothesisSegment& s : hypothesis.segments) {
        const auto it = hyp_ids.emplace(s.speaker, static_cast<int>(hyp_ids.size())).first;
        hyp.push_back({s.start, s.end, it->second});
    }
    const int n_ref = static_cast<int>(ref_ids.size());
    const int n_hyp = static_cast<int>(hyp_ids.size());

    // Collar exclusion zones around every reference segment edge.
    std::vector<TimeSpan> zones;
    if (cfg.collar > 0.0) {
        for (const TimedSegment& s : ref) {
            zones.push_back({s.start - cfg.collar, s.start + cfg.collar});
            zones.push_back({s.end - cfg.collar, s.end + cfg.collar});
        }
        zones = merge_spans(std::move(zones));
    }

    // Elementary intervals between consecutive cut points; speaker activity
    // and zone membership are constant on each.
    std::vector<double> cuts;
    for (const TimedSegment& s : ref) {
        cuts.push_back(s.start);
        cuts.push_back(s.end);
    }
    for (const TimedSegment& s : hyp) {
        cuts.push_back(s.start);
        cuts.push_back(s.end);
    }
    for (const TimeSpan& z : zones) {
        cuts.push_back(z.start);
        cuts.push_back(z.end);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    Tensor joint({std::max(n_ref, 1), std::max(n_hyp, 1)});
    DerResult res;
    double attributable = 0.0;
    std::vector<char> ref_active(static_cast<size_t>(n_ref));
    std::vector<char> hyp_active(static_cast<size_t>(std::max(n_hyp, 1)));
    for (size_t c = 0; c + 1 < cuts.size(); ++c) {
        const double a = cuts[c];
        const double b = cuts[c + 1];
        if (!(b > a)) continue;
        const double mid = a + 0.5 * (b - a);

        if (!zones.empty()) {
            const auto it = std::upper_bound(
                zones.begin(), zones.end(), mid,
                [](double m, const TimeSpan& z) { return m < z.start; });
            if (it != zones.begin() && mid < std::prev(it)->end) continue;
        }

        std::fill(ref_active.begin(), ref_active.end(), 0);
        std::fill(hyp_active.begin(), hyp_active.end(), 0);
        int n_r = 0;
        int n_h = 0;
        for (const TimedSegment& s : ref) {
            if (s.start < mid && mid < s.end && !ref_active[static_cast<size_t>(s.speaker)]) {
                ref_active[static_cast<size_t>(s.speaker)] = 1;
                ++n_r;
            }
        }
        if (cfg.ignore_overlap && n_r >= 2) continue;
        for (const TimedSegment& s : hyp) {
            if (s.start < mid && mid < s.end && !hyp_active[static_cast<size_t>(s.speaker)]) {
                hyp_active[static_cast<size_t>(s.speaker)] = 1;
                ++n_h;
            }
        }

        const double dur = b - a;
        res.scored_speech += n_r * dur;
        res.missed += std::max(0, n_r - n_h) * dur;
        res.falarm += std::max(0, n_h - n_r) * dur;
        attributable += std::min(n_r, n_h) * dur;
        for (int r = 0; r < n_ref; ++r) {
            if (!ref_active[static_cast<size_t>(r)]) continue;
            for (int h = 0; h < n_hyp; ++h) {
                if (hyp_active[static_cast<size_t>(h)]) joint.at(r, h) += dur;
            }
        }
    }

    if (res.scored_speech <= 0.0) {
        fail("compute_der: no scored reference speech after exclusions");
    }
    const double correct = n_hyp == 0 ? 0.0 : max_assignment(joint);
    res.confusion = attributable - correct;
    res.der = (res.missed + res.falarm + res.confusion) / res.scored_speech;
    return res;
}

}  // namespace titanet
