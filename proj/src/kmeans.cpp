#include "titanet/kmeans.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace titanet {

namespace {

double sq_dist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

struct Run {
    std::vector<int> labels;
    double inertia;
};

Run run_once(const Tensor& points, int k, Rng& rng, int max_iters) {
    const int n = points.dim(0), d = points.dim(1);
    const double* pts = points.data.data();

    // k-means++ seeding.
    std::vector<std::vector<double>> centers;
    centers.reserve(static_cast<size_t>(k));
    {
        const int first = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
        centers.emplace_back(pts + static_cast<size_t>(first) * d, pts + static_cast<size_t>(first + 1) * d);
        std::vector<double> d2(static_cast<size_t>(n));
        while (static_cast<int>(centers.size()) < k) {
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& c : centers) best = std::min(best, sq_dist(pts + static_cast<size_t>(i) * d, c.data(), d));
                d2[static_cast<size_t>(i)] = best;
                total += best;
            }
            int chosen;
            if (total == 0.0) {
                chosen = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
            } else {
                const double target = rng.uniform() * total;
                double acc = 0.0;
                chosen = n - 1;
                for (int i = 0; i < n; ++i) {
                    acc += d2[static_cast<size_t>(i)];
                    if (acc >= target) {
                        chosen = i;
                        break;
                    }
                }
            }
            centers.emplace_back(pts + static_cast<size_t>(chosen) * d, pts + static_cast<size_t>(chosen + 1) * d);
        }
    }

    std::vector<int> labels(static_cast<size_t>(n), 0);
    std::vector<int> counts(static_cast<size_t>(k));
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = iter == 0;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bestd = sq_dist(pts + static_cast<size_t>(i) * d, centers[0].data(), d);
            for (int c = 1; c < k; ++c) {
                const double dist = sq_dist(pts + static_cast<size_t>(i) * d, centers[static_cast<size_t>(c)].data(), d);
                if (dist < bestd) {
                    bestd = dist;
                    best = c;
                }
            }
            if (labels[static_cast<size_t>(i)] != best) {
                labels[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed) break;

        for (auto& c : centers) std::fill(c.begin(), c.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            auto& c = centers[static_cast<size_t>(labels[static_cast<size_t>(i)])];
            for (int j = 0; j < d; ++j) c[static_cast<size_t>(j)] += pts[static_cast<size_t>(i) * d + j];
            ++counts[static_cast<size_t>(labels[static_cast<size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) {
                for (int j = 0; j < d; ++j) centers[static_cast<size_t>(c)][static_cast<size_t>(j)] /= counts[static_cast<size_t>(c)];
            } else {
                // Reseed to the point farthest from its assigned center.
                int far = 0;
                double fard = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double dist = sq_dist(pts + static_cast<size_t>(i) * d,
                                                centers[static_cast<size_t>(labels[static_cast<size_t>(i)])].data(), d);
                    if (dist > fard) {
                        fard = dist;
                        far = i;
                    }
                }
                for (int j = 0; j < d; ++j) centers[static_cast<size_t>(c)][static_cast<size_t>(j)] = pts[static_cast<size_t>(far) * d + j];
                labels[static_cast<size_t>(far)] = c;
            }
        }
    }

    double inertia = 0.0;
    for (int i = 0; i < n; ++i)
        inertia += sq_dist(pts + static_cast<size_t>(i) * d, centers[static_cast<size_t>(labels[static_cast<size_t>(i)])].data(), d);
    return {std::move(labels), inertia};
}

}  // namespace

KmeansResult kmeans(const Tensor& points, int k, Rng& rng, int restarts, int max_iters) {
    if (points.rank() != 2)
        throw std::invalid_argument("kmeans: expected [n, d] points, got shape " + points.shape_str());
    const int n = points.dim(0);
    if (k < 1 || k > n)
        throw std::invalid_argument("kmeans: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    if (restarts < 1) throw std::invalid_argument("kmeans: restarts must be positive");

    KmeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        Run run = run_once(points, k, rng, max_iters);
        if (run.inertia < best.inertia) {
            best.inertia = run.inertia;
            best.labels = std::move(run.labels);
        }
    }
    return best;
}

}  // namespace titanet
