#include "titanet/eig.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace titanet {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kOffTol = 1e-12;

double off_diagonal_norm(const std::vector<double>& a, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) s += a[static_cast<size_t>(i) * n + j] * a[static_cast<size_t>(i) * n + j];
    return std::sqrt(s);
}

double frobenius_norm(const std::vector<double>& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

// Round-robin (circle method) pairing: `m` players, m-1 rounds, every pair
// met exactly once. With odd n one slot is a bye.
std::vector<std::vector<std::pair<int, int>>> round_robin_pairs(int n) {
    const int m = n % 2 == 0 ? n : n + 1;
    std::vector<int> arr(static_cast<size_t>(m));
    std::iota(arr.begin(), arr.end(), 0);
    std::vector<std::vector<std::pair<int, int>>> rounds;
    for (int r = 0; r < m - 1; ++r) {
        std::vector<std::pair<int, int>> pairs;
        for (int i = 0; i < m / 2; ++i) {
            int p = arr[static_cast<size_t>(i)];
            int q = arr[static_cast<size_t>(m - 1 - i)];
            if (p >= n || q >= n) continue;  // bye slot
            if (p > q) std::swap(p, q);
            pairs.emplace_back(p, q);
        }
        rounds.push_back(std::move(pairs));
        // Rotate all but the first slot.
        int last = arr[static_cast<size_t>(m - 1)];
        for (int i = m - 1; i > 1; --i) arr[static_cast<size_t>(i)] = arr[static_cast<size_t>(i - 1)];
        arr[1] = last;
    }
    return rounds;
}

struct Rotation {
    int p, q;
    double c, s;
};

template <bool Parallel>
SymEig jacobi(const Tensor& input) {
    if (input.rank() != 2 || input.dim(0) != input.dim(1))
        throw std::invalid_argument("sym_eig: expected square matrix, got shape " + input.shape_str());
    const int n = input.dim(0);
    double amax = 0.0;
    for (double v : input.data) amax = std::max(amax, std::abs(v));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(input.at(i, j) - input.at(j, i)) > 1e-12 * (1.0 + amax))
                throw std::invalid_argument("sym_eig: matrix is not symmetric at (" + std::to_string(i) + "," +
                                            std::to_string(j) + ")");

    SymEig out;
    out.eigenvalues = Tensor::zeros({n});
    out.eigenvectors = Tensor::zeros({n, n});
    if (n == 1) {
        out.eigenvalues.data[0] = input.data[0];
        out.eigenvectors.data[0] = 1.0;
        return out;
    }

    // Work on an exactly symmetrized copy so round-off asymmetry cannot leak in.
    std::vector<double> a(input.data.begin(), input.data.end());
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double v = 0.5 * (a[static_cast<size_t>(i) * n + j] + a[static_cast<size_t>(j) * n + i]);
            a[static_cast<size_t>(i) * n + j] = v;
            a[static_cast<size_t>(j) * n + i] = v;
        }
    std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

    const double fro = frobenius_norm(a);
    const auto rounds = round_robin_pairs(n);
    std::vector<double> b(a.size());
    bool converged = fro == 0.0;

    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        for (const auto& round : rounds) {
            // Angles from the pre-round matrix; all pairs are disjoint, so no
            // rotation in this round disturbs another's pivot entries.
            std::vector<Rotation> rots(round.size());
            const int nr = static_cast<int>(round.size());
#pragma omp parallel for schedule(static) if (Parallel && nr > 1)
            for (int idx = 0; idx < nr; ++idx) {
                const auto [p, q] = round[static_cast<size_t>(idx)];
                const double apq = a[static_cast<size_t>(p) * n + q];
                double c = 1.0, s = 0.0;
                if (apq != 0.0) {
                    const double tau =
                        (a[static_cast<size_t>(q) * n + q] - a[static_cast<size_t>(p) * n + p]) / (2.0 * apq);
                    const double sign = tau >= 0.0 ? 1.0 : -1.0;
                    const double t = sign / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                    c = 1.0 / std::sqrt(1.0 + t * t);
                    s = t * c;
                }
                rots[static_cast<size_t>(idx)] = Rotation{p, q, c, s};
            }
            // Phase 1: row combines, B = J^T A. Each rotation owns rows p and q.
            b = a;
#pragma omp parallel for schedule(static) if (Parallel && nr > 1)
            for (int idx = 0; idx < nr; ++idx) {
                const auto& r = rots[static_cast<size_t>(idx)];
                for (int j = 0; j < n; ++j) {
                    const double ap = a[static_cast<size_t>(r.p) * n + j];
                    const double aq = a[static_cast<size_t>(r.q) * n + j];
                    b[static_cast<size_t>(r.p) * n + j] = r.c * ap - r.s * aq;
                    b[static_cast<size_t>(r.q) * n + j] = r.s * ap + r.c * aq;
                }
            }
            // Phase 2: column combines, A' = B J, and eigenvector accumulation
            // V <- V J. Each rotation owns columns p and q.
            a = b;
#pragma omp parallel for schedule(static) if (Parallel && nr > 1)
            for (int idx = 0; idx < nr; ++idx) {
                const auto& r = rots[static_cast<size_t>(idx)];
                for (int i = 0; i < n; ++i) {
                    const double bp = b[static_cast<size_t>(i) * n + r.p];
                    const double bq = b[static_cast<size_t>(i) * n + r.q];
                    a[static_cast<size_t>(i) * n + r.p] = r.c * bp - r.s * bq;
                    a[static_cast<size_t>(i) * n + r.q] = r.s * bp + r.c * bq;
                    const double vp = v[static_cast<size_t>(i) * n + r.p];
                    const double vq = v[static_cast<size_t>(i) * n + r.q];
                    v[static_cast<size_t>(i) * n + r.p] = r.c * vp - r.s * vq;
                    v[static_cast<size_t>(i) * n + r.q] = r.s * vp + r.c * vq;
                }
            }
        }
        if (off_diagonal_norm(a, n) <= kOffTol * fro) converged = true;
    }
    if (!converged)
        throw std::runtime_error("sym_eig: Jacobi iteration did not converge in " +
                                 std::to_string(kMaxSweeps) + " sweeps");

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return a[static_cast<size_t>(x) * n + x] < a[static_cast<size_t>(y) * n + y];
    });
    for (int j = 0; j < n; ++j) {
        const int src = order[static_cast<size_t>(j)];
        out.eigenvalues.data[j] = a[static_cast<size_t>(src) * n + src];
        for (int i = 0; i < n; ++i) out.eigenvectors.at(i, j) = v[static_cast<size_t>(i) * n + src];
    }
    return out;
}

}  // namespace

SymEig sym_eig(const Tensor& a) { return jacobi<true>(a); }

namespace ref {
SymEig sym_eig(const Tensor& a) { return jacobi<false>(a); }
}  // namespace ref

}  // namespace titanet
