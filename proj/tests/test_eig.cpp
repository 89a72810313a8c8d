#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "testutil.hpp"
#include "titanet/eig.hpp"
#include "titanet/rng.hpp"

using namespace titanet;

namespace {

Tensor random_symmetric(int n, Rng& rng, double scale = 1.0) {
    Tensor a({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const double v = rng.uniform(-scale, scale);
            a.at(i, j) = v;
            a.at(j, i) = v;
        }
    return a;
}

double fro(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("reconstruction, orthogonality, residuals, and ordering on random matrices") {
    Rng rng(21);
    for (int n : {1, 2, 3, 5, 8, 13, 24, 40}) {
        Tensor a = random_symmetric(n, rng);
        SymEig e = sym_eig(a);
        const double scale = std::max(fro(a), 1.0);

        for (int j = 0; j + 1 < n; ++j) CHECK(e.eigenvalues.data[j] <= e.eigenvalues.data[j + 1]);

        // V^T V = I
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double dot = 0.0;
                for (int r = 0; r < n; ++r) dot += e.eigenvectors.at(r, i) * e.eigenvectors.at(r, j);
                CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-10);
            }

        // A v_j = lambda_j v_j
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                double av = 0.0;
                for (int r = 0; r < n; ++r) av += a.at(i, r) * e.eigenvectors.at(r, j);
                CHECK(std::abs(av - e.eigenvalues.data[j] * e.eigenvectors.at(i, j)) < 1e-9 * scale);
            }
        }

        // A = V diag(lambda) V^T
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double rec = 0.0;
                for (int r = 0; r < n; ++r)
                    rec += e.eigenvectors.at(i, r) * e.eigenvalues.data[r] * e.eigenvectors.at(j, r);
                CHECK(std::abs(rec - a.at(i, j)) < 1e-9 * scale);
            }
    }
}

TEST_CASE("analytic two-by-two spectrum") {
    Tensor a({2, 2});
    a.data = {2.0, 1.0, 1.0, 2.0};
    SymEig e = sym_eig(a);
    CHECK(e.eigenvalues.data[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.eigenvalues.data[1] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("diagonal matrices return sorted diagonal") {
    Tensor a = Tensor::zeros({4, 4});
    a.at(0, 0) = 3.0;
    a.at(1, 1) = -1.0;
    a.at(2, 2) = 7.0;
    a.at(3, 3) = 0.5;
    SymEig e = sym_eig(a);
    CHECK(e.eigenvalues.data[0] == doctest::Approx(-1.0));
    CHECK(e.eigenvalues.data[1] == doctest::Approx(0.5));
    CHECK(e.eigenvalues.data[2] == doctest::Approx(3.0));
    CHECK(e.eigenvalues.data[3] == doctest::Approx(7.0));
}

TEST_CASE("rank-one all-ones matrix has a single nonzero eigenvalue n") {
    const int n = 6;
    Tensor a = Tensor::full({n, n}, 1.0);
    SymEig e = sym_eig(a);
    for (int j = 0; j < n - 1; ++j) CHECK(std::abs(e.eigenvalues.data[j]) < 1e-10);
    CHECK(e.eigenvalues.data[n - 1] == doctest::Approx(static_cast<double>(n)).epsilon(1e-12));
}

TEST_CASE("block-diagonal graph Laplacian has one zero eigenvalue per component") {
    // Two components: a triangle {0,1,2} and an edge {3,4}.
    Tensor w = Tensor::zeros({5, 5});
    auto link = [&](int i, int j) { w.at(i, j) = w.at(j, i) = 1.0; };
    link(0, 1);
    link(1, 2);
    link(0, 2);
    link(3, 4);
    Tensor lap = Tensor::zeros({5, 5});
    for (int i = 0; i < 5; ++i) {
        double deg = 0.0;
        for (int j = 0; j < 5; ++j) deg += w.at(i, j);
        lap.at(i, i) = deg;
        for (int j = 0; j < 5; ++j) lap.at(i, j) -= w.at(i, j);
    }
    SymEig e = sym_eig(lap);
    CHECK(std::abs(e.eigenvalues.data[0]) < 1e-10);
    CHECK(std::abs(e.eigenvalues.data[1]) < 1e-10);
    CHECK(e.eigenvalues.data[2] > 0.5);
}

TEST_CASE("parallel and serial reference eigensolvers agree bit-for-bit") {
    Rng rng(22);
    for (int n : {2, 7, 16, 33}) {
        Tensor a = random_symmetric(n, rng, 3.0);
        SymEig ep = sym_eig(a);
        SymEig es = ref::sym_eig(a);
        for (int i = 0; i < n; ++i) CHECK(ep.eigenvalues.data[i] == es.eigenvalues.data[i]);
        for (int64_t i = 0; i < ep.eigenvectors.numel(); ++i)
            CHECK(ep.eigenvectors.data[i] == es.eigenvectors.data[i]);
    }
}

TEST_CASE("invalid inputs are rejected") {
    CHECK_THROWS_AS(sym_eig(Tensor::zeros({2, 3})), std::invalid_argument);
    Tensor asym = Tensor::zeros({2, 2});
    asym.at(0, 1) = 1.0;
    asym.at(1, 0) = -1.0;
    CHECK_THROWS_AS(sym_eig(asym), std::invalid_argument);
}
