#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "testutil.hpp"
#include "titanet/autograd.hpp"

using namespace titanet;
using testutil::avoid_kink;
using testutil::fill_uniform;
using testutil::gradcheck;
using testutil::random_readout;

namespace {
constexpr double kTol = 1e-4;

Tensor rand_t(std::vector<int> shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    fill_uniform(t, rng, lo, hi);
    return t;
}
}  // namespace

TEST_CASE("depthwise conv gradient") {
    int n = 0;
    for (auto [B, C, T, K] : {std::array<int, 4>{2, 3, 7, 3}, {1, 4, 5, 5}, {3, 2, 9, 7}}) {
        auto r = gradcheck({rand_t({B, C, T}, 100 + n), rand_t({C, K}, 200 + n)},
                           [n](Graph& g, const std::vector<int>& in) {
                               return random_readout(g, g.conv1d_depthwise(in[0], in[1]), 900 + n);
                           });
        CHECK(r.max_rel_err < kTol);
        CHECK(r.grad_norm > 0.1);
        ++n;
    }
}

TEST_CASE("pointwise conv gradient (with and without bias)") {
    int n = 0;
    for (auto [B, Ci, Co, T] : {std::array<int, 4>{2, 3, 4, 6}, {1, 5, 2, 4}, {3, 2, 3, 8}}) {
        auto r = gradcheck({rand_t({B, Ci, T}, 110 + n), rand_t({Co, Ci}, 210 + n), rand_t({Co}, 310 + n)},
                           [n](Graph& g, const std::vector<int>& in) {
                               return random_readout(g, g.conv1d_pointwise(in[0], in[1], in[2]), 910 + n);
                           });
        CHECK(r.max_rel_err < kTol);
        auto r2 = gradcheck({rand_t({B, Ci, T}, 120 + n), rand_t({Co, Ci}, 220 + n)},
                            [n](Graph& g, const std::vector<int>& in) {
                                return random_readout(g, g.conv1d_pointwise(in[0], in[1]), 920 + n);
                            });
        CHECK(r2.max_rel_err < kTol);
        ++n;
    }
}

TEST_CASE("full conv gradient") {
    int n = 0;
    for (auto [B, Ci, Co, T, K] : {std::array<int, 5>{2, 3, 4, 7, 3}, {1, 4, 2, 5, 5}, {2, 2, 3, 9, 7}}) {
        auto r = gradcheck({rand_t({B, Ci, T}, 130 + n), rand_t({Co, Ci, K}, 230 + n)},
                           [n](Graph& g, const std::vector<int>& in) {
                               return random_readout(g, g.conv1d_full(in[0], in[1]), 930 + n);
                           });
        CHECK(r.max_rel_err < kTol);
        CHECK(r.grad_norm > 0.1);
        ++n;
    }
}

TEST_CASE("linear gradient (with and without bias)") {
    int n = 0;
    for (auto [B, In, Out] : {std::array<int, 3>{3, 4, 5}, {1, 6, 2}, {4, 2, 3}}) {
        auto r = gradcheck({rand_t({B, In}, 140 + n), rand_t({Out, In}, 240 + n), rand_t({Out}, 340 + n)},
                           [n](Graph& g, const std::vector<int>& in) {
                               return random_readout(g, g.linear(in[0], in[1], in[2]), 940 + n);
                           });
        CHECK(r.max_rel_err < kTol);
        auto r2 = gradcheck({rand_t({B, In}, 150 + n), rand_t({Out, In}, 250 + n)},
                            [n](Graph& g, const std::vector<int>& in) {
                                return random_readout(g, g.linear(in[0], in[1]), 950 + n);
                            });
        CHECK(r2.max_rel_err < kTol);
        ++n;
    }
}

TEST_CASE("batchnorm gradient in train mode flows through batch statistics") {
    int n = 0;
    for (auto [B, C, T] : {std::array<int, 3>{3, 4, 5}, {2, 3, 7}, {4, 2, 3}}) {
        auto r = gradcheck({rand_t({B, C, T}, 160 + n), rand_t({C}, 260 + n, 0.5, 1.5), rand_t({C}, 360 + n)},
                           [n, C = C](Graph& g, const std::vector<int>& in) {
                               BnState state(C);
                               int y = g.batchnorm(in[0], in[1], in[2], state, Mode::train);
                               return random_readout(g, y, 960 + n);
                           });
        CHECK(r.max_rel_err < kTol);
        CHECK(r.grad_norm > 0.1);
        ++n;
    }
    // Rank-2 activations ([B, C]) take the same path with T = 1.
    auto r = gradcheck({rand_t({5, 3}, 170), rand_t({3}, 270, 0.5, 1.5), rand_t({3}, 370)},
                       [](Graph& g, const std::vector<int>& in) {
                           BnState state(3);
                           return random_readout(g, g.batchnorm(in[0], in[1], in[2], state, Mode::train), 970);
                       });
    CHECK(r.max_rel_err < kTol);
}

TEST_CASE("batchnorm gradient in eval mode uses frozen statistics") {
    BnState state(4);
    Rng rng(55);
    fill_uniform(state.running_mean, rng, -0.5, 0.5);
    fill_uniform(state.running_var, rng, 0.5, 2.0);
    auto r = gradcheck({rand_t({2, 4, 5}, 180), rand_t({4}, 280, 0.5, 1.5), rand_t({4}, 380)},
                       [&state](Graph& g, const std::vector<int>& in) {
                           return random_readout(g, g.batchnorm(in[0], in[1], in[2], state, Mode::eval), 980);
                       });
    CHECK(r.max_rel_err < kTol);
}

TEST_CASE("batchnorm running statistics follow the momentum update with unbiased variance") {
    const int B = 4, C = 2, T = 3;
    Tensor x = rand_t({B, C, T}, 190);
    Tensor gamma = Tensor::full({C}, 1.0), beta = Tensor::zeros({C});
    BnState state(C);
    state.running_mean.data = {0.3, -0.2};
    state.running_var.data = {2.0, 0.5};
    Graph g;
    int xi = g.leaf(x);
    g.batchnorm(xi, g.leaf(gamma), g.leaf(beta), state, Mode::train);
    const int64_t n = static_cast<int64_t>(B) * T;
    for (int c = 0; c < C; ++c) {
        double m = 0.0;
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t) m += x.at(b, c, t);
        m /= static_cast<double>(n);
        double v = 0.0;
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t) v += (x.at(b, c, t) - m) * (x.at(b, c, t) - m);
        v /= static_cast<double>(n);
        const double rm0 = c == 0 ? 0.3 : -0.2;
        const double rv0 = c == 0 ? 2.0 : 0.5;
        CHECK(state.running_mean.data[c] == doctest::Approx(0.9 * rm0 + 0.1 * m).epsilon(1e-12));
        CHECK(state.running_var.data[c] ==
              doctest::Approx(0.9 * rv0 + 0.1 * v * static_cast<double>(n) / static_cast<double>(n - 1))
                  .epsilon(1e-12));
    }
}

TEST_CASE("batchnorm rejects single-sample training batches") {
    BnState state(3);
    Graph g;
    int x = g.leaf(rand_t({1, 3}, 191));
    int gm = g.leaf(Tensor::full({3}, 1.0));
    int bt = g.leaf(Tensor::zeros({3}));
    CHECK_THROWS_AS(g.batchnorm(x, gm, bt, state, Mode::train), std::invalid_argument);
}

TEST_CASE("elementwise activation gradients") {
    int n = 0;
    for (auto shape : {std::vector<int>{2, 3, 5}, {4, 6}, {7}}) {
        Tensor x = rand_t(shape, 400 + n, -2.0, 2.0);
        avoid_kink(x);
        auto relu_r = gradcheck({x}, [n](Graph& g, const std::vector<int>& in) {
            return random_readout(g, g.relu(in[0]), 1000 + n);
        });
        CHECK(relu_r.max_rel_err < kTol);
        auto sig_r = gradcheck({rand_t(shape, 410 + n, -3.0, 3.0)}, [n](Graph& g, const std::vector<int>& in) {
            return random_readout(g, g.sigmoid(in[0]), 1010 + n);
        });
        CHECK(sig_r.max_rel_err < kTol);
        auto tanh_r = gradcheck({rand_t(shape, 420 + n, -2.0, 2.0)}, [n](Graph& g, const std::vector<int>& in) {
            return random_readout(g, g.tanh_(in[0]), 1020 + n);
        });
        CHECK(tanh_r.max_rel_err < kTol);
        ++n;
    }
}

TEST_CASE("dropout gradient respects the sampled mask and scaling") {
    auto r = gradcheck({rand_t({3, 4, 6}, 430)}, [](Graph& g, const std::vector<int>& in) {
        Rng rng(77);
        return random_readout(g, g.dropout(in[0], 0.3, Mode::train, rng), 1030);
    });
    CHECK(r.max_rel_err < kTol);

    // Eval mode is the identity and must not consume randomness.
    Graph g;
    Rng rng(78);
    const uint64_t before = rng.fork(0, 0).uniform_int(1000000);
    Tensor x = rand_t({2, 5}, 431);
    int y = g.dropout(g.leaf(x), 0.5, Mode::eval, rng);
    const uint64_t after = rng.fork(0, 0).uniform_int(1000000);
    CHECK(before == after);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(g.val(y).data[i] == x.data[i]);
}

TEST_CASE("dropout keep mass scales surviving activations by 1/(1-p)") {
    Graph g;
    Rng rng(79);
    Tensor x = Tensor::full({1, 1, 4096}, 1.0);
    int y = g.dropout(g.leaf(x), 0.25, Mode::train, rng);
    int kept = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = g.val(y).data[i];
        if (v != 0.0) {
            CHECK(v == doctest::Approx(1.0 / 0.75).epsilon(1e-12));
            ++kept;
        }
    }
    CHECK(kept > 2800);
    CHECK(kept < 3300);
}

TEST_CASE("binary op gradients") {
    int n = 0;
    for (auto shape : {std::vector<int>{2, 3}, {3, 2, 4}, {5}}) {
        for (int which = 0; which < 3; ++which) {
            auto r = gradcheck({rand_t(shape, 440 + n, -1.5, 1.5), rand_t(shape, 450 + n, -1.5, 1.5)},
                               [n, which](Graph& g, const std::vector<int>& in) {
                                   int y = which == 0   ? g.add(in[0], in[1])
                                           : which == 1 ? g.sub(in[0], in[1])
                                                        : g.mul(in[0], in[1]);
                                   return random_readout(g, y, 1040 + 10 * n + which);
                               });
            CHECK(r.max_rel_err < kTol);
        }
        ++n;
    }
}

TEST_CASE("channel gating and pooling gradients") {
    int n = 0;
    for (auto [B, C, T] : {std::array<int, 3>{2, 3, 5}, {1, 4, 7}, {3, 2, 4}}) {
        auto r = gradcheck({rand_t({B, C, T}, 460 + n), rand_t({B, C}, 470 + n)},
                           [n](Graph& g, const std::vector<int>& in) {
                               return random_readout(g, g.scale_channels(in[0], in[1]), 1060 + n);
                           });
        CHECK(r.max_rel_err < kTol);
        auto r2 = gradcheck({rand_t({B, C, T}, 480 + n)}, [n](Graph& g, const std::vector<int>& in) {
            return random_readout(g, g.global_avg_pool(in[0]), 1070 + n);
        });
        CHECK(r2.max_rel_err < kTol);
        ++n;
    }
}

TEST_CASE("softmax gradients") {
    int n = 0;
    for (auto [B, N] : {std::array<int, 2>{2, 5}, {1, 8}, {4, 3}}) {
        auto r = gradcheck({rand_t({B, N}, 500 + n, -2.0, 2.0)}, [n](Graph& g, const std::vector<int>& in) {
            return random_readout(g, g.softmax_rows(in[0]), 1080 + n);
        });
        CHECK(r.max_rel_err < kTol);
        ++n;
    }
    for (auto [B, C, T] : {std::array<int, 3>{2, 3, 5}, {1, 2, 9}, {3, 4, 4}}) {
        auto r = gradcheck({rand_t({B, C, T}, 510 + n, -2.0, 2.0)}, [n](Graph& g, const std::vector<int>& in) {
            return random_readout(g, g.softmax_time(in[0]), 1090 + n);
        });
        CHECK(r.max_rel_err < kTol);
        auto r2 = gradcheck({rand_t({B, C, T}, 520 + n), rand_t({B, C, T}, 530 + n)},
                            [n](Graph& g, const std::vector<int>& in) {
                                return random_readout(g, g.weighted_sum_time(in[0], in[1]), 1100 + n);
                            });
        CHECK(r2.max_rel_err < kTol);
        ++n;
    }
}

TEST_CASE("clamp, sqrt, concat, row normalization, matmul gradients") {
    int n = 0;
    for (auto [B, D] : {std::array<int, 2>{2, 4}, {3, 3}, {1, 6}}) {
        Tensor x = rand_t({B, D}, 540 + n, -1.0, 1.0);
        avoid_kink(x, 0.2);
        auto r = gradcheck({x}, [n](Graph& g, const std::vector<int>& in) {
            return random_readout(g, g.clamp_min(in[0], 0.2), 1110 + n);
        });
        CHECK(r.max_rel_err < kTol);
        auto r2 = gradcheck({rand_t({B, D}, 550 + n, 0.5, 2.0)}, [n](Graph& g, const std::vector<int>& in) {
            return random_readout(g, g.sqrt_(in[0]), 1120 + n);
        });
        CHECK(r2.max_rel_err < kTol);
        auto r3 = gradcheck({rand_t({B, D}, 560 + n), rand_t({B, D + 1}, 570 + n)},
                            [n](Graph& g, const std::vector<int>& in) {
                                return random_readout(g, g.concat_cols(in[0], in[1]), 1130 + n);
                            });
        CHECK(r3.max_rel_err < kTol);
        auto r4 = gradcheck({rand_t({B, D}, 580 + n, 0.3, 1.0)}, [n](Graph& g, const std::vector<int>& in) {
            return random_readout(g, g.l2_normalize_rows(in[0]), 1140 + n);
        });
        CHECK(r4.max_rel_err < kTol);
        auto r5 = gradcheck({rand_t({B, D}, 590 + n), rand_t({B + 2, D}, 600 + n)},
                            [n](Graph& g, const std::vector<int>& in) {
                                return random_readout(g, g.matmul_nt(in[0], in[1]), 1150 + n);
                            });
        CHECK(r5.max_rel_err < kTol);
        ++n;
    }
}

TEST_CASE("reduction gradients") {
    auto r = gradcheck({rand_t({3, 4}, 610)},
                       [](Graph& g, const std::vector<int>& in) { return g.sum_all(in[0]); });
    CHECK(r.max_rel_err < kTol);
    auto r2 = gradcheck({rand_t({2, 3, 4}, 620)},
                        [](Graph& g, const std::vector<int>& in) { return g.mean_all(in[0]); });
    CHECK(r2.max_rel_err < kTol);
}

TEST_CASE("angular-margin loss gradient on random batches") {
    int n = 0;
    for (auto [B, N] : {std::array<int, 2>{3, 5}, {2, 8}, {5, 4}}) {
        Rng lr(700 + n);
        std::vector<int> labels(static_cast<size_t>(B));
        for (auto& l : labels) l = static_cast<int>(lr.uniform_int(static_cast<uint64_t>(N)));
        auto r = gradcheck({rand_t({B, N}, 630 + n, -0.95, 0.95)},
                           [labels](Graph& g, const std::vector<int>& in) {
                               return g.aam_loss(in[0], labels, 0.2, 30.0);
                           });
        CHECK(r.max_rel_err < kTol);
        CHECK(r.grad_norm > 1e-4);
        ++n;
    }
}

TEST_CASE("angular-margin loss gradient is zero inside the clamp region") {
    // Target cosines sit exactly at +-1; a step smaller than the clamp margin
    // keeps both finite-difference evaluations inside the flat region.
    Tensor cosv = rand_t({2, 4}, 640, -0.5, 0.5);
    cosv.at(0, 1) = 1.0;
    cosv.at(1, 2) = -1.0;
    std::vector<int> labels = {1, 2};
    auto r = gradcheck(
        {cosv},
        [labels](Graph& g, const std::vector<int>& in) { return g.aam_loss(in[0], labels, 0.2, 30.0); },
        1e-8);
    CHECK(r.max_rel_err < 1e-3);  // looser: tiny step amplifies round-off on the linear logits

    Graph g;
    int ci = g.leaf(cosv);
    int loss = g.aam_loss(ci, labels, 0.2, 30.0);
    g.backward(loss);
    CHECK(g.grad_of(ci).at(0, 1) == 0.0);
    CHECK(g.grad_of(ci).at(1, 2) == 0.0);
}

TEST_CASE("zero margin reduces the loss to plain softmax cross-entropy") {
    Rng rng(650);
    double max_diff = 0.0;
    for (int it = 0; it < 100; ++it) {
        const int B = 2 + static_cast<int>(rng.uniform_int(6));
        const int N = 2 + static_cast<int>(rng.uniform_int(10));
        Tensor cosv({B, N});
        fill_uniform(cosv, rng, -0.98, 0.98);
        std::vector<int> labels(static_cast<size_t>(B));
        for (auto& l : labels) l = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(N)));
        Graph g;
        int loss = g.aam_loss(g.leaf(cosv), labels, 0.0, 30.0);
        // Independent cross-entropy of the scale*cosine logits.
        double ce = 0.0;
        for (int b = 0; b < B; ++b) {
            double z = 0.0;
            for (int j = 0; j < N; ++j) z += std::exp(30.0 * cosv.at(b, j));
            ce += std::log(z) - 30.0 * cosv.at(b, labels[static_cast<size_t>(b)]);
        }
        ce /= B;
        max_diff = std::max(max_diff, std::abs(g.val(loss).data[0] - ce));
    }
    CHECK(max_diff <= 1e-9);
}

TEST_CASE("single-class zero-margin loss is exactly zero") {
    Graph g;
    Tensor cosv({3, 1});
    cosv.data = {0.2, -0.7, 0.99};
    int loss = g.aam_loss(g.leaf(cosv), {0, 0, 0}, 0.0, 30.0);
    CHECK(g.val(loss).data[0] == 0.0);
}

TEST_CASE("parameters accumulate gradients across backward calls") {
    Parameter w("w", rand_t({3, 4}, 660));
    Tensor x = rand_t({2, 4}, 670);
    Graph g;
    int loss = g.sum_all(g.linear(g.leaf(x), g.param(w)));
    g.backward(loss);
    Tensor once = w.grad;
    g.backward(loss);
    for (int64_t i = 0; i < once.numel(); ++i)
        CHECK(w.grad.data[i] == doctest::Approx(2.0 * once.data[i]).epsilon(1e-12));
    w.zero_grad();
    for (int64_t i = 0; i < once.numel(); ++i) CHECK(w.grad.data[i] == 0.0);
}

TEST_CASE("backward is deterministic across repeated runs") {
    Tensor x = rand_t({2, 3, 6}, 680);
    Tensor w = rand_t({3, 5}, 690);
    auto run = [&]() {
        Graph g;
        int xi = g.leaf(x);
        int y = g.relu(g.conv1d_depthwise(xi, g.leaf(w)));
        int loss = g.mean_all(g.softmax_time(y));
        g.backward(loss);
        return g.grad_of(xi);
    };
    Tensor a = run(), b = run();
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("time-ordered sums are exactly invariant to frame permutation") {
    Rng rng(695);
    Tensor x({1, 4, 50}), scores({1, 4, 50});
    fill_uniform(x, rng, -2.0, 2.0);
    fill_uniform(scores, rng, -3.0, 3.0);
    std::vector<int> perm(50);
    for (int i = 0; i < 50; ++i) perm[static_cast<size_t>(i)] = i;
    for (int i = 49; i > 0; --i)
        std::swap(perm[static_cast<size_t>(i)], perm[rng.uniform_int(static_cast<uint64_t>(i + 1))]);
    Tensor xp = x, sp = scores;
    for (int c = 0; c < 4; ++c)
        for (int t = 0; t < 50; ++t) {
            xp.at(0, c, t) = x.at(0, c, perm[static_cast<size_t>(t)]);
            sp.at(0, c, t) = scores.at(0, c, perm[static_cast<size_t>(t)]);
        }
    auto pool = [](const Tensor& xv, const Tensor& sv) {
        Graph g;
        int a = g.softmax_time(g.leaf(sv));
        return g.val(g.weighted_sum_time(g.leaf(xv), a));
    };
    Tensor y1 = pool(x, scores), y2 = pool(xp, sp);
    for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data[i] == y2.data[i]);
}

TEST_CASE("shape mismatches are rejected with informative errors") {
    Graph g;
    int x = g.leaf(rand_t({2, 3, 5}, 696));
    CHECK_THROWS_AS(g.conv1d_depthwise(x, g.leaf(rand_t({4, 3}, 697))), std::invalid_argument);
    CHECK_THROWS_AS(g.conv1d_depthwise(x, g.leaf(rand_t({3, 4}, 698))), std::invalid_argument);  // even kernel
    CHECK_THROWS_AS(g.conv1d_pointwise(x, g.leaf(rand_t({4, 2}, 699))), std::invalid_argument);
    CHECK_THROWS_AS(g.add(x, g.leaf(rand_t({2, 3, 6}, 700))), std::invalid_argument);
    CHECK_THROWS_AS(g.backward(x), std::invalid_argument);  // non-scalar root
    CHECK_THROWS_AS(g.aam_loss(g.leaf(rand_t({2, 3}, 701)), {0, 5}, 0.2, 30.0), std::invalid_argument);
}

TEST_CASE("composite block gradient (conv -> bn -> relu -> gate -> pooled readout)") {
    const int B = 2, C = 3, T = 6;
    auto r = gradcheck(
        {rand_t({B, C, T}, 710), rand_t({C, 3}, 711), rand_t({C}, 712, 0.5, 1.5), rand_t({C}, 713),
         rand_t({C, C}, 714), rand_t({C}, 715)},
        [C](Graph& g, const std::vector<int>& in) {
            BnState state(C);
            int y = g.conv1d_depthwise(in[0], in[1]);
            y = g.batchnorm(y, in[2], in[3], state, Mode::train);
            y = g.relu(y);
            int gate = g.sigmoid(g.linear(g.global_avg_pool(y), in[4], in[5]));
            y = g.scale_channels(y, gate);
            int att = g.softmax_time(y);
            return random_readout(g, g.weighted_sum_time(y, att), 716);
        });
    CHECK(r.max_rel_err < kTol);
    CHECK(r.grad_norm > 0.1);
}
