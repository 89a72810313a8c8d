#include "titanet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "titanet/kernels.hpp"

namespace titanet {

double canonical_sum(std::vector<double>& buf) {
    std::sort(buf.begin(), buf.end());
    double s = 0.0;
    for (double v : buf) s += v;
    return s;
}

int Graph::push(Tensor value, std::function<void(Graph&)> back) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::g(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.value.shape);
        n.grad_alloc = true;
    }
    return n.grad;
}

const Tensor& Graph::grad_of(int id) { return g(id); }

int Graph::leaf(Tensor t) { return push(std::move(t), nullptr); }

int Graph::param(Parameter& p) {
    int id = push(p.value, nullptr);
    nodes_[static_cast<size_t>(id)].bound = &p;
    return id;
}

void Graph::backward(int root) {
    if (root < 0 || root >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("backward: node id out of range");
    if (nodes_[static_cast<size_t>(root)].value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar, got shape " +
                                    nodes_[static_cast<size_t>(root)].value.shape_str());
    // Fresh sweep: clear any grads from a previous backward on this graph.
    for (auto& n : nodes_) {
        n.grad_alloc = false;
        n.grad = Tensor();
    }
    g(root).data[0] = 1.0;
    for (int i = root; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad_alloc && n.back) n.back(*this);
    }
    for (auto& n : nodes_) {
        if (n.bound && n.grad_alloc) {
            double* acc = n.bound->grad.data.data();
            const double* src = n.grad.data.data();
            const int64_t m = n.grad.numel();
            for (int64_t k = 0; k < m; ++k) acc[k] += src[k];
        }
    }
}

// ===================== shape helpers =====================

namespace {

void require_rank(const Tensor& t, int r, const char* what) {
    if (t.rank() != r)
        throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(r) +
                                    " tensor, got shape " + t.shape_str());
}

void require_odd_kernel(int K, const char* what) {
    if (K % 2 == 0 || K < 1)
        throw std::invalid_argument(std::string(what) + ": kernel size must be odd and positive, got " +
                                    std::to_string(K));
}

}  // namespace

// ===================== convolutions =====================

int Graph::conv1d_depthwise(int x, int w) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    require_rank(xv, 3, "conv1d_depthwise input");
    require_rank(wv, 2, "conv1d_depthwise weight");
    const int B = xv.dim(0), C = xv.dim(1), T = xv.dim(2), K = wv.dim(1);
    require_odd_kernel(K, "conv1d_depthwise");
    if (wv.dim(0) != C)
        throw std::invalid_argument("conv1d_depthwise: weight channels " + std::to_string(wv.dim(0)) +
                                    " != input channels " + std::to_string(C));
    Tensor y({B, C, T});
    kernels::conv_dw_fwd(xv.data.data(), wv.data.data(), y.data.data(), B, C, T, K);
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, w, self, B, C, T, K](Graph& G) {
        const double* dy = G.val(self).data.data();
        const double* dyg = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        (void)dy;
        kernels::conv_dw_bwd_x(dyg, G.val(w).data.data(), G.g(x).data.data(), B, C, T, K);
        kernels::conv_dw_bwd_w(dyg, G.val(x).data.data(), G.g(w).data.data(), B, C, T, K);
    };
    return self;
}

int Graph::conv1d_pointwise(int x, int w, int bias) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    require_rank(xv, 3, "conv1d_pointwise input");
    require_rank(wv, 2, "conv1d_pointwise weight");
    const int B = xv.dim(0), Ci = xv.dim(1), T = xv.dim(2), Co = wv.dim(0);
    if (wv.dim(1) != Ci)
        throw std::invalid_argument("conv1d_pointwise: weight in-channels " + std::to_string(wv.dim(1)) +
                                    " != input channels " + std::to_string(Ci));
    const double* bptr = nullptr;
    if (bias >= 0) {
        require_shape(val(bias), {Co}, "conv1d_pointwise bias");
        bptr = val(bias).data.data();
    }
    Tensor y({B, Co, T});
    kernels::conv_pw_fwd(xv.data.data(), wv.data.data(), bptr, y.data.data(), B, Ci, Co, T);
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, w, bias, self, B, Ci, Co, T](Graph& G) {
        const double* dyg = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        kernels::conv_pw_bwd_x(dyg, G.val(w).data.data(), G.g(x).data.data(), B, Ci, Co, T);
        double* dbias = bias >= 0 ? G.g(bias).data.data() : nullptr;
        kernels::conv_pw_bwd_w(dyg, G.val(x).data.data(), G.g(w).data.data(), dbias, B, Ci, Co, T);
    };
    return self;
}

int Graph::conv1d_full(int x, int w) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    require_rank(xv, 3, "conv1d_full input");
    require_rank(wv, 3, "conv1d_full weight");
    const int B = xv.dim(0), Ci = xv.dim(1), T = xv.dim(2);
    const int Co = wv.dim(0), K = wv.dim(2);
    require_odd_kernel(K, "conv1d_full");
    if (wv.dim(1) != Ci)
        throw std::invalid_argument("conv1d_full: weight in-channels " + std::to_string(wv.dim(1)) +
                                    " != input channels " + std::to_string(Ci));
    Tensor y({B, Co, T});
    kernels::conv_full_fwd(xv.data.data(), wv.data.data(), y.data.data(), B, Ci, Co, T, K);
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, w, self, B, Ci, Co, T, K](Graph& G) {
        const double* dyg = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        kernels::conv_full_bwd_x(dyg, G.val(w).data.data(), G.g(x).data.data(), B, Ci, Co, T, K);
        kernels::conv_full_bwd_w(dyg, G.val(x).data.data(), G.g(w).data.data(), B, Ci, Co, T, K);
    };
    return self;
}

int Graph::linear(int x, int w, int bias) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    require_rank(xv, 2, "linear input");
    require_rank(wv, 2, "linear weight");
    const int B = xv.dim(0), In = xv.dim(1), Out = wv.dim(0);
    if (wv.dim(1) != In)
        throw std::invalid_argument("linear: weight in-features " + std::to_string(wv.dim(1)) +
                                    " != input features " + std::to_string(In));
    const double* bptr = nullptr;
    if (bias >= 0) {
        require_shape(val(bias), {Out}, "linear bias");
        bptr = val(bias).data.data();
    }
    Tensor y({B, Out});
    kernels::linear_fwd(xv.data.data(), wv.data.data(), bptr, y.data.data(), B, In, Out);
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, w, bias, self, B, In, Out](Graph& G) {
        const double* dyg = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        kernels::linear_bwd_x(dyg, G.val(w).data.data(), G.g(x).data.data(), B, In, Out);
        double* dbias = bias >= 0 ? G.g(bias).data.data() : nullptr;
        kernels::linear_bwd_w(dyg, G.val(x).data.data(), G.g(w).data.data(), dbias, B, In, Out);
    };
    return self;
}

// ===================== batchnorm =====================

int Graph::batchnorm(int x, int gamma, int beta, BnState& state, Mode mode, double eps, double momentum) {
    const Tensor& xv = val(x);
    if (xv.rank() != 2 && xv.rank() != 3)
        throw std::invalid_argument("batchnorm: expected [B,C] or [B,C,T] input, got shape " + xv.shape_str());
    const int B = xv.dim(0), C = xv.dim(1);
    const int T = xv.rank() == 3 ? xv.dim(2) : 1;
    require_shape(val(gamma), {C}, "batchnorm gamma");
    require_shape(val(beta), {C}, "batchnorm beta");
    require_shape(state.running_mean, {C}, "batchnorm running_mean");
    require_shape(state.running_var, {C}, "batchnorm running_var");
    const int64_t n = static_cast<int64_t>(B) * T;

    Tensor mean({C}), var({C});
    if (mode == Mode::train) {
        if (n < 2)
            throw std::invalid_argument("batchnorm: train mode needs at least 2 samples per channel, got " +
                                        std::to_string(n));
        kernels::bn_stats(xv.data.data(), B, C, T, mean.data.data(), var.data.data());
        // Running stats use the unbiased variance, batch normalization itself
        // uses the population variance.
        const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
        for (int c = 0; c < C; ++c) {
            state.running_mean.data[c] = (1.0 - momentum) * state.running_mean.data[c] + momentum * mean.data[c];
            state.running_var.data[c] =
                (1.0 - momentum) * state.running_var.data[c] + momentum * var.data[c] * unbias;
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    auto xhat = std::make_shared<Tensor>(xv.shape);
    auto istd = std::make_shared<Tensor>(Tensor::zeros({C}));
    for (int c = 0; c < C; ++c) istd->data[c] = 1.0 / std::sqrt(var.data[c] + eps);

    Tensor y(xv.shape);
    const double* gm = val(gamma).data.data();
    const double* bt = val(beta).data.data();
#pragma omp parallel for collapse(2) schedule(static) if (B * C > 8)
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
            const double mu = mean.data[c], is = istd->data[c], gmc = gm[c], btc = bt[c];
            for (int t = 0; t < T; ++t) {
                const double xh = (xv.data[off + t] - mu) * is;
                xhat->data[off + t] = xh;
                y.data[off + t] = gmc * xh + btc;
            }
        }
    }

    int self = push(std::move(y), nullptr);
    const bool train = mode == Mode::train;
    nodes_[static_cast<size_t>(self)].back = [x, gamma, beta, self, B, C, T, xhat, istd, train](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* gm = G.val(gamma).data.data();
        double* dx = G.g(x).data.data();
        double* dgamma = G.g(gamma).data.data();
        double* dbeta = G.g(beta).data.data();
        const double n = static_cast<double>(B) * T;
#pragma omp parallel for schedule(static) if (C > 2)
        for (int c = 0; c < C; ++c) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (int b = 0; b < B; ++b) {
                const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
                for (int t = 0; t < T; ++t) {
                    sum_dy += dy[off + t];
                    sum_dy_xh += dy[off + t] * xhat->data[off + t];
                }
            }
            dgamma[c] += sum_dy_xh;
            dbeta[c] += sum_dy;
            const double is = istd->data[c];
            if (train) {
                // d/dx of ((x - mean)/sqrt(var+eps)) with mean/var functions of x.
                for (int b = 0; b < B; ++b) {
                    const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
                    for (int t = 0; t < T; ++t) {
                        const double xh = xhat->data[off + t];
                        dx[off + t] +=
                            gm[c] * is / n * (n * dy[off + t] - sum_dy - xh * sum_dy_xh);
                    }
                }
            } else {
                for (int b = 0; b < B; ++b) {
                    const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
                    for (int t = 0; t < T; ++t) dx[off + t] += gm[c] * is * dy[off + t];
                }
            }
        }
    };
    return self;
}

// ===================== elementwise =====================

int Graph::relu(int x) {
    const Tensor& xv = val(x);
    Tensor y(xv.shape);
    const int64_t m = xv.numel();
    for (int64_t i = 0; i < m; ++i) y.data[i] = xv.data[i] > 0.0 ? xv.data[i] : 0.0;
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, m](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* xd = G.val(x).data.data();
        double* dx = G.g(x).data.data();
        for (int64_t i = 0; i < m; ++i)
            if (xd[i] > 0.0) dx[i] += dy[i];
    };
    return self;
}

int Graph::sigmoid(int x) {
    const Tensor& xv = val(x);
    Tensor y(xv.shape);
    const int64_t m = xv.numel();
    for (int64_t i = 0; i < m; ++i) y.data[i] = 1.0 / (1.0 + std::exp(-xv.data[i]));
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, m](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* yd = G.val(self).data.data();
        double* dx = G.g(x).data.data();
        for (int64_t i = 0; i < m; ++i) dx[i] += dy[i] * yd[i] * (1.0 - yd[i]);
    };
    return self;
}

int Graph::tanh_(int x) {
    const Tensor& xv = val(x);
    Tensor y(xv.shape);
    const int64_t m = xv.numel();
    for (int64_t i = 0; i < m; ++i) y.data[i] = std::tanh(xv.data[i]);
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, m](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* yd = G.val(self).data.data();
        double* dx = G.g(x).data.data();
        for (int64_t i = 0; i < m; ++i) dx[i] += dy[i] * (1.0 - yd[i] * yd[i]);
    };
    return self;
}

int Graph::dropout(int x, double p, Mode mode, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw std::invalid_argument("dropout: probability must be in [0,1), got " + std::to_string(p));
    const Tensor& xv = val(x);
    if (mode == Mode::eval || p == 0.0) {
        // Identity; consumes no randomness in eval mode.
        Tensor y = xv;
        int self = push(std::move(y), nullptr);
        nodes_[static_cast<size_t>(self)].back = [x, self](Graph& G) {
            const Tensor& dy = G.nodes_[static_cast<size_t>(self)].grad;
            double* dx = G.g(x).data.data();
            for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy.data[i];
        };
        return self;
    }
    const int64_t m = xv.numel();
    auto mask = std::make_shared<Tensor>(xv.shape);
    const double keep = 1.0 - p;
    const double scale = 1.0 / keep;
    for (int64_t i = 0; i < m; ++i) mask->data[i] = rng.uniform() < keep ? scale : 0.0;
    Tensor y(xv.shape);
    for (int64_t i = 0; i < m; ++i) y.data[i] = xv.data[i] * mask->data[i];
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, mask, m](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        double* dx = G.g(x).data.data();
        for (int64_t i = 0; i < m; ++i) dx[i] += dy[i] * mask->data[i];
    };
    return self;
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
}
}  // namespace

int Graph::add(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require_same_shape(av, bv, "add");
    Tensor y(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) y.data[i] = av.data[i] + bv.data[i];
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [a, b, self](Graph& G) {
        const Tensor& dy = G.nodes_[static_cast<size_t>(self)].grad;
        double* da = G.g(a).data.data();
        double* db = G.g(b).data.data();
        for (int64_t i = 0; i < dy.numel(); ++i) {
            da[i] += dy.data[i];
            db[i] += dy.data[i];
        }
    };
    return self;
}

int Graph::sub(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require_same_shape(av, bv, "sub");
    Tensor y(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) y.data[i] = av.data[i] - bv.data[i];
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [a, b, self](Graph& G) {
        const Tensor& dy = G.nodes_[static_cast<size_t>(self)].grad;
        double* da = G.g(a).data.data();
        double* db = G.g(b).data.data();
        for (int64_t i = 0; i < dy.numel(); ++i) {
            da[i] += dy.data[i];
            db[i] -= dy.data[i];
        }
    };
    return self;
}

int Graph::mul(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require_same_shape(av, bv, "mul");
    Tensor y(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) y.data[i] = av.data[i] * bv.data[i];
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [a, b, self](Graph& G) {
        const Tensor& dy = G.nodes_[static_cast<size_t>(self)].grad;
        const double* avd = G.val(a).data.data();
        const double* bvd = G.val(b).data.data();
        double* da = G.g(a).data.data();
        double* db = G.g(b).data.data();
        for (int64_t i = 0; i < dy.numel(); ++i) {
            da[i] += dy.data[i] * bvd[i];
            db[i] += dy.data[i] * avd[i];
        }
    };
    return self;
}

int Graph::scale_channels(int x, int gate) {
    const Tensor& xv = val(x);
    const Tensor& gv = val(gate);
    require_rank(xv, 3, "scale_channels input");
    const int B = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
    require_shape(gv, {B, C}, "scale_channels gate");
    Tensor y(xv.shape);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
            const double gval = gv.data[static_cast<int64_t>(b) * C + c];
            for (int t = 0; t < T; ++t) y.data[off + t] = xv.data[off + t] * gval;
        }
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, gate, self, B, C, T](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* xd = G.val(x).data.data();
        const double* gd = G.val(gate).data.data();
        double* dx = G.g(x).data.data();
        double* dg = G.g(gate).data.data();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
                const double gval = gd[static_cast<int64_t>(b) * C + c];
                double acc = 0.0;
                for (int t = 0; t < T; ++t) {
                    dx[off + t] += dy[off + t] * gval;
                    acc += dy[off + t] * xd[off + t];
                }
                dg[static_cast<int64_t>(b) * C + c] += acc;
            }
    };
    return self;
}

int Graph::global_avg_pool(int x) {
    const Tensor& xv = val(x);
    require_rank(xv, 3, "global_avg_pool input");
    const int B = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
    Tensor y({B, C});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
            double acc = 0.0;
            for (int t = 0; t < T; ++t) acc += xv.data[off + t];
            y.data[static_cast<int64_t>(b) * C + c] = acc / T;
        }
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, B, C, T](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        double* dx = G.g(x).data.data();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
                const double gval = dy[static_cast<int64_t>(b) * C + c] / T;
                for (int t = 0; t < T; ++t) dx[off + t] += gval;
            }
    };
    return self;
}

// ===================== softmax =====================

int Graph::softmax_rows(int x) {
    const Tensor& xv = val(x);
    require_rank(xv, 2, "softmax_rows input");
    const int B = xv.dim(0), N = xv.dim(1);
    Tensor y(xv.shape);
    for (int b = 0; b < B; ++b) {
        const int64_t off = static_cast<int64_t>(b) * N;
        double mx = xv.data[off];
        for (int j = 1; j < N; ++j) mx = std::max(mx, xv.data[off + j]);
        double z = 0.0;
        for (int j = 0; j < N; ++j) {
            y.data[off + j] = std::exp(xv.data[off + j] - mx);
            z += y.data[off + j];
        }
        for (int j = 0; j < N; ++j) y.data[off + j] /= z;
    }
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, B, N](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* yd = G.val(self).data.data();
        double* dx = G.g(x).data.data();
        for (int b = 0; b < B; ++b) {
            const int64_t off = static_cast<int64_t>(b) * N;
            double dot = 0.0;
            for (int j = 0; j < N; ++j) dot += dy[off + j] * yd[off + j];
            for (int j = 0; j < N; ++j) dx[off + j] += yd[off + j] * (dy[off + j] - dot);
        }
    };
    return self;
}

int Graph::softmax_time(int x) {
    const Tensor& xv = val(x);
    require_rank(xv, 3, "softmax_time input");
    const int B = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
    Tensor y(xv.shape);
    std::vector<double> buf(static_cast<size_t>(T));
#pragma omp parallel for collapse(2) schedule(static) firstprivate(buf) if (B * C > 8)
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
            double mx = xv.data[off];
            for (int t = 1; t < T; ++t) mx = std::max(mx, xv.data[off + t]);
            for (int t = 0; t < T; ++t) {
                y.data[off + t] = std::exp(xv.data[off + t] - mx);
                buf[static_cast<size_t>(t)] = y.data[off + t];
            }
            const double z = canonical_sum(buf);
            for (int t = 0; t < T; ++t) y.data[off + t] /= z;
        }
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, B, C, T](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* yd = G.val(self).data.data();
        double* dx = G.g(x).data.data();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
                double dot = 0.0;
                for (int t = 0; t < T; ++t) dot += dy[off + t] * yd[off + t];
                for (int t = 0; t < T; ++t) dx[off + t] += yd[off + t] * (dy[off + t] - dot);
            }
    };
    return self;
}

int Graph::weighted_sum_time(int x, int w) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    require_rank(xv, 3, "weighted_sum_time input");
    require_same_shape(xv, wv, "weighted_sum_time");
    const int B = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
    Tensor y({B, C});
    std::vector<double> buf(static_cast<size_t>(T));
#pragma omp parallel for collapse(2) schedule(static) firstprivate(buf) if (B * C > 8)
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
            for (int t = 0; t < T; ++t) buf[static_cast<size_t>(t)] = xv.data[off + t] * wv.data[off + t];
            y.data[static_cast<int64_t>(b) * C + c] = canonical_sum(buf);
        }
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, w, self, B, C, T](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* xd = G.val(x).data.data();
        const double* wd = G.val(w).data.data();
        double* dx = G.g(x).data.data();
        double* dw = G.g(w).data.data();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const int64_t off = (static_cast<int64_t>(b) * C + c) * T;
                const double gval = dy[static_cast<int64_t>(b) * C + c];
                for (int t = 0; t < T; ++t) {
                    dx[off + t] += gval * wd[off + t];
                    dw[off + t] += gval * xd[off + t];
                }
            }
    };
    return self;
}

// ===================== misc elementwise =====================

int Graph::clamp_min(int x, double lo) {
    const Tensor& xv = val(x);
    Tensor y(xv.shape);
    const int64_t m = xv.numel();
    for (int64_t i = 0; i < m; ++i) y.data[i] = xv.data[i] > lo ? xv.data[i] : lo;
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, lo, m](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* xd = G.val(x).data.data();
        double* dx = G.g(x).data.data();
        for (int64_t i = 0; i < m; ++i)
            if (xd[i] > lo) dx[i] += dy[i];
    };
    return self;
}

int Graph::sqrt_(int x) {
    const Tensor& xv = val(x);
    Tensor y(xv.shape);
    const int64_t m = xv.numel();
    for (int64_t i = 0; i < m; ++i) {
        if (xv.data[i] <= 0.0)
            throw std::invalid_argument("sqrt: input must be positive, got " + std::to_string(xv.data[i]));
        y.data[i] = std::sqrt(xv.data[i]);
    }
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, m](Graph& G) {
        const double* dy = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        const double* yd = G.val(self).data.data();
        double* dx = G.g(x).data.data();
        for (int64_t i = 0; i < m; ++i) dx[i] += dy[i] * 0.5 / yd[i];
    };
    return self;
}

int Graph::concat_cols(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require_rank(av, 2, "concat_cols lhs");
    require_rank(bv, 2, "concat_cols rhs");
    if (av.dim(0) != bv.dim(0))
        throw std::invalid_argument("concat_cols: row mismatch " + av.shape_str() + " vs " + bv.shape_str());
    const int B = av.dim(0), C1 = av.dim(1), C2 = bv.dim(1);
    Tensor y({B, C1 + C2});
    for (int r = 0; r < B; ++r) {
        for (int j = 0; j < C1; ++j) y.at(r, j) = av.at(r, j);
        for (int j = 0; j < C2; ++j) y.at(r, C1 + j) = bv.at(r, j);
    }
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [a, b, self, B, C1, C2](Graph& G) {
        const Tensor& dy = G.nodes_[static_cast<size_t>(self)].grad;
        Tensor& da = G.g(a);
        Tensor& db = G.g(b);
        for (int r = 0; r < B; ++r) {
            for (int j = 0; j < C1; ++j) da.at(r, j) += dy.at(r, j);
            for (int j = 0; j < C2; ++j) db.at(r, j) += dy.at(r, C1 + j);
        }
    };
    return self;
}

int Graph::l2_normalize_rows(int x) {
    const Tensor& xv = val(x);
    require_rank(xv, 2, "l2_normalize_rows input");
    const int B = xv.dim(0), D = xv.dim(1);
    auto norms = std::make_shared<Tensor>(Tensor::zeros({B}));
    Tensor y(xv.shape);
    for (int b = 0; b < B; ++b) {
        double s = 0.0;
        for (int j = 0; j < D; ++j) s += xv.at(b, j) * xv.at(b, j);
        const double nrm = std::sqrt(s);
        if (nrm == 0.0)
            throw std::runtime_error("l2_normalize_rows: row " + std::to_string(b) + " has zero norm");
        norms->data[b] = nrm;
        for (int j = 0; j < D; ++j) y.at(b, j) = xv.at(b, j) / nrm;
    }
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, norms, B, D](Graph& G) {
        const Tensor& dy = G.nodes_[static_cast<size_t>(self)].grad;
        const Tensor& yv = G.val(self);
        Tensor& dx = G.g(x);
        for (int b = 0; b < B; ++b) {
            double dot = 0.0;
            for (int j = 0; j < D; ++j) dot += dy.at(b, j) * yv.at(b, j);
            const double inv = 1.0 / norms->data[b];
            for (int j = 0; j < D; ++j) dx.at(b, j) += (dy.at(b, j) - yv.at(b, j) * dot) * inv;
        }
    };
    return self;
}

int Graph::matmul_nt(int a, int b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require_rank(av, 2, "matmul_nt lhs");
    require_rank(bv, 2, "matmul_nt rhs");
    if (av.dim(1) != bv.dim(1))
        throw std::invalid_argument("matmul_nt: inner dims differ, " + av.shape_str() + " vs " + bv.shape_str());
    const int B = av.dim(0), D = av.dim(1), N = bv.dim(0);
    Tensor y({B, N});
    kernels::linear_fwd(av.data.data(), bv.data.data(), nullptr, y.data.data(), B, D, N);
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [a, b, self, B, D, N](Graph& G) {
        const double* dyg = G.nodes_[static_cast<size_t>(self)].grad.data.data();
        kernels::linear_bwd_x(dyg, G.val(b).data.data(), G.g(a).data.data(), B, D, N);
        kernels::linear_bwd_w(dyg, G.val(a).data.data(), G.g(b).data.data(), nullptr, B, D, N);
    };
    return self;
}

int Graph::sum_all(int x) {
    const Tensor& xv = val(x);
    Tensor y({1});
    double acc = 0.0;
    for (int64_t i = 0; i < xv.numel(); ++i) acc += xv.data[i];
    y.data[0] = acc;
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self](Graph& G) {
        const double gval = G.nodes_[static_cast<size_t>(self)].grad.data[0];
        Tensor& dx = G.g(x);
        for (int64_t i = 0; i < dx.numel(); ++i) dx.data[i] += gval;
    };
    return self;
}

int Graph::mean_all(int x) {
    const Tensor& xv = val(x);
    const double inv = 1.0 / static_cast<double>(xv.numel());
    Tensor y({1});
    double acc = 0.0;
    for (int64_t i = 0; i < xv.numel(); ++i) acc += xv.data[i];
    y.data[0] = acc * inv;
    int self = push(std::move(y), nullptr);
    nodes_[static_cast<size_t>(self)].back = [x, self, inv](Graph& G) {
        const double gval = G.nodes_[static_cast<size_t>(self)].grad.data[0] * inv;
        Tensor& dx = G.g(x);
        for (int64_t i = 0; i < dx.numel(); ++i) dx.data[i] += gval;
    };
    return self;
}

// ===================== angular-margin loss =====================

int Graph::aam_loss(int cos_logits, const std::vector<int>& labels, double margin_rad, double scale) {
    const Tensor& cv = val(cos_logits);
    require_rank(cv, 2, "aam_loss logits");
    const int B = cv.dim(0), N = cv.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw std::invalid_argument("aam_loss: got " + std::to_string(labels.size()) + " labels for batch " +
                                    std::to_string(B));
    for (int lab : labels)
        if (lab < 0 || lab >= N)
            throw std::invalid_argument("aam_loss: label " + std::to_string(lab) + " out of range [0, " +
                                        std::to_string(N) + ")");
    constexpr double kClampDelta = 1e-7;
    const double cm = std::cos(margin_rad), sm = std::sin(margin_rad);

    // z_j = s*c_j except the target, which becomes s*cos(theta_y + m) via the
    // identity cos(theta+m) = c*cos(m) - sqrt(1-c^2)*sin(m) on the clamped c.
    auto z = std::make_shared<Tensor>(Tensor::zeros({B, N}));
    auto lse = std::make_shared<Tensor>(Tensor::zeros({B}));
    auto chat = std::make_shared<Tensor>(Tensor::zeros({B}));       // clamped target cosine
    auto clamped = std::make_shared<std::vector<char>>(static_cast<size_t>(B), char(0));
    auto labs = std::make_shared<std::vector<int>>(labels);

    Tensor loss({1});
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const int y = labels[static_cast<size_t>(b)];
        for (int j = 0; j < N; ++j) z->at(b, j) = scale * cv.at(b, j);
        const double c = cv.at(b, y);
        double ch = c;
        if (ch > 1.0 - kClampDelta) {
            ch = 1.0 - kClampDelta;
            (*clamped)[static_cast<size_t>(b)] = 1;
        } else if (ch < -1.0 + kClampDelta) {
            ch = -1.0 + kClampDelta;
            (*clamped)[static_cast<size_t>(b)] = 1;
        }
        chat->data[b] = ch;
        z->at(b, y) = scale * (ch * cm - std::sqrt(1.0 - ch * ch) * sm);
        double mx = z->at(b, 0);
        for (int j = 1; j < N; ++j) mx = std::max(mx, z->at(b, j));
        double acc = 0.0;
        for (int j = 0; j < N; ++j) acc += std::exp(z->at(b, j) - mx);
        const double l = mx + std::log(acc);
        lse->data[b] = l;
        total += l - z->at(b, y);
    }
    loss.data[0] = total / B;

    int self = push(std::move(loss), nullptr);
    nodes_[static_cast<size_t>(self)].back =
        [cos_logits, self, z, lse, chat, clamped, labs, B, N, cm, sm, scale](Graph& G) {
            const double gval = G.nodes_[static_cast<size_t>(self)].grad.data[0] / B;
            Tensor& dc = G.g(cos_logits);
            for (int b = 0; b < B; ++b) {
                const int y = (*labs)[static_cast<size_t>(b)];
                for (int j = 0; j < N; ++j) {
                    const double p = std::exp(z->at(b, j) - lse->data[b]);
                    const double dz = gval * (p - (j == y ? 1.0 : 0.0));
                    if (j == y) {
                        if ((*clamped)[static_cast<size_t>(b)]) continue;  // clamp kills the gradient
                        const double ch = chat->data[b];
                        dc.at(b, j) += dz * scale * (cm + ch * sm / std::sqrt(1.0 - ch * ch));
                    } else {
                        dc.at(b, j) += dz * scale;
                    }
                }
            }
        };
    return self;
}

}  // namespace titanet
