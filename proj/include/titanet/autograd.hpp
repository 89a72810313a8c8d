#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "titanet/rng.hpp"
#include "titanet/tensor.hpp"

namespace titanet {

enum class Mode { train, eval };

// Trainable tensor with a persistent gradient accumulator. Gradients survive
// across graphs until zero_grad(), so consecutive backward passes accumulate.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

    void zero_grad() { grad.fill(0.0); }
};

// Batchnorm running statistics (buffers, not trainable).
struct BnState {
    Tensor running_mean;  // [C], init 0
    Tensor running_var;   // [C], init 1

    explicit BnState(int C = 0) {
        if (C > 0) {
            running_mean = Tensor::zeros({C});
            running_var = Tensor::full({C}, 1.0);
        }
    }
};

// Reverse-mode tape over 64-bit floats. Build a fresh Graph per forward pass,
// reference parameters via param(), finish with a scalar node and call
// backward(); leaf gradients are accumulated into Parameter::grad.
class Graph {
public:
    // ----- leaves -----
    int leaf(Tensor t);           // constant input
    int param(Parameter& p);      // trainable leaf bound to p

    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    // Gradient of a node after backward(); zeros if the node was unreachable.
    const Tensor& grad_of(int id);

    // root must be a scalar node. May be called repeatedly; each call reruns
    // the sweep and accumulates leaf gradients into their parameters again.
    void backward(int root);

    // ----- ops (shapes validated, std::invalid_argument on mismatch) -----
    int conv1d_depthwise(int x, int w);                   // x [B,C,T], w [C,K], K odd
    int conv1d_pointwise(int x, int w, int bias = -1);    // x [B,Ci,T], w [Co,Ci], bias [Co]
    int conv1d_full(int x, int w);                        // x [B,Ci,T], w [Co,Ci,K], K odd
    int linear(int x, int w, int bias = -1);              // x [B,In], w [Out,In], bias [Out]
    // x [B,C,T] or [B,C]; train mode needs at least 2 samples per channel.
    int batchnorm(int x, int gamma, int beta, BnState& state, Mode mode,
                  double eps = 1e-5, double momentum = 0.1);
    int relu(int x);
    int sigmoid(int x);
    int tanh_(int x);
    int dropout(int x, double p, Mode mode, Rng& rng);    // survivors scaled 1/(1-p)
    int add(int a, int b);                                // same shape
    int sub(int a, int b);
    int mul(int a, int b);
    int scale_channels(int x, int gate);                  // x [B,C,T] * gate [B,C]
    int global_avg_pool(int x);                           // [B,C,T] -> [B,C], mean over T
    int softmax_rows(int x);                              // [B,N] over N
    // Softmax over the time axis of [B,C,T]. The normalizer is accumulated in
    // sorted order so the result is bit-exact under any time permutation.
    int softmax_time(int x);
    // y[b,c] = sum_t w[b,c,t]*x[b,c,t], accumulated in sorted order (same
    // permutation-exactness guarantee as softmax_time).
    int weighted_sum_time(int x, int w);
    int clamp_min(int x, double lo);
    int sqrt_(int x);                                      // requires positive input
    int concat_cols(int a, int b);                         // [B,C1]+[B,C2] -> [B,C1+C2]
    int l2_normalize_rows(int x);                          // [B,D], zero row -> error
    int matmul_nt(int a, int b);                           // [B,D] x [N,D]^T -> [B,N]
    int sum_all(int x);                                    // -> scalar [1]
    int mean_all(int x);
    // Additive angular-margin softmax loss over cosine logits [B,N] in [-1,1].
    // Mean cross-entropy after replacing the target logit cos(theta) with
    // cos(theta + margin_rad) and scaling all logits by `scale`.
    int aam_loss(int cos_logits, const std::vector<int>& labels, double margin_rad, double scale);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_alloc = false;
        std::function<void(Graph&)> back;
        Parameter* bound = nullptr;
    };
    std::vector<Node> nodes_;

    int push(Tensor value, std::function<void(Graph&)> back);
    Tensor& g(int id);  // grad buffer, allocated (zeroed) on demand
    friend struct GraphTestAccess;
};

// Sorts the buffer ascending and sums left to right: a canonical accumulation
// order that makes reductions invariant to input permutation at the bit level.
double canonical_sum(std::vector<double>& buf);

}  // namespace titanet
