#pragma once

#include <cstdint>

// Raw numeric kernels behind the autograd ops. Activations are [B, C, T]
// row-major, weights as documented per kernel. Convolutions use the
// cross-correlation convention with stride 1, dilation 1, odd kernel size and
// symmetric zero padding (K-1)/2, so the time length is preserved.
//
// Every kernel has an OpenMP-parallel version (titanet::kernels) and a plain
// serial reference (titanet::kernels::ref). Parallel loops split only across
// independent output elements and both paths accumulate each output element
// in the same ascending index order, so the two are bit-identical; the test
// suite asserts exact equality and tools/bench_kernels compares their speed.
//
// Backward kernels accumulate (+=) into caller-zeroed buffers.

namespace titanet::kernels {

// Depthwise conv: x [B,C,T], w [C,K] -> y [B,C,T].
void conv_dw_fwd(const double* x, const double* w, double* y, int B, int C, int T, int K);
void conv_dw_bwd_x(const double* dy, const double* w, double* dx, int B, int C, int T, int K);
void conv_dw_bwd_w(const double* dy, const double* x, double* dw, int B, int C, int T, int K);

// Pointwise (1x1) conv: x [B,Ci,T], w [Co,Ci], bias [Co] or null -> y [B,Co,T].
void conv_pw_fwd(const double* x, const double* w, const double* bias, double* y,
                 int B, int Ci, int Co, int T);
void conv_pw_bwd_x(const double* dy, const double* w, double* dx, int B, int Ci, int Co, int T);
void conv_pw_bwd_w(const double* dy, const double* x, double* dw, double* dbias,
                   int B, int Ci, int Co, int T);

// Full conv: x [B,Ci,T], w [Co,Ci,K] -> y [B,Co,T] (no bias; batchnorm follows).
void conv_full_fwd(const double* x, const double* w, double* y, int B, int Ci, int Co, int T, int K);
void conv_full_bwd_x(const double* dy, const double* w, double* dx, int B, int Ci, int Co, int T, int K);
void conv_full_bwd_w(const double* dy, const double* x, double* dw, int B, int Ci, int Co, int T, int K);

// Linear: x [B,In], w [Out,In], bias [Out] or null -> y [B,Out].
void linear_fwd(const double* x, const double* w, const double* bias, double* y, int B, int In, int Out);
void linear_bwd_x(const double* dy, const double* w, double* dx, int B, int In, int Out);
void linear_bwd_w(const double* dy, const double* x, double* dw, double* dbias, int B, int In, int Out);

// Per-channel mean and population variance over the B*T samples of each channel.
void bn_stats(const double* x, int B, int C, int T, double* mean, double* var);

namespace ref {
void conv_dw_fwd(const double* x, const double* w, double* y, int B, int C, int T, int K);
void conv_dw_bwd_x(const double* dy, const double* w, double* dx, int B, int C, int T, int K);
void conv_dw_bwd_w(const double* dy, const double* x, double* dw, int B, int C, int T, int K);
void conv_pw_fwd(const double* x, const double* w, const double* bias, double* y,
                 int B, int Ci, int Co, int T);
void conv_pw_bwd_x(const double* dy, const double* w, double* dx, int B, int Ci, int Co, int T);
void conv_pw_bwd_w(const double* dy, const double* x, double* dw, double* dbias,
                   int B, int Ci, int Co, int T);
void conv_full_fwd(const double* x, const double* w, double* y, int B, int Ci, int Co, int T, int K);
void conv_full_bwd_x(const double* dy, const double* w, double* dx, int B, int Ci, int Co, int T, int K);
void conv_full_bwd_w(const double* dy, const double* x, double* dw, int B, int Ci, int Co, int T, int K);
void linear_fwd(const double* x, const double* w, const double* bias, double* y, int B, int In, int Out);
void linear_bwd_x(const double* dy, const double* w, double* dx, int B, int In, int Out);
void linear_bwd_w(const double* dy, const double* x, double* dw, double* dbias, int B, int In, int Out);
void bn_stats(const double* x, int B, int C, int T, double* mean, double* var);
}  // namespace ref

}  // namespace titanet::kernels
