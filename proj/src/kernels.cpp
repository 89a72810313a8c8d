#include "titanet/kernels.hpp"

#include <cstddef>

namespace titanet::kernels {

namespace {
inline int64_t row(int b, int c, int C, int T) { return (static_cast<int64_t>(b) * C + c) * T; }
}

// ===================== depthwise conv =====================

void conv_dw_fwd(const double* __restrict x, const double* __restrict w, double* __restrict y, int B, int C, int T, int K) {
    const int P = (K - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static) if (B * C > 4)
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double* xr = x + row(b, c, C, T);
            const double* wc = w + static_cast<int64_t>(c) * K;
            double* yr = y + row(b, c, C, T);
            for (int t = 0; t < T; ++t) {
                const int j0 = t - P < 0 ? P - t : 0;
                const int j1 = t - P + K > T ? T - t + P : K;
                double acc = 0.0;
                for (int j = j0; j < j1; ++j) acc += wc[j] * xr[t - P + j];
                yr[t] = acc;
            }
        }
    }
}

void conv_dw_bwd_x(const double* __restrict dy, const double* __restrict w, double* __restrict dx, int B, int C, int T, int K) {
    const int P = (K - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static) if (B * C > 4)
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double* gr = dy + row(b, c, C, T);
            const double* wc = w + static_cast<int64_t>(c) * K;
            double* dxr = dx + row(b, c, C, T);
            for (int s = 0; s < T; ++s) {
                // x[s] contributes to y[t] where t = s + P - j.
                double acc = 0.0;
                for (int j = 0; j < K; ++j) {
                    const int t = s + P - j;
                    if (t >= 0 && t < T) acc += wc[j] * gr[t];
                }
                dxr[s] += acc;
            }
        }
    }
}

void conv_dw_bwd_w(const double* __restrict dy, const double* __restrict x, double* __restrict dw, int B, int C, int T, int K) {
    const int P = (K - 1) / 2;
#pragma omp parallel for schedule(static) if (C > 2)
    for (int c = 0; c < C; ++c) {
        double* dwc = dw + static_cast<int64_t>(c) * K;
        for (int j = 0; j < K; ++j) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* gr = dy + row(b, c, C, T);
                const double* xr = x + row(b, c, C, T);
                const int t0 = j - P < 0 ? P - j : 0;
                const int t1 = j - P > 0 ? T - j + P : T;
                for (int t = t0; t < t1; ++t) acc += gr[t] * xr[t - P + j];
            }
            dwc[j] += acc;
        }
    }
}

// ===================== pointwise conv =====================

void conv_pw_fwd(const double* __restrict x, const double* __restrict w, const double* __restrict bias, double* __restrict y,
                 int B, int Ci, int Co, int T) {
#pragma omp parallel for collapse(2) schedule(static) if (B * Co > 4)
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Co; ++co) {
            double* yr = y + row(b, co, Co, T);
            const double v = bias ? bias[co] : 0.0;
            for (int t = 0; t < T; ++t) yr[t] = v;
            const double* wr = w + static_cast<int64_t>(co) * Ci;
            for (int ci = 0; ci < Ci; ++ci) {
                const double wv = wr[ci];
                const double* xr = x + row(b, ci, Ci, T);
                for (int t = 0; t < T; ++t) yr[t] += wv * xr[t];
            }
        }
    }
}

void conv_pw_bwd_x(const double* __restrict dy, const double* __restrict w, double* __restrict dx, int B, int Ci, int Co, int T) {
#pragma omp parallel for collapse(2) schedule(static) if (B * Ci > 4)
    for (int b = 0; b < B; ++b) {
        for (int ci = 0; ci < Ci; ++ci) {
            double* dxr = dx + row(b, ci, Ci, T);
            for (int co = 0; co < Co; ++co) {
                const double wv = w[static_cast<int64_t>(co) * Ci + ci];
                const double* gr = dy + row(b, co, Co, T);
                for (int t = 0; t < T; ++t) dxr[t] += wv * gr[t];
            }
        }
    }
}

void conv_pw_bwd_w(const double* __restrict dy, const double* __restrict x, double* __restrict dw, double* __restrict dbias,
                   int B, int Ci, int Co, int T) {
#pragma omp parallel for schedule(static) if (Co > 2)
    for (int co = 0; co < Co; ++co) {
        double* dwr = dw + static_cast<int64_t>(co) * Ci;
        for (int ci = 0; ci < Ci; ++ci) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* gr = dy + row(b, co, Co, T);
                const double* xr = x + row(b, ci, Ci, T);
                for (int t = 0; t < T; ++t) acc += gr[t] * xr[t];
            }
            dwr[ci] += acc;
        }
        if (dbias) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* gr = dy + row(b, co, Co, T);
                for (int t = 0; t < T; ++t) acc += gr[t];
            }
            dbias[co] += acc;
        }
    }
}

// ===================== full conv =====================

void conv_full_fwd(const double* __restrict x, const double* __restrict w, double* __restrict y, int B, int Ci, int Co, int T, int K) {
    const int P = (K - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static) if (B * Co > 4)
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Co; ++co) {
            double* yr = y + row(b, co, Co, T);
            for (int t = 0; t < T; ++t) yr[t] = 0.0;
            for (int ci = 0; ci < Ci; ++ci) {
                const double* wr = w + (static_cast<int64_t>(co) * Ci + ci) * K;
                const double* xr = x + row(b, ci, Ci, T);
                for (int t = 0; t < T; ++t) {
                    const int j0 = t - P < 0 ? P - t : 0;
                    const int j1 = t - P + K > T ? T - t + P : K;
                    double acc = 0.0;
                    for (int j = j0; j < j1; ++j) acc += wr[j] * xr[t - P + j];
                    yr[t] += acc;
                }
            }
        }
    }
}

void conv_full_bwd_x(const double* __restrict dy, const double* __restrict w, double* __restrict dx, int B, int Ci, int Co, int T, int K) {
    const int P = (K - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static) if (B * Ci > 4)
    for (int b = 0; b < B; ++b) {
        for (int ci = 0; ci < Ci; ++ci) {
            double* dxr = dx + row(b, ci, Ci, T);
            for (int co = 0; co < Co; ++co) {
                const double* wr = w + (static_cast<int64_t>(co) * Ci + ci) * K;
                const double* gr = dy + row(b, co, Co, T);
                for (int s = 0; s < T; ++s) {
                    double acc = 0.0;
                    for (int j = 0; j < K; ++j) {
                        const int t = s + P - j;
                        if (t >= 0 && t < T) acc += wr[j] * gr[t];
                    }
                    dxr[s] += acc;
                }
            }
        }
    }
}

void conv_full_bwd_w(const double* __restrict dy, const double* __restrict x, double* __restrict dw, int B, int Ci, int Co, int T, int K) {
    const int P = (K - 1) / 2;
#pragma omp parallel for collapse(2) schedule(static) if (Co * Ci > 4)
    for (int co = 0; co < Co; ++co) {
        for (int ci = 0; ci < Ci; ++ci) {
            double* dwr = dw + (static_cast<int64_t>(co) * Ci + ci) * K;
            for (int j = 0; j < K; ++j) {
                double acc = 0.0;
                for (int b = 0; b < B; ++b) {
                    const double* gr = dy + row(b, co, Co, T);
                    const double* xr = x + row(b, ci, Ci, T);
                    const int t0 = j - P < 0 ? P - j : 0;
                    const int t1 = j - P > 0 ? T - j + P : T;
                    for (int t = t0; t < t1; ++t) acc += gr[t] * xr[t - P + j];
                }
                dwr[j] += acc;
            }
        }
    }
}

// ===================== linear =====================

void linear_fwd(const double* __restrict x, const double* __restrict w, const double* __restrict bias, double* __restrict y, int B, int In, int Out) {
#pragma omp parallel for collapse(2) schedule(static) if (B * Out > 8)
    for (int b = 0; b < B; ++b) {
        for (int o = 0; o < Out; ++o) {
            const double* xr = x + static_cast<int64_t>(b) * In;
            const double* wr = w + static_cast<int64_t>(o) * In;
            double acc = bias ? bias[o] : 0.0;
            for (int i = 0; i < In; ++i) acc += wr[i] * xr[i];
            y[static_cast<int64_t>(b) * Out + o] = acc;
        }
    }
}

void linear_bwd_x(const double* __restrict dy, const double* __restrict w, double* __restrict dx, int B, int In, int Out) {
#pragma omp parallel for schedule(static) if (B > 2)
    for (int b = 0; b < B; ++b) {
        double* dxr = dx + static_cast<int64_t>(b) * In;
        const double* gr = dy + static_cast<int64_t>(b) * Out;
        for (int o = 0; o < Out; ++o) {
            const double g = gr[o];
            const double* wr = w + static_cast<int64_t>(o) * In;
            for (int i = 0; i < In; ++i) dxr[i] += g * wr[i];
        }
    }
}

void linear_bwd_w(const double* __restrict dy, const double* __restrict x, double* __restrict dw, double* __restrict dbias, int B, int In, int Out) {
#pragma omp parallel for schedule(static) if (Out > 2)
    for (int o = 0; o < Out; ++o) {
        double* dwr = dw + static_cast<int64_t>(o) * In;
        double bacc = 0.0;
        for (int b = 0; b < B; ++b) {
            const double g = dy[static_cast<int64_t>(b) * Out + o];
            const double* xr = x + static_cast<int64_t>(b) * In;
            for (int i = 0; i < In; ++i) dwr[i] += g * xr[i];
            bacc += g;
        }
        if (dbias) dbias[o] += bacc;
    }
}

// ===================== batchnorm statistics =====================

void bn_stats(const double* __restrict x, int B, int C, int T, double* __restrict mean, double* __restrict var) {
    const double n = static_cast<double>(B) * T;
#pragma omp parallel for schedule(static) if (C > 2)
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int b = 0; b < B; ++b) {
            const double* xr = x + row(b, c, C, T);
            for (int t = 0; t < T; ++t) s += xr[t];
        }
        const double m = s / n;
        double v = 0.0;
        for (int b = 0; b < B; ++b) {
            const double* xr = x + row(b, c, C, T);
            for (int t = 0; t < T; ++t) {
                const double d = xr[t] - m;
                v += d * d;
            }
        }
        mean[c] = m;
        var[c] = v / n;
    }
}

// ===================== serial reference =====================
// Naive loops, no pragmas; used by the test suite to pin the parallel path
// and by tools/bench_kernels as the timing baseline.

namespace ref {

void conv_dw_fwd(const double* __restrict x, const double* __restrict w, double* __restrict y, int B, int C, int T, int K) {
    const int P = (K - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t) {
                double acc = 0.0;
                for (int j = 0; j < K; ++j) {
                    const int s = t - P + j;
                    if (s >= 0 && s < T) acc += w[static_cast<int64_t>(c) * K + j] * x[row(b, c, C, T) + s];
                }
                y[row(b, c, C, T) + t] = acc;
            }
}

void conv_dw_bwd_x(const double* __restrict dy, const double* __restrict w, double* __restrict dx, int B, int C, int T, int K) {
    const int P = (K - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int s = 0; s < T; ++s) {
                double acc = 0.0;
                for (int j = 0; j < K; ++j) {
                    const int t = s + P - j;
                    if (t >= 0 && t < T) acc += w[static_cast<int64_t>(c) * K + j] * dy[row(b, c, C, T) + t];
                }
                dx[row(b, c, C, T) + s] += acc;
            }
}

void conv_dw_bwd_w(const double* __restrict dy, const double* __restrict x, double* __restrict dw, int B, int C, int T, int K) {
    const int P = (K - 1) / 2;
    for (int c = 0; c < C; ++c)
        for (int j = 0; j < K; ++j) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b)
                for (int t = 0; t < T; ++t) {
                    const int s = t - P + j;
                    if (s >= 0 && s < T) acc += dy[row(b, c, C, T) + t] * x[row(b, c, C, T) + s];
                }
            dw[static_cast<int64_t>(c) * K + j] += acc;
        }
}

void conv_pw_fwd(const double* __restrict x, const double* __restrict w, const double* __restrict bias, double* __restrict y,
                 int B, int Ci, int Co, int T) {
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co)
            for (int t = 0; t < T; ++t) {
                double acc = bias ? bias[co] : 0.0;
                for (int ci = 0; ci < Ci; ++ci)
                    acc += w[static_cast<int64_t>(co) * Ci + ci] * x[row(b, ci, Ci, T) + t];
                y[row(b, co, Co, T) + t] = acc;
            }
}

void conv_pw_bwd_x(const double* __restrict dy, const double* __restrict w, double* __restrict dx, int B, int Ci, int Co, int T) {
    for (int b = 0; b < B; ++b)
        for (int ci = 0; ci < Ci; ++ci)
            for (int t = 0; t < T; ++t) {
                double acc = 0.0;
                for (int co = 0; co < Co; ++co)
                    acc += w[static_cast<int64_t>(co) * Ci + ci] * dy[row(b, co, Co, T) + t];
                dx[row(b, ci, Ci, T) + t] += acc;
            }
}

void conv_pw_bwd_w(const double* __restrict dy, const double* __restrict x, double* __restrict dw, double* __restrict dbias,
                   int B, int Ci, int Co, int T) {
    for (int co = 0; co < Co; ++co) {
        for (int ci = 0; ci < Ci; ++ci) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b)
                for (int t = 0; t < T; ++t)
                    acc += dy[row(b, co, Co, T) + t] * x[row(b, ci, Ci, T) + t];
            dw[static_cast<int64_t>(co) * Ci + ci] += acc;
        }
        if (dbias) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b)
                for (int t = 0; t < T; ++t) acc += dy[row(b, co, Co, T) + t];
            dbias[co] += acc;
        }
    }
}

void conv_full_fwd(const double* __restrict x, const double* __restrict w, double* __restrict y, int B, int Ci, int Co, int T, int K) {
    const int P = (K - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co)
            for (int t = 0; t < T; ++t) y[row(b, co, Co, T) + t] = 0.0;
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co)
            for (int ci = 0; ci < Ci; ++ci)
                for (int t = 0; t < T; ++t) {
                    double acc = 0.0;
                    for (int j = 0; j < K; ++j) {
                        const int s = t - P + j;
                        if (s >= 0 && s < T)
                            acc += w[(static_cast<int64_t>(co) * Ci + ci) * K + j] * x[row(b, ci, Ci, T) + s];
                    }
                    y[row(b, co, Co, T) + t] += acc;
                }
}

void conv_full_bwd_x(const double* __restrict dy, const double* __restrict w, double* __restrict dx, int B, int Ci, int Co, int T, int K) {
    const int P = (K - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int ci = 0; ci < Ci; ++ci)
            for (int co = 0; co < Co; ++co)
                for (int s = 0; s < T; ++s) {
                    double acc = 0.0;
                    for (int j = 0; j < K; ++j) {
                        const int t = s + P - j;
                        if (t >= 0 && t < T)
                            acc += w[(static_cast<int64_t>(co) * Ci + ci) * K + j] * dy[row(b, co, Co, T) + t];
                    }
                    dx[row(b, ci, Ci, T) + s] += acc;
                }
}

void conv_full_bwd_w(const double* __restrict dy, const double* __restrict x, double* __restrict dw, int B, int Ci, int Co, int T, int K) {
    const int P = (K - 1) / 2;
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
            for (int j = 0; j < K; ++j) {
                double acc = 0.0;
                for (int b = 0; b < B; ++b)
                    for (int t = 0; t < T; ++t) {
                        const int s = t - P + j;
                        if (s >= 0 && s < T) acc += dy[row(b, co, Co, T) + t] * x[row(b, ci, Ci, T) + s];
                    }
                dw[(static_cast<int64_t>(co) * Ci + ci) * K + j] += acc;
            }
}

void linear_fwd(const double* __restrict x, const double* __restrict w, const double* __restrict bias, double* __restrict y, int B, int In, int Out) {
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < Out; ++o) {
            double acc = bias ? bias[o] : 0.0;
            for (int i = 0; i < In; ++i)
                acc += w[static_cast<int64_t>(o) * In + i] * x[static_cast<int64_t>(b) * In + i];
            y[static_cast<int64_t>(b) * Out + o] = acc;
        }
}

void linear_bwd_x(const double* __restrict dy, const double* __restrict w, double* __restrict dx, int B, int In, int Out) {
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < Out; ++o) {
            const double g = dy[static_cast<int64_t>(b) * Out + o];
            for (int i = 0; i < In; ++i) dx[static_cast<int64_t>(b) * In + i] += g * w[static_cast<int64_t>(o) * In + i];
        }
}

void linear_bwd_w(const double* __restrict dy, const double* __restrict x, double* __restrict dw, double* __restrict dbias, int B, int In, int Out) {
    for (int o = 0; o < Out; ++o) {
        double bacc = 0.0;
        for (int b = 0; b < B; ++b) {
            const double g = dy[static_cast<int64_t>(b) * Out + o];
            for (int i = 0; i < In; ++i) dw[static_cast<int64_t>(o) * In + i] += g * x[static_cast<int64_t>(b) * In + i];
            bacc += g;
        }
        if (dbias) dbias[o] += bacc;
    }
}

void bn_stats(const double* __restrict x, int B, int C, int T, double* __restrict mean, double* __restrict var) {
    const double n = static_cast<double>(B) * T;
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t) s += x[row(b, c, C, T) + t];
        const double m = s / n;
        double v = 0.0;
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t) {
                const double d = x[row(b, c, C, T) + t] - m;
                v += d * d;
            }
        mean[c] = m;
        var[c] = v / n;
    }
}

}  // namespace ref

}  // namespace titanet::kernels
