// SPDX-License-Identifier: Apache-2.0
#include "stg/numerics/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace stg::kernels {

namespace {

int g_threads = 1;

template <typename T>
void gemm_row_nn(std::size_t i, std::size_t n, std::size_t k, const T* a, std::size_t a_row_stride,
                 std::size_t a_col_stride, const T* b, T* c_row) {
    for (std::size_t p = 0; p < k; ++p) {
        const T aip = a[i * a_row_stride + p * a_col_stride];
        const T* b_row = b + p * n;
        for (std::size_t j = 0; j < n; ++j) c_row[j] += aip * b_row[j];
    }
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
    return out;
}

// Serial im2col for one sample: col is (C*K*K, Ho*Wo).
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                T* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                        const bool inside = iy >= 0 && ix >= 0 &&
                                            iy < static_cast<std::ptrdiff_t>(g.height) &&
                                            ix < static_cast<std::ptrdiff_t>(g.width);
                        dst[oy * wo + ox] = inside ? x[(c * g.height + iy) * g.width + ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const T* src = col + ((c * g.kernel + ky) * g.kernel + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        dx[(c * g.height + iy) * g.width + ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

void set_num_threads(int threads) {
    g_threads = std::max(1, threads);
    omp_set_num_threads(g_threads);
}

int num_threads() { return g_threads; }

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
    std::vector<T> b_t;
    if (trans_b) {
        b_t = transposed(b, n, k);
        b = b_t.data();
    }
    const std::size_t a_row_stride = trans_a ? 1 : k;
    const std::size_t a_col_stride = trans_a ? m : 1;
    const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (g_threads > 1 && m * n * k > 32768)
    for (long long i = 0; i < rows; ++i) {
        T* c_row = c + static_cast<std::size_t>(i) * n;
        if (!accumulate) std::fill(c_row, c_row + n, T(0));
        gemm_row_nn(static_cast<std::size_t>(i), n, k, a, a_row_stride, a_col_stride, b, c_row);
    }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
    const std::size_t plane = g.out_height() * g.out_width();
    const std::size_t in_size = g.in_channels * g.height * g.width;
    const long long batch = static_cast<long long>(g.batch);
#pragma omp parallel if (g_threads > 1 && g.batch > 1)
    {
        std::vector<T> col(g.patch() * plane);
#pragma omp for schedule(static)
        for (long long s = 0; s < batch; ++s) {
            im2col(g, x + s * in_size, col.data());
            T* ys = y + s * g.out_channels * plane;
            for (std::size_t o = 0; o < g.out_channels; ++o) {
                T* row = ys + o * plane;
                std::fill(row, row + plane, bias ? bias[o] : T(0));
                gemm_row_nn<T>(o, plane, g.patch(), w, g.patch(), 1, col.data(), row);
            }
        }
    }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias) {
    const std::size_t plane = g.out_height() * g.out_width();
    const std::size_t in_size = g.in_channels * g.height * g.width;
    const std::size_t out_size = g.out_channels * plane;
    const std::size_t w_size = g.out_channels * g.patch();
    // Per-sample weight gradients, reduced below in sample order.
    std::vector<T> dw_parts(dw ? g.batch * w_size : 0);
    const std::vector<T> w_t = transposed(w, g.out_channels, g.patch());
    const long long batch = static_cast<long long>(g.batch);
#pragma omp parallel if (g_threads > 1 && g.batch > 1)
    {
        std::vector<T> col(g.patch() * plane);
        std::vector<T> dcol(dx ? g.patch() * plane : 0);
#pragma omp for schedule(static)
        for (long long s = 0; s < batch; ++s) {
            const T* dys = dy + s * out_size;
            if (dw) {
                im2col(g, x + s * in_size, col.data());
                T* part = dw_parts.data() + s * w_size;
                for (std::size_t o = 0; o < g.out_channels; ++o) {
                    const T* dyo = dys + o * plane;
                    T* dwo = part + o * g.patch();
                    for (std::size_t p = 0; p < g.patch(); ++p) {
                        const T* colp = col.data() + p * plane;
                        T acc = 0;
                        for (std::size_t q = 0; q < plane; ++q) acc += dyo[q] * colp[q];
                        dwo[p] = acc;
                    }
                }
            }
            if (dx) {
                std::fill(dcol.begin(), dcol.end(), T(0));
                for (std::size_t p = 0; p < g.patch(); ++p)
                    gemm_row_nn<T>(p, plane, g.out_channels, w_t.data(), g.out_channels, 1, dys,
                                   dcol.data() + p * plane);
                col2im_add(g, dcol.data(), dx + s * in_size);
            }
        }
    }
    if (dw) {
        for (std::size_t s = 0; s < g.batch; ++s) {
            const T* part = dw_parts.data() + s * w_size;
            for (std::size_t i = 0; i < w_size; ++i) dw[i] += part[i];
        }
    }
    if (dbias) {
        for (std::size_t s = 0; s < g.batch; ++s)
            for (std::size_t o = 0; o < g.out_channels; ++o) {
                const T* dyo = dy + s * out_size + o * plane;
                T acc = 0;
                for (std::size_t q = 0; q < plane; ++q) acc += dyo[q];
                dbias[o] += acc;
            }
    }
}

template <typename T>
void attention_forward(std::size_t groups, std::size_t seq, std::size_t heads, std::size_t d,
                       bool causal, const T* q, const T* k, const T* v, T* probs, T* out) {
    const std::size_t dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const long long units = static_cast<long long>(groups * heads);
#pragma omp parallel for schedule(static) if (g_threads > 1 && groups * heads > 1)
    for (long long u = 0; u < units; ++u) {
        const std::size_t gi = static_cast<std::size_t>(u) / heads;
        const std::size_t h = static_cast<std::size_t>(u) % heads;
        T* p = probs + (gi * heads + h) * seq * seq;
        for (std::size_t i = 0; i < seq; ++i) {
            const std::size_t last = causal ? i + 1 : seq;
            const T* qi = q + (gi * seq + i) * d + h * dh;
            T* pi = p + i * seq;
            T max_score = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < last; ++j) {
                const T* kj = k + (gi * seq + j) * d + h * dh;
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                pi[j] = s * scale;
                max_score = std::max(max_score, pi[j]);
            }
            T total = 0;
            for (std::size_t j = 0; j < last; ++j) {
                pi[j] = std::exp(pi[j] - max_score);
                total += pi[j];
            }
            for (std::size_t j = 0; j < last; ++j) pi[j] /= total;
            for (std::size_t j = last; j < seq; ++j) pi[j] = 0;
            T* oi = out + (gi * seq + i) * d + h * dh;
            std::fill(oi, oi + dh, T(0));
            for (std::size_t j = 0; j < last; ++j) {
                const T* vj = v + (gi * seq + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) oi[c] += pi[j] * vj[c];
            }
        }
    }
}

template <typename T>
void attention_backward(std::size_t groups, std::size_t seq, std::size_t heads, std::size_t d,
                        bool causal, const T* q, const T* k, const T* v, const T* probs,
                        const T* dout, T* dq, T* dk, T* dv) {
    const std::size_t dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const long long units = static_cast<long long>(groups * heads);
#pragma omp parallel if (g_threads > 1 && groups * heads > 1)
    {
        std::vector<T> dp(seq);
#pragma omp for schedule(static)
        for (long long u = 0; u < units; ++u) {
            const std::size_t gi = static_cast<std::size_t>(u) / heads;
            const std::size_t h = static_cast<std::size_t>(u) % heads;
            const T* p = probs + (gi * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
                const std::size_t last = causal ? i + 1 : seq;
                const T* pi = p + i * seq;
                const T* doi = dout + (gi * seq + i) * d + h * dh;
                // dP_ij = dO_i . V_j ; dV_j += P_ij dO_i
                T dot_pdp = 0;
                for (std::size_t j = 0; j < last; ++j) {
                    const T* vj = v + (gi * seq + j) * d + h * dh;
                    T* dvj = dv + (gi * seq + j) * d + h * dh;
                    T s = 0;
                    for (std::size_t c = 0; c < dh; ++c) {
                        s += doi[c] * vj[c];
                        dvj[c] += pi[j] * doi[c];
                    }
                    dp[j] = s;
                    dot_pdp += pi[j] * s;
                }
                const T* qi = q + (gi * seq + i) * d + h * dh;
                T* dqi = dq + (gi * seq + i) * d + h * dh;
                for (std::size_t j = 0; j < last; ++j) {
                    const T ds = pi[j] * (dp[j] - dot_pdp) * scale;
                    const T* kj = k + (gi * seq + j) * d + h * dh;
                    T* dkj = dk + (gi * seq + j) * d + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
    }
}

namespace serial {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * m + i] : a[i * k + p];
                const T bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += av * bv;
            }
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
    const std::size_t ho = g.out_height(), wo = g.out_width();
    for (std::size_t s = 0; s < g.batch; ++s)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) {
                    T acc = bias ? bias[o] : T(0);
                    for (std::size_t c = 0; c < g.in_channels; ++c)
                        for (std::size_t ky = 0; ky < g.kernel; ++ky)
                            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                                const long iy = static_cast<long>(oy * g.stride + ky) -
                                                static_cast<long>(g.padding);
                                const long ix = static_cast<long>(ox * g.stride + kx) -
                                                static_cast<long>(g.padding);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                                    ix >= static_cast<long>(g.width))
                                    continue;
                                acc += w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx] *
                                       x[((s * g.in_channels + c) * g.height + iy) * g.width + ix];
                            }
                    y[((s * g.out_channels + o) * ho + oy) * wo + ox] = acc;
                }
}

template <typename T>
void attention_forward(std::size_t groups, std::size_t seq, std::size_t heads, std::size_t d,
                       bool causal, const T* q, const T* k, const T* v, T* probs, T* out) {
    const std::size_t dh = d / heads;
    for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < seq; ++i) {
                T* pi = probs + ((gi * heads + h) * seq + i) * seq;
                std::vector<T> scores(seq, -std::numeric_limits<T>::infinity());
                for (std::size_t j = 0; j < seq; ++j) {
                    if (causal && j > i) continue;
                    T s = 0;
                    for (std::size_t c = 0; c < dh; ++c)
                        s += q[(gi * seq + i) * d + h * dh + c] * k[(gi * seq + j) * d + h * dh + c];
                    scores[j] = s / std::sqrt(static_cast<T>(dh));
                }
                T mx = *std::max_element(scores.begin(), scores.end());
                T total = 0;
                for (std::size_t j = 0; j < seq; ++j) {
                    pi[j] = std::isinf(scores[j]) ? T(0) : std::exp(scores[j] - mx);
                    total += pi[j];
                }
                for (std::size_t j = 0; j < seq; ++j) pi[j] /= total;
                for (std::size_t c = 0; c < dh; ++c) {
                    T acc = 0;
                    for (std::size_t j = 0; j < seq; ++j)
                        acc += pi[j] * v[(gi * seq + j) * d + h * dh + c];
                    out[(gi * seq + i) * d + h * dh + c] = acc;
                }
            }
}

}  // namespace serial

#define STG_INSTANTIATE_KERNELS(T)                                                                \
    template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, \
                          T*, bool);                                                             \
    template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);      \
    template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*,  \
                                     T*);                                                        \
    template void attention_forward<T>(std::size_t, std::size_t, std::size_t, std::size_t, bool, \
                                       const T*, const T*, const T*, T*, T*);                    \
    template void attention_backward<T>(std::size_t, std::size_t, std::size_t, std::size_t,      \
                                        bool, const T*, const T*, const T*, const T*, const T*,  \
                                        T*, T*, T*);                                             \
    template void serial::gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*,   \
                                  const T*, T*, bool);                                           \
    template void serial::conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*,   \
                                            T*);                                                 \
    template void serial::attention_forward<T>(std::size_t, std::size_t, std::size_t,            \
                                               std::size_t, bool, const T*, const T*, const T*,  \
                                               T*, T*);

STG_INSTANTIATE_KERNELS(float)
STG_INSTANTIATE_KERNELS(double)

}  // namespace stg::kernels
