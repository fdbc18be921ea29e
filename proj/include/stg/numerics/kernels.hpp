// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense compute kernels behind the autograd ops.
//
// Every kernel in `stg::kernels` parallelizes over independent output
// elements (rows, samples, channels) with OpenMP and never splits a single
// reduction across threads, so results are bit-identical for any thread
// count. `stg::kernels::serial` keeps plain textbook loops as a reference
// for tests and the benchmark.

#include <cstddef>

namespace stg::kernels {

struct ConvGeometry {
    std::size_t batch = 1;
    std::size_t in_channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
    std::size_t patch() const { return in_channels * kernel * kernel; }
};

// C (m x n) = op(A) (m x k) * op(B) (k x n), optionally added onto C.
// A is stored m x k (k x m when trans_a); B is stored k x n (n x k when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

// x: (batch, C, H, W), w: (O, C, K, K), bias: (O) or nullptr -> y: (batch, O, Ho, Wo)
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

// Accumulates into dx, dw, dbias (any may be nullptr to skip).
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* x, const T* w, const T* dy, T* dx, T* dw,
                     T* dbias);

// Scaled dot-product attention over `groups` independent sequences of length
// `seq` with `heads` heads. q, k, v, out: (groups * seq, d); probs: (groups,
// heads, seq, seq) holds the softmax weights (zero above the diagonal when causal).
template <typename T>
void attention_forward(std::size_t groups, std::size_t seq, std::size_t heads, std::size_t d,
                       bool causal, const T* q, const T* k, const T* v, T* probs, T* out);

// Accumulates into dq, dk, dv.
template <typename T>
void attention_backward(std::size_t groups, std::size_t seq, std::size_t heads, std::size_t d,
                        bool causal, const T* q, const T* k, const T* v, const T* probs,
                        const T* dout, T* dq, T* dk, T* dv);

namespace serial {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

// Direct 7-deep loop convolution, no im2col.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void attention_forward(std::size_t groups, std::size_t seq, std::size_t heads, std::size_t d,
                       bool causal, const T* q, const T* k, const T* v, T* probs, T* out);

}  // namespace serial

// Threads used by the parallel kernels; 1 disables OpenMP fan-out.
void set_num_threads(int threads);
int num_threads();

}  // namespace stg::kernels
