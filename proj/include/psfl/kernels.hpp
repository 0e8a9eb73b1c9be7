// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace psfl::kernels {

// Dense numeric kernels behind the differentiation engine. Each kernel has
// a serial reference variant (suffix _serial) and a default variant whose
// independent output elements are distributed across OpenMP threads. The
// per-element reduction order is identical in both, so outputs are required
// to be bit-exact equal (tested), and parallel runs stay deterministic.

/// C[m,n] = op(A) * op(B). A is stored (ta ? k x m : m x k), B is stored
/// (tb ? n x k : k x n), C is m x n and is overwritten.
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool ta = false, bool tb = false);
void matmul_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                   bool ta = false, bool tb = false);

/// 2-D convolution (cross-correlation). x is [ci,h,w], w is [co,ci,kh,kw],
/// bias is co entries or nullptr, y is [co,ho,wo] with
/// ho = (h + 2*pad - kh)/stride + 1 (likewise wo). y is overwritten.
void conv2d(const double* x, const double* w, const double* bias, double* y, int64_t ci,
            int64_t h, int64_t wdt, int64_t co, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad);
void conv2d_serial(const double* x, const double* w, const double* bias, double* y, int64_t ci,
                   int64_t h, int64_t wdt, int64_t co, int64_t kh, int64_t kw, int64_t stride,
                   int64_t pad);

/// Transposed 2-D convolution, the adjoint of conv2d. x is [ci,h,w], w is
/// [ci,co,kh,kw], y is [co,ho,wo]; the caller fixes ho/wo (they must satisfy
/// (ho + 2*pad - kh)/stride + 1 == h, likewise wo).
void conv_transpose2d(const double* x, const double* w, const double* bias, double* y,
                      int64_t ci, int64_t h, int64_t wdt, int64_t co, int64_t kh, int64_t kw,
                      int64_t stride, int64_t pad, int64_t ho, int64_t wo);
void conv_transpose2d_serial(const double* x, const double* w, const double* bias, double* y,
                             int64_t ci, int64_t h, int64_t wdt, int64_t co, int64_t kh,
                             int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo);

/// Weight gradient shared by conv2d and conv_transpose2d backward passes:
/// dw[p,q,u,v] = sum_{a,b} outg[p,a,b] * inp[q, a*stride+u-pad, b*stride+v-pad].
void conv2d_weight_grad(const double* outg, const double* inp, double* dw, int64_t p,
                        int64_t ho, int64_t wo, int64_t q, int64_t h, int64_t wdt, int64_t kh,
                        int64_t kw, int64_t stride, int64_t pad);
void conv2d_weight_grad_serial(const double* outg, const double* inp, double* dw, int64_t p,
                               int64_t ho, int64_t wo, int64_t q, int64_t h, int64_t wdt,
                               int64_t kh, int64_t kw, int64_t stride, int64_t pad);

}  // namespace psfl::kernels
