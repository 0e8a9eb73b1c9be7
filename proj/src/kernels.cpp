// SPDX-License-Identifier: Apache-2.0
#include "psfl/kernels.hpp"

namespace psfl::kernels {

namespace {

inline double mm_cell(const double* a, const double* b, int64_t m, int64_t k, int64_t n,
                      bool ta, bool tb, int64_t i, int64_t j) {
  double acc = 0.0;
  for (int64_t l = 0; l < k; ++l) {
    const double av = ta ? a[l * m + i] : a[i * k + l];
    const double bv = tb ? b[j * k + l] : b[l * n + j];
    acc += av * bv;
  }
  return acc;
}

inline double conv_cell(const double* x, const double* w, const double* bias, int64_t ci,
                        int64_t h, int64_t wdt, int64_t kh, int64_t kw, int64_t stride,
                        int64_t pad, int64_t o, int64_t oh, int64_t ow) {
  double acc = bias ? bias[o] : 0.0;
  for (int64_t i = 0; i < ci; ++i) {
    for (int64_t u = 0; u < kh; ++u) {
      const int64_t ih = oh * stride + u - pad;
      if (ih < 0 || ih >= h) continue;
      for (int64_t v = 0; v < kw; ++v) {
        const int64_t iw = ow * stride + v - pad;
        if (iw < 0 || iw >= wdt) continue;
        acc += x[(i * h + ih) * wdt + iw] * w[((o * ci + i) * kh + u) * kw + v];
      }
    }
  }
  return acc;
}

// Gather form of the transposed convolution: each output pixel sums the
// input positions that would have produced it under the forward conv.
inline double tconv_cell(const double* x, const double* w, const double* bias, int64_t ci,
                         int64_t h, int64_t wdt, int64_t co, int64_t kh, int64_t kw,
                         int64_t stride, int64_t pad, int64_t o, int64_t oh, int64_t ow) {
  double acc = bias ? bias[o] : 0.0;
  for (int64_t i = 0; i < ci; ++i) {
    for (int64_t u = 0; u < kh; ++u) {
      const int64_t num_h = oh + pad - u;
      if (num_h < 0 || num_h % stride != 0) continue;
      const int64_t ih = num_h / stride;
      if (ih >= h) continue;
      for (int64_t v = 0; v < kw; ++v) {
        const int64_t num_w = ow + pad - v;
        if (num_w < 0 || num_w % stride != 0) continue;
        const int64_t iw = num_w / stride;
        if (iw >= wdt) continue;
        acc += x[(i * h + ih) * wdt + iw] * w[((i * co + o) * kh + u) * kw + v];
      }
    }
  }
  return acc;
}

inline double wgrad_cell(const double* outg, const double* inp, int64_t ho, int64_t wo,
                         int64_t h, int64_t wdt, int64_t stride, int64_t pad, int64_t pi,
                         int64_t qi, int64_t u, int64_t v) {
  double acc = 0.0;
  for (int64_t a = 0; a < ho; ++a) {
    const int64_t ih = a * stride + u - pad;
    if (ih < 0 || ih >= h) continue;
    for (int64_t b = 0; b < wo; ++b) {
      const int64_t iw = b * stride + v - pad;
      if (iw < 0 || iw >= wdt) continue;
      acc += outg[(pi * ho + a) * wo + b] * inp[(qi * h + ih) * wdt + iw];
    }
  }
  return acc;
}

}  // namespace

void matmul_serial(const double* a, const double* b, double* c, int64_t m, int64_t k,
                   int64_t n, bool ta, bool tb) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) c[i * n + j] = mm_cell(a, b, m, k, n, ta, tb, i, j);
}

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool ta, bool tb) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) c[i * n + j] = mm_cell(a, b, m, k, n, ta, tb, i, j);
}

void conv2d_serial(const double* x, const double* w, const double* bias, double* y, int64_t ci,
                   int64_t h, int64_t wdt, int64_t co, int64_t kh, int64_t kw, int64_t stride,
                   int64_t pad) {
  const int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
  for (int64_t o = 0; o < co; ++o)
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow)
        y[(o * ho + oh) * wo + ow] =
            conv_cell(x, w, bias, ci, h, wdt, kh, kw, stride, pad, o, oh, ow);
}

void conv2d(const double* x, const double* w, const double* bias, double* y, int64_t ci,
            int64_t h, int64_t wdt, int64_t co, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad) {
  const int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < co; ++o)
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow)
        y[(o * ho + oh) * wo + ow] =
            conv_cell(x, w, bias, ci, h, wdt, kh, kw, stride, pad, o, oh, ow);
}

void conv_transpose2d_serial(const double* x, const double* w, const double* bias, double* y,
                             int64_t ci, int64_t h, int64_t wdt, int64_t co, int64_t kh,
                             int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo) {
  for (int64_t o = 0; o < co; ++o)
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow)
        y[(o * ho + oh) * wo + ow] =
            tconv_cell(x, w, bias, ci, h, wdt, co, kh, kw, stride, pad, o, oh, ow);
}

void conv_transpose2d(const double* x, const double* w, const double* bias, double* y,
                      int64_t ci, int64_t h, int64_t wdt, int64_t co, int64_t kh, int64_t kw,
                      int64_t stride, int64_t pad, int64_t ho, int64_t wo) {
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < co; ++o)
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow)
        y[(o * ho + oh) * wo + ow] =
            tconv_cell(x, w, bias, ci, h, wdt, co, kh, kw, stride, pad, o, oh, ow);
}

void conv2d_weight_grad_serial(const double* outg, const double* inp, double* dw, int64_t p,
                               int64_t ho, int64_t wo, int64_t q, int64_t h, int64_t wdt,
                               int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
  for (int64_t pi = 0; pi < p; ++pi)
    for (int64_t qi = 0; qi < q; ++qi)
      for (int64_t u = 0; u < kh; ++u)
        for (int64_t v = 0; v < kw; ++v)
          dw[((pi * q + qi) * kh + u) * kw + v] =
              wgrad_cell(outg, inp, ho, wo, h, wdt, stride, pad, pi, qi, u, v);
}

void conv2d_weight_grad(const double* outg, const double* inp, double* dw, int64_t p,
                        int64_t ho, int64_t wo, int64_t q, int64_t h, int64_t wdt, int64_t kh,
                        int64_t kw, int64_t stride, int64_t pad) {
#pragma omp parallel for schedule(static)
  for (int64_t pi = 0; pi < p; ++pi)
    for (int64_t qi = 0; qi < q; ++qi)
      for (int64_t u = 0; u < kh; ++u)
        for (int64_t v = 0; v < kw; ++v)
          dw[((pi * q + qi) * kh + u) * kw + v] =
              wgrad_cell(outg, inp, ho, wo, h, wdt, stride, pad, pi, qi, u, v);
}

}  // namespace psfl::kernels
