#pragma once

// Independent reference implementations used to check the library. These are
// deliberately naive (scalar loops, brute force) and must not call into the
// code paths they verify.

#include <cmath>
#include <functional>
#include <vector>

#include "cdraw/tensor.hpp"

namespace oracle {

using cdraw::Tensor;

// Direct cross-correlation, quadruple loop per output element.
inline Tensor conv2d_naive(const Tensor& x, const Tensor& k, int stride, int pad) {
  int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Co = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  int64_t OH = (H + 2 * pad - KH) / stride + 1;
  int64_t OW = (W + 2 * pad - KW) / stride + 1;
  Tensor out({B, Co, OH, OW});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < Co; ++o)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          double acc = 0.0;
          for (int64_t c = 0; c < Ci; ++c)
            for (int64_t ki = 0; ki < KH; ++ki)
              for (int64_t kj = 0; kj < KW; ++kj) {
                int64_t iy = oy * stride + ki - pad;
                int64_t ix = ox * stride + kj - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += (double)x.at(b, c, iy, ix) * (double)k.at(o, c, ki, kj);
              }
          out.at(b, o, oy, ox) = (float)acc;
        }
  return out;
}

// Gate-by-gate scalar LSTM cell. Weight layout matches the library docs:
// w_ih [I,4H], w_hh [H,4H], fused gate order input, forget, candidate,
// output. Returns {h', c'}.
inline std::pair<Tensor, Tensor> lstm_step_scalar(const Tensor& x, const Tensor& h,
                                                  const Tensor& c, const Tensor& w_ih,
                                                  const Tensor& w_hh, const Tensor& b) {
  int64_t B = x.dim(0), I = x.dim(1), Hd = h.dim(1);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  Tensor h2({B, Hd}), c2({B, Hd});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t j = 0; j < Hd; ++j) {
      double pre[4];
      for (int g = 0; g < 4; ++g) {
        double acc = b[g * Hd + j];
        for (int64_t i = 0; i < I; ++i) acc += (double)x.at(n, i) * w_ih.at(i, g * Hd + j);
        for (int64_t i = 0; i < Hd; ++i) acc += (double)h.at(n, i) * w_hh.at(i, g * Hd + j);
        pre[g] = acc;
      }
      double gi = sig(pre[0]), gf = sig(pre[1]), gc = std::tanh(pre[2]), go = sig(pre[3]);
      double cc = gf * (double)c.at(n, j) + gi * gc;
      c2.at(n, j) = (float)cc;
      h2.at(n, j) = (float)(go * std::tanh(cc));
    }
  return {h2, c2};
}

// Central finite difference of a scalar function w.r.t. one tensor element.
inline double central_diff(const std::function<double()>& eval, float& elem, double h) {
  float saved = elem;
  elem = (float)(saved + h);
  double up = eval();
  elem = (float)(saved - h);
  double down = eval();
  elem = saved;
  return (up - down) / (2.0 * h);
}

// Spec tolerance: 1e-2 relative or 1e-4 absolute, whichever is looser.
inline bool grad_close(double got, double want) {
  double diff = std::fabs(got - want);
  return diff <= 1e-4 || diff <= 1e-2 * std::max(std::fabs(got), std::fabs(want));
}

}  // namespace oracle
