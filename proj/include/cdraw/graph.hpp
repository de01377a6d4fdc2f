#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "cdraw/gemm.hpp"
#include "cdraw/tensor.hpp"

namespace cdraw {

// Trainable parameter: value plus accumulated gradient. Gradients accumulate
// across backward() calls; callers zero them between optimizer steps.
struct Param {
  Tensor value;
  Tensor grad;

  void ensure_grad() {
    if (!grad.defined()) grad = Tensor::zeros(value.shape());
  }
  void zero_grad() {
    ensure_grad();
    grad.fill(0.0f);
  }
};

class Graph;

// Lightweight handle to a node in a Graph.
struct Var {
  Graph* g = nullptr;
  int id = -1;
  const Tensor& val() const;
};

inline float coord_line(int64_t i, int64_t n) {
  return n == 1 ? -1.0f : -1.0f + 2.0f * (float)i / (float)(n - 1);
}

// Reverse-mode tape. Values are computed eagerly as ops are recorded; the
// graph is acyclic by construction (ops only reference existing nodes).
// Non-finite values are a hard error at every op boundary.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // ---- leaves ----

  Var input(Tensor t) {
    return make(std::move(t), false, {}, nullptr, "input");
  }

  Var param(Param& p) {
    for (auto& [ptr, id] : param_cache_)
      if (ptr == &p) return Var{this, id};
    Var v = make(p.value, true, {}, nullptr, "param");
    nodes_[(size_t)v.id].external = &p;
    param_cache_.emplace_back(&p, v.id);
    return v;
  }

  // Parameter excluded from gradient computation (e.g. a frozen network).
  Var frozen(const Param& p) {
    for (auto& [ptr, id] : frozen_cache_)
      if (ptr == &p) return Var{this, id};
    Var v = make(p.value, false, {}, nullptr, "frozen");
    frozen_cache_.emplace_back(&p, v.id);
    return v;
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    require_same_shape(a.val(), b.val(), "add");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    int pa = a.id, pb = b.id;
    return make(std::move(out), needs(a, b), {pa, pb}, [=](Graph& g) {
      const Tensor& go = g.node_grad(g.cur_);
      g.accum_flat(pa, go, 1.0f);
      g.accum_flat(pb, go, 1.0f);
    }, "add");
  }

  Var sub(Var a, Var b) {
    require_same_shape(a.val(), b.val(), "sub");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    int pa = a.id, pb = b.id;
    return make(std::move(out), needs(a, b), {pa, pb}, [=](Graph& g) {
      const Tensor& go = g.node_grad(g.cur_);
      g.accum_flat(pa, go, 1.0f);
      g.accum_flat(pb, go, -1.0f);
    }, "sub");
  }

  Var mul(Var a, Var b) {
    require_same_shape(a.val(), b.val(), "mul");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    int pa = a.id, pb = b.id;
    return make(std::move(out), needs(a, b), {pa, pb}, [=](Graph& g) {
      const Tensor& go = g.node_grad(g.cur_);
      if (g.wants(pa)) {
        Tensor& da = g.node_grad(pa);
        const Tensor& bv2 = g.node_value(pb);
        for (int64_t i = 0; i < go.size(); ++i) da[i] += go[i] * bv2[i];
      }
      if (g.wants(pb)) {
        Tensor& db = g.node_grad(pb);
        const Tensor& av = g.node_value(pa);
        for (int64_t i = 0; i < go.size(); ++i) db[i] += go[i] * av[i];
      }
    }, "mul");
  }

  Var scale(Var a, float s) {
    Tensor out = a.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
    int pa = a.id;
    return make(std::move(out), needs(a), {pa}, [=](Graph& g) {
      g.accum_flat(pa, g.node_grad(g.cur_), s);
    }, "scale");
  }

  Var sigmoid(Var a) {
    Tensor out = a.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = 1.0f / (1.0f + std::exp(-out[i]));
    int pa = a.id;
    return make(std::move(out), needs(a), {pa}, [=](Graph& g) {
      if (!g.wants(pa)) return;
      const Tensor& go = g.node_grad(g.cur_);
      const Tensor& y = g.node_value(g.cur_);
      Tensor& da = g.node_grad(pa);
      for (int64_t i = 0; i < go.size(); ++i) da[i] += go[i] * y[i] * (1.0f - y[i]);
    }, "sigmoid");
  }

  Var tanh_op(Var a) {
    Tensor out = a.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    int pa = a.id;
    return make(std::move(out), needs(a), {pa}, [=](Graph& g) {
      if (!g.wants(pa)) return;
      const Tensor& go = g.node_grad(g.cur_);
      const Tensor& y = g.node_value(g.cur_);
      Tensor& da = g.node_grad(pa);
      for (int64_t i = 0; i < go.size(); ++i) da[i] += go[i] * (1.0f - y[i] * y[i]);
    }, "tanh");
  }

  Var relu(Var a) {
    Tensor out = a.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0f ? out[i] : 0.0f;
    int pa = a.id;
    return make(std::move(out), needs(a), {pa}, [=](Graph& g) {
      if (!g.wants(pa)) return;
      const Tensor& go = g.node_grad(g.cur_);
      const Tensor& y = g.node_value(g.cur_);
      Tensor& da = g.node_grad(pa);
      for (int64_t i = 0; i < go.size(); ++i)
        if (y[i] > 0.0f) da[i] += go[i];
    }, "relu");
  }

  // Elementwise max. Gradient goes to the strictly larger side; exact ties
  // route to `a` (call sites pass the canvas-network output as `a`).
  Var pixel_max(Var a, Var b) {
    require_same_shape(a.val(), b.val(), "pixel_max");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] >= bv[i] ? out[i] : bv[i];
    int pa = a.id, pb = b.id;
    return make(std::move(out), needs(a, b), {pa, pb}, [=](Graph& g) {
      const Tensor& go = g.node_grad(g.cur_);
      const Tensor& av = g.node_value(pa);
      const Tensor& bv2 = g.node_value(pb);
      bool wa = g.wants(pa), wb = g.wants(pb);
      float* da = wa ? g.node_grad(pa).data() : nullptr;
      float* db = wb ? g.node_grad(pb).data() : nullptr;
      for (int64_t i = 0; i < go.size(); ++i) {
        if (av[i] >= bv2[i]) {
          if (da) da[i] += go[i];
        } else if (db) {
          db[i] += go[i];
        }
      }
    }, "pixel_max");
  }

  // ---- dense / shape ops ----

  Var matmul(Var x, Var w) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0))
      throw std::invalid_argument("matmul: shape mismatch " + shape_str(xv.shape()) + " x " +
                                  shape_str(wv.shape()));
    int64_t B = xv.dim(0), I = xv.dim(1), O = wv.dim(1);
    Tensor out({B, O});
    gemm(B, O, I, xv.data(), false, wv.data(), false, out.data(), false);
    int px = x.id, pw = w.id;
    return make(std::move(out), needs(x, w), {px, pw}, [=](Graph& g) {
      const Tensor& go = g.node_grad(g.cur_);
      if (g.wants(px))
        gemm(B, I, O, go.data(), false, g.node_value(pw).data(), true,
             g.node_grad(px).data(), true);
      if (g.wants(pw))
        gemm(I, O, B, g.node_value(px).data(), true, go.data(), false,
             g.node_grad(pw).data(), true);
    }, "matmul");
  }

  Var add_bias_cols(Var x, Var b) {
    const Tensor& xv = x.val();
    const Tensor& bv = b.val();
    if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1))
      throw std::invalid_argument("add_bias_cols: shape mismatch " + shape_str(xv.shape()) +
                                  " + " + shape_str(bv.shape()));
    int64_t B = xv.dim(0), N = xv.dim(1);
    Tensor out = xv;
    for (int64_t i = 0; i < B; ++i)
      for (int64_t j = 0; j < N; ++j) out.at(i, j) += bv[j];
    int px = x.id, pb = b.id;
    return make(std::move(out), needs(x, b), {px, pb}, [=](Graph& g) {
      const Tensor& go = g.node_grad(g.cur_);
      g.accum_flat(px, go, 1.0f);
      if (g.wants(pb)) {
        Tensor& db = g.node_grad(pb);
        for (int64_t i = 0; i < B; ++i)
          for (int64_t j = 0; j < N; ++j) db[j] += go.at(i, j);
      }
    }, "add_bias_cols");
  }

  Var add_bias_channels(Var x, Var b) {
    const Tensor& xv = x.val();
    const Tensor& bv = b.val();
    if (xv.rank() != 4 || bv.rank() != 1 || bv.dim(0) != xv.dim(1))
      throw std::invalid_argument("add_bias_channels: shape mismatch " +
                                  shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
    int64_t B = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
    Tensor out = xv;
    float* o = out.data();
    for (int64_t i = 0; i < B; ++i)
      for (int64_t c = 0; c < C; ++c) {
        float bias = bv[c];
        float* row = o + (i * C + c) * P;
        for (int64_t j = 0; j < P; ++j) row[j] += bias;
      }
    int px = x.id, pb = b.id;
    return make(std::move(out), needs(x, b), {px, pb}, [=](Graph& g) {
      const Tensor& go = g.node_grad(g.cur_);
      g.accum_flat(px, go, 1.0f);
      if (g.wants(pb)) {
        Tensor& db = g.node_grad(pb);
        const float* gp = go.data();
        for (int64_t i = 0; i < B; ++i)
          for (int64_t c = 0; c < C; ++c) {
            const float* row = gp + (i * C + c) * P;
            float s = 0.0f;
            for (int64_t j = 0; j < P; ++j) s += row[j];
            db[c] += s;
          }
      }
    }, "add_bias_channels");
  }

  Var reshape(Var x, Shape s) {
    Tensor out = x.val().reshaped(std::move(s));
    int px = x.id;
    return make(std::move(out), needs(x), {px}, [=](Graph& g) {
      g.accum_flat(px, g.node_grad(g.cur_), 1.0f);
    }, "reshape");
  }

  Var flatten(Var x) {
    const Tensor& xv = x.val();
    return reshape(x, {xv.dim(0), xv.size() / xv.dim(0)});
  }

  Var slice_cols(Var x, int64_t off, int64_t len) {
    const Tensor& xv = x.val();
    if (xv.rank() != 2 || off < 0 || len <= 0 || off + len > xv.dim(1))
      throw std::invalid_argument("slice_cols: bad range [" + std::to_string(off) + "," +
                                  std::to_string(off + len) + ") of " + shape_str(xv.shape()));
    int64_t B = xv.dim(0), N = xv.dim(1);
    Tensor out({B, len});
    for (int64_t i = 0; i < B; ++i)
      std::memcpy(out.data() + i * len, xv.data() + i * N + off, (size_t)len * 4);
    int px = x.id;
    return make(std::move(out), needs(x), {px}, [=](Graph& g) {
      if (!g.wants(px)) return;
      const Tensor& go = g.node_grad(g.cur_);
      Tensor& dx = g.node_grad(px);
      for (int64_t i = 0; i < B; ++i) {
        float* drow = dx.data() + i * N + off;
        const float* grow = go.data() + i * len;
        for (int64_t j = 0; j < len; ++j) drow[j] += grow[j];
      }
    }, "slice_cols");
  }

  Var concat_channels(Var a, Var b) {
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) ||
        av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
      throw std::invalid_argument("concat_channels: shape mismatch " + shape_str(av.shape()) +
                                  " | " + shape_str(bv.shape()));
    int64_t B = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), P = av.dim(2) * av.dim(3);
    Tensor out({B, Ca + Cb, av.dim(2), av.dim(3)});
    for (int64_t i = 0; i < B; ++i) {
      std::memcpy(out.data() + i * (Ca + Cb) * P, av.data() + i * Ca * P, (size_t)(Ca * P) * 4);
      std::memcpy(out.data() + (i * (Ca + Cb) + Ca) * P, bv.data() + i * Cb * P,
                  (size_t)(Cb * P) * 4);
    }
    int pa = a.id, pb = b.id;
    return make(std::move(out), needs(a, b), {pa, pb}, [=](Graph& g) {
      const Tensor& go = g.node_grad(g.cur_);
      if (g.wants(pa)) {
        Tensor& da = g.node_grad(pa);
        for (int64_t i = 0; i < B; ++i) {
          const float* src = go.data() + i * (Ca + Cb) * P;
          float* dst = da.data() + i * Ca * P;
          for (int64_t j = 0; j < Ca * P; ++j) dst[j] += src[j];
        }
      }
      if (g.wants(pb)) {
        Tensor& db = g.node_grad(pb);
        for (int64_t i = 0; i < B; ++i) {
          const float* src = go.data() + (i * (Ca + Cb) + Ca) * P;
          float* dst = db.data() + i * Cb * P;
          for (int64_t j = 0; j < Cb * P; ++j) dst[j] += src[j];
        }
      }
    }, "concat_channels");
  }

  // Appends x/y pixel coordinate channels, linspace over [-1,1] inclusive
  // (a single row or column yields -1). Gradient flows to the original
  // channels only.
  Var coord_augment(Var x) {
    const Tensor& xv = x.val();
    if (xv.rank() != 4)
      throw std::invalid_argument("coord_augment: expected B,C,H,W got " +
                                  shape_str(xv.shape()));
    int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor out({B, C + 2, H, W});
    int64_t P = H * W;
    for (int64_t i = 0; i < B; ++i) {
      std::memcpy(out.data() + i * (C + 2) * P, xv.data() + i * C * P, (size_t)(C * P) * 4);
      float* xc = out.data() + (i * (C + 2) + C) * P;
      float* yc = xc + P;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          xc[y * W + xx] = coord_line(xx, W);
          yc[y * W + xx] = coord_line(y, H);
        }
    }
    int px = x.id;
    return make(std::move(out), needs(x), {px}, [=](Graph& g) {
      if (!g.wants(px)) return;
      const Tensor& go = g.node_grad(g.cur_);
      Tensor& dx = g.node_grad(px);
      for (int64_t i = 0; i < B; ++i) {
        const float* src = go.data() + i * (C + 2) * P;
        float* dst = dx.data() + i * C * P;
        for (int64_t j = 0; j < C * P; ++j) dst[j] += src[j];
      }
    }, "coord_augment");
  }

  Var broadcast_spatial(Var v, int64_t H, int64_t W) {
    const Tensor& vv = v.val();
    if (vv.rank() != 2)
      throw std::invalid_argument("broadcast_spatial: expected B,E got " +
                                  shape_str(vv.shape()));
    int64_t B = vv.dim(0), E = vv.dim(1), P = H * W;
    Tensor out({B, E, H, W});
    for (int64_t i = 0; i < B; ++i)
      for (int64_t e = 0; e < E; ++e) {
        float val = vv.at(i, e);
        float* row = out.data() + (i * E + e) * P;
        for (int64_t j = 0; j < P; ++j) row[j] = val;
      }
    int pv = v.id;
    return make(std::move(out), needs(v), {pv}, [=](Graph& g) {
      if (!g.wants(pv)) return;
      const Tensor& go = g.node_grad(g.cur_);
      Tensor& dv = g.node_grad(pv);
      for (int64_t i = 0; i < B; ++i)
        for (int64_t e = 0; e < E; ++e) {
          const float* row = go.data() + (i * E + e) * P;
          float s = 0.0f;
          for (int64_t j = 0; j < P; ++j) s += row[j];
          dv.at(i, e) += s;
        }
    }, "broadcast_spatial");
  }

  // Nearest-neighbor 2x upsample.
  Var upsample2(Var x) {
    const Tensor& xv = x.val();
    if (xv.rank() != 4)
      throw std::invalid_argument("upsample2: expected B,C,H,W got " + shape_str(xv.shape()));
    int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor out({B, C, H * 2, W * 2});
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const float* src = xv.data() + bc * H * W;
      float* dst = out.data() + bc * 4 * H * W;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          float val = src[y * W + xx];
          float* d = dst + (2 * y) * (2 * W) + 2 * xx;
          d[0] = val;
          d[1] = val;
          d[2 * W] = val;
          d[2 * W + 1] = val;
        }
    }
    int px = x.id;
    return make(std::move(out), needs(x), {px}, [=](Graph& g) {
      if (!g.wants(px)) return;
      const Tensor& go = g.node_grad(g.cur_);
      Tensor& dx = g.node_grad(px);
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const float* src = go.data() + bc * 4 * H * W;
        float* dst = dx.data() + bc * H * W;
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) {
            const float* s = src + (2 * y) * (2 * W) + 2 * xx;
            dst[y * W + xx] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
          }
      }
    }, "upsample2");
  }

  // Cross-correlation, NCHW input, OIHW kernel. im2col + GEMM; the column
  // buffer is recomputed in backward rather than stored.
  Var conv2d(Var x, Var k, int stride, int pad) {
    const Tensor& xv = x.val();
    const Tensor& kv = k.val();
    if (xv.rank() != 4 || kv.rank() != 4)
      throw std::invalid_argument("conv2d: expected B,C,H,W and O,I,KH,KW got " +
                                  shape_str(xv.shape()) + " , " + shape_str(kv.shape()));
    if (xv.dim(1) != kv.dim(1))
      throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kv.dim(1)) +
                                  " in-channels, input has " + std::to_string(xv.dim(1)));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    int64_t B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int64_t Co = kv.dim(0), KH = kv.dim(2), KW = kv.dim(3);
    if (H + 2 * pad < KH || W + 2 * pad < KW)
      throw std::invalid_argument("conv2d: kernel larger than padded input");
    int64_t OH = (H + 2 * pad - KH) / stride + 1;
    int64_t OW = (W + 2 * pad - KW) / stride + 1;
    int64_t P = OH * OW, CKK = Ci * KH * KW;

    std::vector<float>& col = scratch_buffer(0);
    col.assign((size_t)(CKK * B * P), 0.0f);
    for (int64_t b = 0; b < B; ++b)
      im2col(xv.data() + b * Ci * H * W, Ci, H, W, KH, KW, stride, pad, OH, OW,
             col.data() + b * P, B * P);

    std::vector<float>& outmat = scratch_buffer(1);
    outmat.resize((size_t)(Co * B * P));
    gemm(Co, B * P, CKK, kv.data(), false, col.data(), false, outmat.data(), false);

    Tensor out({B, Co, OH, OW});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < Co; ++o)
        std::memcpy(out.data() + (b * Co + o) * P, outmat.data() + o * B * P + b * P,
                    (size_t)P * 4);

    int px = x.id, pk = k.id;
    int s = stride, p = pad;
    return make(std::move(out), needs(x, k), {px, pk}, [=](Graph& g) {
      bool wx = g.wants(px), wk = g.wants(pk);
      if (!wx && !wk) return;
      const Tensor& go = g.node_grad(g.cur_);
      const Tensor& xval = g.node_value(px);
      const Tensor& kval = g.node_value(pk);

      std::vector<float>& gmat = scratch_buffer(1);
      gmat.resize((size_t)(Co * B * P));
      for (int64_t b = 0; b < B; ++b)
        for (int64_t o = 0; o < Co; ++o)
          std::memcpy(gmat.data() + o * B * P + b * P, go.data() + (b * Co + o) * P,
                      (size_t)P * 4);

      if (wk) {
        std::vector<float>& col2 = scratch_buffer(0);
        col2.assign((size_t)(CKK * B * P), 0.0f);
        for (int64_t b = 0; b < B; ++b)
          im2col(xval.data() + b * Ci * H * W, Ci, H, W, KH, KW, s, p, OH, OW,
                 col2.data() + b * P, B * P);
        gemm(Co, CKK, B * P, gmat.data(), false, col2.data(), true,
             g.node_grad(pk).data(), true);
      }
      if (wx) {
        std::vector<float>& dcol = scratch_buffer(2);
        dcol.resize((size_t)(CKK * B * P));
        gemm(CKK, B * P, Co, kval.data(), true, gmat.data(), false, dcol.data(), false);
        Tensor& dx = g.node_grad(px);
        for (int64_t b = 0; b < B; ++b)
          col2im_add(dcol.data() + b * P, Ci, H, W, KH, KW, s, p, OH, OW, B * P,
                     dx.data() + b * Ci * H * W);
      }
    }, "conv2d");
  }

  // ---- reductions ----

  Var sum(Var x) {
    double s = 0.0;
    const Tensor& xv = x.val();
    for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
    Tensor out({1});
    out[0] = (float)s;
    int px = x.id;
    return make(std::move(out), needs(x), {px}, [=](Graph& g) {
      if (!g.wants(px)) return;
      float gs = g.node_grad(g.cur_)[0];
      Tensor& dx = g.node_grad(px);
      for (int64_t i = 0; i < dx.size(); ++i) dx[i] += gs;
    }, "sum");
  }

  // Sum of squared differences over all elements, divided by the leading
  // (batch) dimension.
  Var sse_loss(Var pred, Var target) {
    require_same_shape(pred.val(), target.val(), "sse_loss");
    int64_t B = pred.val().dim(0);
    const Tensor& pv = pred.val();
    const Tensor& tv = target.val();
    double s = 0.0;
    for (int64_t i = 0; i < pv.size(); ++i) {
      double d = (double)pv[i] - (double)tv[i];
      s += d * d;
    }
    Tensor out({1});
    out[0] = (float)(s / (double)B);
    int pp = pred.id, pt = target.id;
    return make(std::move(out), needs(pred, target), {pp, pt}, [=](Graph& g) {
      float gs = g.node_grad(g.cur_)[0] * 2.0f / (float)B;
      const Tensor& pv2 = g.node_value(pp);
      const Tensor& tv2 = g.node_value(pt);
      if (g.wants(pp)) {
        Tensor& dp = g.node_grad(pp);
        for (int64_t i = 0; i < pv2.size(); ++i) dp[i] += gs * (pv2[i] - tv2[i]);
      }
      if (g.wants(pt)) {
        Tensor& dt = g.node_grad(pt);
        for (int64_t i = 0; i < pv2.size(); ++i) dt[i] -= gs * (pv2[i] - tv2[i]);
      }
    }, "sse_loss");
  }

  // ---- engine ----

  // Reverse accumulation from a scalar loss. Parameter gradients accumulate
  // into Param::grad; repeated calls without zeroing keep accumulating.
  void backward(Var loss) {
    if (loss.g != this) throw std::invalid_argument("backward: foreign node");
    Node& ln = nodes_[(size_t)loss.id];
    if (ln.value.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(ln.value.shape()));
    std::vector<char> visited(nodes_.size(), 0);
    std::vector<int> stack{loss.id};
    visited[(size_t)loss.id] = 1;
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      for (int p : nodes_[(size_t)id].parents)
        if (!visited[(size_t)p]) {
          visited[(size_t)p] = 1;
          stack.push_back(p);
        }
    }
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (visited[i] && nodes_[i].needs_grad && !nodes_[i].grad.defined())
        nodes_[i].grad = Tensor::zeros(nodes_[i].value.shape());
    if (!ln.needs_grad) return;  // constant graph, nothing to do
    ln.grad[0] = 1.0f;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[(size_t)id];
      if (!visited[(size_t)id] || !n.needs_grad || !n.back) continue;
      cur_ = id;
      n.back(*this);
    }
    for (auto& [ptr, id] : param_cache_) {
      Node& n = nodes_[(size_t)id];
      if (!visited[(size_t)id] || !n.grad.defined()) continue;
      ptr->ensure_grad();
      for (int64_t i = 0; i < n.grad.size(); ++i) ptr->grad[i] += n.grad[i];
    }
  }

  const Tensor& node_value(int id) const { return nodes_[(size_t)id].value; }
  Tensor& node_grad(int id) { return nodes_[(size_t)id].grad; }
  bool wants(int id) const { return nodes_[(size_t)id].needs_grad; }
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::vector<int> parents;
    std::function<void(Graph&)> back;
    Param* external = nullptr;
  };

  bool needs(Var a) const {
    if (a.g != this || a.id < 0 || (size_t)a.id >= nodes_.size())
      throw std::invalid_argument("graph op: node from another graph");
    return nodes_[(size_t)a.id].needs_grad;
  }
  bool needs(Var a, Var b) const { return needs(a) | needs(b); }

  Var make(Tensor value, bool needs_grad, std::vector<int> parents,
           std::function<void(Graph&)> back, const char* opname) {
    value.check_finite(opname);
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.parents = std::move(parents);
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, (int)nodes_.size() - 1};
  }

  void accum_flat(int id, const Tensor& g, float s) {
    if (!wants(id)) return;
    Tensor& d = node_grad(id);
    for (int64_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
  }

  static void im2col(const float* x, int64_t C, int64_t H, int64_t W, int64_t KH, int64_t KW,
                     int stride, int pad, int64_t OH, int64_t OW, float* col, int64_t ld) {
    for (int64_t c = 0; c < C; ++c)
      for (int64_t ki = 0; ki < KH; ++ki)
        for (int64_t kj = 0; kj < KW; ++kj) {
          float* row = col + ((c * KH + ki) * KW + kj) * ld;
          for (int64_t oy = 0; oy < OH; ++oy) {
            int64_t iy = oy * stride + ki - pad;
            if (iy < 0 || iy >= H) continue;  // buffer pre-zeroed
            const float* src = x + (c * H + iy) * W;
            float* dst = row + oy * OW;
            for (int64_t ox = 0; ox < OW; ++ox) {
              int64_t ix = ox * stride + kj - pad;
              if (ix >= 0 && ix < W) dst[ox] = src[ix];
            }
          }
        }
  }

  static void col2im_add(const float* dcol, int64_t C, int64_t H, int64_t W, int64_t KH,
                         int64_t KW, int stride, int pad, int64_t OH, int64_t OW, int64_t ld,
                         float* dx) {
    for (int64_t c = 0; c < C; ++c)
      for (int64_t ki = 0; ki < KH; ++ki)
        for (int64_t kj = 0; kj < KW; ++kj) {
          const float* row = dcol + ((c * KH + ki) * KW + kj) * ld;
          for (int64_t oy = 0; oy < OH; ++oy) {
            int64_t iy = oy * stride + ki - pad;
            if (iy < 0 || iy >= H) continue;
            float* dst = dx + (c * H + iy) * W;
            const float* src = row + oy * OW;
            for (int64_t ox = 0; ox < OW; ++ox) {
              int64_t ix = ox * stride + kj - pad;
              if (ix >= 0 && ix < W) dst[ix] += src[ox];
            }
          }
        }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Param*, int>> param_cache_;
  std::vector<std::pair<const Param*, int>> frozen_cache_;
  int cur_ = -1;
};

inline const Tensor& Var::val() const { return g->node_value(id); }

// Standard LSTM cell built from primitive ops. Gate order in the fused
// weight matrices is input, forget, candidate, output. w_ih: [I,4H],
// w_hh: [H,4H], b: [4H].
inline std::pair<Var, Var> lstm_step(Graph& g, Var x, Var h, Var c, Var w_ih, Var w_hh,
                                     Var b) {
  int64_t H4 = w_ih.val().dim(1);
  if (H4 % 4 != 0 || w_hh.val().dim(1) != H4 || b.val().dim(0) != H4 ||
      w_hh.val().dim(0) != H4 / 4 || h.val().dim(1) != H4 / 4 || c.val().dim(1) != H4 / 4)
    throw std::invalid_argument("lstm_step: inconsistent weight shapes");
  int64_t Hd = H4 / 4;
  Var gates = g.add_bias_cols(g.add(g.matmul(x, w_ih), g.matmul(h, w_hh)), b);
  Var gi = g.sigmoid(g.slice_cols(gates, 0, Hd));
  Var gf = g.sigmoid(g.slice_cols(gates, Hd, Hd));
  Var gc = g.tanh_op(g.slice_cols(gates, 2 * Hd, Hd));
  Var go = g.sigmoid(g.slice_cols(gates, 3 * Hd, Hd));
  Var c2 = g.add(g.mul(gf, c), g.mul(gi, gc));
  Var h2 = g.mul(go, g.tanh_op(c2));
  return {h2, c2};
}

}  // namespace cdraw
