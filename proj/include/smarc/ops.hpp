#pragma once

#include "smarc/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace smarc {

enum class Padding { Same, Valid };

struct ConvOpts {
  Index stride = 1;
  Index dilation = 1;
  Padding padding = Padding::Same;
};

namespace detail {

struct ConvGeom {
  Index batch, ih, iw, ic;
  Index kh, kw, oc;
  Index oh, ow;
  Index stride, dilation, pad_top, pad_left;

  Index rows() const { return batch * oh * ow; }
  Index row_len() const { return kh * kw * ic; }
};

inline ConvGeom conv_geom(const Shape& x, const Shape& w, const ConvOpts& o) {
  ConvGeom g;
  g.batch = x[0];
  g.ih = x[1];
  g.iw = x[2];
  g.ic = x[3];
  g.kh = w[0];
  g.kw = w[1];
  g.oc = w[3];
  g.stride = o.stride;
  g.dilation = o.dilation;
  const Index ekh = o.dilation * (g.kh - 1) + 1;
  const Index ekw = o.dilation * (g.kw - 1) + 1;
  if (o.padding == Padding::Same) {
    g.oh = (g.ih + o.stride - 1) / o.stride;
    g.ow = (g.iw + o.stride - 1) / o.stride;
    const Index ph = std::max<Index>(0, (g.oh - 1) * o.stride + ekh - g.ih);
    const Index pw = std::max<Index>(0, (g.ow - 1) * o.stride + ekw - g.iw);
    g.pad_top = ph / 2;
    g.pad_left = pw / 2;
  } else {
    if (g.ih < ekh || g.iw < ekw)
      fail("conv2d: valid padding needs input " + shape_str(x) + " at least as large as the " +
           std::to_string(ekh) + "x" + std::to_string(ekw) + " effective kernel");
    g.oh = (g.ih - ekh) / o.stride + 1;
    g.ow = (g.iw - ekw) / o.stride + 1;
    g.pad_top = 0;
    g.pad_left = 0;
  }
  return g;
}

template <class S>
MatrixRM<S> im2col(const S* x, const ConvGeom& g) {
  MatrixRM<S> cols = MatrixRM<S>::Zero(g.rows(), g.row_len());
  for (Index b = 0; b < g.batch; ++b) {
    const S* img = x + b * g.ih * g.iw * g.ic;
    for (Index oy = 0; oy < g.oh; ++oy) {
      for (Index ky = 0; ky < g.kh; ++ky) {
        const Index iy = oy * g.stride - g.pad_top + ky * g.dilation;
        if (iy < 0 || iy >= g.ih) continue;
        for (Index ox = 0; ox < g.ow; ++ox) {
          S* row = cols.data() + ((b * g.oh + oy) * g.ow + ox) * g.row_len();
          for (Index kx = 0; kx < g.kw; ++kx) {
            const Index ix = ox * g.stride - g.pad_left + kx * g.dilation;
            if (ix < 0 || ix >= g.iw) continue;
            const S* src = img + (iy * g.iw + ix) * g.ic;
            std::copy(src, src + g.ic, row + (ky * g.kw + kx) * g.ic);
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-add patch rows back into image layout.
template <class S>
void col2im_add(const MatrixRM<S>& cols, const ConvGeom& g, S* x) {
  for (Index b = 0; b < g.batch; ++b) {
    S* img = x + b * g.ih * g.iw * g.ic;
    for (Index oy = 0; oy < g.oh; ++oy) {
      for (Index ky = 0; ky < g.kh; ++ky) {
        const Index iy = oy * g.stride - g.pad_top + ky * g.dilation;
        if (iy < 0 || iy >= g.ih) continue;
        for (Index ox = 0; ox < g.ow; ++ox) {
          const S* row = cols.data() + ((b * g.oh + oy) * g.ow + ox) * g.row_len();
          for (Index kx = 0; kx < g.kw; ++kx) {
            const Index ix = ox * g.stride - g.pad_left + kx * g.dilation;
            if (ix < 0 || ix >= g.iw) continue;
            S* dst = img + (iy * g.iw + ix) * g.ic;
            const S* src = row + (ky * g.kw + kx) * g.ic;
            for (Index c = 0; c < g.ic; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

template <class S>
void check_finite(const Tensor<S>& t, const char* op) {
  if (checked_mode() && !t.all_finite()) fail(std::string(op) + ": non-finite input");
}

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
}

}  // namespace detail

/// Cross-correlation over BHWC input with a kh x kw x Cin x Cout kernel.
/// "Same" padding pads with zeros and preserves H x W at stride 1.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias = {},
                 const ConvOpts& opts = {}) {
  if (x.rank() != 4) fail("conv2d: input must be BHWC, got " + shape_str(x.shape()));
  if (w.rank() != 4) fail("conv2d: weight must be kh x kw x Cin x Cout, got " + shape_str(w.shape()));
  if (x.dim(3) != w.dim(2))
    fail("conv2d: channel mismatch between input " + shape_str(x.shape()) + " and weight " +
         shape_str(w.shape()));
  if (opts.stride < 1 || opts.dilation < 1) fail("conv2d: stride and dilation must be >= 1");
  if (bias.defined() && bias.size() != w.dim(3))
    fail("conv2d: bias " + shape_str(bias.shape()) + " does not match Cout of weight " +
         shape_str(w.shape()));

  const detail::ConvGeom g = detail::conv_geom(x.shape(), w.shape(), opts);
  MatrixRM<S> cols = detail::im2col(x.data(), g);

  Tensor<S> out = detail::make_result<S>(
      {g.batch, g.oh, g.ow, g.oc}, {x, w, bias},
      [x = x, w = w, bias = bias, g](detail::TensorImpl<S>& self) mutable {
        MapConstMat<S> gout(self.grad.data(), g.rows(), g.oc);
        if (w.requires_grad()) {
          MatrixRM<S> cols2 = detail::im2col(x.data(), g);
          MapMat<S> gw(w.grad().data(), g.row_len(), g.oc);
          gw.noalias() += cols2.transpose() * gout;
        }
        if (x.requires_grad()) {
          MapConstMat<S> wm(w.data(), g.row_len(), g.oc);
          MatrixRM<S> gcols = gout * wm.transpose();
          detail::col2im_add(gcols, g, x.grad().data());
        }
        if (bias.defined() && bias.requires_grad()) {
          MapVec<S> gb(bias.grad().data(), g.oc);
          gb.noalias() += gout.colwise().sum().transpose();
        }
      });

  MapMat<S> om(out.data(), g.rows(), g.oc);
  MapConstMat<S> wm(w.data(), g.row_len(), g.oc);
  om.noalias() = cols * wm;
  if (bias.defined()) om.rowwise() += MapConstVec<S>(bias.data(), g.oc).transpose();
  return out;
}

/// Stride-2 transposed convolution, output pinned to exactly 2x the input
/// spatial extent. Weight layout is kh x kw x Cout x Cin (adjoint of a
/// stride-2 conv with pad (k-1)/2).
template <class S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias = {},
                           Index stride = 2) {
  if (stride != 2) fail("conv_transpose2d: only stride 2 is supported");
  if (x.rank() != 4) fail("conv_transpose2d: input must be BHWC, got " + shape_str(x.shape()));
  if (w.rank() != 4)
    fail("conv_transpose2d: weight must be kh x kw x Cout x Cin, got " + shape_str(w.shape()));
  if (x.dim(3) != w.dim(3))
    fail("conv_transpose2d: channel mismatch between input " + shape_str(x.shape()) +
         " and weight " + shape_str(w.shape()));

  // Geometry of the virtual forward conv this op is the adjoint of.
  detail::ConvGeom g;
  g.batch = x.dim(0);
  g.oh = x.dim(1);
  g.ow = x.dim(2);
  g.oc = x.dim(3);
  g.kh = w.dim(0);
  g.kw = w.dim(1);
  g.ic = w.dim(2);
  g.ih = 2 * g.oh;
  g.iw = 2 * g.ow;
  g.stride = 2;
  g.dilation = 1;
  g.pad_top = (g.kh - 1) / 2;
  g.pad_left = (g.kw - 1) / 2;
  if (bias.defined() && bias.size() != g.ic)
    fail("conv_transpose2d: bias " + shape_str(bias.shape()) + " does not match Cout of weight " +
         shape_str(w.shape()));

  Tensor<S> out = detail::make_result<S>(
      {g.batch, g.ih, g.iw, g.ic}, {x, w, bias},
      [x = x, w = w, bias = bias, g](detail::TensorImpl<S>& self) mutable {
        const Index n = g.rows();
        if (x.requires_grad() || w.requires_grad()) {
          MatrixRM<S> cols = detail::im2col(self.grad.data(), g);
          if (x.requires_grad()) {
            MapConstMat<S> wm(w.data(), g.row_len(), g.oc);
            MapMat<S> gx(x.grad().data(), n, g.oc);
            gx.noalias() += cols * wm;
          }
          if (w.requires_grad()) {
            MapConstMat<S> xm(x.data(), n, g.oc);
            MapMat<S> gw(w.grad().data(), g.row_len(), g.oc);
            gw.noalias() += cols.transpose() * xm;
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          MapConstMat<S> gm(self.grad.data(), g.batch * g.ih * g.iw, g.ic);
          MapVec<S> gb(bias.grad().data(), g.ic);
          gb.noalias() += gm.colwise().sum().transpose();
        }
      });

  MapConstMat<S> xm(x.data(), g.rows(), g.oc);
  MapConstMat<S> wm(w.data(), g.row_len(), g.oc);
  MatrixRM<S> cols = xm * wm.transpose();
  out.array().setZero();
  detail::col2im_add(cols, g, out.data());
  if (bias.defined()) {
    MapMat<S> om(out.data(), g.batch * g.ih * g.iw, g.ic);
    om.rowwise() += MapConstVec<S>(bias.data(), g.ic).transpose();
  }
  return out;
}

enum class PoolKind { Avg, Max };

/// 2x2 window, stride-2 pooling. Max routes gradient to the argmax with a
/// first-index (row-major) tie-break.
template <class S>
Tensor<S> pool2d(const Tensor<S>& x, PoolKind kind, Index window = 2, Index stride = 2) {
  if (x.rank() != 4) fail("pool2d: input must be BHWC, got " + shape_str(x.shape()));
  if (window != 2 || stride != 2) fail("pool2d: only window 2 / stride 2 is supported");
  const Index b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    fail("pool2d: spatial extents must be even, got " + shape_str(x.shape()));
  const Index oh = h / 2, ow = w / 2;

  auto argmax = std::make_shared<std::vector<std::uint8_t>>();
  if (kind == PoolKind::Max) argmax->resize(static_cast<std::size_t>(b * oh * ow * c));

  Tensor<S> out = detail::make_result<S>(
      {b, oh, ow, c}, {x},
      [x = x, kind, argmax, b, h, w, c, oh, ow](detail::TensorImpl<S>& self) mutable {
        auto& gx = x.grad();
        const S* g = self.grad.data();
        for (Index bi = 0; bi < b; ++bi)
          for (Index oy = 0; oy < oh; ++oy)
            for (Index ox = 0; ox < ow; ++ox)
              for (Index ci = 0; ci < c; ++ci) {
                const Index oidx = ((bi * oh + oy) * ow + ox) * c + ci;
                const Index base = ((bi * h + 2 * oy) * w + 2 * ox) * c + ci;
                if (kind == PoolKind::Avg) {
                  const S q = g[oidx] / S(4);
                  gx[base] += q;
                  gx[base + c] += q;
                  gx[base + w * c] += q;
                  gx[base + w * c + c] += q;
                } else {
                  const Index off = (*argmax)[static_cast<std::size_t>(oidx)];
                  const Index dy = off / 2, dx = off % 2;
                  gx[base + dy * w * c + dx * c] += g[oidx];
                }
              }
      });

  const S* in = x.data();
  S* o = out.data();
  for (Index bi = 0; bi < b; ++bi)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index ci = 0; ci < c; ++ci) {
          const Index base = ((bi * h + 2 * oy) * w + 2 * ox) * c + ci;
          const S v00 = in[base], v01 = in[base + c];
          const S v10 = in[base + w * c], v11 = in[base + w * c + c];
          const Index oidx = ((bi * oh + oy) * ow + ox) * c + ci;
          if (kind == PoolKind::Avg) {
            o[oidx] = (v00 + v01 + v10 + v11) / S(4);
          } else {
            S best = v00;
            std::uint8_t off = 0;
            if (v01 > best) { best = v01; off = 1; }
            if (v10 > best) { best = v10; off = 2; }
            if (v11 > best) { best = v11; off = 3; }
            o[oidx] = best;
            if (!argmax->empty()) (*argmax)[static_cast<std::size_t>(oidx)] = off;
          }
        }
  return out;
}

template <class S>
Tensor<S> avg_pool2d(const Tensor<S>& x) { return pool2d(x, PoolKind::Avg); }
template <class S>
Tensor<S> max_pool2d(const Tensor<S>& x) { return pool2d(x, PoolKind::Max); }

/// Fully connected layer: [B, F] x [F, U] + bias.
template <class S>
Tensor<S> dense(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias = {}) {
  if (x.rank() != 2) fail("dense: input must be [B, F], got " + shape_str(x.shape()));
  if (w.rank() != 2) fail("dense: weight must be [F, U], got " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(0))
    fail("dense: feature mismatch between input " + shape_str(x.shape()) + " and weight " +
         shape_str(w.shape()));
  if (bias.defined() && bias.size() != w.dim(1))
    fail("dense: bias " + shape_str(bias.shape()) + " does not match units of weight " +
         shape_str(w.shape()));
  detail::check_finite(x, "dense");
  const Index b = x.dim(0), f = x.dim(1), u = w.dim(1);

  Tensor<S> out = detail::make_result<S>(
      {b, u}, {x, w, bias},
      [x = x, w = w, bias = bias, b, f, u](detail::TensorImpl<S>& self) mutable {
        MapConstMat<S> gout(self.grad.data(), b, u);
        if (x.requires_grad()) {
          MapConstMat<S> wm(w.data(), f, u);
          MapMat<S> gx(x.grad().data(), b, f);
          gx.noalias() += gout * wm.transpose();
        }
        if (w.requires_grad()) {
          MapConstMat<S> xm(x.data(), b, f);
          MapMat<S> gw(w.grad().data(), f, u);
          gw.noalias() += xm.transpose() * gout;
        }
        if (bias.defined() && bias.requires_grad()) {
          MapVec<S> gb(bias.grad().data(), u);
          gb.noalias() += gout.colwise().sum().transpose();
        }
      });

  MapMat<S> om(out.data(), b, u);
  MapConstMat<S> xm(x.data(), b, f);
  MapConstMat<S> wm(w.data(), f, u);
  om.noalias() = xm * wm;
  if (bias.defined()) om.rowwise() += MapConstVec<S>(bias.data(), u).transpose();
  return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  detail::check_finite(x, "relu");
  Tensor<S> out = detail::make_result<S>(
      x.shape(), {x},
      [x = x](detail::TensorImpl<S>& self) mutable {
        x.grad() += self.grad * (x.array() > S(0)).template cast<S>();
      });
  out.array() = x.array().max(S(0));
  return out;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  detail::check_finite(x, "sigmoid");
  Tensor<S> out = detail::make_result<S>(
      x.shape(), {x},
      [x = x](detail::TensorImpl<S>& self) mutable {
        x.grad() += self.grad * self.values * (S(1) - self.values);
      });
  // Branch keeps exp() argument non-positive for stability.
  out.array() = (x.array() >= S(0))
                    .select(S(1) / (S(1) + (-x.array()).exp()),
                            x.array().exp() / (S(1) + x.array().exp()));
  return out;
}

/// Softmax over the last axis; rows sum to 1.
template <class S>
Tensor<S> softmax(const Tensor<S>& x, Index axis = -1) {
  if (x.rank() < 1) fail("softmax: rank-0 input");
  if (axis != -1 && axis != x.rank() - 1) fail("softmax: only the last axis is supported");
  detail::check_finite(x, "softmax");
  const Index k = x.dim(x.rank() - 1);
  const Index rows = x.size() / k;

  Tensor<S> out = detail::make_result<S>(
      x.shape(), {x},
      [x = x, rows, k](detail::TensorImpl<S>& self) mutable {
        auto& gx = x.grad();
        const S* s = self.values.data();
        const S* g = self.grad.data();
        for (Index r = 0; r < rows; ++r) {
          const S* sr = s + r * k;
          const S* gr = g + r * k;
          S dot = S(0);
          for (Index i = 0; i < k; ++i) dot += sr[i] * gr[i];
          for (Index i = 0; i < k; ++i) gx[r * k + i] += sr[i] * (gr[i] - dot);
        }
      });

  for (Index r = 0; r < rows; ++r) {
    const S* in = x.data() + r * k;
    S* o = out.data() + r * k;
    S m = in[0];
    for (Index i = 1; i < k; ++i) m = std::max(m, in[i]);
    S sum = S(0);
    for (Index i = 0; i < k; ++i) {
      o[i] = std::exp(in[i] - m);
      sum += o[i];
    }
    for (Index i = 0; i < k; ++i) o[i] /= sum;
  }
  return out;
}

/// Spatial mean per channel: BHWC -> [B, C].
template <class S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.rank() != 4) fail("global_avg_pool: input must be BHWC, got " + shape_str(x.shape()));
  detail::check_finite(x, "global_avg_pool");
  const Index b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);

  Tensor<S> out = detail::make_result<S>(
      {b, c}, {x},
      [x = x, b, hw, c](detail::TensorImpl<S>& self) mutable {
        auto& gx = x.grad();
        const S inv = S(1) / static_cast<S>(hw);
        for (Index bi = 0; bi < b; ++bi) {
          MapMat<S> gxm(gx.data() + bi * hw * c, hw, c);
          MapConstVec<S> gr(self.grad.data() + bi * c, c);
          gxm.rowwise() += (gr * inv).transpose();
        }
      });

  for (Index bi = 0; bi < b; ++bi) {
    MapConstMat<S> xm(x.data() + bi * hw * c, hw, c);
    MapVec<S> om(out.data() + bi * c, c);
    om = xm.colwise().mean().transpose();
  }
  return out;
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<S> out = detail::make_result<S>(
      a.shape(), {a, b},
      [a = a, b = b](detail::TensorImpl<S>& self) mutable {
        if (a.requires_grad()) a.grad() += self.grad;
        if (b.requires_grad()) b.grad() += self.grad;
      });
  out.array() = a.array() + b.array();
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<S> out = detail::make_result<S>(
      a.shape(), {a, b},
      [a = a, b = b](detail::TensorImpl<S>& self) mutable {
        if (a.requires_grad()) a.grad() += self.grad;
        if (b.requires_grad()) b.grad() -= self.grad;
      });
  out.array() = a.array() - b.array();
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<S> out = detail::make_result<S>(
      a.shape(), {a, b},
      [a = a, b = b](detail::TensorImpl<S>& self) mutable {
        if (a.requires_grad()) a.grad() += self.grad * b.array();
        if (b.requires_grad()) b.grad() += self.grad * a.array();
      });
  out.array() = a.array() * b.array();
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  Tensor<S> out = detail::make_result<S>(
      x.shape(), {x},
      [x = x, factor](detail::TensorImpl<S>& self) mutable { x.grad() += self.grad * factor; });
  out.array() = x.array() * factor;
  return out;
}

template <class S>
Tensor<S> abs(const Tensor<S>& x) {
  Tensor<S> out = detail::make_result<S>(
      x.shape(), {x},
      [x = x](detail::TensorImpl<S>& self) mutable {
        x.grad() += self.grad * x.array().sign();
      });
  out.array() = x.array().abs();
  return out;
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> out = detail::make_result<S>(
      {1}, {x},
      [x = x](detail::TensorImpl<S>& self) mutable { x.grad() += self.grad[0]; });
  out.array()[0] = x.array().sum();
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.size()));
}

/// Multiply a BHWC tensor by a single-channel BHW1 map (mask or weight map).
template <class S>
Tensor<S> broadcast_mul(const Tensor<S>& x, const Tensor<S>& m) {
  if (x.rank() != 4 || m.rank() != 4 || m.dim(3) != 1 || x.dim(0) != m.dim(0) ||
      x.dim(1) != m.dim(1) || x.dim(2) != m.dim(2))
    fail("broadcast_mul: incompatible shapes " + shape_str(x.shape()) + " vs " +
         shape_str(m.shape()));
  const Index n = m.size(), c = x.dim(3);

  Tensor<S> out = detail::make_result<S>(
      x.shape(), {x, m},
      [x = x, m = m, n, c](detail::TensorImpl<S>& self) mutable {
        if (x.requires_grad()) {
          auto& gx = x.grad();
          for (Index p = 0; p < n; ++p) {
            const S mv = m.array()[p];
            for (Index ci = 0; ci < c; ++ci) gx[p * c + ci] += self.grad[p * c + ci] * mv;
          }
        }
        if (m.requires_grad()) {
          auto& gm = m.grad();
          for (Index p = 0; p < n; ++p) {
            S acc = S(0);
            for (Index ci = 0; ci < c; ++ci) acc += self.grad[p * c + ci] * x.array()[p * c + ci];
            gm[p] += acc;
          }
        }
      });

  for (Index p = 0; p < n; ++p) {
    const S mv = m.array()[p];
    for (Index ci = 0; ci < c; ++ci) out.array()[p * c + ci] = x.array()[p * c + ci] * mv;
  }
  return out;
}

/// Multiply each channel of a BHWC tensor by a per-sample scale [B, C]
/// (squeeze-and-excitation gating).
template <class S>
Tensor<S> scale_channels(const Tensor<S>& x, const Tensor<S>& s) {
  if (x.rank() != 4 || s.rank() != 2 || x.dim(0) != s.dim(0) || x.dim(3) != s.dim(1))
    fail("scale_channels: incompatible shapes " + shape_str(x.shape()) + " vs " +
         shape_str(s.shape()));
  const Index b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);

  Tensor<S> out = detail::make_result<S>(
      x.shape(), {x, s},
      [x = x, s = s, b, hw, c](detail::TensorImpl<S>& self) mutable {
        for (Index bi = 0; bi < b; ++bi) {
          MapConstMat<S> g(self.grad.data() + bi * hw * c, hw, c);
          if (x.requires_grad()) {
            MapMat<S> gx(x.grad().data() + bi * hw * c, hw, c);
            MapConstVec<S> sv(s.data() + bi * c, c);
            gx.noalias() += g * sv.asDiagonal();
          }
          if (s.requires_grad()) {
            MapConstMat<S> xm(x.data() + bi * hw * c, hw, c);
            MapVec<S> gs(s.grad().data() + bi * c, c);
            gs.noalias() += g.cwiseProduct(xm).colwise().sum().transpose();
          }
        }
      });

  for (Index bi = 0; bi < b; ++bi) {
    MapConstMat<S> xm(x.data() + bi * hw * c, hw, c);
    MapMat<S> om(out.data() + bi * hw * c, hw, c);
    MapConstVec<S> sv(s.data() + bi * c, c);
    om.noalias() = xm * sv.asDiagonal();
  }
  return out;
}

/// Add a per-channel bias to a BHWC tensor.
template <class S>
Tensor<S> channel_bias_add(const Tensor<S>& x, const Tensor<S>& bias) {
  if (x.rank() != 4 || bias.size() != x.dim(3))
    fail("channel_bias_add: bias " + shape_str(bias.shape()) + " does not match channels of " +
         shape_str(x.shape()));
  const Index rows = x.size() / x.dim(3), c = x.dim(3);

  Tensor<S> out = detail::make_result<S>(
      x.shape(), {x, bias},
      [x = x, bias = bias, rows, c](detail::TensorImpl<S>& self) mutable {
        if (x.requires_grad()) x.grad() += self.grad;
        if (bias.requires_grad()) {
          MapConstMat<S> g(self.grad.data(), rows, c);
          MapVec<S> gb(bias.grad().data(), c);
          gb.noalias() += g.colwise().sum().transpose();
        }
      });

  MapConstMat<S> xm(x.data(), rows, c);
  MapMat<S> om(out.data(), rows, c);
  om = xm;
  om.rowwise() += MapConstVec<S>(bias.data(), c).transpose();
  return out;
}

/// Concatenate along the last axis; all other extents must agree.
template <class S>
Tensor<S> concat_last(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) fail("concat_last: no inputs");
  const Index rank = parts[0].rank();
  Shape out_shape = parts[0].shape();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) fail("concat_last: rank mismatch");
    for (Index d = 0; d + 1 < rank; ++d)
      if (p.dim(d) != parts[0].dim(d))
        fail("concat_last: shape mismatch " + shape_str(p.shape()) + " vs " +
             shape_str(parts[0].shape()));
    total += p.dim(rank - 1);
  }
  out_shape.back() = total;
  const Index rows = shape_numel(out_shape) / total;

  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  Tensor<S> out = Tensor<S>::uninitialized(out_shape, rg);
  if (rg) {
    auto impl = out.impl();
    for (const auto& p : parts)
      if (p.requires_grad()) impl->parents.push_back(p.impl());
    auto parts_copy = parts;
    impl->backward_fn = [parts_copy, rows, total](detail::TensorImpl<S>& self) mutable {
      Index col = 0;
      for (auto& p : parts_copy) {
        const Index k = p.dim(p.rank() - 1);
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (Index r = 0; r < rows; ++r)
            for (Index i = 0; i < k; ++i) gp[r * k + i] += self.grad[r * total + col + i];
        }
        col += k;
      }
    };
  }

  Index col = 0;
  for (const auto& p : parts) {
    const Index k = p.dim(p.rank() - 1);
    for (Index r = 0; r < rows; ++r)
      for (Index i = 0; i < k; ++i) out.array()[r * total + col + i] = p.array()[r * k + i];
    col += k;
  }
  return out;
}

/// Inverted dropout: active only when a training-mode caller passes an rng.
template <class S>
Tensor<S> dropout(const Tensor<S>& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) fail("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  auto keep = std::make_shared<ArrayX<S>>(x.size());
  const S inv_keep = static_cast<S>(1.0 / (1.0 - rate));
  for (Index i = 0; i < x.size(); ++i)
    (*keep)[i] = rng.uniform() < rate ? S(0) : inv_keep;

  Tensor<S> out = detail::make_result<S>(
      x.shape(), {x},
      [x = x, keep](detail::TensorImpl<S>& self) mutable { x.grad() += self.grad * (*keep); });
  out.array() = x.array() * (*keep);
  return out;
}

}  // namespace smarc
