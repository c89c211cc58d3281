#pragma once

#include "smarc/ops.hpp"

namespace smarc {

namespace detail {

template <class S>
void check_binary(const Tensor<S>& m, const char* op) {
  if (!checked_mode()) return;
  for (Index i = 0; i < m.size(); ++i)
    if (m[i] != S(0) && m[i] != S(1))
      fail(std::string(op) + ": mask is not exactly binary (value " + std::to_string(m[i]) +
           " at index " + std::to_string(i) + ")");
}

}  // namespace detail

/// A feature map coupled with its binary validity mask (the (x, m) pair
/// threaded through every layer). The mask is B x H x W x 1.
template <class S>
struct MaskPair {
  Tensor<S> features;
  Tensor<S> mask;
};

template <class S>
void check_mask_pair(const MaskPair<S>& p, const char* op) {
  if (p.features.rank() != 4 || p.mask.rank() != 4 || p.mask.dim(3) != 1 ||
      p.features.dim(0) != p.mask.dim(0) || p.features.dim(1) != p.mask.dim(1) ||
      p.features.dim(2) != p.mask.dim(2))
    fail(std::string(op) + ": features " + shape_str(p.features.shape()) +
         " and mask " + shape_str(p.mask.shape()) + " do not align");
  detail::check_binary(p.mask, op);
}

/// Mask-renormalized convolution layer. Stride 1, same padding; padded
/// positions count as invalid, so the sum(1)/sum(M) ratio uses the in-bounds
/// window size and an all-ones mask reproduces a dense conv exactly.
template <class S>
struct PartialConv {
  Tensor<S> weight;  // kh x kw x Cin x Cout
  Tensor<S> bias;    // Cout
  int dilation = 1;

  static PartialConv init(Index kh, Index kw, Index cin, Index cout, int dilation, Rng& rng) {
    if (dilation != 1 && dilation != 2 && dilation != 4)
      fail("PartialConv: dilation must be 1, 2 or 4, got " + std::to_string(dilation));
    PartialConv layer;
    layer.weight = Tensor<S>::he_uniform({kh, kw, cin, cout}, kh * kw * cin, rng, true);
    layer.bias = Tensor<S>::zeros({cout}, true);
    layer.dilation = dilation;
    return layer;
  }
};

namespace detail {

/// Per-position counts of valid taps (sum M) and in-bounds taps (sum 1) for
/// a stride-1 same-padded window. Shared by the feature scaling and the
/// mask update; carries no gradient.
template <class S>
void window_counts(const Tensor<S>& mask, Index kh, Index kw, Index dilation,
                   ArrayX<S>& valid, ArrayX<S>& in_bounds) {
  const Index b = mask.dim(0), h = mask.dim(1), w = mask.dim(2);
  const Index pad_top = dilation * (kh - 1) / 2;
  const Index pad_left = dilation * (kw - 1) / 2;
  valid.setZero(b * h * w);
  in_bounds.setZero(b * h * w);
  for (Index bi = 0; bi < b; ++bi) {
    const S* m = mask.data() + bi * h * w;
    for (Index oy = 0; oy < h; ++oy)
      for (Index ox = 0; ox < w; ++ox) {
        S s = S(0);
        Index n = 0;
        for (Index ky = 0; ky < kh; ++ky) {
          const Index iy = oy - pad_top + ky * dilation;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < kw; ++kx) {
            const Index ix = ox - pad_left + kx * dilation;
            if (ix < 0 || ix >= w) continue;
            ++n;
            s += m[iy * w + ix];
          }
        }
        const Index p = (bi * h + oy) * w + ox;
        valid[p] = s;
        in_bounds[p] = static_cast<S>(n);
      }
  }
}

}  // namespace detail

/// Partial convolution: convolve masked features, renormalize each output by
/// (in-bounds window size / valid count), add bias, and zero positions whose
/// window saw no valid pixel. The updated mask marks exactly those positions
/// that saw at least one valid pixel. The mask path carries no gradient.
template <class S>
MaskPair<S> partial_conv(const MaskPair<S>& in, const PartialConv<S>& layer) {
  check_mask_pair(in, "partial_conv");
  const Index kh = layer.weight.dim(0), kw = layer.weight.dim(1);

  ArrayX<S> valid, in_bounds;
  detail::window_counts(in.mask, kh, kw, layer.dilation, valid, in_bounds);

  const Shape mshape = in.mask.shape();
  Tensor<S> scale_map = Tensor<S>::uninitialized(mshape);
  Tensor<S> new_mask = Tensor<S>::uninitialized(mshape);
  for (Index i = 0; i < scale_map.size(); ++i) {
    if (valid[i] > S(0)) {
      scale_map.data()[i] = in_bounds[i] / valid[i];
      new_mask.data()[i] = S(1);
    } else {
      scale_map.data()[i] = S(0);
      new_mask.data()[i] = S(0);
    }
  }

  Tensor<S> masked = broadcast_mul(in.features, in.mask);
  Tensor<S> conv = conv2d(masked, layer.weight, {}, {1, layer.dilation, Padding::Same});
  Tensor<S> scaled = broadcast_mul(conv, scale_map);
  Tensor<S> biased = channel_bias_add(scaled, layer.bias);
  Tensor<S> out = broadcast_mul(biased, new_mask);
  return {out, new_mask};
}

/// Squeeze-and-excitation gate: per-channel scales in (0, 1) computed from
/// globally pooled statistics. Reduced width is max(4, C / ratio).
template <class S>
struct SEBlock {
  Tensor<S> w_reduce, b_reduce;
  Tensor<S> w_expand, b_expand;

  static SEBlock init(Index channels, Index ratio, Rng& rng) {
    if (channels < 1) fail("SEBlock: channels must be >= 1");
    const Index reduced = std::max<Index>(4, channels / ratio);
    SEBlock se;
    se.w_reduce = Tensor<S>::he_uniform({channels, reduced}, channels, rng, true);
    se.b_reduce = Tensor<S>::zeros({reduced}, true);
    se.w_expand = Tensor<S>::he_uniform({reduced, channels}, reduced, rng, true);
    se.b_expand = Tensor<S>::zeros({channels}, true);
    return se;
  }
};

template <class S>
Tensor<S> se_apply(const Tensor<S>& features, const SEBlock<S>& se) {
  Tensor<S> pooled = global_avg_pool(features);
  Tensor<S> gate = sigmoid(dense(relu(dense(pooled, se.w_reduce, se.b_reduce)),
                                 se.w_expand, se.b_expand));
  return scale_channels(features, gate);
}

/// The paper's block: two partial convolutions with ReLU, then SE gating.
/// Both convolutions share the block's dilation; the mask updates twice.
template <class S>
struct PConvBlock {
  PartialConv<S> pc1, pc2;
  SEBlock<S> se;

  static PConvBlock init(Index cin, Index cout, int dilation, Index se_ratio, Rng& rng) {
    PConvBlock b;
    b.pc1 = PartialConv<S>::init(3, 3, cin, cout, dilation, rng);
    b.pc2 = PartialConv<S>::init(3, 3, cout, cout, dilation, rng);
    b.se = SEBlock<S>::init(cout, se_ratio, rng);
    return b;
  }
};

template <class S>
MaskPair<S> pconv_block(const MaskPair<S>& in, const PConvBlock<S>& block) {
  MaskPair<S> a = partial_conv(in, block.pc1);
  a.features = relu(a.features);
  MaskPair<S> b = partial_conv(a, block.pc2);
  b.features = relu(b.features);
  b.features = se_apply(b.features, block.se);
  return b;
}

/// Encoder downsampling: features by average pooling, mask by max pooling so
/// any valid pixel survives.
template <class S>
MaskPair<S> downsample(const MaskPair<S>& in) {
  check_mask_pair(in, "downsample");
  return {avg_pool2d(in.features), max_pool2d(in.mask)};
}

/// Element-wise maximum of two binary masks.
template <class S>
Tensor<S> mask_merge(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    fail("mask_merge: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  detail::check_binary(a, "mask_merge");
  detail::check_binary(b, "mask_merge");
  Tensor<S> out = Tensor<S>::uninitialized(a.shape());
  out.array() = a.array().max(b.array());
  return out;
}

/// Nearest-neighbour 2x replication of a binary mask.
template <class S>
Tensor<S> mask_upsample(const Tensor<S>& m) {
  if (m.rank() != 4 || m.dim(3) != 1)
    fail("mask_upsample: mask must be BHW1, got " + shape_str(m.shape()));
  detail::check_binary(m, "mask_upsample");
  const Index b = m.dim(0), h = m.dim(1), w = m.dim(2);
  Tensor<S> out = Tensor<S>::uninitialized({b, 2 * h, 2 * w, 1});
  for (Index bi = 0; bi < b; ++bi)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const S v = m[(bi * h + y) * w + x];
        const Index base = (bi * 2 * h + 2 * y) * 2 * w + 2 * x;
        out.data()[base] = v;
        out.data()[base + 1] = v;
        out.data()[base + 2 * w] = v;
        out.data()[base + 2 * w + 1] = v;
      }
  return out;
}

}  // namespace smarc
