#pragma once

#include "smarc/pconv.hpp"

#include <array>
#include <unordered_set>

namespace smarc {

/// Network configuration. Defaults reproduce the published 224x224 geometry;
/// desk() gives a small configuration for CPU-scale tests.
struct ArchConfig {
  Index input_size = 224;      // must be divisible by 16
  Index base_channels = 64;    // encoder widths: base * {1, 2, 4, 8}
  Index bottleneck1 = 1024;
  Index bottleneck2 = 2048;
  Index num_classes = 4;
  std::vector<Index> head_hidden = {512};
  double dropout = 0.25;
  Index se_ratio = 16;

  static ArchConfig desk(Index input_size, Index base) {
    ArchConfig cfg;
    cfg.input_size = input_size;
    cfg.base_channels = base;
    cfg.bottleneck1 = base * 8;
    cfg.bottleneck2 = base * 16;
    cfg.head_hidden = {base * 8};
    return cfg;
  }

  void validate() const {
    std::vector<std::string> errs;
    if (input_size < 16 || input_size % 16 != 0)
      errs.push_back("input_size must be a positive multiple of 16, got " +
                     std::to_string(input_size));
    if (base_channels < 4)
      errs.push_back("base_channels must be >= 4, got " + std::to_string(base_channels));
    if (num_classes < 2)
      errs.push_back("num_classes must be >= 2, got " + std::to_string(num_classes));
    if (bottleneck1 < 1 || bottleneck2 < 1) errs.push_back("bottleneck widths must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      errs.push_back("dropout must be in [0, 1), got " + std::to_string(dropout));
    if (se_ratio < 1) errs.push_back("se_ratio must be >= 1");
    for (Index h : head_hidden)
      if (h < 1) errs.push_back("head_hidden widths must be >= 1");
    if (!errs.empty()) {
      std::string msg = "invalid ArchConfig:";
      for (const auto& e : errs) msg += "\n  - " + e;
      fail(msg);
    }
  }

  bool operator==(const ArchConfig&) const = default;
};

template <class S>
struct DenseLayer {
  Tensor<S> weight, bias;

  static DenseLayer init(Index in, Index out, Rng& rng) {
    DenseLayer l;
    l.weight = Tensor<S>::he_uniform({in, out}, in, rng, true);
    l.bias = Tensor<S>::zeros({out}, true);
    return l;
  }
};

template <class S>
struct ConvTransposeLayer {
  Tensor<S> weight;  // kh x kw x Cout x Cin
  Tensor<S> bias;    // Cout

  static ConvTransposeLayer init(Index cin, Index cout, Rng& rng) {
    ConvTransposeLayer l;
    l.weight = Tensor<S>::he_uniform({3, 3, cout, cin}, 3 * 3 * cin, rng, true);
    l.bias = Tensor<S>::zeros({cout}, true);
    return l;
  }
};

template <class S>
struct ModelOutput {
  Tensor<S> reconstruction;  // B x S x S x 3, sigmoid range
  Tensor<S> class_logits;    // B x K
  Tensor<S> class_probs;     // B x K, rows sum to 1
  Tensor<S> final_mask;      // B x S x S x 1
};

template <class S>
struct EncodeResult {
  std::array<MaskPair<S>, 4> skips;  // pre-pooling (s_i^y, s_i^m)
  MaskPair<S> deepest;               // post-pooling (x4, m4)
};

/// The assembled network: four encoder blocks, two dilated bottleneck
/// blocks, four decoder stages with skip fusion, RGB head, and the
/// multi-scale classification head.
template <class S>
struct SmarcModel {
  ArchConfig cfg;
  std::array<PConvBlock<S>, 4> enc;
  PConvBlock<S> bottle1, bottle2;
  std::array<ConvTransposeLayer<S>, 4> up;   // dec4 .. dec1
  std::array<PConvBlock<S>, 4> dec;          // dec4 .. dec1
  Tensor<S> rgb_weight, rgb_bias;            // 1x1 conv to RGB
  std::vector<DenseLayer<S>> head_hidden;
  DenseLayer<S> head_out;
  std::vector<Parameter<S>> parameters;      // registry, build order

  void zero_grad() {
    for (auto& p : parameters) p.tensor.zero_grad();
  }

  const Parameter<S>* find_parameter(const std::string& name) const {
    for (const auto& p : parameters)
      if (p.name == name) return &p;
    return nullptr;
  }
};

namespace detail {

template <class S>
void register_block(std::vector<Parameter<S>>& out, const std::string& prefix,
                    const PConvBlock<S>& b) {
  out.push_back({b.pc1.weight, prefix + ".pconv1.weight", true});
  out.push_back({b.pc1.bias, prefix + ".pconv1.bias", false});
  out.push_back({b.pc2.weight, prefix + ".pconv2.weight", true});
  out.push_back({b.pc2.bias, prefix + ".pconv2.bias", false});
  out.push_back({b.se.w_reduce, prefix + ".se.reduce.weight", true});
  out.push_back({b.se.b_reduce, prefix + ".se.reduce.bias", false});
  out.push_back({b.se.w_expand, prefix + ".se.expand.weight", true});
  out.push_back({b.se.b_expand, prefix + ".se.expand.bias", false});
}

}  // namespace detail

/// Deterministic He-uniform build; parameter names are unique paths like
/// "enc2.pconv1.weight".
template <class S>
SmarcModel<S> build_model(const ArchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  SmarcModel<S> m;
  m.cfg = cfg;

  const Index base = cfg.base_channels;
  const std::array<Index, 4> enc_out = {base, base * 2, base * 4, base * 8};
  Index cin = 3;
  for (int i = 0; i < 4; ++i) {
    m.enc[static_cast<std::size_t>(i)] = PConvBlock<S>::init(cin, enc_out[static_cast<std::size_t>(i)], 1, cfg.se_ratio, rng);
    cin = enc_out[static_cast<std::size_t>(i)];
  }
  m.bottle1 = PConvBlock<S>::init(base * 8, cfg.bottleneck1, 2, cfg.se_ratio, rng);
  m.bottle2 = PConvBlock<S>::init(cfg.bottleneck1, cfg.bottleneck2, 4, cfg.se_ratio, rng);

  // Decoder stage i consumes the previous stage (or bottleneck) and the
  // skip with matching resolution; filters are base * {8, 4, 2, 1}.
  const std::array<Index, 4> filters = {base * 8, base * 4, base * 2, base};
  Index prev = cfg.bottleneck2;
  for (int i = 0; i < 4; ++i) {
    const Index f = filters[static_cast<std::size_t>(i)];
    const Index skip_c = enc_out[static_cast<std::size_t>(3 - i)];
    m.up[static_cast<std::size_t>(i)] = ConvTransposeLayer<S>::init(prev, f, rng);
    m.dec[static_cast<std::size_t>(i)] = PConvBlock<S>::init(f + skip_c, f, 1, cfg.se_ratio, rng);
    prev = f;
  }

  m.rgb_weight = Tensor<S>::he_uniform({1, 1, base, 3}, base, rng, true);
  m.rgb_bias = Tensor<S>::zeros({3}, true);

  const Index f_cls = base * 4 + base * 8 + cfg.bottleneck2;
  Index hin = f_cls;
  for (Index h : cfg.head_hidden) {
    m.head_hidden.push_back(DenseLayer<S>::init(hin, h, rng));
    hin = h;
  }
  m.head_out = DenseLayer<S>::init(hin, cfg.num_classes, rng);

  auto& reg = m.parameters;
  for (int i = 0; i < 4; ++i)
    detail::register_block(reg, "enc" + std::to_string(i + 1), m.enc[static_cast<std::size_t>(i)]);
  detail::register_block(reg, "bottle1", m.bottle1);
  detail::register_block(reg, "bottle2", m.bottle2);
  for (int i = 0; i < 4; ++i) {
    const std::string prefix = "dec" + std::to_string(4 - i);
    reg.push_back({m.up[static_cast<std::size_t>(i)].weight, prefix + ".up.weight", true});
    reg.push_back({m.up[static_cast<std::size_t>(i)].bias, prefix + ".up.bias", false});
    detail::register_block(reg, prefix, m.dec[static_cast<std::size_t>(i)]);
  }
  reg.push_back({m.rgb_weight, "rgb_head.weight", true});
  reg.push_back({m.rgb_bias, "rgb_head.bias", false});
  for (std::size_t i = 0; i < m.head_hidden.size(); ++i) {
    const std::string prefix = "cls_head.fc" + std::to_string(i + 1);
    reg.push_back({m.head_hidden[i].weight, prefix + ".weight", true});
    reg.push_back({m.head_hidden[i].bias, prefix + ".bias", false});
  }
  reg.push_back({m.head_out.weight, "cls_head.out.weight", true});
  reg.push_back({m.head_out.bias, "cls_head.out.bias", false});

  std::unordered_set<std::string> names;
  for (const auto& p : reg)
    if (!names.insert(p.name).second) fail("build_model: duplicate parameter name " + p.name);
  return m;
}

/// Four pconv_block + downsample stages; emits pre-pooling skips and the
/// post-pooling deepest pair.
template <class S>
EncodeResult<S> encode(const SmarcModel<S>& m, const MaskPair<S>& input) {
  check_mask_pair(input, "encode");
  if (input.features.dim(1) != m.cfg.input_size || input.features.dim(2) != m.cfg.input_size)
    fail("encode: input " + shape_str(input.features.shape()) + " does not match input_size " +
         std::to_string(m.cfg.input_size));
  if (input.features.dim(3) != 3)
    fail("encode: input must have 3 channels, got " + shape_str(input.features.shape()));

  EncodeResult<S> r;
  MaskPair<S> cur = input;
  for (std::size_t i = 0; i < 4; ++i) {
    r.skips[i] = pconv_block(cur, m.enc[i]);
    cur = downsample(r.skips[i]);
  }
  r.deepest = cur;
  return r;
}

/// Two dilated blocks (rates 2 then 4) at the lowest resolution.
template <class S>
MaskPair<S> bottleneck(const SmarcModel<S>& m, const MaskPair<S>& deepest) {
  return pconv_block(pconv_block(deepest, m.bottle1), m.bottle2);
}

/// Four upsample + skip-fusion stages back to full resolution.
template <class S>
MaskPair<S> decode(const SmarcModel<S>& m, const MaskPair<S>& b,
                   const std::array<MaskPair<S>, 4>& skips) {
  MaskPair<S> cur = b;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string stage = "dec" + std::to_string(4 - i);
    const MaskPair<S>& skip = skips[3 - i];
    Tensor<S> f = conv_transpose2d(cur.features, m.up[i].weight, m.up[i].bias);
    Tensor<S> msk = mask_upsample(cur.mask);
    if (f.dim(1) != skip.features.dim(1) || f.dim(2) != skip.features.dim(2))
      fail(stage + ": upsampled " + shape_str(f.shape()) + " does not match skip " +
           shape_str(skip.features.shape()));
    Tensor<S> feat = concat_last(std::vector<Tensor<S>>{f, skip.features});
    Tensor<S> merged = mask_merge(msk, skip.mask);
    cur = pconv_block(MaskPair<S>{feat, merged}, m.dec[i]);
  }
  return cur;
}

/// Full pass: reconstruction through the RGB head, class probabilities
/// through the multi-scale head (GAP of s3, s4 and the bottleneck).
/// Dropout is active only in train mode, which requires an rng.
template <class S>
ModelOutput<S> forward(const SmarcModel<S>& m, const MaskPair<S>& input, bool train_mode = false,
                       Rng* rng = nullptr) {
  EncodeResult<S> e = encode(m, input);
  MaskPair<S> b = bottleneck(m, e.deepest);
  MaskPair<S> y = decode(m, b, e.skips);

  ModelOutput<S> out;
  out.reconstruction = sigmoid(conv2d(y.features, m.rgb_weight, m.rgb_bias));
  out.final_mask = y.mask;

  Tensor<S> f_cls = concat_last(std::vector<Tensor<S>>{global_avg_pool(e.skips[2].features),
                                                       global_avg_pool(e.skips[3].features),
                                                       global_avg_pool(b.features)});
  Tensor<S> h = f_cls;
  for (const auto& fc : m.head_hidden) {
    h = relu(dense(h, fc.weight, fc.bias));
    if (train_mode && m.cfg.dropout > 0.0) {
      if (!rng) fail("forward: train mode needs an rng for dropout");
      h = dropout(h, m.cfg.dropout, *rng);
    }
  }
  out.class_logits = dense(h, m.head_out.weight, m.head_out.bias);
  out.class_probs = softmax(out.class_logits);
  return out;
}

template <class S>
Index param_count(const SmarcModel<S>& m) {
  Index n = 0;
  for (const auto& p : m.parameters) n += p.tensor.size();
  return n;
}

/// Millions of parameters per second at a measured per-image latency
/// (the throughput convention stated in the paper's table caption).
inline double param_throughput(Index count, double seconds_per_image) {
  return (static_cast<double>(count) / 1e6) / seconds_per_image;
}

}  // namespace smarc
