#pragma once

#include "smarc/pconv.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace smarc {

/// One dataset item: the original image (reconstruction target), its
/// validity mask, and the material label.
struct Sample {
  Tensor<float> image;  // S x S x 3 in [0, 1]
  Tensor<float> mask;   // S x S x 1, binary
  int label = 0;
  std::string source_path;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;  // index = sorted name order

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

/// Central square patch covering ~visible_fraction of the area: side =
/// round(size * sqrt(fraction)), offset = floor((size - side) / 2).
inline Tensor<float> central_mask(Index size, double visible_fraction = 0.10) {
  if (size < 4) fail("central_mask: size must be >= 4, got " + std::to_string(size));
  if (visible_fraction <= 0.0 || visible_fraction > 1.0)
    fail("central_mask: fraction must be in (0, 1], got " + std::to_string(visible_fraction));
  const Index side = static_cast<Index>(std::lround(static_cast<double>(size) * std::sqrt(visible_fraction)));
  const Index off = (size - side) / 2;
  auto m = Tensor<float>::zeros({size, size, 1});
  for (Index y = off; y < off + side; ++y)
    for (Index x = off; x < off + side; ++x) m.data()[y * size + x] = 1.f;
  return m;
}

/// Zero out invisible pixels. The original image stays the target; partial
/// convolution makes the zeroed values immaterial, zeroing just keeps dumps
/// readable.
inline Tensor<float> apply_mask(const Tensor<float>& image, const Tensor<float>& mask) {
  if (image.rank() != 3 || mask.rank() != 3 || mask.dim(2) != 1 ||
      image.dim(0) != mask.dim(0) || image.dim(1) != mask.dim(1))
    fail("apply_mask: image " + shape_str(image.shape()) + " and mask " +
         shape_str(mask.shape()) + " do not align");
  const Index n = mask.size(), c = image.dim(2);
  auto out = Tensor<float>::uninitialized(image.shape());
  for (Index p = 0; p < n; ++p)
    for (Index ci = 0; ci < c; ++ci) out.data()[p * c + ci] = image[p * c + ci] * mask[p];
  return out;
}

struct SplitSpec {
  double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
  std::uint64_t seed = 42;
  bool stratified = true;

  void validate() const {
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
      fail("SplitSpec: fractions must sum to 1");
    if (train_frac < 0 || val_frac < 0 || test_frac < 0) fail("SplitSpec: negative fraction");
  }
};

struct SplitResult {
  std::vector<int> train, val, test;  // indices into Dataset::samples
};

namespace detail {

// Largest-remainder allocation so per-class rounding always adds up to the
// requested split totals.
inline std::vector<Index> largest_remainder(const std::vector<Index>& counts, double frac,
                                            Index target) {
  std::vector<Index> base(counts.size());
  std::vector<std::pair<double, std::size_t>> rem;
  Index assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double ideal = static_cast<double>(counts[c]) * frac;
    base[c] = static_cast<Index>(ideal);
    assigned += base[c];
    rem.push_back({ideal - static_cast<double>(base[c]), c});
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < target && i < rem.size(); ++i) {
    if (base[rem[i].second] < counts[rem[i].second]) {
      ++base[rem[i].second];
      ++assigned;
    }
  }
  return base;
}

}  // namespace detail

/// Deterministic stratified split: per-class shuffle seeded by (seed, class),
/// per-class proportional allocation with rounding tuned so the split totals
/// match round(N * frac) exactly, remainder to train.
inline SplitResult split(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  const Index n = static_cast<Index>(ds.samples.size());
  if (n == 0) fail("split: empty dataset");
  const Index k = std::max(1, ds.num_classes());

  std::vector<std::vector<int>> groups;
  if (spec.stratified) {
    groups.assign(static_cast<std::size_t>(k), {});
    for (int i = 0; i < n; ++i) {
      const int label = ds.samples[static_cast<std::size_t>(i)].label;
      if (label < 0 || label >= k) fail("split: label " + std::to_string(label) + " out of range");
      groups[static_cast<std::size_t>(label)].push_back(i);
    }
    for (std::size_t c = 0; c < groups.size(); ++c)
      if (groups[c].empty())
        fail("split: class " + std::to_string(c) + " is empty in stratified mode");
  } else {
    groups.assign(1, {});
    groups[0].resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) groups[0][static_cast<std::size_t>(i)] = i;
  }

  Rng base(spec.seed);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    Rng rng = base.fork(c);
    auto& g = groups[c];
    for (std::size_t i = g.size(); i > 1; --i)
      std::swap(g[i - 1], g[static_cast<std::size_t>(rng.next_u64() % i)]);
  }

  std::vector<Index> counts;
  for (const auto& g : groups) counts.push_back(static_cast<Index>(g.size()));
  const Index target_val = static_cast<Index>(std::llround(static_cast<double>(n) * spec.val_frac));
  const Index target_test = static_cast<Index>(std::llround(static_cast<double>(n) * spec.test_frac));
  const auto val_c = detail::largest_remainder(counts, spec.val_frac, target_val);
  const auto test_c = detail::largest_remainder(counts, spec.test_frac, target_test);

  SplitResult r;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const auto& g = groups[c];
    const Index nv = val_c[c], nt = test_c[c];
    const Index ntr = static_cast<Index>(g.size()) - nv - nt;
    if (ntr < 0) fail("split: class " + std::to_string(c) + " too small for the requested fractions");
    for (Index i = 0; i < ntr; ++i) r.train.push_back(g[static_cast<std::size_t>(i)]);
    for (Index i = ntr; i < ntr + nv; ++i) r.val.push_back(g[static_cast<std::size_t>(i)]);
    for (Index i = ntr + nv; i < static_cast<Index>(g.size()); ++i) r.test.push_back(g[static_cast<std::size_t>(i)]);
  }
  return r;
}

struct AugmentSpec {
  bool rotations = true;
  bool hflip = true, vflip = true;
  double brightness_delta = 0.06;
  double contrast_lo = 0.90, contrast_hi = 1.10;
  double saturation_lo = 0.90, saturation_hi = 1.10;
  double noise_sigma_max = 0.02;
};

/// Concrete transform parameters drawn from an AugmentSpec.
struct AugmentDraw {
  int rot_k = 0;
  bool hflip = false, vflip = false;
  double brightness = 0.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

inline AugmentDraw draw_augment(const AugmentSpec& spec, Rng& rng) {
  AugmentDraw d;
  d.rot_k = spec.rotations ? rng.uniform_int(0, 3) : 0;
  d.hflip = spec.hflip && rng.bernoulli();
  d.vflip = spec.vflip && rng.bernoulli();
  d.brightness = rng.uniform(-spec.brightness_delta, spec.brightness_delta);
  d.contrast = rng.uniform(spec.contrast_lo, spec.contrast_hi);
  d.saturation = rng.uniform(spec.saturation_lo, spec.saturation_hi);
  d.noise_sigma = rng.uniform(0.0, spec.noise_sigma_max);
  d.noise_seed = rng.next_u64();
  return d;
}

namespace detail {

// 90-degree clockwise rotations and flips on square HxWxC tensors.
inline Tensor<float> rot90(const Tensor<float>& t) {
  const Index s = t.dim(0), c = t.dim(2);
  auto out = Tensor<float>::uninitialized(t.shape());
  for (Index y = 0; y < s; ++y)
    for (Index x = 0; x < s; ++x)
      for (Index ci = 0; ci < c; ++ci)
        out.data()[(y * s + x) * c + ci] = t[((s - 1 - x) * s + y) * c + ci];
  return out;
}

inline Tensor<float> flip_h(const Tensor<float>& t) {
  const Index s = t.dim(0), c = t.dim(2);
  auto out = Tensor<float>::uninitialized(t.shape());
  for (Index y = 0; y < s; ++y)
    for (Index x = 0; x < s; ++x)
      for (Index ci = 0; ci < c; ++ci)
        out.data()[(y * s + x) * c + ci] = t[(y * s + (s - 1 - x)) * c + ci];
  return out;
}

inline Tensor<float> flip_v(const Tensor<float>& t) {
  const Index s = t.dim(0), c = t.dim(2);
  auto out = Tensor<float>::uninitialized(t.shape());
  for (Index y = 0; y < s; ++y)
    for (Index x = 0; x < s; ++x)
      for (Index ci = 0; ci < c; ++ci)
        out.data()[(y * s + x) * c + ci] = t[((s - 1 - y) * s + x) * c + ci];
  return out;
}

inline Tensor<float> geom_transform(const Tensor<float>& t, const AugmentDraw& d) {
  Tensor<float> out = t;
  for (int i = 0; i < d.rot_k; ++i) out = rot90(out);
  if (d.hflip) out = flip_h(out);
  if (d.vflip) out = flip_v(out);
  return out;
}

}  // namespace detail

/// Apply a drawn transform: geometry moves image and mask together, color
/// jitter and noise touch the image only, everything clamps back to [0, 1].
/// Neutral parameters are skipped so an identity draw is byte-identical.
inline Sample augment(const Sample& s, const AugmentDraw& d) {
  Sample out;
  out.label = s.label;
  out.source_path = s.source_path;
  out.image = detail::geom_transform(s.image, d);
  out.mask = detail::geom_transform(s.mask, d);

  auto& img = out.image;
  const Index n = img.size();
  const Index c = img.dim(2);
  bool touched = false;

  if (d.brightness != 0.0) {
    for (Index i = 0; i < n; ++i) img.data()[i] += static_cast<float>(d.brightness);
    touched = true;
  }
  if (d.contrast != 1.0) {
    for (Index ci = 0; ci < c; ++ci) {
      double m = 0.0;
      for (Index p = 0; p < n / c; ++p) m += img[p * c + ci];
      m /= static_cast<double>(n / c);
      for (Index p = 0; p < n / c; ++p) {
        float& v = img.data()[p * c + ci];
        v = static_cast<float>(m + (v - m) * d.contrast);
      }
    }
    touched = true;
  }
  if (d.saturation != 1.0) {
    for (Index p = 0; p < n / c; ++p) {
      double g = 0.0;
      for (Index ci = 0; ci < c; ++ci) g += img[p * c + ci];
      g /= static_cast<double>(c);
      for (Index ci = 0; ci < c; ++ci) {
        float& v = img.data()[p * c + ci];
        v = static_cast<float>(g + (v - g) * d.saturation);
      }
    }
    touched = true;
  }
  if (d.noise_sigma > 0.0) {
    Rng noise(d.noise_seed);
    for (Index i = 0; i < n; ++i)
      img.data()[i] += static_cast<float>(d.noise_sigma * noise.normal());
    touched = true;
  }
  if (touched)
    for (Index i = 0; i < n; ++i)
      img.data()[i] = std::min(1.f, std::max(0.f, img.data()[i]));
  return out;
}

/// Inverse-frequency weights: w_c = N / (K * n_c); balanced data gives ones.
inline std::vector<float> class_weights(const std::vector<int>& labels, int num_classes) {
  std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) fail("class_weights: label out of range");
    counts[static_cast<std::size_t>(l)]++;
  }
  std::vector<float> w(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      fail("class_weights: class " + std::to_string(c) + " has no samples");
    w[static_cast<std::size_t>(c)] =
        static_cast<float>(static_cast<double>(labels.size()) /
                           (static_cast<double>(num_classes) *
                            static_cast<double>(counts[static_cast<std::size_t>(c)])));
  }
  return w;
}

/// Procedural 4-class texture set standing in for real surface data at desk
/// scale: distinct color statistics and spatial frequencies per class,
/// deterministic in (seed, class, index).
Dataset synth_textures(int n_per_class, Index size, std::uint64_t seed);

/// Give every sample the same central visibility mask.
inline void assign_central_masks(Dataset& ds, double fraction) {
  if (ds.samples.empty()) return;
  const Index size = ds.samples[0].image.dim(0);
  Tensor<float> m = central_mask(size, fraction);
  for (auto& s : ds.samples) s.mask = m;  // shared storage on purpose
}

/// A training batch: masked input, target image, mask, labels.
struct Batch {
  Tensor<float> input;
  Tensor<float> target;
  Tensor<float> mask;
  std::vector<int> labels;
};

inline Batch make_batch(const std::vector<Sample>& samples) {
  if (samples.empty()) fail("make_batch: empty batch");
  const Index s = samples[0].image.dim(0), c = samples[0].image.dim(2);
  const Index b = static_cast<Index>(samples.size());
  Batch batch;
  batch.input = Tensor<float>::uninitialized({b, s, s, c});
  batch.target = Tensor<float>::uninitialized({b, s, s, c});
  batch.mask = Tensor<float>::uninitialized({b, s, s, 1});
  for (Index i = 0; i < b; ++i) {
    const Sample& smp = samples[static_cast<std::size_t>(i)];
    if (smp.image.shape() != samples[0].image.shape())
      fail("make_batch: inconsistent sample shapes");
    const Index np = s * s;
    for (Index p = 0; p < np; ++p) {
      const float mv = smp.mask[p];
      batch.mask.data()[i * np + p] = mv;
      for (Index ci = 0; ci < c; ++ci) {
        const float v = smp.image[p * c + ci];
        batch.target.data()[(i * np + p) * c + ci] = v;
        batch.input.data()[(i * np + p) * c + ci] = v * mv;
      }
    }
    batch.labels.push_back(smp.label);
  }
  return batch;
}

// Filesystem-facing pieces (implemented in src/):
Dataset load_dataset_dir(const std::string& root, Index target_size);
void write_split_manifest(const std::string& path, const Dataset& ds, const SplitResult& split);

}  // namespace smarc
