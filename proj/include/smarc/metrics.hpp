#pragma once

#include "smarc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

namespace smarc {

/// Reconstruction metrics for one image pair.
struct PairMetrics {
  double psnr = 0.0, ssim = 0.0, mse = 0.0, mae = 0.0;
};

inline double mse_value(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape())
    fail("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double acc = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

inline double mae_value(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape())
    fail("mae: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double acc = 0.0;
  for (Index i = 0; i < a.size(); ++i)
    acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return acc / static_cast<double>(a.size());
}

/// 10 * log10(1 / mse) for unit-range images, capped at 100 dB.
inline double psnr_from_mse(double mse) {
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

inline double psnr_value(const Tensor<float>& a, const Tensor<float>& b) {
  return psnr_from_mse(mse_value(a, b));
}

namespace detail {

inline std::vector<double> gaussian_kernel_11(double sigma = 1.5) {
  std::vector<double> k(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    k[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Valid-position separable Gaussian filter of an H x W grid.
inline std::vector<double> gauss_filter_valid(const std::vector<double>& img, Index h, Index w) {
  static const std::vector<double> kern = gaussian_kernel_11();
  const Index ow = w - 10;
  std::vector<double> rows(static_cast<std::size_t>(h * ow), 0.0);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < 11; ++t) acc += kern[static_cast<std::size_t>(t)] * img[static_cast<std::size_t>(y * w + x + t)];
      rows[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  const Index oh = h - 10;
  std::vector<double> out(static_cast<std::size_t>(oh * ow), 0.0);
  for (Index y = 0; y < oh; ++y)
    for (Index x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < 11; ++t) acc += kern[static_cast<std::size_t>(t)] * rows[static_cast<std::size_t>((y + t) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  return out;
}

inline std::vector<double> to_gray(const Tensor<float>& img) {
  const Index h = img.dim(0), w = img.dim(1), c = img.dim(2);
  std::vector<double> g(static_cast<std::size_t>(h * w));
  for (Index p = 0; p < h * w; ++p) {
    double acc = 0.0;
    for (Index ci = 0; ci < c; ++ci) acc += img[p * c + ci];
    g[static_cast<std::size_t>(p)] = acc / static_cast<double>(c);
  }
  return g;
}

}  // namespace detail

/// Structural similarity on channel-mean gray images: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over valid
/// window positions.
inline double ssim_value(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape())
    fail("ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() != 3) fail("ssim: image must be HxWxC, got " + shape_str(a.shape()));
  const Index h = a.dim(0), w = a.dim(1);
  if (h < 11 || w < 11)
    fail("ssim: image " + shape_str(a.shape()) + " is smaller than the 11x11 window");

  const auto x = detail::to_gray(a);
  const auto y = detail::to_gray(b);
  const Index n = h * w;
  std::vector<double> xx(static_cast<std::size_t>(n)), yy(static_cast<std::size_t>(n)), xy(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    xx[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
    yy[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    xy[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
  }

  const auto mu_x = detail::gauss_filter_valid(x, h, w);
  const auto mu_y = detail::gauss_filter_valid(y, h, w);
  const auto m_xx = detail::gauss_filter_valid(xx, h, w);
  const auto m_yy = detail::gauss_filter_valid(yy, h, w);
  const auto m_xy = detail::gauss_filter_valid(xy, h, w);

  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x[i], my = mu_y[i];
    const double vx = m_xx[i] - mx * mx;
    const double vy = m_yy[i] - my * my;
    const double cxy = m_xy[i] - mx * my;
    acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mu_x.size());
}

inline PairMetrics image_metrics(const Tensor<float>& pred, const Tensor<float>& target) {
  PairMetrics m;
  m.mse = mse_value(pred, target);
  m.mae = mae_value(pred, target);
  m.psnr = psnr_from_mse(m.mse);
  m.ssim = ssim_value(pred, target);
  return m;
}

struct RocCurve {
  std::vector<double> fpr, tpr;
  double auc = 0.0;
};

struct ClassificationReport {
  std::vector<std::vector<std::int64_t>> confusion;  // rows = truth
  double accuracy = 0.0;
  double precision_w = 0.0, recall_w = 0.0, f1_w = 0.0;
  std::vector<double> precision, recall, f1;
  std::vector<std::int64_t> support;
  std::vector<RocCurve> roc;
};

/// Argmax predictions (lowest index wins ties), confusion matrix, per-class
/// and support-weighted precision/recall/F1, one-vs-rest ROC with trapezoid
/// AUC. Zero denominators follow the 0-convention.
inline ClassificationReport classification_report(const std::vector<float>& probs,
                                                  const std::vector<int>& labels, int num_classes) {
  const std::size_t n = labels.size();
  if (n == 0) fail("classification_report: empty input");
  if (probs.size() != n * static_cast<std::size_t>(num_classes))
    fail("classification_report: probs size does not match N x K");

  ClassificationReport r;
  r.confusion.assign(static_cast<std::size_t>(num_classes),
                     std::vector<std::int64_t>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < n; ++i) {
    int pred = 0;
    float best = probs[i * static_cast<std::size_t>(num_classes)];
    for (int k = 1; k < num_classes; ++k) {
      const float v = probs[i * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(k)];
      if (v > best) {
        best = v;
        pred = k;
      }
    }
    r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred)]++;
  }

  std::int64_t trace = 0;
  r.precision.resize(static_cast<std::size_t>(num_classes));
  r.recall.resize(static_cast<std::size_t>(num_classes));
  r.f1.resize(static_cast<std::size_t>(num_classes));
  r.support.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const auto cs = static_cast<std::size_t>(c);
    std::int64_t tp = r.confusion[cs][cs], row = 0, col = 0;
    for (int j = 0; j < num_classes; ++j) {
      row += r.confusion[cs][static_cast<std::size_t>(j)];
      col += r.confusion[static_cast<std::size_t>(j)][cs];
    }
    trace += tp;
    r.support[cs] = row;
    r.precision[cs] = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    r.recall[cs] = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    const double pr = r.precision[cs] + r.recall[cs];
    r.f1[cs] = pr > 0 ? 2.0 * r.precision[cs] * r.recall[cs] / pr : 0.0;
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(n);
  for (int c = 0; c < num_classes; ++c) {
    const auto cs = static_cast<std::size_t>(c);
    const double frac = static_cast<double>(r.support[cs]) / static_cast<double>(n);
    r.precision_w += frac * r.precision[cs];
    r.recall_w += frac * r.recall[cs];
    r.f1_w += frac * r.f1[cs];
  }

  // One-vs-rest ROC by threshold sweep over the observed scores.
  for (int c = 0; c < num_classes; ++c) {
    RocCurve curve;
    std::int64_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos += labels[i] == c;
    const std::int64_t neg = static_cast<std::int64_t>(n) - pos;
    if (pos == 0 || neg == 0) {
      curve.fpr = {0.0, 1.0};
      curve.tpr = {0.0, 1.0};
      curve.auc = 0.5;  // chance: the class is degenerate on this split
      r.roc.push_back(std::move(curve));
      continue;
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return probs[a * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(c)] >
             probs[b * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(c)];
    });
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < n) {
      const float s = probs[order[i] * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(c)];
      while (i < n &&
             probs[order[i] * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(c)] == s) {
        if (labels[order[i]] == c) ++tp;
        else ++fp;
        ++i;
      }
      curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
      curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    }
    double auc = 0.0;
    for (std::size_t j = 1; j < curve.fpr.size(); ++j)
      auc += (curve.fpr[j] - curve.fpr[j - 1]) * (curve.tpr[j] + curve.tpr[j - 1]) / 2.0;
    curve.auc = auc;
    r.roc.push_back(std::move(curve));
  }
  return r;
}

/// Full evaluation output: reconstruction metrics per image and averaged,
/// classification metrics, and timing.
struct EvalReport {
  std::vector<PairMetrics> per_image;
  double psnr_mean = 0.0, ssim_mean = 0.0, mse_mean = 0.0, mae_mean = 0.0;
  double psnr_of_mean_mse = 0.0;  // set-level convention, reported alongside
  ClassificationReport cls;
  int n_images = 0;
  double seconds_total = 0.0, seconds_per_image = 0.0;
  double hole_weight = 6.0, valid_weight = 1.0;  // masked-MAE convention in force

  void finalize_means() {
    n_images = static_cast<int>(per_image.size());
    if (n_images == 0) return;
    double mse_acc = 0.0;
    psnr_mean = ssim_mean = mse_mean = mae_mean = 0.0;
    for (const auto& m : per_image) {
      psnr_mean += m.psnr;
      ssim_mean += m.ssim;
      mse_mean += m.mse;
      mae_mean += m.mae;
      mse_acc += m.mse;
    }
    const double inv = 1.0 / n_images;
    psnr_mean *= inv;
    ssim_mean *= inv;
    mse_mean *= inv;
    mae_mean *= inv;
    psnr_of_mean_mse = psnr_from_mse(mse_acc * inv);
  }
};

void write_eval_report(const EvalReport& report, std::ostream& os);

}  // namespace smarc
