#pragma once

#include "smarc/model.hpp"

#include <set>

namespace smarc {

/// Multi-task loss weights. The hole/valid ratio is the mask-weighted MAE
/// convention and is recorded in every evaluation report.
struct LossWeights {
  double lambda_rgb = 0.25;
  double label_smoothing = 0.05;
  double l2_coeff = 1e-4;
  double hole_weight = 6.0;
  double valid_weight = 1.0;

  void validate() const {
    if (lambda_rgb < 0 || label_smoothing < 0 || l2_coeff < 0 || hole_weight < 0 ||
        valid_weight < 0)
      fail("LossWeights: all weights must be >= 0");
    if (label_smoothing >= 1.0) fail("LossWeights: label_smoothing must be < 1");
  }
};

/// Mean absolute error with per-pixel weights: hole_weight where the mask is
/// 0, valid_weight where it is 1, normalized by the sum of weights.
template <class S>
Tensor<S> masked_mae_loss(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& mask,
                          const LossWeights& w) {
  if (pred.shape() != target.shape())
    fail("masked_mae_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
         shape_str(target.shape()));
  if (pred.rank() != 4 || mask.rank() != 4 || mask.dim(3) != 1 || mask.dim(0) != pred.dim(0) ||
      mask.dim(1) != pred.dim(1) || mask.dim(2) != pred.dim(2))
    fail("masked_mae_loss: mask " + shape_str(mask.shape()) + " does not align with pred " +
         shape_str(pred.shape()));
  detail::check_binary(mask, "masked_mae_loss");

  Tensor<S> weight_map = Tensor<S>::uninitialized(mask.shape());
  double total = 0.0;
  for (Index i = 0; i < mask.size(); ++i) {
    const double wi = mask[i] == S(1) ? w.valid_weight : w.hole_weight;
    weight_map.data()[i] = static_cast<S>(wi);
    total += wi;
  }
  total *= static_cast<double>(pred.dim(3));
  if (total <= 0.0) fail("masked_mae_loss: weights sum to zero");

  Tensor<S> weighted = broadcast_mul(abs(sub(pred, target)), weight_map);
  return scale(sum(weighted), static_cast<S>(1.0 / total));
}

/// Label-smoothed categorical cross-entropy with optional per-class weights.
/// Target distribution is (1 - eps) * onehot + eps / K; the per-sample loss
/// is scaled by class_weights[label] and averaged over the batch.
template <class S>
Tensor<S> ce_smoothed(const Tensor<S>& logits, const std::vector<int>& labels, double eps,
                      const std::vector<S>& class_weights = {}) {
  if (logits.rank() != 2) fail("ce_smoothed: logits must be [B, K], got " + shape_str(logits.shape()));
  const Index b = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != b)
    fail("ce_smoothed: " + std::to_string(labels.size()) + " labels for batch " + std::to_string(b));
  if (!class_weights.empty() && static_cast<Index>(class_weights.size()) != k)
    fail("ce_smoothed: class_weights size " + std::to_string(class_weights.size()) +
         " does not match K=" + std::to_string(k));
  if (eps < 0.0 || eps >= 1.0) fail("ce_smoothed: eps must be in [0, 1)");
  for (int l : labels)
    if (l < 0 || l >= k)
      fail("ce_smoothed: label " + std::to_string(l) + " outside [0, " + std::to_string(k) + ")");
  detail::check_finite(logits, "ce_smoothed");

  // Fused forward/backward keeps the computation stable: the gradient is
  // w_i * (softmax - t) / B.
  ArrayX<S> probs(b * k);
  ArrayX<S> sample_w(b);
  double acc = 0.0;
  for (Index i = 0; i < b; ++i) {
    const S* row = logits.data() + i * k;
    S m = row[0];
    for (Index j = 1; j < k; ++j) m = std::max(m, row[j]);
    double lse = 0.0;
    for (Index j = 0; j < k; ++j) lse += std::exp(static_cast<double>(row[j] - m));
    lse = std::log(lse);
    const double wi = class_weights.empty()
                          ? 1.0
                          : static_cast<double>(class_weights[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]);
    sample_w[i] = static_cast<S>(wi);
    double loss_i = 0.0;
    for (Index j = 0; j < k; ++j) {
      const double log_p = static_cast<double>(row[j] - m) - lse;
      const double t = (labels[static_cast<std::size_t>(i)] == j ? 1.0 - eps : 0.0) + eps / static_cast<double>(k);
      loss_i -= t * log_p;
      probs[i * k + j] = static_cast<S>(std::exp(log_p));
    }
    acc += wi * loss_i;
  }

  auto probs_ptr = std::make_shared<ArrayX<S>>(std::move(probs));
  auto w_ptr = std::make_shared<ArrayX<S>>(std::move(sample_w));
  auto labels_ptr = std::make_shared<std::vector<int>>(labels);
  Tensor<S> out = detail::make_result<S>(
      {1}, {logits},
      [logits = logits, probs_ptr, w_ptr, labels_ptr, b, k, eps](detail::TensorImpl<S>& self) mutable {
        auto& gl = logits.grad();
        const S g = self.grad[0];
        const S invb = S(1) / static_cast<S>(b);
        for (Index i = 0; i < b; ++i)
          for (Index j = 0; j < k; ++j) {
            const S t = static_cast<S>(((*labels_ptr)[static_cast<std::size_t>(i)] == j ? 1.0 - eps : 0.0) +
                                       eps / static_cast<double>(k));
            gl[i * k + j] += g * (*w_ptr)[i] * ((*probs_ptr)[i * k + j] - t) * invb;
          }
      });
  out.array()[0] = static_cast<S>(acc / static_cast<double>(b));
  return out;
}

template <class S>
struct TotalLoss {
  Tensor<S> total;  // scalar graph node
  double rgb = 0.0, ce = 0.0, l2 = 0.0;
};

/// lambda_rgb * masked MAE + smoothed CE + l2_coeff * sum of squared
/// decay-eligible kernels. Frozen parameters are excluded from the L2 term.
template <class S>
TotalLoss<S> total_loss(const ModelOutput<S>& output, const Tensor<S>& target_img,
                        const Tensor<S>& mask, const std::vector<int>& labels,
                        const LossWeights& w, const SmarcModel<S>& model,
                        const std::vector<S>& class_weights = {},
                        const std::set<std::string>* frozen = nullptr) {
  TotalLoss<S> r;
  Tensor<S> mae = masked_mae_loss(output.reconstruction, target_img, mask, w);
  Tensor<S> ce = ce_smoothed(output.class_logits, labels, w.label_smoothing, class_weights);

  Tensor<S> l2 = Tensor<S>::zeros({1});
  for (const auto& p : model.parameters) {
    if (!p.weight_decay_eligible) continue;
    if (frozen && frozen->count(p.name)) continue;
    l2 = add(l2, sum(mul(p.tensor, p.tensor)));
  }

  r.rgb = static_cast<double>(mae.value());
  r.ce = static_cast<double>(ce.value());
  r.l2 = static_cast<double>(l2.value()) * w.l2_coeff;
  r.total = add(add(scale(mae, static_cast<S>(w.lambda_rgb)), ce),
                scale(l2, static_cast<S>(w.l2_coeff)));
  return r;
}

}  // namespace smarc
