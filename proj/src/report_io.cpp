#include "smarc/metrics.hpp"

#include <iomanip>
#include <ostream>

namespace smarc {

// Stable text schema (documented in the README): tab-separated key/value
// lines, then the confusion matrix, per-class ROC blocks, and per-image rows.
void write_eval_report(const EvalReport& r, std::ostream& os) {
  os << std::setprecision(10);
  os << "smarc_eval_report\t1\n";
  os << "n_images\t" << r.n_images << "\n";
  os << "psnr_mean\t" << r.psnr_mean << "\n";
  os << "psnr_of_mean_mse\t" << r.psnr_of_mean_mse << "\n";
  os << "ssim_mean\t" << r.ssim_mean << "\n";
  os << "mse_mean\t" << r.mse_mean << "\n";
  os << "mae_mean\t" << r.mae_mean << "\n";
  os << "accuracy\t" << r.cls.accuracy << "\n";
  os << "precision_w\t" << r.cls.precision_w << "\n";
  os << "recall_w\t" << r.cls.recall_w << "\n";
  os << "f1_w\t" << r.cls.f1_w << "\n";
  os << "hole_weight\t" << r.hole_weight << "\n";
  os << "valid_weight\t" << r.valid_weight << "\n";
  os << "seconds_total\t" << r.seconds_total << "\n";
  os << "seconds_per_image\t" << r.seconds_per_image << "\n";

  const std::size_t k = r.cls.confusion.size();
  os << "confusion_matrix\t" << k << "\n";
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (j) os << ' ';
      os << r.cls.confusion[i][j];
    }
    os << "\n";
  }
  for (std::size_t c = 0; c < r.cls.roc.size(); ++c) {
    const auto& curve = r.cls.roc[c];
    os << "roc\t" << c << "\tauc\t" << curve.auc << "\tpoints\t" << curve.fpr.size() << "\n";
    for (std::size_t i = 0; i < curve.fpr.size(); ++i)
      os << curve.fpr[i] << "\t" << curve.tpr[i] << "\n";
  }
  os << "per_image\t" << r.per_image.size() << "\n";
  for (std::size_t i = 0; i < r.per_image.size(); ++i) {
    const auto& m = r.per_image[i];
    os << i << "\t" << m.psnr << "\t" << m.ssim << "\t" << m.mse << "\t" << m.mae << "\n";
  }
}

}  // namespace smarc
