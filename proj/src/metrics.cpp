#include "oodattack/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "oodattack/errors.hpp"

namespace oodattack {

namespace {
constexpr double kSumTolerance = 1e-6;
}

void MetricsConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("metrics: tau must lie in [0, 1]");
}

void validate_distributions(const Tensor& batch) {
  const std::size_t c = batch.cols();
  if (batch.size() == 0 || c == 0) throw ContractError("empty confidence batch");
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    double total = 0.0;
    for (double p : batch.row(r)) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw ContractError("confidence row " + std::to_string(r) + " has a negative or non-finite entry");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > kSumTolerance) {
      throw ContractError("confidence row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
  }
}

double entropy(std::span<const double> distribution) {
  double h = 0.0;
  for (double p : distribution)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

double entropy(const Tensor& batch) {
  validate_distributions(batch);
  double total = 0.0;
  for (std::size_t r = 0; r < batch.rows(); ++r) total += entropy(batch.row(r));
  return total / static_cast<double>(batch.rows());
}

double rejection_rate(const Tensor& batch, const MetricsConfig& cfg) {
  cfg.validate();
  validate_distributions(batch);
  std::size_t rejected = 0;
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    auto row = batch.row(r);
    if (*std::max_element(row.begin(), row.end()) < cfg.tau) ++rejected;
  }
  return static_cast<double>(rejected) / static_cast<double>(batch.rows());
}

UncertaintyReport compare(const Tensor& clean, const Tensor& adversarial, const MetricsConfig& cfg) {
  if (clean.rows() != adversarial.rows() || clean.cols() != adversarial.cols()) {
    throw ContractError("compare: clean batch " + shape_string(clean.shape()) + " vs attacked batch " +
                        shape_string(adversarial.shape()));
  }
  UncertaintyReport report;
  report.tau = cfg.tau;
  report.entropy_clean = entropy(clean);
  report.entropy_adv = entropy(adversarial);
  report.rejection_clean = rejection_rate(clean, cfg);
  report.rejection_adv = rejection_rate(adversarial, cfg);
  return report;
}

}  // namespace oodattack
