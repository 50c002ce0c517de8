#pragma once

#include <cstddef>
#include <string>

#include "oodattack/tensor.hpp"

namespace oodattack {

struct MetricsConfig {
  double tau = 0.9;
  void validate() const;
};

// One clean-vs-attacked row.
struct UncertaintyReport {
  std::string model;
  std::string dataset;
  double epsilon = 0.0;
  std::size_t iterations = 0;
  double tau = 0.9;
  double entropy_clean = 0.0;
  double entropy_adv = 0.0;
  double rejection_clean = 0.0;
  double rejection_adv = 0.0;
};

// Batches are [n x C] matrices (a rank-1 tensor is a batch of one). Every row must be
// nonnegative and sum to 1 within 1e-6, otherwise ContractError; nothing is renormalized.
void validate_distributions(const Tensor& batch);

// Mean Shannon entropy in nats, with 0 ln 0 = 0.
double entropy(const Tensor& batch);
double entropy(std::span<const double> distribution);

// Fraction of rows whose max confidence is strictly below tau (max >= tau is accepted).
double rejection_rate(const Tensor& batch, const MetricsConfig& cfg);

UncertaintyReport compare(const Tensor& clean, const Tensor& adversarial, const MetricsConfig& cfg);

}  // namespace oodattack
