#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "oodattack/datasets.hpp"
#include "oodattack/models.hpp"
#include "oodattack/tensor.hpp"

namespace oodattack {

struct AttackConfig {
  double epsilon = 0.5;
  // Number of sign-gradient updates.
  std::size_t iterations = 10;
  // Defaults to epsilon / 4 when unset.
  std::optional<double> step_size;
  DataRange range{-4.0, 4.0};

  double step() const { return step_size.value_or(epsilon / 4.0); }
  void validate() const;
};

struct AttackResult {
  Tensor adversarial;
  Tensor perturbation;
  // Attacked label used by the last update (the clean prediction when K = 0).
  std::size_t label = 0;
  // Labels used at each update.
  std::vector<std::size_t> label_trace;
  // Surrogate loss at every iterate x'_0 .. x'_K, each against that iterate's own label.
  std::vector<double> loss_trace;
};

struct LossAndGradient {
  double loss = 0.0;
  Tensor gradient;
};

// argmax of the confidence vector, ties to the lowest index.
std::size_t closest_label(const UncertaintyModel& model, const Tensor& x);

// Cross-entropy of the model's differentiable confidences against `label`.
double surrogate_loss(const UncertaintyModel& model, const Tensor& x, std::size_t label);
LossAndGradient surrogate_gradient(const UncertaintyModel& model, const Tensor& x, std::size_t label);

// Clamp (candidate - origin) into [-eps, eps] componentwise, then clamp into the data range.
Tensor project_linf(const Tensor& candidate, const Tensor& origin, double epsilon, const DataRange& range);

// Projected sign-gradient descent towards the model's own (refreshed) prediction:
//   repeat K times: y = closest_label(x'); x' = P(x' - eta * sign(grad l(f(x'), y))).
AttackResult perturb(const UncertaintyModel& model, const Tensor& x, const AttackConfig& cfg);

// Single step with eta = eps.
AttackResult fgsm(const UncertaintyModel& model, const Tensor& x, double epsilon, const DataRange& range);

// perturb() on every row of `x`, spread over `workers` threads; results are in row order.
std::vector<AttackResult> perturb_batch(const UncertaintyModel& model, const Tensor& x, const AttackConfig& cfg,
                                        std::size_t workers = 1);

// Largest |x'_i - x_i| over all components.
double linf_distance(const Tensor& a, const Tensor& b);

}  // namespace oodattack
