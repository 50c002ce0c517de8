#include "oodattack/optim.hpp"

#include <cmath>

#include "oodattack/errors.hpp"

namespace oodattack {

Sgd::Sgd(std::vector<Parameter*> params, double learning_rate, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("learning rate must be a nonnegative finite number");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ParameterError("weight decay must be >= 0");
  velocity_.reserve(params_.size());
  for (const Parameter* p : params_) velocity_.emplace_back(p->value.shape());
}

void Sgd::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Sgd::collect(const Tape& tape) {
  for (Parameter* p : params_) {
    p->zero_grad();
    if (const Tensor* g = tape.parameter_grad(*p)) p->grad = *g;
  }
}

void Sgd::step() {
  for (const Parameter* p : params_) {
    if (p->trainable && !p->grad.all_finite()) throw NumericalError("non-finite gradient in parameter '" + p->name + "'");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.trainable) continue;
    Tensor& v = velocity_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      v[j] = momentum_ * v[j] + p.grad[j] + weight_decay_ * p.value[j];
      p.value[j] -= lr_ * v[j];
    }
  }
}

}  // namespace oodattack
