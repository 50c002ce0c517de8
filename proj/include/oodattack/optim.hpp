#pragma once

#include <span>
#include <vector>

#include "oodattack/tape.hpp"

namespace oodattack {

// Heavy-ball SGD with L2 weight decay: v <- momentum * v + g + wd * p, p <- p - lr * v.
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double learning_rate, double momentum = 0.9,
      double weight_decay = 0.0);

  void zero_grad();
  // Copies gradients recorded on `tape` into the parameters (missing ones stay zero).
  void collect(const Tape& tape);
  // Throws NumericalError and leaves every parameter untouched if any gradient is non-finite.
  void step();

  double learning_rate() const noexcept { return lr_; }
  double momentum() const noexcept { return momentum_; }
  double weight_decay() const noexcept { return weight_decay_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> velocity_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

}  // namespace oodattack
