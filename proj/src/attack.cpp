#include "oodattack/attack.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "oodattack/errors.hpp"

namespace oodattack {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ValidationError("attack: epsilon must be >= 0");
  // With a zero radius the projection pins x' = x, so the step size is irrelevant.
  if (epsilon > 0.0 && !(step() > 0.0)) throw ValidationError("attack: step size must be > 0");
  if (!(range.lo < range.hi)) throw ValidationError("attack: empty data range");
}

std::size_t closest_label(const UncertaintyModel& model, const Tensor& x) {
  const Tensor p = model.predict_confidence(x);
  return argmax(p.data());
}

LossAndGradient surrogate_gradient(const UncertaintyModel& model, const Tensor& x, std::size_t label) {
  if (label >= model.num_classes()) {
    throw ContractError("attacked label " + std::to_string(label) + " outside [0, " +
                        std::to_string(model.num_classes()) + ")");
  }
  Tape tape;
  Var in = tape.input(x.rank() == 1 ? x.reshaped({1, x.size()}) : x);
  if (in.value().cols() != model.input_dim() || in.value().rows() != 1) {
    throw ContractError("surrogate loss expects a single sample of dimension " + std::to_string(model.input_dim()));
  }
  Var loss = cross_entropy(model.confidences(tape, in), label);
  tape.backward(loss);
  return {loss.value().item(), tape.grad(in).reshaped(x.shape())};
}

double surrogate_loss(const UncertaintyModel& model, const Tensor& x, std::size_t label) {
  if (label >= model.num_classes()) throw ContractError("attacked label out of range");
  Tape tape;
  Var in = tape.constant(x.rank() == 1 ? x.reshaped({1, x.size()}) : x);
  return cross_entropy(model.confidences(tape, in), label).value().item();
}

Tensor project_linf(const Tensor& candidate, const Tensor& origin, double epsilon, const DataRange& range) {
  if (!candidate.same_shape(origin)) {
    throw DimensionError("project_linf: " + shape_string(candidate.shape()) + " vs " + shape_string(origin.shape()));
  }
  Tensor out(candidate.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double delta = std::clamp(candidate[i] - origin[i], -epsilon, epsilon);
    out[i] = range.clamp(origin[i] + delta);
  }
  return out;
}

namespace {

struct Iterate {
  std::size_t label;
  double loss;
  Tensor gradient;
};

// One forward pass: the label is read off the same confidences the loss is built on.
Iterate evaluate(const UncertaintyModel& model, const Tensor& x) {
  Tape tape;
  Var in = tape.input(x.rank() == 1 ? x.reshaped({1, x.size()}) : x);
  Var conf = model.confidences(tape, in);
  const std::size_t label = argmax(conf.value().data());
  Var loss = cross_entropy(conf, label);
  tape.backward(loss);
  return {label, loss.value().item(), tape.grad(in).reshaped(x.shape())};
}

}  // namespace

AttackResult perturb(const UncertaintyModel& model, const Tensor& x, const AttackConfig& cfg) {
  cfg.validate();
  if (x.rank() == 0 || x.rank() > 2 || x.rows() != 1) throw ContractError("perturb attacks one sample at a time");
  const double eta = cfg.step();
  AttackResult result;
  Tensor current = x;
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    const Iterate it = evaluate(model, current);
    if (!std::isfinite(it.loss) || !it.gradient.all_finite()) {
      throw AttackError("non-finite surrogate gradient at attack iteration " + std::to_string(k));
    }
    result.loss_trace.push_back(it.loss);
    result.label_trace.push_back(it.label);
    Tensor candidate = current;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      const double g = it.gradient[i];
      candidate[i] -= eta * static_cast<double>((g > 0.0) - (g < 0.0));
    }
    current = project_linf(candidate, x, cfg.epsilon, cfg.range);
  }
  const std::size_t final_label = closest_label(model, current);
  result.loss_trace.push_back(surrogate_loss(model, current, final_label));
  result.label = result.label_trace.empty() ? final_label : result.label_trace.back();
  result.perturbation = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) result.perturbation[i] = current[i] - x[i];
  result.adversarial = std::move(current);
  return result;
}

AttackResult fgsm(const UncertaintyModel& model, const Tensor& x, double epsilon, const DataRange& range) {
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.iterations = 1;
  cfg.step_size = epsilon;
  cfg.range = range;
  return perturb(model, x, cfg);
}

std::vector<AttackResult> perturb_batch(const UncertaintyModel& model, const Tensor& x, const AttackConfig& cfg,
                                        std::size_t workers) {
  cfg.validate();
  const std::size_t n = x.rows();
  std::vector<AttackResult> results(n);
  auto run = [&](std::size_t r) {
    Tensor row(std::vector<std::size_t>{x.cols()}, std::vector<double>(x.row(r).begin(), x.row(r).end()));
    results[r] = perturb(model, row, cfg);
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t r = 0; r < n; ++r) run(r);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t r = next++; r < n && !failed; r = next++) {
        try {
          run(r);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

double linf_distance(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw DimensionError("linf_distance: shape mismatch");
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) best = std::max(best, std::abs(a[i] - b[i]));
  return best;
}

}  // namespace oodattack
