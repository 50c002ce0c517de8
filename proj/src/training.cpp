#include <cmath>
#include <numeric>

#include "oodattack/errors.hpp"
#include "oodattack/models.hpp"
#include "oodattack/optim.hpp"

namespace oodattack {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train config: learning_rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("train config: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ValidationError("train config: weight_decay must be >= 0");
  }
  if (adversarial && !(adversarial->epsilon >= 0.0)) throw ValidationError("train config: eps_tr must be >= 0");
}

namespace {

using LossFn = std::function<Var(Tape&, const Tensor&, std::span<const std::size_t>)>;
using AfterStepFn = std::function<void(const Tensor&, std::span<const std::size_t>)>;

// Minibatch SGD over shuffled epochs. The shuffle stream is the only randomness.
TrainReport fit(std::vector<Parameter*> params, const LabeledDataset& data, const TrainConfig& cfg, Rng shuffle_rng,
                const LossFn& loss_fn, const AfterStepFn& after_step = {}) {
  if (data.size() == 0) throw TrainingError("training data is empty");
  Sgd opt(std::move(params), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  TrainReport report;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor xb = gather_rows(data.features, idx);
      std::vector<std::size_t> yb;
      yb.reserve(idx.size());
      for (std::size_t i : idx) yb.push_back(data.labels[i]);

      Tape tape(true);
      Var loss = loss_fn(tape, xb, yb);
      const double value = loss.value().item();
      if (!std::isfinite(value)) throw TrainingError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
      tape.backward(loss);
      opt.collect(tape);
      try {
        opt.step();
      } catch (const NumericalError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch));
      }
      if (after_step) after_step(xb, yb);
      epoch_loss += value;
      ++batches;
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
  }
  return report;
}

Var cross_entropy_loss(const UncertaintyModel& model, Tape& tape, const Tensor& xb,
                       std::span<const std::size_t> yb) {
  return cross_entropy(model.confidences(tape, tape.constant(xb)), yb);
}

// x + eps * sign(grad_x CE(f(x), y)), clamped to the data range.
Tensor fgsm_examples(const UncertaintyModel& model, const Tensor& xb, std::span<const std::size_t> yb, double eps,
                     const DataRange& range) {
  Tape tape;
  Var x = tape.input(xb);
  tape.backward(cross_entropy(model.confidences(tape, x), yb));
  const Tensor g = tape.grad(x);
  Tensor adv = xb;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double s = (g[i] > 0.0) - (g[i] < 0.0);
    adv[i] = range.clamp(xb[i] + eps * s);
  }
  return adv;
}

Trained<SoftmaxModel> train_member(const LabeledDataset& data, const TrainConfig& cfg,
                                   const std::vector<std::size_t>& hidden, double eps_tr) {
  Rng root(cfg.seed);
  Rng init = root.split("init");
  SoftmaxModel model(data.dimension(), hidden, data.num_classes);
  model.initialize(init);
  LossFn loss;
  if (eps_tr > 0.0) {
    loss = [&](Tape& tape, const Tensor& xb, std::span<const std::size_t> yb) {
      const Tensor adv = fgsm_examples(model, xb, yb, eps_tr, data.range);
      std::vector<std::size_t> both(yb.begin(), yb.end());
      both.insert(both.end(), yb.begin(), yb.end());
      return cross_entropy(model.confidences(tape, tape.constant(stack_rows(xb, adv))), both);
    };
  } else {
    loss = [&](Tape& tape, const Tensor& xb, std::span<const std::size_t> yb) {
      return cross_entropy_loss(model, tape, xb, yb);
    };
  }
  TrainReport report = fit(model.parameters(), data, cfg, root.split("shuffle"), loss);
  report.train_accuracy = accuracy(model, data);
  model.meta = {cfg.seed, eps_tr, cfg.epochs, report.train_accuracy, 0};
  return {std::move(model), std::move(report)};
}

Trained<EnsembleModel> train_members(const LabeledDataset& data, const TrainConfig& cfg, std::size_t members,
                                     const std::vector<std::size_t>& hidden, double eps_tr) {
  if (members < 2) throw ValidationError("ensemble needs M >= 2 members, got " + std::to_string(members));
  std::vector<SoftmaxModel> trained;
  TrainReport report;
  for (std::size_t i = 0; i < members; ++i) {
    TrainConfig member_cfg = cfg;
    member_cfg.seed = cfg.seed + i;
    auto t = train_member(data, member_cfg, hidden, eps_tr);
    if (report.epoch_loss.empty()) report.epoch_loss.assign(t.report.epoch_loss.size(), 0.0);
    for (std::size_t e = 0; e < t.report.epoch_loss.size(); ++e)
      report.epoch_loss[e] += t.report.epoch_loss[e] / static_cast<double>(members);
    trained.push_back(std::move(t.model));
  }
  EnsembleModel model(std::move(trained));
  report.train_accuracy = accuracy(model, data);
  model.meta = {cfg.seed, eps_tr, cfg.epochs, report.train_accuracy, 0};
  return {std::move(model), std::move(report)};
}

}  // namespace

Trained<SoftmaxModel> train_softmax(const LabeledDataset& data, const TrainConfig& cfg,
                                    const std::vector<std::size_t>& hidden) {
  cfg.validate();
  data.validate();
  return train_member(data, cfg, hidden, 0.0);
}

Trained<EnsembleModel> train_ensemble(const LabeledDataset& data, const TrainConfig& cfg, std::size_t members,
                                      const std::vector<std::size_t>& hidden) {
  cfg.validate();
  data.validate();
  return train_members(data, cfg, members, hidden, 0.0);
}

Trained<EnsembleModel> train_ensemble_adversarial(const LabeledDataset& data, const TrainConfig& cfg,
                                                  std::size_t members, const std::vector<std::size_t>& hidden) {
  cfg.validate();
  data.validate();
  const double eps = cfg.adversarial ? cfg.adversarial->epsilon : 0.0;
  return train_members(data, cfg, members, hidden, eps);
}

Trained<DUQModel> train_duq(const LabeledDataset& data, const TrainConfig& cfg, const std::vector<std::size_t>& hidden,
                            const DUQOptions& options) {
  cfg.validate();
  data.validate();
  Rng root(cfg.seed);
  Rng init = root.split("init");
  DUQModel model(data.dimension(), hidden, data.num_classes, options);
  model.spec().validate();
  model.initialize(init);

  // Centroids start at the class means of the initial embeddings.
  {
    Tape tape;
    const Tensor emb = model.embed(tape, tape.constant(data.features)).value();
    model.update_centroids(emb, data.labels, 1.0);
  }

  auto loss = [&](Tape& tape, const Tensor& xb, std::span<const std::size_t> yb) {
    return binary_cross_entropy(model.raw_scores(tape, tape.constant(xb)), yb);
  };
  auto refresh = [&](const Tensor& xb, std::span<const std::size_t> yb) {
    Tape tape;
    model.update_centroids(model.embed(tape, tape.constant(xb)).value(), yb);
  };
  TrainReport report = fit(model.parameters(), data, cfg, root.split("shuffle"), loss, refresh);
  if (model.min_centroid_separation() < 1e-6) report.warnings.push_back("DUQ centroids collapsed (separation < 1e-6)");
  report.train_accuracy = accuracy(model, data);
  model.meta = {cfg.seed, 0.0, cfg.epochs, report.train_accuracy, 0};
  return {std::move(model), std::move(report)};
}

Trained<RFFGPModel> train_rffgp(const LabeledDataset& data, const TrainConfig& cfg,
                                const std::vector<std::size_t>& hidden, const RFFOptions& options) {
  cfg.validate();
  data.validate();
  Rng root(cfg.seed);
  Rng init = root.split("init");
  RFFGPModel model(data.dimension(), hidden, data.num_classes, options);
  model.spec().validate();
  model.initialize(init);
  // Stage 1 trains on the plain softmax of the random-feature logits.
  auto loss = [&](Tape& tape, const Tensor& xb, std::span<const std::size_t> yb) {
    return cross_entropy(softmax(model.raw_scores(tape, tape.constant(xb))), yb);
  };
  TrainReport report = fit(model.parameters(), data, cfg, root.split("shuffle"), loss);
  // Stage 2: one pass accumulating the Laplace precision.
  model.fit_precision(data.features);
  report.train_accuracy = accuracy(model, data);
  model.meta = {cfg.seed, 0.0, cfg.epochs, report.train_accuracy, 0};
  return {std::move(model), std::move(report)};
}

}  // namespace oodattack
