#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "oodattack/datasets.hpp"
#include "oodattack/random.hpp"
#include "oodattack/tape.hpp"

namespace oodattack {

enum class Family { Softmax, Ensemble, DUQ, RFFGP };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);

struct DUQOptions {
  std::size_t embedding_dim = 16;
  double length_scale = 1.0;
  // Weight of the new batch mean in the centroid moving average.
  double gamma = 0.1;
};

struct RFFOptions {
  std::size_t features = 256;
  double length_scale = 1.0;
  double mean_field = std::numbers::pi / 8.0;
};

// Everything needed to build a model skeleton with the right shapes.
struct ModelSpec {
  Family family = Family::Softmax;
  std::size_t input_dim = 2;
  std::size_t num_classes = 4;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t members = 5;
  DUQOptions duq;
  RFFOptions rff;

  void validate() const;
};

// Provenance stored alongside the weights in checkpoints.
struct TrainingMeta {
  std::uint64_t seed = 0;
  double epsilon_train = 0.0;
  std::size_t epochs = 0;
  double train_accuracy = 0.0;
  // Hash of the settings that produced the weights, set by the harness (0 = unknown).
  std::uint64_t fingerprint = 0;
};

using StateEntry = std::pair<std::string, Tensor*>;

// Two-or-more-layer ReLU MLP; the output of the last hidden layer is the feature vector.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(std::size_t input_dim, std::vector<std::size_t> hidden);

  void initialize(Rng& rng);
  Var forward(Tape& tape, Var x) const;

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t output_dim() const noexcept { return hidden_.empty() ? input_dim_ : hidden_.back(); }
  const std::vector<std::size_t>& hidden() const noexcept { return hidden_; }

  void collect_parameters(std::vector<Parameter*>& out);
  void collect_state(const std::string& prefix, std::vector<StateEntry>& out);

 private:
  std::size_t input_dim_ = 0;
  std::vector<std::size_t> hidden_;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
};

// A trained victim f_theta: x -> p(y) over the in-domain classes.
class UncertaintyModel {
 public:
  virtual ~UncertaintyModel() = default;

  virtual Family family() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t num_classes() const = 0;

  // Pre-normalization scores for a batch x[n x d], recorded on `tape`.
  virtual Var raw_scores(Tape& tape, Var x) const = 0;
  // Normalized confidences as a differentiable function of x.
  virtual Var confidences(Tape& tape, Var x) const = 0;

  virtual std::vector<Parameter*> parameters() = 0;
  // Every tensor that defines the model, in a stable order with unique names.
  virtual std::vector<StateEntry> state() = 0;
  virtual ModelSpec spec() const = 0;
  virtual std::unique_ptr<UncertaintyModel> clone() const = 0;
  // Rebuilds cached quantities after state() tensors were overwritten in place.
  virtual void state_loaded() {}

  // Convenience wrappers that own a tape. Accept [d] or [n x d].
  Tensor predict_confidence(const Tensor& x) const;
  Tensor predict_raw(const Tensor& x) const;

  TrainingMeta meta;

 protected:
  Tensor as_batch(const Tensor& x) const;
};

class SoftmaxModel final : public UncertaintyModel {
 public:
  SoftmaxModel() = default;
  SoftmaxModel(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes);

  void initialize(Rng& rng);

  Family family() const override { return Family::Softmax; }
  std::size_t input_dim() const override { return extractor_.input_dim(); }
  std::size_t num_classes() const override { return classes_; }
  Var raw_scores(Tape& tape, Var x) const override;
  Var confidences(Tape& tape, Var x) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<StateEntry> state() override;
  ModelSpec spec() const override;
  std::unique_ptr<UncertaintyModel> clone() const override { return std::make_unique<SoftmaxModel>(*this); }

  void collect_state(const std::string& prefix, std::vector<StateEntry>& out);

 private:
  FeatureExtractor extractor_;
  Parameter head_w_;
  Parameter head_b_;
  std::size_t classes_ = 0;
};

// Arithmetic mean of member probability vectors. The raw scores are that mean too.
class EnsembleModel final : public UncertaintyModel {
 public:
  EnsembleModel() = default;
  explicit EnsembleModel(std::vector<SoftmaxModel> members);

  Family family() const override { return Family::Ensemble; }
  std::size_t input_dim() const override { return members_.front().input_dim(); }
  std::size_t num_classes() const override { return members_.front().num_classes(); }
  Var raw_scores(Tape& tape, Var x) const override { return confidences(tape, x); }
  Var confidences(Tape& tape, Var x) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<StateEntry> state() override;
  ModelSpec spec() const override;
  std::unique_ptr<UncertaintyModel> clone() const override { return std::make_unique<EnsembleModel>(*this); }

  const std::vector<SoftmaxModel>& members() const noexcept { return members_; }
  std::vector<SoftmaxModel>& members() noexcept { return members_; }

 private:
  std::vector<SoftmaxModel> members_;
};

// RBF-centroid head: K_c(x) = exp(-||W_c f(x) - e_c||^2 / (2 sigma^2)). Confidences are
// K / sum(K), evaluated as a softmax over the log-kernels so far-away inputs do not
// underflow to 0/0.
class DUQModel final : public UncertaintyModel {
 public:
  DUQModel() = default;
  DUQModel(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes, DUQOptions options);

  void initialize(Rng& rng);

  Family family() const override { return Family::DUQ; }
  std::size_t input_dim() const override { return extractor_.input_dim(); }
  std::size_t num_classes() const override { return classes_; }
  Var raw_scores(Tape& tape, Var x) const override;
  Var confidences(Tape& tape, Var x) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<StateEntry> state() override;
  ModelSpec spec() const override;
  std::unique_ptr<UncertaintyModel> clone() const override { return std::make_unique<DUQModel>(*this); }

  // Per-class embeddings W_c f(x), packed as [n x (C * k)].
  Var embed(Tape& tape, Var x) const;
  // Moving-average update e_c <- (1 - gamma) e_c + gamma * mean of class-c embeddings.
  // Classes absent from the batch keep their centroid.
  void update_centroids(const Tensor& embeddings, std::span<const std::size_t> labels);
  void update_centroids(const Tensor& embeddings, std::span<const std::size_t> labels, double gamma);
  void set_centroids(Tensor centroids);
  const Tensor& centroids() const noexcept { return centroids_; }
  const DUQOptions& options() const noexcept { return options_; }
  // Smallest pairwise distance between centroids.
  double min_centroid_separation() const;

 private:
  Var log_kernels(Tape& tape, Var x) const;

  FeatureExtractor extractor_;
  Parameter projection_;  // h x (C * k)
  Tensor centroids_;      // C x k
  std::size_t classes_ = 0;
  DUQOptions options_;
};

// Random-Fourier-feature GP head with a Laplace posterior over the output weights.
//   phi(x) = sqrt(2/m) cos(f(x) Omega + b),  logits = phi beta,
//   var(x) = phi P^{-1} phi^T,  confidences = softmax(logits / sqrt(1 + lambda var)).
class RFFGPModel final : public UncertaintyModel {
 public:
  RFFGPModel() = default;
  RFFGPModel(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes, RFFOptions options);

  void initialize(Rng& rng);

  Family family() const override { return Family::RFFGP; }
  std::size_t input_dim() const override { return extractor_.input_dim(); }
  std::size_t num_classes() const override { return classes_; }
  // Unadjusted logits phi beta.
  Var raw_scores(Tape& tape, Var x) const override;
  Var confidences(Tape& tape, Var x) const override;
  std::vector<Parameter*> parameters() override;
  std::vector<StateEntry> state() override;
  ModelSpec spec() const override;
  std::unique_ptr<UncertaintyModel> clone() const override { return std::make_unique<RFFGPModel>(*this); }
  void state_loaded() override { set_precision(precision_); }

  Var random_features(Tape& tape, Var x) const;
  Var predictive_variance(Tape& tape, Var features) const;
  Tensor predictive_variance(const Tensor& x) const;

  // P = I + sum_x p(1-p) phi(x) phi(x)^T with p the max-class probability.
  void fit_precision(const Tensor& x);
  // Installs a precision matrix and recomputes its inverse.
  void set_precision(Tensor precision);
  const Tensor& precision() const noexcept { return precision_; }
  const Tensor& covariance() const noexcept { return covariance_; }
  const RFFOptions& options() const noexcept { return options_; }

 private:
  FeatureExtractor extractor_;
  Tensor omega_;  // h x m, frozen
  Tensor phase_;  // m, frozen
  Parameter beta_;
  Tensor precision_;
  Tensor covariance_;
  std::size_t classes_ = 0;
  RFFOptions options_;
};

// Row-wise K / sum(K) for nonnegative kernel scores.
Tensor normalize_kernel_scores(const Tensor& scores);

// Untrained skeleton with the right shapes (weights zero, precision identity).
std::unique_ptr<UncertaintyModel> make_model(const ModelSpec& spec);

// ---- training ----

struct AdvTrainSpec {
  double epsilon = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  // L2 penalty folded into the SGD update.
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::optional<AdvTrainSpec> adversarial;

  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
  std::vector<std::string> warnings;
};

template <class M>
struct Trained {
  M model;
  TrainReport report;
};

Trained<SoftmaxModel> train_softmax(const LabeledDataset& data, const TrainConfig& cfg,
                                    const std::vector<std::size_t>& hidden);
// Members use seeds cfg.seed + 0 .. cfg.seed + members - 1.
Trained<EnsembleModel> train_ensemble(const LabeledDataset& data, const TrainConfig& cfg, std::size_t members,
                                      const std::vector<std::size_t>& hidden);
// FGSM-augmented members: every batch is doubled with x + eps sign(grad_x CE), clamped to
// the data range. With eps = 0 this is exactly train_ensemble.
Trained<EnsembleModel> train_ensemble_adversarial(const LabeledDataset& data, const TrainConfig& cfg,
                                                  std::size_t members, const std::vector<std::size_t>& hidden);
Trained<DUQModel> train_duq(const LabeledDataset& data, const TrainConfig& cfg, const std::vector<std::size_t>& hidden,
                            const DUQOptions& options);
Trained<RFFGPModel> train_rffgp(const LabeledDataset& data, const TrainConfig& cfg,
                                const std::vector<std::size_t>& hidden, const RFFOptions& options);

// Fraction of rows whose argmax confidence equals the label.
double accuracy(const UncertaintyModel& model, const LabeledDataset& data);

// Lowest index among maximal entries.
std::size_t argmax(std::span<const double> v);

}  // namespace oodattack
