#include "oodattack/models.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "oodattack/errors.hpp"

namespace oodattack {

namespace {

Tensor he_normal(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor w({fan_in, fan_out});
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : w.data()) v = sd * rng.normal();
  return w;
}

}  // namespace

std::string_view family_name(Family f) {
  switch (f) {
    case Family::Softmax:
      return "softmax";
    case Family::Ensemble:
      return "ensemble";
    case Family::DUQ:
      return "duq";
    case Family::RFFGP:
      return "rffgp";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (Family f : {Family::Softmax, Family::Ensemble, Family::DUQ, Family::RFFGP})
    if (family_name(f) == name) return f;
  throw ValidationError("unknown model family '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ValidationError("model settings: input_dim must be positive");
  if (num_classes < 2) throw ValidationError("model settings: need at least 2 classes");
  for (auto w : hidden)
    if (w == 0) throw ValidationError("model settings: hidden widths must be positive");
  if (family == Family::Ensemble && members < 2) throw ValidationError("model settings: an ensemble needs M >= 2 members");
  if (family == Family::DUQ) {
    if (duq.embedding_dim == 0) throw ValidationError("model settings: DUQ embedding_dim must be positive");
    if (!(duq.length_scale > 0.0)) throw ValidationError("model settings: DUQ length scale must be positive");
    if (!(duq.gamma > 0.0 && duq.gamma <= 1.0)) throw ValidationError("model settings: DUQ gamma must lie in (0, 1]");
  }
  if (family == Family::RFFGP) {
    if (rff.features < num_classes) throw ValidationError("model settings: RFF feature count must be >= number of classes");
    if (!(rff.length_scale > 0.0)) throw ValidationError("model settings: RFF length scale must be positive");
    if (!(rff.mean_field >= 0.0)) throw ValidationError("model settings: mean-field factor must be nonnegative");
  }
}

// ---------------------------------------------------------------------------

FeatureExtractor::FeatureExtractor(std::size_t input_dim, std::vector<std::size_t> hidden)
    : input_dim_(input_dim), hidden_(std::move(hidden)) {
  std::size_t fan_in = input_dim_;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    weights_.emplace_back("w" + std::to_string(i), Tensor({fan_in, hidden_[i]}));
    biases_.emplace_back("b" + std::to_string(i), Tensor({hidden_[i]}));
    fan_in = hidden_[i];
  }
}

void FeatureExtractor::initialize(Rng& rng) {
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const auto& shape = weights_[i].value.shape();
    weights_[i].value = he_normal(shape[0], shape[1], rng);
    weights_[i].zero_grad();
    biases_[i].value = Tensor(biases_[i].value.shape());
    biases_[i].zero_grad();
  }
}

Var FeatureExtractor::forward(Tape& tape, Var x) const {
  Var h = x;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = relu(add_row(matmul(h, tape.parameter(weights_[i])), tape.parameter(biases_[i])));
  }
  return h;
}

void FeatureExtractor::collect_parameters(std::vector<Parameter*>& out) {
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(&weights_[i]);
    out.push_back(&biases_[i]);
  }
}

void FeatureExtractor::collect_state(const std::string& prefix, std::vector<StateEntry>& out) {
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.emplace_back(prefix + weights_[i].name, &weights_[i].value);
    out.emplace_back(prefix + biases_[i].name, &biases_[i].value);
  }
}

// ---------------------------------------------------------------------------

Tensor UncertaintyModel::as_batch(const Tensor& x) const {
  if (x.cols() != input_dim() || x.rank() == 0 || x.rank() > 2) {
    throw ContractError("input of shape " + shape_string(x.shape()) + " does not match model input dimension " +
                        std::to_string(input_dim()));
  }
  if (x.rank() == 1) return x.reshaped({1, x.size()});
  return x;
}

Tensor UncertaintyModel::predict_confidence(const Tensor& x) const {
  Tape tape;
  Var in = tape.constant(as_batch(x));
  Tensor out = confidences(tape, in).value();
  return x.rank() == 1 ? out.reshaped({out.size()}) : out;
}

Tensor UncertaintyModel::predict_raw(const Tensor& x) const {
  Tape tape;
  Var in = tape.constant(as_batch(x));
  Tensor out = raw_scores(tape, in).value();
  return x.rank() == 1 ? out.reshaped({out.size()}) : out;
}

// ---------------------------------------------------------------------------

SoftmaxModel::SoftmaxModel(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes)
    : extractor_(input_dim, std::move(hidden)), classes_(num_classes) {
  head_w_ = Parameter("w", Tensor({extractor_.output_dim(), classes_}));
  head_b_ = Parameter("b", Tensor({classes_}));
}

void SoftmaxModel::initialize(Rng& rng) {
  extractor_.initialize(rng);
  head_w_.value = he_normal(extractor_.output_dim(), classes_, rng);
  head_b_.value = Tensor({classes_});
  head_w_.zero_grad();
  head_b_.zero_grad();
}

Var SoftmaxModel::raw_scores(Tape& tape, Var x) const {
  Var f = extractor_.forward(tape, x);
  return add_row(matmul(f, tape.parameter(head_w_)), tape.parameter(head_b_));
}

Var SoftmaxModel::confidences(Tape& tape, Var x) const { return softmax(raw_scores(tape, x)); }

std::vector<Parameter*> SoftmaxModel::parameters() {
  std::vector<Parameter*> out;
  extractor_.collect_parameters(out);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

void SoftmaxModel::collect_state(const std::string& prefix, std::vector<StateEntry>& out) {
  extractor_.collect_state(prefix + "extractor.", out);
  out.emplace_back(prefix + "head.w", &head_w_.value);
  out.emplace_back(prefix + "head.b", &head_b_.value);
}

std::vector<StateEntry> SoftmaxModel::state() {
  std::vector<StateEntry> out;
  collect_state("", out);
  return out;
}

ModelSpec SoftmaxModel::spec() const {
  ModelSpec s;
  s.family = Family::Softmax;
  s.input_dim = input_dim();
  s.num_classes = classes_;
  s.hidden = extractor_.hidden();
  return s;
}

// ---------------------------------------------------------------------------

EnsembleModel::EnsembleModel(std::vector<SoftmaxModel> members) : members_(std::move(members)) {
  if (members_.empty()) throw ValidationError("ensemble needs at least one member");
  for (const auto& m : members_) {
    if (m.num_classes() != members_.front().num_classes() || m.input_dim() != members_.front().input_dim()) {
      throw ValidationError("ensemble members disagree on input dimension or class count");
    }
  }
}

Var EnsembleModel::confidences(Tape& tape, Var x) const {
  Var total = members_.front().confidences(tape, x);
  for (std::size_t i = 1; i < members_.size(); ++i) total = add(total, members_[i].confidences(tape, x));
  return scale(total, 1.0 / static_cast<double>(members_.size()));
}

std::vector<Parameter*> EnsembleModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& m : members_) {
    auto p = m.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<StateEntry> EnsembleModel::state() {
  std::vector<StateEntry> out;
  for (std::size_t i = 0; i < members_.size(); ++i) members_[i].collect_state("members." + std::to_string(i) + ".", out);
  return out;
}

ModelSpec EnsembleModel::spec() const {
  ModelSpec s = members_.front().spec();
  s.family = Family::Ensemble;
  s.members = members_.size();
  return s;
}

// ---------------------------------------------------------------------------

DUQModel::DUQModel(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes, DUQOptions options)
    : extractor_(input_dim, std::move(hidden)), classes_(num_classes), options_(options) {
  projection_ = Parameter("projection", Tensor({extractor_.output_dim(), classes_ * options_.embedding_dim}));
  centroids_ = Tensor({classes_, options_.embedding_dim});
}

void DUQModel::initialize(Rng& rng) {
  extractor_.initialize(rng);
  projection_.value = he_normal(extractor_.output_dim(), classes_ * options_.embedding_dim, rng);
  projection_.zero_grad();
}

Var DUQModel::embed(Tape& tape, Var x) const {
  return matmul(extractor_.forward(tape, x), tape.parameter(projection_));
}

Var DUQModel::log_kernels(Tape& tape, Var x) const {
  const double sigma = options_.length_scale;
  return scale(centroid_sq_distances(embed(tape, x), centroids_), -1.0 / (2.0 * sigma * sigma));
}

Var DUQModel::raw_scores(Tape& tape, Var x) const { return exp(log_kernels(tape, x)); }

Var DUQModel::confidences(Tape& tape, Var x) const { return softmax(log_kernels(tape, x)); }

void DUQModel::update_centroids(const Tensor& embeddings, std::span<const std::size_t> labels) {
  update_centroids(embeddings, labels, options_.gamma);
}

void DUQModel::update_centroids(const Tensor& embeddings, std::span<const std::size_t> labels, double g) {
  const std::size_t k = options_.embedding_dim;
  if (embeddings.cols() != classes_ * k || embeddings.rows() != labels.size()) {
    throw DimensionError("update_centroids: embeddings " + shape_string(embeddings.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  Tensor sums({classes_, k});
  std::vector<std::size_t> counts(classes_, 0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const std::size_t c = labels[r];
    ++counts[c];
    for (std::size_t j = 0; j < k; ++j) sums[c * k + j] += embeddings[r * classes_ * k + c * k + j];
  }
  for (std::size_t c = 0; c < classes_; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < k; ++j) {
      const double batch_mean = sums[c * k + j] / static_cast<double>(counts[c]);
      centroids_[c * k + j] = (1.0 - g) * centroids_[c * k + j] + g * batch_mean;
    }
  }
}

void DUQModel::set_centroids(Tensor centroids) {
  if (centroids.rows() != classes_ || centroids.cols() != options_.embedding_dim) {
    throw DimensionError("set_centroids: expected " + std::to_string(classes_) + "x" +
                         std::to_string(options_.embedding_dim) + ", got " + shape_string(centroids.shape()));
  }
  centroids_ = std::move(centroids);
}

double DUQModel::min_centroid_separation() const {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t k = options_.embedding_dim;
  for (std::size_t a = 0; a < classes_; ++a) {
    for (std::size_t b = a + 1; b < classes_; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += std::pow(centroids_[a * k + j] - centroids_[b * k + j], 2);
      best = std::min(best, std::sqrt(s));
    }
  }
  return best;
}

std::vector<Parameter*> DUQModel::parameters() {
  std::vector<Parameter*> out;
  extractor_.collect_parameters(out);
  out.push_back(&projection_);
  return out;
}

std::vector<StateEntry> DUQModel::state() {
  std::vector<StateEntry> out;
  extractor_.collect_state("extractor.", out);
  out.emplace_back("projection", &projection_.value);
  out.emplace_back("centroids", &centroids_);
  return out;
}

ModelSpec DUQModel::spec() const {
  ModelSpec s;
  s.family = Family::DUQ;
  s.input_dim = input_dim();
  s.num_classes = classes_;
  s.hidden = extractor_.hidden();
  s.duq = options_;
  return s;
}

Tensor normalize_kernel_scores(const Tensor& scores) {
  Tensor out(scores.shape());
  const std::size_t c = scores.cols();
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!(scores[r * c + j] >= 0.0)) throw ContractError("kernel scores must be nonnegative");
      total += scores[r * c + j];
    }
    if (!(total > 0.0)) throw NumericalError("kernel scores sum to zero");
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = scores[r * c + j] / total;
  }
  return out;
}

// ---------------------------------------------------------------------------

RFFGPModel::RFFGPModel(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes,
                       RFFOptions options)
    : extractor_(input_dim, std::move(hidden)), classes_(num_classes), options_(options) {
  const std::size_t m = options_.features;
  omega_ = Tensor({extractor_.output_dim(), m});
  phase_ = Tensor({m});
  beta_ = Parameter("beta", Tensor({m, classes_}));
  Tensor identity({m, m});
  for (std::size_t i = 0; i < m; ++i) identity[i * m + i] = 1.0;
  precision_ = identity;
  covariance_ = identity;
}

void RFFGPModel::initialize(Rng& rng) {
  extractor_.initialize(rng);
  const double inv_ls = 1.0 / options_.length_scale;
  for (double& v : omega_.data()) v = inv_ls * rng.normal();
  for (double& v : phase_.data()) v = rng.uniform(0.0, 2.0 * std::numbers::pi);
  beta_.value = he_normal(options_.features, classes_, rng);
  beta_.zero_grad();
}

Var RFFGPModel::random_features(Tape& tape, Var x) const {
  Var f = extractor_.forward(tape, x);
  Var z = add_row(matmul(f, tape.constant_ref(omega_)), tape.constant_ref(phase_));
  return scale(cos(z), std::sqrt(2.0 / static_cast<double>(options_.features)));
}

Var RFFGPModel::predictive_variance(Tape& /*tape*/, Var features) const {
  return quadratic_form_rows(features, covariance_);
}

Tensor RFFGPModel::predictive_variance(const Tensor& x) const {
  Tape tape;
  Var phi = random_features(tape, tape.constant(as_batch(x)));
  return predictive_variance(tape, phi).value();
}

Var RFFGPModel::raw_scores(Tape& tape, Var x) const {
  return matmul(random_features(tape, x), tape.parameter(beta_));
}

Var RFFGPModel::confidences(Tape& tape, Var x) const {
  Var phi = random_features(tape, x);
  Var logits = matmul(phi, tape.parameter(beta_));
  Var var = predictive_variance(tape, phi);
  Var factor = power(add_scalar(scale(var, options_.mean_field), 1.0), -0.5);
  return softmax(scale_rows(logits, factor));
}

void RFFGPModel::fit_precision(const Tensor& x) {
  Tape tape;
  Var phi_var = random_features(tape, tape.constant(as_batch(x)));
  const Tensor& phi = phi_var.value();
  const Tensor probs = softmax(matmul(phi, beta_.value));
  const std::size_t n = phi.rows(), m = phi.cols(), c = probs.cols();
  Tensor p({m, m});
  for (std::size_t i = 0; i < m; ++i) p[i * m + i] = 1.0;
  for (std::size_t r = 0; r < n; ++r) {
    double pmax = 0.0;
    for (std::size_t j = 0; j < c; ++j) pmax = std::max(pmax, probs[r * c + j]);
    const double w = pmax * (1.0 - pmax);
    if (w == 0.0) continue;
    const double* f = &phi.data()[r * m];
    for (std::size_t i = 0; i < m; ++i) {
      const double wi = w * f[i];
      for (std::size_t j = i; j < m; ++j) p[i * m + j] += wi * f[j];
    }
  }
  // Mirror the upper triangle so P is exactly symmetric.
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < i; ++j) p[i * m + j] = p[j * m + i];
  set_precision(std::move(p));
}

void RFFGPModel::set_precision(Tensor precision) {
  const std::size_t m = options_.features;
  if (precision.rows() != m || precision.cols() != m) {
    throw DimensionError("precision must be " + std::to_string(m) + "x" + std::to_string(m) + ", got " +
                         shape_string(precision.shape()));
  }
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Matrix> pm(precision.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  Eigen::LLT<Matrix> llt(pm);
  if (llt.info() != Eigen::Success) throw NumericalError("Laplace precision matrix is not positive definite");
  Matrix inv = llt.solve(Matrix::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)));
  // Symmetrize so the stored covariance is exactly symmetric.
  Matrix sym = 0.5 * (inv + inv.transpose());
  covariance_ = Tensor({m, m}, std::vector<double>(sym.data(), sym.data() + sym.size()));
  precision_ = std::move(precision);
}

std::vector<Parameter*> RFFGPModel::parameters() {
  std::vector<Parameter*> out;
  extractor_.collect_parameters(out);
  out.push_back(&beta_);
  return out;
}

std::vector<StateEntry> RFFGPModel::state() {
  std::vector<StateEntry> out;
  extractor_.collect_state("extractor.", out);
  out.emplace_back("omega", &omega_);
  out.emplace_back("phase", &phase_);
  out.emplace_back("beta", &beta_.value);
  out.emplace_back("precision", &precision_);
  return out;
}

ModelSpec RFFGPModel::spec() const {
  ModelSpec s;
  s.family = Family::RFFGP;
  s.input_dim = input_dim();
  s.num_classes = classes_;
  s.hidden = extractor_.hidden();
  s.rff = options_;
  return s;
}

// ---------------------------------------------------------------------------

std::unique_ptr<UncertaintyModel> make_model(const ModelSpec& spec) {
  spec.validate();
  switch (spec.family) {
    case Family::Softmax:
      return std::make_unique<SoftmaxModel>(spec.input_dim, spec.hidden, spec.num_classes);
    case Family::Ensemble: {
      std::vector<SoftmaxModel> members(spec.members, SoftmaxModel(spec.input_dim, spec.hidden, spec.num_classes));
      return std::make_unique<EnsembleModel>(std::move(members));
    }
    case Family::DUQ:
      return std::make_unique<DUQModel>(spec.input_dim, spec.hidden, spec.num_classes, spec.duq);
    case Family::RFFGP:
      return std::make_unique<RFFGPModel>(spec.input_dim, spec.hidden, spec.num_classes, spec.rff);
  }
  throw ValidationError("unknown model family");
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

double accuracy(const UncertaintyModel& model, const LabeledDataset& data) {
  if (data.size() == 0) return 0.0;
  const Tensor conf = model.predict_confidence(data.features);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < data.size(); ++r) hits += argmax(conf.row(r)) == data.labels[r];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace oodattack
