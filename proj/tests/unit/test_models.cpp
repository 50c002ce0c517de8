#include <doctest.h>

#include <cmath>

#include "fd.hpp"
#include "oodattack/errors.hpp"
#include "oodattack/metrics.hpp"
#include "oodattack/models.hpp"

using namespace oodattack;
using namespace oodattack::testing;

namespace {

const LabeledDataset& blobs() {
  static const LabeledDataset d = gen_in_domain(SyntheticSpec::default_benchmark());
  return d;
}

const UnlabeledDataset& ring() {
  static const UnlabeledDataset d = gen_out_domain(SyntheticSpec::default_benchmark());
  return d;
}

TrainConfig quick(std::uint64_t seed, std::size_t epochs = 10) {
  TrainConfig c;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

double mean_max(const Tensor& p) {
  double s = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    s += *std::max_element(row.begin(), row.end());
  }
  return s / static_cast<double>(p.rows());
}

void check_distributions(const Tensor& p) {
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double total = 0.0;
    for (double v : p.row(r)) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

}  // namespace

TEST_CASE("softmax training is accurate and deterministic") {
  auto a = train_softmax(blobs(), quick(1), {32, 32});
  auto b = train_softmax(blobs(), quick(1), {32, 32});
  CHECK(a.report.train_accuracy >= 0.99);
  CHECK(a.report.epoch_loss.size() == 10);
  auto sa = a.model.state(), sb = b.model.state();
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(*sa[i].second == *sb[i].second);
  check_distributions(a.model.predict_confidence(ring().features));

  // Raw scores are logits.
  const Tensor raw = a.model.predict_raw(ring().features);
  CHECK(max_relative_error(softmax(raw), a.model.predict_confidence(ring().features), 1.0) < 1e-15);
}

TEST_CASE("zero epochs returns the initialized model") {
  auto t = train_softmax(blobs(), quick(4, 0), {32, 32});
  CHECK(t.report.epoch_loss.empty());
  CHECK(t.report.train_accuracy < 0.75);
}

TEST_CASE("training rejects empty data and bad settings") {
  LabeledDataset empty = blobs();
  empty.features = Tensor({0, 2});
  empty.labels.clear();
  CHECK_THROWS(train_softmax(empty, quick(1), {8}));
  TrainConfig bad = quick(1, 5);
  bad.batch_size = 0;
  CHECK_THROWS_AS(train_softmax(blobs(), bad, {8}), ValidationError);
  bad = quick(1, 5);
  bad.momentum = 1.0;
  CHECK_THROWS_AS(train_softmax(blobs(), bad, {8}), ValidationError);
  // The log floor in the cross-entropy saturates instead of overflowing.
  TrainConfig wild = quick(1, 5);
  wild.learning_rate = 1e300;
  CHECK_NOTHROW(train_softmax(blobs(), wild, {}));
}

TEST_CASE("ensemble members and averaging") {
  auto e = train_ensemble(blobs(), quick(10), 3, {16, 16});
  REQUIRE(e.model.members().size() == 3);
  CHECK(*e.model.members()[0].state()[0].second != *e.model.members()[1].state()[0].second);
  const Tensor x = ring().features;
  Tensor avg({x.rows(), 4});
  for (auto& m : e.model.members()) {
    const Tensor p = m.predict_confidence(x);
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p[i] / 3.0;
  }
  CHECK(max_relative_error(avg, e.model.predict_confidence(x), 1.0) < 1e-14);
  CHECK_THROWS_AS(train_ensemble(blobs(), quick(1), 1, {8}), ValidationError);
}

TEST_CASE("ensemble of two opposite members averages to uniform") {
  SoftmaxModel a(1, {}, 2), b(1, {}, 2);
  // Zero weights with biases +-50 give near one-hot outputs (1, 0) and (0, 1).
  auto sa = a.state(), sb = b.state();
  *sa.back().second = Tensor::vector({50, -50});
  *sb.back().second = Tensor::vector({-50, 50});
  EnsembleModel e({a, b});
  const Tensor p = e.predict_confidence(Tensor::vector({0.3}));
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("adversarial ensemble with zero radius matches the vanilla trajectory") {
  TrainConfig cfg = quick(5, 3);
  cfg.adversarial = AdvTrainSpec{0.0};
  auto adv = train_ensemble_adversarial(blobs(), cfg, 2, {8});
  auto plain = train_ensemble(blobs(), quick(5, 3), 2, {8});
  auto sa = adv.model.state(), sp = plain.model.state();
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(*sa[i].second == *sp[i].second);

  cfg.adversarial = AdvTrainSpec{0.4};
  auto robust = train_ensemble_adversarial(blobs(), cfg, 2, {8});
  CHECK(robust.model.meta.epsilon_train == 0.4);
  CHECK(robust.report.train_accuracy >= 0.95);
}

TEST_CASE("duq kernel scores, normalization and centroids") {
  CHECK(normalize_kernel_scores(Tensor::matrix({{2.0, 1.0, 1.0}})) == Tensor::matrix({{0.5, 0.25, 0.25}}));

  DUQOptions opts;
  auto t = train_duq(blobs(), quick(2, 10), {32, 32}, opts);
  const Tensor raw = t.model.predict_raw(ring().features);
  for (double k : raw.data()) {
    CHECK(k > 0.0);
    CHECK(k <= 1.0);
  }
  const Tensor conf = t.model.predict_confidence(ring().features);
  check_distributions(conf);
  for (std::size_t r = 0; r < raw.rows(); ++r)
    CHECK(argmax(raw.row(r)) == argmax(conf.row(r)));
  const Tensor in_conf = t.model.predict_confidence(gen_in_domain(SyntheticSpec::default_benchmark(), 1).features);
  CHECK(mean_max(in_conf) > mean_max(conf));

  // gamma = 1 puts every centroid exactly on its batch class mean.
  DUQModel m = t.model;
  Tape tape;
  const Tensor emb = m.embed(tape, tape.constant(blobs().features)).value();
  m.update_centroids(emb, blobs().labels, 1.0);
  const std::size_t k = opts.embedding_dim, C = 4;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      std::size_t n = 0;
      for (std::size_t r = 0; r < emb.rows(); ++r) {
        if (blobs().labels[r] != c) continue;
        s += emb(r, c * k + j);
        ++n;
      }
      CHECK(m.centroids()(c, j) == doctest::Approx(s / static_cast<double>(n)).epsilon(1e-14));
    }
  }
  // One EMA step with the configured gamma.
  DUQModel before = t.model;
  DUQModel after = t.model;
  const std::vector<std::size_t> few{0, 1, 2, 3, 0};
  const Tensor part = slice_rows(emb, 0, 5);
  after.update_centroids(part, few);
  const double g = opts.gamma;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      std::size_t n = 0;
      for (std::size_t r = 0; r < 5; ++r)
        if (few[r] == c) s += part(r, c * k + j), ++n;
      const double expect = (1 - g) * before.centroids()(c, j) + g * s / static_cast<double>(n);
      CHECK(std::abs(after.centroids()(c, j) - expect) < 1e-10);
    }
  }
}

TEST_CASE("rff-gp precision, variance and mean-field limit") {
  RFFGPModel m(2, {16}, 4, RFFOptions{});
  Rng rng(3);
  m.initialize(rng);
  const Tensor x = slice_rows(blobs().features, 0, 20);
  // With P = I the variance is ||phi||^2.
  {
    Tape tape;
    const Tensor phi = m.random_features(tape, tape.constant(x)).value();
    const Tensor var = m.predictive_variance(x);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double sq = 0.0;
      for (double v : phi.row(r)) sq += v * v;
      CHECK(var[r] == doctest::Approx(sq).epsilon(1e-12));
    }
  }
  auto t = train_rffgp(blobs(), quick(6, 10), {32, 32}, RFFOptions{});
  CHECK(t.report.train_accuracy >= 0.99);
  const Tensor& P = t.model.precision();
  const std::size_t n = P.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) CHECK(P(i, j) == P(j, i));
  // P = I + PSD, so x^T P x >= ||x||^2 for random probes.
  for (int probe = 0; probe < 20; ++probe) {
    Tensor v = random_tensor(rng, {n});
    double quad = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      norm += v[i] * v[i];
      for (std::size_t j = 0; j < n; ++j) quad += v[i] * P(i, j) * v[j];
    }
    CHECK(quad >= (1 - 1e-9) * norm);
  }
  const Tensor var_in = t.model.predictive_variance(blobs().features);
  const Tensor var_out = t.model.predictive_variance(ring().features);
  double mi = 0, mo = 0;
  for (double v : var_in.data()) mi += v / static_cast<double>(var_in.size());
  for (double v : var_out.data()) mo += v / static_cast<double>(var_out.size());
  CHECK(mi <= mo);
  check_distributions(t.model.predict_confidence(ring().features));

  RFFGPModel wide = t.model;
  Tensor tiny({n, n});
  for (std::size_t i = 0; i < n; ++i) tiny(i, i) = 1e-12;
  wide.set_precision(tiny);
  const Tensor p = wide.predict_confidence(ring().features);
  for (double v : p.data()) CHECK(std::abs(v - 0.25) < 1e-3);

  Tensor bad({n, n});
  CHECK_THROWS_AS(wide.set_precision(bad), NumericalError);
}

TEST_CASE("models reject inputs of the wrong dimension") {
  SoftmaxModel m(2, {4}, 3);
  CHECK_THROWS_AS(m.predict_confidence(Tensor::vector({1, 2, 3})), ContractError);
  CHECK_THROWS_AS(m.predict_confidence(Tensor({2, 5})), ContractError);
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax(std::vector<double>{0.2, 0.5, 0.3}) == 1);
  CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
}
