#include <doctest.h>

#include <cmath>

#include "oodattack/errors.hpp"
#include "oodattack/metrics.hpp"
#include "oodattack/random.hpp"

using namespace oodattack;

namespace {

Tensor uniform(std::size_t rows, std::size_t c) { return Tensor({rows, c}, 1.0 / static_cast<double>(c)); }

Tensor random_distributions(Rng& rng, std::size_t rows, std::size_t c) {
  Tensor t({rows, c});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (double& v : t.row(r)) s += (v = rng.uniform(0.0, 1.0));
    for (double& v : t.row(r)) v /= s;
  }
  return t;
}

}  // namespace

TEST_CASE("entropy of uniform and one-hot distributions") {
  for (std::size_t c : {2u, 10u, 100u}) CHECK(std::abs(entropy(uniform(1, c)) - std::log(static_cast<double>(c))) <= 1e-9);
  CHECK(entropy(uniform(1, 10)) == doctest::Approx(2.302585).epsilon(1e-6));
  CHECK(entropy(Tensor::vector({0.0, 1.0, 0.0})) == 0.0);
  CHECK(entropy(std::vector<double>{1.0, 0.0}) == 0.0);
}

TEST_CASE("batch entropy is the row mean") {
  const Tensor batch = Tensor::matrix({{0.9, 0.1}, {0.5, 0.5}});
  const double h0 = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  const double expect = 0.5 * (h0 + std::log(2.0));
  CHECK(entropy(batch) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(entropy(batch) == doctest::Approx(0.509115).epsilon(1e-6));
}

TEST_CASE("rejection rate boundaries") {
  const Tensor batch = Tensor::matrix({{0.95, 0.05}, {0.85, 0.15}, {0.91, 0.09}});
  CHECK(rejection_rate(batch, {0.9}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(rejection_rate(batch, {0.0}) == 0.0);
  CHECK(rejection_rate(Tensor::matrix({{0.75, 0.25}}), {0.75}) == 0.0);
  CHECK(rejection_rate(Tensor::matrix({{0.75, 0.25}}), {std::nextafter(0.75, 1.0)}) == 1.0);
  CHECK(rejection_rate(uniform(4, 10), {1.0}) == 1.0);
  CHECK_THROWS_AS(MetricsConfig{1.5}.validate(), ValidationError);
}

TEST_CASE("invalid distributions are contract errors") {
  CHECK_THROWS_AS(entropy(Tensor::vector({0.5, 0.6})), ContractError);
  CHECK_THROWS_AS(entropy(Tensor::vector({1.2, -0.2})), ContractError);
  CHECK_THROWS_AS(rejection_rate(Tensor::vector({NAN, 1.0}), {0.9}), ContractError);
  CHECK_NOTHROW(validate_distributions(Tensor::vector({0.5, 0.5 + 5e-7})));
}

TEST_CASE("compare") {
  Rng rng(2);
  const Tensor p = random_distributions(rng, 30, 5);
  const UncertaintyReport same = compare(p, p, {0.5});
  CHECK(same.entropy_clean == same.entropy_adv);
  CHECK(same.rejection_clean == same.rejection_adv);
  CHECK(same.tau == 0.5);

  const UncertaintyReport flat = compare(uniform(8, 10), uniform(8, 10), {0.9});
  CHECK(flat.entropy_clean == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(flat.rejection_clean == 1.0);
  CHECK_THROWS_AS(compare(uniform(8, 10), uniform(7, 10), {0.9}), ContractError);
}

TEST_CASE("rejection is monotone in tau and metrics ignore row order") {
  Rng rng(9);
  const Tensor p = random_distributions(rng, 200, 4);
  double last = -1.0;
  for (int i = 0; i <= 20; ++i) {
    const double r = rejection_rate(p, {i / 20.0});
    CHECK(r >= last);
    last = r;
  }
  Tensor reversed(p.shape());
  for (std::size_t r = 0; r < p.rows(); ++r)
    std::copy(p.row(r).begin(), p.row(r).end(), reversed.row(p.rows() - 1 - r).begin());
  CHECK(rejection_rate(reversed, {0.6}) == rejection_rate(p, {0.6}));
  CHECK(entropy(reversed) == doctest::Approx(entropy(p)).epsilon(1e-14));
}
