#include <algorithm>
#include <cmath>
#include <limits>

#include "oodattack/datasets.hpp"
#include "oodattack/errors.hpp"
#include "oodattack/random.hpp"

namespace oodattack {

namespace {

double distance(std::span<const double> a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Rejection sampling gives up when fewer than 1 in this many draws is admissible.
constexpr std::size_t kMaxDrawsPerSample = 1000;

}  // namespace

SyntheticSpec SyntheticSpec::default_benchmark() {
  SyntheticSpec s;
  s.means = {{2.0, 2.0}, {-2.0, 2.0}, {-2.0, -2.0}, {2.0, -2.0}};
  return s;
}

void SyntheticSpec::validate() const {
  if (dimension == 0) throw ValidationError("synthetic data: dimension must be positive");
  if (num_classes < 2) throw ValidationError("synthetic data: need at least 2 classes");
  if (means.size() != num_classes) {
    throw ValidationError("synthetic data: " + std::to_string(means.size()) + " means for " +
                          std::to_string(num_classes) + " classes");
  }
  for (const auto& m : means) {
    if (m.size() != dimension) throw ValidationError("synthetic data: mean dimension mismatch");
    for (double v : m)
      if (!range.contains(v)) throw ValidationError("synthetic data: class mean outside data range");
  }
  if (!(cluster_std > 0.0)) throw ValidationError("synthetic data: cluster_std must be positive");
  if (samples_per_class == 0) throw ValidationError("synthetic data: samples_per_class must be positive");
  if (!(range.lo < range.hi)) throw ValidationError("synthetic data: empty data range");
  if (!(margin_stds >= 3.0)) throw ValidationError("synthetic data: margin must be at least 3 cluster stddevs");
  if (const auto* ring = std::get_if<AnnulusGeometry>(&out_geometry)) {
    if (!(ring->r_min >= 0.0 && ring->r_min <= ring->r_max)) {
      throw ValidationError("synthetic data: annulus needs 0 <= r_min <= r_max");
    }
  } else {
    const auto& shifted = std::get<ShiftedClusterGeometry>(out_geometry);
    if (shifted.centers.empty()) throw ValidationError("synthetic data: no out-domain cluster centers");
    if (!(shifted.stddev >= 0.0)) throw ValidationError("synthetic data: negative out-domain stddev");
    for (const auto& c : shifted.centers) {
      if (c.size() != dimension) throw ValidationError("synthetic data: out-domain center dimension mismatch");
      for (const auto& m : means) {
        if (distance(c, m) < margin()) {
          throw ValidationError("synthetic data: out-domain center lies within the " + std::to_string(margin()) +
                                " margin of an in-domain mean");
        }
      }
    }
  }
}

LabeledDataset gen_in_domain(const SyntheticSpec& spec, std::uint64_t stream) {
  spec.validate();
  Rng rng = Rng(spec.seed).split("in-domain").split(stream);
  const std::size_t d = spec.dimension;
  LabeledDataset out;
  out.num_classes = spec.num_classes;
  out.range = spec.range;
  out.domain = Domain::In;
  const std::size_t per_class = stream == 0 ? spec.samples_per_class : spec.test_samples_per_class;
  std::vector<double> flat;
  flat.reserve(per_class * spec.num_classes * d);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        flat.push_back(spec.range.clamp(spec.means[c][j] + spec.cluster_std * rng.normal()));
      }
      out.labels.push_back(c);
    }
  }
  out.features = Tensor::matrix(out.labels.size(), d, std::move(flat));
  return out;
}

UnlabeledDataset gen_out_domain(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = Rng(spec.seed).split("out-domain");
  const std::size_t d = spec.dimension;
  const double margin = spec.margin();
  std::vector<double> flat;
  flat.reserve(spec.out_samples * d);
  std::vector<double> x(d);
  std::size_t accepted = 0;
  std::size_t draws = 0;
  const std::size_t budget = kMaxDrawsPerSample * std::max<std::size_t>(spec.out_samples, 1);
  while (accepted < spec.out_samples) {
    if (++draws > budget) {
      throw ValidationError("out-domain geometry has (almost) no support outside the " + std::to_string(margin) +
                            " margin around the in-domain means");
    }
    if (const auto* ring = std::get_if<AnnulusGeometry>(&spec.out_geometry)) {
      double norm = 0.0;
      for (double& v : x) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      const double radius = rng.uniform(ring->r_min, ring->r_max);
      for (double& v : x) v *= radius / norm;
    } else {
      const auto& shifted = std::get<ShiftedClusterGeometry>(spec.out_geometry);
      const auto& center = shifted.centers[rng.below(shifted.centers.size())];
      for (std::size_t j = 0; j < d; ++j) x[j] = center[j] + shifted.stddev * rng.normal();
    }
    bool admissible = true;
    for (double v : x) admissible = admissible && spec.range.contains(v);
    for (const auto& m : spec.means) admissible = admissible && distance(x, m) >= margin;
    if (!admissible) continue;
    flat.insert(flat.end(), x.begin(), x.end());
    ++accepted;
  }
  UnlabeledDataset out;
  out.features = Tensor::matrix(spec.out_samples, d, std::move(flat));
  out.range = spec.range;
  out.domain = Domain::Out;
  return out;
}

double min_distance_to_means(const UnlabeledDataset& out, const SyntheticSpec& spec) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < out.size(); ++r)
    for (const auto& m : spec.means) best = std::min(best, distance(out.features.row(r), m));
  return best;
}

void LabeledDataset::validate() const {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw ValidationError("labeled dataset: " + std::to_string(labels.size()) + " labels for features " +
                          shape_string(features.shape()));
  }
  if (num_classes == 0) throw ValidationError("labeled dataset: num_classes must be positive");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw ValidationError("labeled dataset: label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (double v : features.data())
    if (!range.contains(v)) throw ValidationError("labeled dataset: feature outside declared data range");
}

void UnlabeledDataset::validate() const {
  if (features.size() && features.rank() != 2) throw ValidationError("unlabeled dataset: features must be a matrix");
  for (double v : features.data())
    if (!range.contains(v)) throw ValidationError("unlabeled dataset: feature outside declared data range");
}

}  // namespace oodattack
