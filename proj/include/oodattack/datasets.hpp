#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "oodattack/tensor.hpp"

namespace oodattack {

struct DataRange {
  double lo = 0.0;
  double hi = 1.0;

  bool contains(double v) const noexcept { return v >= lo && v <= hi; }
  double clamp(double v) const noexcept { return v < lo ? lo : (v > hi ? hi : v); }
  friend bool operator==(const DataRange&, const DataRange&) = default;
};

enum class Domain { In, Out };

// In-domain training data. Features are rows of `features` (n x d).
struct LabeledDataset {
  Tensor features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  DataRange range;
  Domain domain = Domain::In;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dimension() const noexcept { return features.cols(); }
  // Throws ValidationError on label/range/shape violations.
  void validate() const;
};

// Out-domain test data.
struct UnlabeledDataset {
  Tensor features;
  DataRange range;
  Domain domain = Domain::Out;

  std::size_t size() const noexcept { return features.size() ? features.rows() : 0; }
  std::size_t dimension() const noexcept { return features.cols(); }
  void validate() const;
};

struct AnnulusGeometry {
  double r_min = 3.2;
  double r_max = 3.8;
};

// Gaussian clusters centred at `centers` (offsets from the origin).
struct ShiftedClusterGeometry {
  std::vector<std::vector<double>> centers;
  double stddev = 0.3;
};

struct SyntheticSpec {
  std::size_t dimension = 2;
  std::size_t num_classes = 4;
  std::vector<std::vector<double>> means;
  double cluster_std = 0.3;
  std::size_t samples_per_class = 200;
  std::size_t test_samples_per_class = 100;
  std::size_t out_samples = 400;
  std::variant<AnnulusGeometry, ShiftedClusterGeometry> out_geometry = AnnulusGeometry{};
  // Minimum distance of every out-domain sample from every in-domain mean, in cluster_std units.
  double margin_stds = 3.0;
  DataRange range{-4.0, 4.0};
  std::uint64_t seed = 7;

  // Four blobs at (+-2, +-2), sigma 0.3, annulus [3.2, 3.8], range [-4, 4].
  static SyntheticSpec default_benchmark();
  double margin() const noexcept { return margin_stds * cluster_std; }
  void validate() const;
};

// Both generators are pure functions of the SyntheticSpec (seed included). `stream`
// selects an independent draw, e.g. 0 for training and 1 for held-out test.
LabeledDataset gen_in_domain(const SyntheticSpec& spec, std::uint64_t stream = 0);
UnlabeledDataset gen_out_domain(const SyntheticSpec& spec);

// Smallest distance between any out-domain sample and any in-domain mean.
double min_distance_to_means(const UnlabeledDataset& out, const SyntheticSpec& spec);

// ---- file ingestion ----

// Raw IDX tensor of unsigned bytes.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;
};

IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

// Images file (magic 0x00000803): pixels rescaled by 1/255 into [0, 1].
UnlabeledDataset load_idx(const std::filesystem::path& images);
// Images plus labels file (magic 0x00000801).
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t num_classes);

// Header row required. Labeled files carry the integer label in the last column.
// Without an explicit range, the range is the [min, max] of the parsed features.
LabeledDataset load_csv(const std::filesystem::path& path, std::size_t num_classes,
                        std::optional<DataRange> range = std::nullopt);
UnlabeledDataset load_csv_unlabeled(const std::filesystem::path& path, std::optional<DataRange> range = std::nullopt);
void write_csv(const std::filesystem::path& path, const LabeledDataset& data);
void write_csv(const std::filesystem::path& path, const UnlabeledDataset& data);

}  // namespace oodattack
