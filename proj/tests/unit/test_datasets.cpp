#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oodattack/datasets.hpp"
#include "oodattack/errors.hpp"
#include "oodattack/models.hpp"

using namespace oodattack;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "oodattack_unit";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("default benchmark in-domain data") {
  const SyntheticSpec spec = SyntheticSpec::default_benchmark();
  const LabeledDataset train = gen_in_domain(spec);
  CHECK(train.size() == 800);
  CHECK(train.dimension() == 2);
  std::vector<std::size_t> counts(4, 0);
  for (std::size_t y : train.labels) ++counts[y];
  CHECK(counts == std::vector<std::size_t>{200, 200, 200, 200});
  for (double v : train.features.data()) CHECK(spec.range.contains(v));
  CHECK(gen_in_domain(spec).features == train.features);
  CHECK(gen_in_domain(spec, 1).size() == 400);
}

TEST_CASE("annulus out-domain data respects radii and margin") {
  const SyntheticSpec spec = SyntheticSpec::default_benchmark();
  const UnlabeledDataset out = gen_out_domain(spec);
  CHECK(out.size() == 400);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto x = out.features.row(r);
    const double radius = std::hypot(x[0], x[1]);
    CHECK(radius >= 3.2);
    CHECK(radius <= 3.8);
  }
  CHECK(min_distance_to_means(out, spec) >= 3.0 * spec.cluster_std);
  CHECK(gen_out_domain(spec).features == out.features);
}

TEST_CASE("shifted-cluster geometry and generator validation") {
  SyntheticSpec spec = SyntheticSpec::default_benchmark();
  spec.out_geometry = ShiftedClusterGeometry{{{0.0, 0.0}}, 0.2};
  const UnlabeledDataset out = gen_out_domain(spec);
  CHECK(min_distance_to_means(out, spec) >= spec.margin());

  SyntheticSpec close = spec;
  close.out_geometry = ShiftedClusterGeometry{{{2.5, 2.0}}, 0.1};
  CHECK_THROWS_AS(gen_out_domain(close), ValidationError);

  SyntheticSpec narrow = spec;
  narrow.margin_stds = 2.0;
  CHECK_THROWS_AS(narrow.validate(), ValidationError);

  // An annulus lying entirely inside the margin cannot produce admissible samples.
  SyntheticSpec ring = SyntheticSpec::default_benchmark();
  ring.means = {{2.83, 0.0}, {-2.83, 0.0}};
  ring.num_classes = 2;
  ring.margin_stds = 20.0;
  CHECK_THROWS_AS(gen_out_domain(ring), ValidationError);

  SyntheticSpec wrong = SyntheticSpec::default_benchmark();
  wrong.num_classes = 3;
  CHECK_THROWS_AS(gen_in_domain(wrong), ValidationError);
}

TEST_CASE("a linear softmax probe separates the default blobs") {
  const LabeledDataset train = gen_in_domain(SyntheticSpec::default_benchmark());
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 3;
  auto probe = train_softmax(train, cfg, {});
  CHECK(probe.report.train_accuracy >= 0.99);
}

TEST_CASE("idx images and labels") {
  // 2 images of 28x28 = 1568 payload bytes.
  std::vector<std::uint8_t> img{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28};
  for (int i = 0; i < 1568; ++i) img.push_back(static_cast<std::uint8_t>(i % 256));
  img[16] = 255;
  const fs::path images = scratch("images.idx");
  write_bytes(images, img);
  const UnlabeledDataset x = load_idx(images);
  CHECK(x.size() == 2);
  CHECK(x.dimension() == 784);
  CHECK(x.features[0] == 1.0);
  CHECK(x.features[1] == 1.0 / 255.0);
  CHECK(x.range == DataRange{0.0, 1.0});

  const fs::path labels = scratch("labels.idx");
  write_bytes(labels, {0, 0, 8, 1, 0, 0, 0, 2, 3, 7});
  const LabeledDataset xy = load_idx(images, labels, 10);
  CHECK(xy.labels == std::vector<std::size_t>{3, 7});

  write_bytes(labels, {0, 0, 8, 1, 0, 0, 0, 3, 3, 7, 1});
  CHECK(error_of([&] { load_idx(images, labels, 10); }).find("byte offset") != std::string::npos);

  std::vector<std::uint8_t> truncated(img.begin(), img.end() - 10);
  write_bytes(images, truncated);
  const std::string msg = error_of([&] { load_idx(images); });
  CHECK(msg.find("1568") != std::string::npos);
  CHECK(msg.find("1558") != std::string::npos);

  img[3] = 1;
  write_bytes(images, img);
  CHECK_THROWS_AS(load_idx(images), FormatError);

  IdxArray arr{{3, 2}, {0, 128, 255, 1, 2, 3}};
  write_idx(scratch("rt.idx"), arr);
  const IdxArray back = read_idx(scratch("rt.idx"));
  CHECK(back.dims == arr.dims);
  CHECK(back.payload == arr.payload);
}

TEST_CASE("csv ingestion") {
  const fs::path p = scratch("three.csv");
  write_file(p, "x0,x1,label\n0.5,1.5,0\n-1,2,1\n3.25,-0.125,2\n");
  const LabeledDataset d = load_csv(p, 3);
  CHECK(d.size() == 3);
  CHECK(d.dimension() == 2);
  CHECK(d.labels == std::vector<std::size_t>{0, 1, 2});
  CHECK(d.features(2, 1) == -0.125);

  write_file(p, "x0,x1,label\n0.5,1.5,0\n-1,2,3\n");
  std::string msg = error_of([&] { load_csv(p, 3); });
  CHECK(msg.find(":3") != std::string::npos);
  CHECK_THROWS_AS(load_csv(p, 3), FormatError);

  write_file(p, "x0,x1,label\n0.5,1.5,0\n-1,2\n");
  CHECK(error_of([&] { load_csv(p, 3); }).find(":3") != std::string::npos);

  write_file(p, "x0,x1,label\n0.5,abc,0\n");
  CHECK_THROWS_AS(load_csv(p, 3), FormatError);
}

TEST_CASE("csv round trip") {
  const LabeledDataset d = gen_in_domain(SyntheticSpec::default_benchmark(), 1);
  const fs::path p = scratch("rt.csv");
  write_csv(p, d);
  const LabeledDataset back = load_csv(p, d.num_classes, d.range);
  REQUIRE(back.size() == d.size());
  CHECK(back.labels == d.labels);
  for (std::size_t i = 0; i < d.features.size(); ++i) CHECK(std::abs(back.features[i] - d.features[i]) <= 1e-12);

  const UnlabeledDataset out = gen_out_domain(SyntheticSpec::default_benchmark());
  write_csv(p, out);
  CHECK(load_csv_unlabeled(p, out.range).features == out.features);
}
