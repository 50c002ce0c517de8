#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oodattack/checkpoint.hpp"
#include "oodattack/errors.hpp"
#include "oodattack/harness.hpp"

using namespace oodattack;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "oodattack_unit";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const LabeledDataset& blobs() {
  static const LabeledDataset d = gen_in_domain(SyntheticSpec::default_benchmark());
  return d;
}

TrainConfig quick() {
  TrainConfig c;
  c.epochs = 3;
  c.seed = 8;
  return c;
}

std::vector<std::unique_ptr<UncertaintyModel>> trained_models() {
  std::vector<std::unique_ptr<UncertaintyModel>> out;
  out.push_back(std::make_unique<SoftmaxModel>(train_softmax(blobs(), quick(), {8, 8}).model));
  out.push_back(std::make_unique<EnsembleModel>(train_ensemble(blobs(), quick(), 2, {8, 8}).model));
  out.push_back(std::make_unique<DUQModel>(train_duq(blobs(), quick(), {8, 8}, DUQOptions{}).model));
  out.push_back(std::make_unique<RFFGPModel>(train_rffgp(blobs(), quick(), {8, 8}, RFFOptions{32, 1.0}).model));
  return out;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("checkpoints round trip bit-exactly") {
  const UnlabeledDataset ring = gen_out_domain(SyntheticSpec::default_benchmark());
  for (auto& m : trained_models()) {
    INFO(family_name(m->family()));
    const fs::path p = scratch(std::string(family_name(m->family())) + ".json");
    save_checkpoint(*m, p);
    auto back = load_checkpoint(p, m->family());
    CHECK(back->family() == m->family());
    CHECK(back->meta.seed == m->meta.seed);
    CHECK(back->predict_confidence(ring.features) == m->predict_confidence(ring.features));
    auto sa = m->state(), sb = back->state();
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
      CHECK(sa[i].first == sb[i].first);
      CHECK(*sa[i].second == *sb[i].second);
    }
    CHECK(checkpoint_to_string(*back) == slurp(p));
  }
}

TEST_CASE("damaged or mismatched checkpoints are rejected") {
  DUQModel duq = train_duq(blobs(), quick(), {8, 8}, DUQOptions{}).model;
  const fs::path p = scratch("duq.json");
  save_checkpoint(duq, p);
  const std::string text = slurp(p);

  CHECK(error_of([&] { load_checkpoint(p, Family::Ensemble); }).find("family tag mismatch") != std::string::npos);
  CHECK_THROWS_AS(checkpoint_from_string(text.substr(0, text.size() / 2)), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(scratch("missing.json")), CheckpointError);

  std::string versioned = text;
  const auto at = versioned.find("\"version\":");
  REQUIRE(at != std::string::npos);
  versioned.replace(at, std::string("\"version\": 1").size(), "\"version\": 9");
  CHECK_THROWS_AS(checkpoint_from_string(versioned), CheckpointError);
}

TEST_CASE("config parsing") {
  const ExperimentConfig d = parse_config("{}");
  CHECK(d.seed == 2024);
  CHECK(d.models.size() == 5);
  CHECK(d.attack.epsilon == 1.5);
  CHECK(config_to_json(parse_config(config_to_json(d))) == config_to_json(d));

  const ExperimentConfig c = parse_config(R"({"seed": 5, "attack": {"epsilon": 0.25, "iterations": 3}})");
  CHECK(c.seed == 5);
  CHECK(c.attack.iterations == 3);
  CHECK(config_to_json(parse_config(config_to_json(c))) == config_to_json(c));
  CHECK(config_hash(c) != config_hash(d));

  CHECK(error_of([] { parse_config(R"({"attack": {"epsilom": 0.1}})"); }).find("epsilom") != std::string::npos);
  CHECK_THROWS(parse_config(R"({"seed": -1})"));
  CHECK_THROWS(parse_config(R"({"models": ["softmax", "bayes"]})"));
  CHECK_THROWS(parse_config("{"));
}

TEST_CASE("victim seeds come from the master seed") {
  const ExperimentConfig c = parse_config("{}");
  CHECK(victim_train_config(c, "ensemble_adv").seed == victim_train_config(c, "ensemble").seed);
  CHECK(victim_train_config(c, "softmax").seed != victim_train_config(c, "duq").seed);
  CHECK(victim_train_config(c, "duq").weight_decay == 0.3);
  CHECK(victim_train_config(c, "ensemble_adv").adversarial->epsilon == c.adv_epsilon);
  CHECK(stage_seed(1, "data") == stage_seed(1, "data"));
  CHECK(stage_seed(1, "data") != stage_seed(2, "data"));
}

TEST_CASE("report csv round trip and duplicate rows") {
  ReportTable t;
  t.add({"softmax", "blobs-annulus", 0.5, 10, 0.9, 0.6545, 0.1917, 0.835, 0.035});
  t.add({"duq", "blobs-annulus", 0.5, 10, 0.9, 1.0 / 3.0, 0.1, 0.8, 0.5});
  CHECK_THROWS_AS(t.add({"duq", "blobs-annulus", 0.5, 1, 0.9, 0, 0, 0, 0}), ContractError);
  const std::string csv = report_csv(t);
  CHECK(csv.rfind(std::string(kReportHeader) + "\n", 0) == 0);
  const fs::path p = scratch("report.csv");
  write_report_csv(t, p);
  const ReportTable back = read_report_csv(p);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].entropy_clean == 1.0 / 3.0);
  CHECK(back.rows[0].model == "softmax");
  CHECK(report_csv(back) == csv);
  CHECK(format_number(0.1) == "0.1");
}

TEST_CASE("confidence histograms") {
  SoftmaxModel m = train_softmax(blobs(), quick(), {8, 8}).model;
  const Tensor x = Tensor::vector({3.5, 0.1});
  const ConfidenceHistogram same = emit_confidence_histogram(m, x, x);
  CHECK(same.clean == same.attacked);
  CHECK(same.clean_argmax == same.attacked_argmax);
  const ConfidenceHistogram moved = emit_confidence_histogram(m, x, Tensor::vector({2.0, 2.0}));
  double a = 0.0, b = 0.0;
  for (double v : moved.clean) a += v;
  for (double v : moved.attacked) b += v;
  CHECK(a == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(moved.attacked_max >= moved.clean_max);
}
