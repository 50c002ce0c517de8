#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oodattack/attack.hpp"
#include "oodattack/datasets.hpp"
#include "oodattack/metrics.hpp"
#include "oodattack/models.hpp"

namespace oodattack {

enum class DataSource { Synthetic, Idx, Csv };

struct IdxSource {
  std::string train_images, train_labels, test_images, test_labels, out_images;
  std::size_t num_classes = 10;
};

struct CsvSource {
  std::string train, test, out;
  std::size_t num_classes = 0;
  std::optional<DataRange> range;
};

struct DatasetConfig {
  std::string name = "blobs-annulus";
  DataSource source = DataSource::Synthetic;
  // The synthetic seed is always derived from the master seed.
  SyntheticSpec synthetic = SyntheticSpec::default_benchmark();
  IdxSource idx;
  CsvSource csv;
};

// Partial TrainConfig applied on top of the shared one for a single victim.
struct TrainOverride {
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> learning_rate, momentum, weight_decay;
};

// Every field has a default; `{}` parses to the default benchmark experiment.
struct ExperimentConfig {
  std::uint64_t seed = 2024;
  DatasetConfig dataset;
  // Victim names: softmax, ensemble, ensemble_adv, duq, rffgp.
  std::vector<std::string> models{"softmax", "ensemble", "ensemble_adv", "duq", "rffgp"};
  std::vector<std::size_t> hidden{64, 64};
  std::size_t members = 5;
  // FGSM radius used while training ensemble_adv.
  double adv_epsilon = 1.5;
  DUQOptions duq{16, 2.0, 0.1};
  RFFOptions rff;
  TrainConfig train{40, 32, 0.01, 0.9, 0.1, 0, std::nullopt};
  std::map<std::string, TrainOverride> train_overrides{{"duq", {std::nullopt, std::nullopt, std::nullopt, std::nullopt, 0.3}},
                                                      {"rffgp", {std::nullopt, std::nullopt, std::nullopt, std::nullopt, 0.0}}};
  // The data range comes from the dataset and is filled in at run time.
  AttackConfig attack{1.5, 10, std::nullopt, {-4.0, 4.0}};
  MetricsConfig metrics;
  std::vector<double> sweep{0.0, 0.75, 1.5};
  std::string output_dir = "runs/default";
  std::size_t workers = 1;
  bool dump_samples = true;

  void validate() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical JSON with every field spelled out; parse_config(config_to_json(c)) == c.
std::string config_to_json(const ExperimentConfig& config);
std::uint64_t config_hash(const ExperimentConfig& config);

// Per-stage seeds split off the master seed.
std::uint64_t stage_seed(std::uint64_t master, const std::string& stage);

struct Benchmark {
  std::string name;
  LabeledDataset train;
  LabeledDataset test;
  UnlabeledDataset out;
};

Benchmark load_benchmark(const ExperimentConfig& config);

// Effective training settings for one victim (shared block, override, derived seed).
TrainConfig victim_train_config(const ExperimentConfig& config, const std::string& victim);
std::unique_ptr<UncertaintyModel> train_victim(const ExperimentConfig& config, const std::string& victim,
                                               const LabeledDataset& train);

struct ReportTable {
  std::vector<UncertaintyReport> rows;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string timestamp;
  // Victims whose entropy does not strictly decrease along the epsilon sweep.
  std::vector<std::string> non_monotone;
  // Attacked samples that broke the radius or range constraint (always 0 on success).
  std::size_t constraint_violations = 0;
  std::size_t attacked_samples = 0;

  // Rejects a second row with the same (model, epsilon, tau).
  void add(const UncertaintyReport& row);
};

inline constexpr const char* kReportHeader = "model,dataset,epsilon,iters,tau,H_clean,H_adv,R_clean,R_adv";

std::string format_number(double v);
std::string report_csv(const ReportTable& table);
void write_report_csv(const ReportTable& table, const std::filesystem::path& path);
ReportTable read_report_csv(const std::filesystem::path& path);

// Trains every configured victim and writes checkpoints/<victim>.json.
void train_all(const ExperimentConfig& config);

// Loads checkpoints/<victim>.json when present, otherwise trains and saves it.
std::unique_ptr<UncertaintyModel> obtain_victim(const ExperimentConfig& config, const std::string& victim,
                                                const Benchmark& data);

// Attack at config.attack.epsilon. Writes report.csv, provenance.json, checkpoints and
// per-sample dumps under config.output_dir.
ReportTable run_experiment(const ExperimentConfig& config);
// One row per (victim, epsilon in config.sweep), checkpoints reused. Writes sweep.csv.
ReportTable sweep_epsilon(const ExperimentConfig& config);

struct CleanEvaluation {
  std::string model;
  double test_accuracy = 0.0;
  double entropy_clean = 0.0;
  double rejection_clean = 0.0;
  double in_domain_max_confidence = 0.0;
  double out_domain_max_confidence = 0.0;
};

// Clean in-domain accuracy and out-domain uncertainty per victim. Writes evaluate.csv.
std::vector<CleanEvaluation> evaluate_clean(const ExperimentConfig& config);

struct ConfidenceHistogram {
  std::vector<double> clean;
  std::vector<double> attacked;
  std::size_t clean_argmax = 0;
  std::size_t attacked_argmax = 0;
  double clean_max = 0.0;
  double attacked_max = 0.0;
};

// Per-class (clean, attacked) confidence pairs for one sample.
ConfidenceHistogram emit_confidence_histogram(const UncertaintyModel& model, const Tensor& x, const Tensor& x_adv);
// Long form: sample,class,clean,attacked,clean_argmax,clean_max,attacked_argmax,attacked_max.
void write_histogram_csv(const std::vector<ConfidenceHistogram>& records, const std::filesystem::path& path);

// One line per sample: index, clean distribution, attacked distribution, argmax and max of each.
void write_sample_dump(const Tensor& clean, const Tensor& attacked, const std::filesystem::path& path);

}  // namespace oodattack
