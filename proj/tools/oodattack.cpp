#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "oodattack/errors.hpp"
#include "oodattack/harness.hpp"

namespace fs = std::filesystem;
using namespace oodattack;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon, step_size, tau;
  std::optional<std::size_t> iters;
  std::string model;
  std::string out;
};

void add_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--epsilon", o.epsilon, "Attack radius");
  cmd->add_option("--iters", o.iters, "Attack iterations K");
  cmd->add_option("--step-size", o.step_size, "Attack step size (default epsilon / 4)");
  cmd->add_option("--tau", o.tau, "Rejection threshold");
  cmd->add_option("--model", o.model, "Comma-separated victims (softmax, ensemble, ensemble_adv, duq, rffgp)");
  cmd->add_option("--out", o.out, "Output directory");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? parse_config("{}") : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.epsilon) c.attack.epsilon = *o.epsilon;
  if (o.iters) c.attack.iterations = *o.iters;
  if (o.step_size) c.attack.step_size = *o.step_size;
  if (o.tau) c.metrics.tau = *o.tau;
  if (!o.out.empty()) c.output_dir = o.out;
  if (!o.model.empty()) {
    c.models.clear();
    std::stringstream ss(o.model);
    for (std::string m; std::getline(ss, m, ',');)
      if (!m.empty()) c.models.push_back(m);
  }
  c.validate();
  return c;
}

void print_table(const ReportTable& t) {
  std::printf("%-13s %-14s %8s %5s %5s %8s %8s %8s %8s\n", "model", "dataset", "epsilon", "iters", "tau", "H_clean",
              "H_adv", "R_clean", "R_adv");
  for (const auto& r : t.rows) {
    std::printf("%-13s %-14s %8.4g %5zu %5.3g %8.4f %8.4f %8.4f %8.4f\n", r.model.c_str(), r.dataset.c_str(), r.epsilon,
                r.iterations, r.tau, r.entropy_clean, r.entropy_adv, r.rejection_clean, r.rejection_adv);
  }
}

// Victims whose attacked entropy does not strictly fall as epsilon grows.
void print_trends(const ReportTable& t) {
  std::vector<std::string> seen;
  for (const auto& r : t.rows) {
    if (std::find(seen.begin(), seen.end(), r.model) != seen.end()) continue;
    seen.push_back(r.model);
    std::vector<std::pair<double, double>> pts;
    for (const auto& s : t.rows)
      if (s.model == r.model) pts.emplace_back(s.epsilon, s.entropy_adv);
    if (pts.size() < 2) continue;
    std::sort(pts.begin(), pts.end());
    bool monotone = true;
    for (std::size_t i = 1; i < pts.size(); ++i) monotone = monotone && pts[i].second < pts[i - 1].second;
    std::printf("%-13s entropy %s across %zu radii\n", r.model.c_str(),
                monotone ? "decreases monotonically" : "is NOT monotone", pts.size());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Out-domain adversarial attack on uncertainty estimators"};
  app.require_subcommand(1);
  Overrides o;
  auto* train = app.add_subcommand("train", "Train the configured victims and write checkpoints");
  auto* attack = app.add_subcommand("attack", "Attack every victim at one radius and write report.csv");
  auto* evaluate = app.add_subcommand("evaluate", "Clean accuracy and out-domain uncertainty per victim");
  auto* sweep = app.add_subcommand("sweep", "Attack every victim across the configured epsilon list");
  auto* report = app.add_subcommand("report", "Print a report CSV as a table");
  for (auto* cmd : {train, attack, evaluate, sweep, report}) add_flags(cmd, o);
  std::string csv;
  report->add_option("csv", csv, "Report CSV (default: <out>/report.csv and <out>/sweep.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const ExperimentConfig c = resolve(o);
      train_all(c);
      std::printf("checkpoints written to %s\n", (fs::path(c.output_dir) / "checkpoints").string().c_str());
    } else if (attack->parsed()) {
      const ReportTable t = run_experiment(resolve(o));
      print_table(t);
    } else if (evaluate->parsed()) {
      const ExperimentConfig c = resolve(o);
      std::printf("%-13s %9s %8s %8s %10s %10s\n", "model", "test_acc", "H_clean", "R_clean", "in_maxconf",
                  "out_maxconf");
      for (const auto& e : evaluate_clean(c)) {
        std::printf("%-13s %9.4f %8.4f %8.4f %10.4f %10.4f\n", e.model.c_str(), e.test_accuracy, e.entropy_clean,
                    e.rejection_clean, e.in_domain_max_confidence, e.out_domain_max_confidence);
      }
    } else if (sweep->parsed()) {
      const ReportTable t = sweep_epsilon(resolve(o));
      print_table(t);
      print_trends(t);
    } else if (report->parsed()) {
      std::vector<fs::path> files;
      if (!csv.empty()) {
        files.emplace_back(csv);
      } else {
        const fs::path dir = o.out.empty() ? fs::path(resolve(o).output_dir) : fs::path(o.out);
        for (const char* name : {"report.csv", "sweep.csv"})
          if (fs::exists(dir / name)) files.push_back(dir / name);
        if (files.empty()) throw FormatError("no report.csv or sweep.csv in " + dir.string());
      }
      for (const auto& f : files) {
        std::printf("== %s\n", f.string().c_str());
        const ReportTable t = read_report_csv(f);
        print_table(t);
        print_trends(t);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
