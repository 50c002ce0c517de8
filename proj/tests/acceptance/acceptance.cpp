// Runs every acceptance criterion at its stated tolerance and prints one PASS/FAIL line each.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "fd.hpp"
#include "oodattack/attack.hpp"
#include "oodattack/harness.hpp"
#include "oodattack/metrics.hpp"

using namespace oodattack;
using namespace oodattack::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig default_config(const fs::path& out) {
  ExperimentConfig c = parse_config("{}");
  c.output_dir = out.string();
  return c;
}

const UncertaintyReport* find_row(const ReportTable& t, const std::string& model) {
  for (const auto& r : t.rows)
    if (r.model == model) return &r;
  return nullptr;
}

// Surrogate-loss input gradients against central differences over random (model, input) pairs.
Outcome gradients(const ExperimentConfig& c, const Benchmark& data) {
  const auto t0 = Clock::now();
  Rng rng(stage_seed(c.seed, "acceptance/gradients"));
  const DataRange r = data.out.range;
  double worst = 0.0;
  std::size_t pairs = 0, kinks = 0;
  for (const auto& victim : c.models) {
    auto model = obtain_victim(c, victim, data);
    std::size_t done = 0;
    while (done < 25) {
      const Tensor x = random_tensor(rng, {data.out.dimension()}, r.lo + 1e-3, r.hi - 1e-3);
      const std::size_t y = closest_label(*model, x);
      auto f = [&](const Tensor& z) { return surrogate_loss(*model, z, y); };
      // Stencils straddling a ReLU kink measure a secant; those draws are replaced.
      if (!smooth_on_stencil(f, x)) {
        ++kinks;
        continue;
      }
      const LossAndGradient lg = surrogate_gradient(*model, x, y);
      worst = std::max(worst, max_relative_error(lg.gradient, central_difference(f, x, 1e-4)));
      ++done;
    }
    pairs += done;
  }
  const double secs = seconds_since(t0);
  return {pairs >= 100 && worst < 1e-4 && secs < 60.0,
          fmt("%zu pairs, max rel err %.3g (h=1e-4, %zu kink draws redrawn), %.1fs", pairs, worst, kinks, secs)};
}

Outcome entropy_and_rejection() {
  double worst = 0.0;
  for (std::size_t k : {2u, 10u, 100u}) {
    const Tensor u({1, k}, 1.0 / static_cast<double>(k));
    worst = std::max(worst, std::abs(entropy(u) - std::log(static_cast<double>(k))));
  }
  const bool onehot = entropy(Tensor::vector({0.0, 0.0, 1.0, 0.0})) == 0.0;
  const Tensor b = Tensor::matrix({{0.95, 0.05}, {0.85, 0.15}, {0.91, 0.09}});
  const bool boundary = rejection_rate(b, {0.9}) == 1.0 / 3.0 && rejection_rate(b, {0.0}) == 0.0 &&
                        rejection_rate(Tensor::matrix({{0.9, 0.1}}), {0.9}) == 0.0 &&
                        rejection_rate(Tensor::matrix({{0.5, 0.5}}), {1.0}) == 1.0;
  return {worst <= 1e-9 && onehot && boundary,
          fmt("max |H(uniform) - ln C| = %.2g, one-hot %s, boundaries %s", worst, onehot ? "0" : "nonzero",
              boundary ? "exact" : "wrong")};
}

// Independent re-check of the radius and range constraints on a fresh attack of every victim.
Outcome constraints(const ExperimentConfig& c, const Benchmark& data, const ReportTable& run) {
  std::size_t checked = 0, violations = 0;
  AttackConfig cfg = c.attack;
  cfg.range = data.out.range;
  for (const auto& victim : c.models) {
    auto model = obtain_victim(c, victim, data);
    const Tensor x = slice_rows(data.out.features, 0, 100);
    const auto results = perturb_batch(*model, x, cfg, c.workers);
    for (std::size_t i = 0; i < results.size(); ++i) {
      const Tensor row = slice_rows(x, i, i + 1).reshaped({x.cols()});
      const Tensor& adv = results[i].adversarial;
      bool ok = linf_distance(adv, row) <= cfg.epsilon + 1e-9;
      for (double v : adv.data()) ok = ok && cfg.range.contains(v);
      violations += !ok;
      ++checked;
    }
  }
  return {violations == 0 && run.constraint_violations == 0 && run.attacked_samples > 0,
          fmt("%zu violations in %zu re-checked samples, %zu in %zu harness samples", violations, checked,
              run.constraint_violations, run.attacked_samples)};
}

Outcome fgsm_identity(const ExperimentConfig& c, const Benchmark& data) {
  Rng rng(stage_seed(c.seed, "acceptance/fgsm"));
  const DataRange r = data.out.range;
  std::vector<std::unique_ptr<UncertaintyModel>> models;
  for (const auto& victim : c.models) models.push_back(obtain_victim(c, victim, data));
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const UncertaintyModel& m = *models[i % models.size()];
    const Tensor x = random_tensor(rng, {data.out.dimension()}, r.lo, r.hi);
    const double eps = rng.uniform(0.01, 2.0);
    AttackConfig one;
    one.epsilon = eps;
    one.iterations = 1;
    one.step_size = eps;
    one.range = r;
    mismatches += !(fgsm(m, x, eps, r).adversarial == perturb(m, x, one).adversarial);
  }
  return {mismatches == 0, fmt("%zu of 1000 inputs differ", mismatches)};
}

Outcome default_benchmark(const ReportTable& t, double secs) {
  bool ok = secs < 300.0;
  std::string detail;
  for (const char* name : {"softmax", "ensemble", "duq", "rffgp"}) {
    const UncertaintyReport* r = find_row(t, name);
    if (!r) return {false, std::string("no row for ") + name};
    const double dh = r->entropy_clean - r->entropy_adv;
    const double dr = r->rejection_clean - r->rejection_adv;
    ok = ok && r->iterations == 10 && r->tau == 0.9 && dh >= 0.1 && dr >= 0.2;
    detail += fmt("%s dH=%.3f dR=%.3f; ", name, dh, dr);
  }
  return {ok, detail + fmt("%.1fs", secs)};
}

Outcome adversarial_training(const ExperimentConfig& base) {
  ExperimentConfig c = base;
  c.models = {"ensemble", "ensemble_adv"};
  c.attack.iterations = 1;
  c.attack.step_size = c.attack.epsilon;
  c.dump_samples = false;
  c.output_dir = (fs::path(base.output_dir) / "single_step").string();
  fs::create_directories(fs::path(c.output_dir));
  fs::copy(fs::path(base.output_dir) / "checkpoints", fs::path(c.output_dir) / "checkpoints",
           fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  const ReportTable t = run_experiment(c);
  const double vanilla = find_row(t, "ensemble")->rejection_adv;
  const double robust = find_row(t, "ensemble_adv")->rejection_adv;
  return {robust > vanilla, fmt("single-step R_adv: ensemble_adv %.4f vs ensemble %.4f", robust, vanilla)};
}

Outcome victim_quality(const ExperimentConfig& c) {
  bool ok = true;
  std::string detail;
  for (const auto& e : evaluate_clean(c)) {
    ok = ok && e.test_accuracy >= 0.95 && e.rejection_clean >= 0.7;
    detail += fmt("%s acc=%.3f R=%.3f; ", e.model.c_str(), e.test_accuracy, e.rejection_clean);
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Outcome sweep(const ExperimentConfig& c) {
  const ReportTable t = sweep_epsilon(c);
  bool zero_exact = true;
  std::map<std::string, std::vector<std::pair<double, double>>> curves;
  for (const auto& r : t.rows) {
    if (r.epsilon == 0.0)
      zero_exact = zero_exact && r.entropy_adv == r.entropy_clean && r.rejection_adv == r.rejection_clean;
    curves[r.model].emplace_back(r.epsilon, r.entropy_adv);
  }
  std::size_t monotone = 0;
  bool flags_match = true;
  for (auto& [model, pts] : curves) {
    std::sort(pts.begin(), pts.end());
    bool dec = pts.size() >= 3;
    for (std::size_t i = 1; i < pts.size(); ++i) dec = dec && pts[i].second < pts[i - 1].second;
    monotone += dec;
    const bool flagged = std::find(t.non_monotone.begin(), t.non_monotone.end(), model) != t.non_monotone.end();
    flags_match = flags_match && flagged == !dec;
  }
  return {zero_exact && monotone >= 1 && flags_match,
          fmt("eps=0 rows %s, %zu of %zu families monotone over %zu radii, %zu flagged", zero_exact ? "exact" : "differ",
              monotone, curves.size(), c.sweep.size(), t.non_monotone.size())};
}

// Compares every CSV and checkpoint of two independent default runs.
Outcome determinism(const fs::path& a, const fs::path& b) {
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    const std::string ext = rel.extension().string();
    const bool checkpoint = rel.begin()->string() == "checkpoints";
    if (ext != ".csv" && !checkpoint) continue;
    ++files;
    differ += !fs::exists(b / rel) || slurp(entry.path()) != slurp(b / rel);
  }
  return {files > 0 && differ == 0, fmt("%zu files compared, %zu differ", files, differ)};
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "oodattack_acceptance";
  fs::remove_all(root);
  const fs::path run_a = root / "run_a", run_b = root / "run_b";
  const ExperimentConfig c = default_config(run_a);

  std::map<int, Outcome> results;
  auto guard = [&](int id, const std::function<Outcome()>& f) {
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("error: ") + e.what()};
    }
  };

  // Criterion 5 times the full default run, training included.
  ReportTable run;
  double run_secs = 0.0;
  guard(5, [&] {
    const auto t0 = Clock::now();
    run = run_experiment(c);
    run_secs = seconds_since(t0);
    return default_benchmark(run, run_secs);
  });
  const Benchmark data = load_benchmark(c);
  guard(1, [&] { return gradients(c, data); });
  guard(2, [&] { return entropy_and_rejection(); });
  guard(3, [&] { return constraints(c, data, run); });
  guard(4, [&] { return fgsm_identity(c, data); });
  guard(6, [&] { return adversarial_training(c); });
  guard(7, [&] { return victim_quality(c); });
  guard(8, [&] { return sweep(c); });
  guard(9, [&] {
    run_experiment(default_config(run_b));
    // run_b holds only the attack outputs; run_a also carries later sweep and evaluate files.
    return determinism(run_b, run_a);
  });

  int failed = 0;
  for (const auto& [id, o] : results) {
    std::printf("[%s] criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
