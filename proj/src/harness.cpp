#include "oodattack/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "oodattack/checkpoint.hpp"
#include "oodattack/errors.hpp"
#include "oodattack/random.hpp"

namespace oodattack {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const std::set<std::string> kVictims{"softmax", "ensemble", "ensemble_adv", "duq", "rffgp"};

// Walks one JSON object, remembering which keys were read so leftovers can be rejected.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: '" + path_ + "' must be an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void get(const std::string& key, T& out) {
    if (const json* v = find(key)) out = convert<T>(*v, where(key));
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
      } else {
        out = convert<T>(*v, where(key));
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError("config: unknown key '" + where(it.key()) + "'");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    auto bad = [&](const char* what) { return ValidationError("config: '" + where + "' must be " + what); };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw bad("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw bad("a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw bad("a number");
      return v.get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw bad("a nonnegative integer");
      return v.get<T>();
    } else {
      // Vectors of any of the above.
      if (!v.is_array()) throw bad("an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

DataRange parse_range(const json& v, const std::string& where) {
  const auto r = Reader::convert<std::vector<double>>(v, where);
  if (r.size() != 2) throw ValidationError("config: '" + where + "' must be [lo, hi]");
  return {r[0], r[1]};
}

void parse_synthetic(Reader& r, SyntheticSpec& s) {
  r.get("dimension", s.dimension);
  r.get("num_classes", s.num_classes);
  r.get("means", s.means);
  r.get("cluster_std", s.cluster_std);
  r.get("samples_per_class", s.samples_per_class);
  r.get("test_samples_per_class", s.test_samples_per_class);
  r.get("out_samples", s.out_samples);
  r.get("margin_stds", s.margin_stds);
  if (const json* v = r.find("range")) s.range = parse_range(*v, r.where("range"));
  if (const json* v = r.find("out_geometry")) {
    Reader g(*v, r.where("out_geometry"));
    std::string kind = "annulus";
    g.get("kind", kind);
    if (kind == "annulus") {
      AnnulusGeometry a;
      g.get("r_min", a.r_min);
      g.get("r_max", a.r_max);
      s.out_geometry = a;
    } else if (kind == "shifted_clusters") {
      ShiftedClusterGeometry c;
      g.get("centers", c.centers);
      g.get("stddev", c.stddev);
      s.out_geometry = c;
    } else {
      throw ValidationError("config: unknown out_geometry kind '" + kind + "'");
    }
    g.finish();
  }
}

void parse_train(Reader& r, TrainConfig& t) {
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("learning_rate", t.learning_rate);
  r.get("momentum", t.momentum);
  r.get("weight_decay", t.weight_decay);
}

void parse_override(Reader& r, TrainOverride& t) {
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("learning_rate", t.learning_rate);
  r.get("momentum", t.momentum);
  r.get("weight_decay", t.weight_decay);
}

template <class T>
void put_optional(ordered_json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

std::string source_name(DataSource s) {
  switch (s) {
    case DataSource::Synthetic:
      return "synthetic";
    case DataSource::Idx:
      return "idx";
    case DataSource::Csv:
      return "csv";
  }
  return "synthetic";
}

Family victim_family(const std::string& victim) {
  if (victim == "ensemble_adv") return Family::Ensemble;
  return parse_family(victim);
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

// Runs one stage, re-raising module errors with the stage and victim attached.
template <class F>
auto staged(const std::string& stage, const std::string& victim, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ExperimentError&) {
    throw;
  } catch (const std::exception& e) {
    throw ExperimentError(stage, victim, e.what());
  }
}

std::uint64_t victim_fingerprint(const ExperimentConfig& c, const std::string& victim) {
  const TrainConfig t = victim_train_config(c, victim);
  ordered_json j;
  j["victim"] = victim;
  j["dataset"] = json::parse(config_to_json(c)).at("dataset");
  j["hidden"] = c.hidden;
  j["members"] = c.members;
  j["adv_epsilon"] = t.adversarial ? t.adversarial->epsilon : 0.0;
  j["duq"] = {c.duq.embedding_dim, c.duq.length_scale, c.duq.gamma};
  j["rff"] = {c.rff.features, c.rff.length_scale, c.rff.mean_field};
  j["train"] = {t.epochs, t.batch_size, t.learning_rate, t.momentum, t.weight_decay, t.seed};
  j["data_seed"] = stage_seed(c.seed, "data");
  return Rng::hash(j.dump());
}

fs::path checkpoint_path(const ExperimentConfig& c, const std::string& victim) {
  return fs::path(c.output_dir) / "checkpoints" / (victim + ".json");
}

std::string eps_tag(double eps) { return "eps" + format_number(eps); }

struct AttackedBatch {
  Tensor clean;
  Tensor attacked;
  Tensor adversarial;
  UncertaintyReport row;
  std::size_t violations = 0;
};

AttackedBatch attack_victim(const ExperimentConfig& c, const std::string& victim, const UncertaintyModel& model,
                            const Benchmark& data, double epsilon) {
  AttackConfig ac = c.attack;
  ac.epsilon = epsilon;
  ac.range = data.out.range;
  AttackedBatch b;
  b.clean = staged("clean-eval", victim, [&] { return model.predict_confidence(data.out.features); });
  auto results = staged("attack", victim, [&] { return perturb_batch(model, data.out.features, ac, c.workers); });

  // Re-verify the radius and range constraints before any metric is computed.
  std::vector<Tensor> rows;
  rows.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    const Tensor& adv = results[i].adversarial;
    const auto origin = data.out.features.row(i);
    bool ok = adv.size() == origin.size();
    for (std::size_t k = 0; ok && k < adv.size(); ++k) {
      ok = std::abs(adv[k] - origin[k]) <= epsilon + 1e-9 && ac.range.contains(adv[k]);
    }
    if (!ok) ++b.violations;
    rows.push_back(adv.reshaped({1, adv.size()}));
  }
  if (b.violations) {
    throw ExperimentError("verify", victim,
                          std::to_string(b.violations) + " attacked samples violate the epsilon ball or data range");
  }
  b.adversarial = stack_rows(rows);
  b.attacked = staged("attacked-eval", victim, [&] { return model.predict_confidence(b.adversarial); });
  b.row = staged("metrics", victim, [&] { return compare(b.clean, b.attacked, c.metrics); });
  b.row.model = victim;
  b.row.dataset = data.name;
  b.row.epsilon = epsilon;
  b.row.iterations = c.attack.iterations;
  return b;
}

void write_dumps(const ExperimentConfig& c, const std::string& victim, const UncertaintyModel& model,
                 const Benchmark& data, const AttackedBatch& b, double epsilon) {
  if (!c.dump_samples) return;
  const fs::path root(c.output_dir);
  const std::string stem = victim + "_" + eps_tag(epsilon) + ".csv";
  write_sample_dump(b.clean, b.attacked, root / "samples" / stem);
  std::vector<ConfidenceHistogram> records;
  records.reserve(data.out.size());
  for (std::size_t i = 0; i < data.out.size(); ++i) {
    const Tensor x = slice_rows(data.out.features, i, i + 1);
    const Tensor xa = slice_rows(b.adversarial, i, i + 1);
    records.push_back(emit_confidence_histogram(model, x, xa));
  }
  write_histogram_csv(records, root / "histograms" / stem);
}

void write_provenance(const ExperimentConfig& c, const ReportTable& t, const std::string& command) {
  ordered_json j;
  j["command"] = command;
  j["config_hash"] = hex(t.config_hash);
  j["seed"] = t.seed;
  j["timestamp"] = t.timestamp;
  j["attacked_samples"] = t.attacked_samples;
  j["constraint_violations"] = t.constraint_violations;
  j["non_monotone"] = t.non_monotone;
  j["config"] = ordered_json::parse(config_to_json(c));
  write_text(fs::path(c.output_dir) / (command + "_provenance.json"), j.dump(2) + "\n");
}

ReportTable new_table(const ExperimentConfig& c) {
  ReportTable t;
  t.config_hash = config_hash(c);
  t.seed = c.seed;
  t.timestamp = utc_timestamp();
  return t;
}

}  // namespace

// ---- config ----

void ExperimentConfig::validate() const {
  if (models.empty()) throw ValidationError("config: at least one model is required");
  std::set<std::string> unique;
  for (const auto& m : models) {
    if (!kVictims.count(m)) throw ValidationError("config: unknown model '" + m + "'");
    if (!unique.insert(m).second) throw ValidationError("config: model '" + m + "' listed twice");
  }
  for (const auto& [name, o] : train_overrides) {
    if (!kVictims.count(name)) throw ValidationError("config: train_overrides for unknown model '" + name + "'");
  }
  if (dataset.source == DataSource::Synthetic) dataset.synthetic.validate();
  if (dataset.source == DataSource::Csv && dataset.csv.num_classes < 2) {
    throw ValidationError("config: csv datasets need num_classes >= 2");
  }
  for (const auto& m : models) {
    TrainConfig t = victim_train_config(*this, m);
    t.validate();
    if (t.epochs == 0) throw ValidationError("config: '" + m + "' needs at least one training epoch");
    ModelSpec s;
    s.family = victim_family(m);
    s.hidden = hidden;
    s.members = members;
    s.duq = duq;
    s.rff = rff;
    s.validate();
  }
  if (!(adv_epsilon >= 0.0) || !std::isfinite(adv_epsilon)) throw ValidationError("config: adv_epsilon must be >= 0");
  attack.validate();
  metrics.validate();
  for (double e : sweep) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw ValidationError("config: sweep radii must be >= 0");
  }
  if (workers == 0) throw ValidationError("config: workers must be >= 1");
  if (output_dir.empty()) throw ValidationError("config: output_dir must not be empty");
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Reader r(root, "");
  r.get("seed", c.seed);
  if (const json* d = r.find("dataset")) {
    Reader dr(*d, "dataset");
    dr.get("name", c.dataset.name);
    std::string source = "synthetic";
    dr.get("source", source);
    if (source == "synthetic") {
      c.dataset.source = DataSource::Synthetic;
    } else if (source == "idx") {
      c.dataset.source = DataSource::Idx;
    } else if (source == "csv") {
      c.dataset.source = DataSource::Csv;
    } else {
      throw ValidationError("config: unknown dataset source '" + source + "'");
    }
    if (const json* s = dr.find("synthetic")) {
      Reader sr(*s, "dataset.synthetic");
      parse_synthetic(sr, c.dataset.synthetic);
      sr.finish();
    }
    if (const json* s = dr.find("idx")) {
      Reader ir(*s, "dataset.idx");
      ir.get("train_images", c.dataset.idx.train_images);
      ir.get("train_labels", c.dataset.idx.train_labels);
      ir.get("test_images", c.dataset.idx.test_images);
      ir.get("test_labels", c.dataset.idx.test_labels);
      ir.get("out_images", c.dataset.idx.out_images);
      ir.get("num_classes", c.dataset.idx.num_classes);
      ir.finish();
    }
    if (const json* s = dr.find("csv")) {
      Reader cr(*s, "dataset.csv");
      cr.get("train", c.dataset.csv.train);
      cr.get("test", c.dataset.csv.test);
      cr.get("out", c.dataset.csv.out);
      cr.get("num_classes", c.dataset.csv.num_classes);
      if (const json* v = cr.find("range")) c.dataset.csv.range = parse_range(*v, "dataset.csv.range");
      cr.finish();
    }
    dr.finish();
  }
  r.get("models", c.models);
  if (const json* a = r.find("architecture")) {
    Reader ar(*a, "architecture");
    ar.get("hidden", c.hidden);
    ar.finish();
  }
  if (const json* e = r.find("ensemble")) {
    Reader er(*e, "ensemble");
    er.get("members", c.members);
    er.get("adv_epsilon", c.adv_epsilon);
    er.finish();
  }
  if (const json* d = r.find("duq")) {
    Reader dr(*d, "duq");
    dr.get("embedding_dim", c.duq.embedding_dim);
    dr.get("length_scale", c.duq.length_scale);
    dr.get("gamma", c.duq.gamma);
    dr.finish();
  }
  if (const json* g = r.find("rffgp")) {
    Reader gr(*g, "rffgp");
    gr.get("features", c.rff.features);
    gr.get("length_scale", c.rff.length_scale);
    gr.get("mean_field", c.rff.mean_field);
    gr.finish();
  }
  if (const json* t = r.find("train")) {
    Reader tr(*t, "train");
    parse_train(tr, c.train);
    tr.finish();
  }
  if (const json* o = r.find("train_overrides")) {
    Reader orr(*o, "train_overrides");
    std::map<std::string, TrainOverride> overrides;
    for (auto it = o->begin(); it != o->end(); ++it) {
      orr.find(it.key());
      Reader vr(it.value(), "train_overrides." + it.key());
      TrainOverride to;
      parse_override(vr, to);
      vr.finish();
      overrides[it.key()] = to;
    }
    c.train_overrides = std::move(overrides);
  }
  if (const json* a = r.find("attack")) {
    Reader ar(*a, "attack");
    ar.get("epsilon", c.attack.epsilon);
    ar.get("iterations", c.attack.iterations);
    ar.get("step_size", c.attack.step_size);
    ar.finish();
  }
  if (const json* m = r.find("metrics")) {
    Reader mr(*m, "metrics");
    mr.get("tau", c.metrics.tau);
    mr.finish();
  }
  r.get("sweep", c.sweep);
  r.get("output_dir", c.output_dir);
  r.get("workers", c.workers);
  r.get("dump_samples", c.dump_samples);
  r.finish();
  if (c.dataset.source == DataSource::Synthetic) c.attack.range = c.dataset.synthetic.range;
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("config: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  ordered_json d;
  d["name"] = c.dataset.name;
  d["source"] = source_name(c.dataset.source);
  const SyntheticSpec& s = c.dataset.synthetic;
  ordered_json sj;
  sj["dimension"] = s.dimension;
  sj["num_classes"] = s.num_classes;
  sj["means"] = s.means;
  sj["cluster_std"] = s.cluster_std;
  sj["samples_per_class"] = s.samples_per_class;
  sj["test_samples_per_class"] = s.test_samples_per_class;
  sj["out_samples"] = s.out_samples;
  sj["margin_stds"] = s.margin_stds;
  sj["range"] = {s.range.lo, s.range.hi};
  if (const auto* a = std::get_if<AnnulusGeometry>(&s.out_geometry)) {
    sj["out_geometry"] = {{"kind", "annulus"}, {"r_min", a->r_min}, {"r_max", a->r_max}};
  } else {
    const auto& g = std::get<ShiftedClusterGeometry>(s.out_geometry);
    sj["out_geometry"] = {{"kind", "shifted_clusters"}, {"centers", g.centers}, {"stddev", g.stddev}};
  }
  d["synthetic"] = sj;
  const IdxSource& ix = c.dataset.idx;
  d["idx"] = {{"train_images", ix.train_images}, {"train_labels", ix.train_labels},
              {"test_images", ix.test_images},   {"test_labels", ix.test_labels},
              {"out_images", ix.out_images},     {"num_classes", ix.num_classes}};
  ordered_json cj = {{"train", c.dataset.csv.train},
                     {"test", c.dataset.csv.test},
                     {"out", c.dataset.csv.out},
                     {"num_classes", c.dataset.csv.num_classes}};
  if (c.dataset.csv.range) cj["range"] = {c.dataset.csv.range->lo, c.dataset.csv.range->hi};
  d["csv"] = cj;
  j["dataset"] = d;
  j["models"] = c.models;
  j["architecture"] = {{"hidden", c.hidden}};
  j["ensemble"] = {{"members", c.members}, {"adv_epsilon", c.adv_epsilon}};
  j["duq"] = {{"embedding_dim", c.duq.embedding_dim}, {"length_scale", c.duq.length_scale}, {"gamma", c.duq.gamma}};
  j["rffgp"] = {{"features", c.rff.features}, {"length_scale", c.rff.length_scale}, {"mean_field", c.rff.mean_field}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay}};
  ordered_json overrides = ordered_json::object();
  for (const auto& [name, o] : c.train_overrides) {
    ordered_json oj = ordered_json::object();
    put_optional(oj, "epochs", o.epochs);
    put_optional(oj, "batch_size", o.batch_size);
    put_optional(oj, "learning_rate", o.learning_rate);
    put_optional(oj, "momentum", o.momentum);
    put_optional(oj, "weight_decay", o.weight_decay);
    overrides[name] = oj;
  }
  j["train_overrides"] = overrides;
  ordered_json aj = {{"epsilon", c.attack.epsilon}, {"iterations", c.attack.iterations}};
  aj["step_size"] = c.attack.step_size ? ordered_json(*c.attack.step_size) : ordered_json(nullptr);
  j["attack"] = aj;
  j["metrics"] = {{"tau", c.metrics.tau}};
  j["sweep"] = c.sweep;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["dump_samples"] = c.dump_samples;
  return j.dump(2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  // The output location and worker count do not change any result.
  ExperimentConfig canonical = config;
  canonical.output_dir = "-";
  canonical.workers = 1;
  return Rng::hash(config_to_json(canonical));
}

std::uint64_t stage_seed(std::uint64_t master, const std::string& stage) {
  return Rng(master).split(stage).next_u64();
}

// ---- data and victims ----

Benchmark load_benchmark(const ExperimentConfig& c) {
  Benchmark b;
  b.name = c.dataset.name;
  switch (c.dataset.source) {
    case DataSource::Synthetic: {
      SyntheticSpec s = c.dataset.synthetic;
      s.seed = stage_seed(c.seed, "data");
      b.train = gen_in_domain(s, 0);
      b.test = gen_in_domain(s, 1);
      b.out = gen_out_domain(s);
      break;
    }
    case DataSource::Idx: {
      const IdxSource& ix = c.dataset.idx;
      b.train = load_idx(ix.train_images, ix.train_labels, ix.num_classes);
      b.test = load_idx(ix.test_images, ix.test_labels, ix.num_classes);
      b.out = load_idx(ix.out_images);
      break;
    }
    case DataSource::Csv: {
      const CsvSource& cs = c.dataset.csv;
      b.train = load_csv(cs.train, cs.num_classes, cs.range);
      b.test = load_csv(cs.test, cs.num_classes, cs.range);
      b.out = load_csv_unlabeled(cs.out, cs.range);
      if (!cs.range) {
        // One shared range so the attack clamps every split the same way.
        const DataRange r{std::min({b.train.range.lo, b.test.range.lo, b.out.range.lo}),
                          std::max({b.train.range.hi, b.test.range.hi, b.out.range.hi})};
        b.train.range = b.test.range = b.out.range = r;
      }
      break;
    }
  }
  if (b.train.dimension() != b.out.dimension() || b.test.dimension() != b.train.dimension()) {
    throw ValidationError("in-domain and out-domain feature dimensions differ");
  }
  return b;
}

TrainConfig victim_train_config(const ExperimentConfig& c, const std::string& victim) {
  TrainConfig t = c.train;
  if (auto it = c.train_overrides.find(victim); it != c.train_overrides.end()) {
    const TrainOverride& o = it->second;
    if (o.epochs) t.epochs = *o.epochs;
    if (o.batch_size) t.batch_size = *o.batch_size;
    if (o.learning_rate) t.learning_rate = *o.learning_rate;
    if (o.momentum) t.momentum = *o.momentum;
    if (o.weight_decay) t.weight_decay = *o.weight_decay;
  }
  // Both ensembles start from the same member seeds, so the FGSM augmentation is the only difference.
  t.seed = stage_seed(c.seed, "train/" + std::string(victim == "ensemble_adv" ? "ensemble" : victim));
  if (victim == "ensemble_adv") t.adversarial = AdvTrainSpec{c.adv_epsilon};
  return t;
}

std::unique_ptr<UncertaintyModel> train_victim(const ExperimentConfig& c, const std::string& victim,
                                               const LabeledDataset& train) {
  const TrainConfig t = victim_train_config(c, victim);
  auto keep = [&](auto trained) -> std::unique_ptr<UncertaintyModel> {
    for (const auto& w : trained.report.warnings) std::cerr << "warning [" << victim << "]: " << w << "\n";
    auto model = std::make_unique<decltype(trained.model)>(std::move(trained.model));
    model->meta.fingerprint = victim_fingerprint(c, victim);
    return model;
  };
  return staged("train", victim, [&]() -> std::unique_ptr<UncertaintyModel> {
    if (victim == "softmax") return keep(train_softmax(train, t, c.hidden));
    if (victim == "ensemble") return keep(train_ensemble(train, t, c.members, c.hidden));
    if (victim == "ensemble_adv") return keep(train_ensemble_adversarial(train, t, c.members, c.hidden));
    if (victim == "duq") return keep(train_duq(train, t, c.hidden, c.duq));
    if (victim == "rffgp") return keep(train_rffgp(train, t, c.hidden, c.rff));
    throw ValidationError("unknown model '" + victim + "'");
  });
}

std::unique_ptr<UncertaintyModel> obtain_victim(const ExperimentConfig& c, const std::string& victim,
                                                const Benchmark& data) {
  const fs::path path = checkpoint_path(c, victim);
  if (fs::exists(path)) {
    auto model = staged("load", victim, [&] { return load_checkpoint(path, victim_family(victim)); });
    if (model->meta.fingerprint == victim_fingerprint(c, victim)) return model;
    std::cerr << "[" << victim << "] checkpoint " << path.string() << " was trained with other settings, retraining\n";
  }
  std::cerr << "[" << victim << "] training\n";
  auto model = train_victim(c, victim, data.train);
  staged("save", victim, [&] {
    fs::create_directories(path.parent_path());
    save_checkpoint(*model, path);
  });
  return model;
}

void train_all(const ExperimentConfig& c) {
  c.validate();
  const Benchmark data = staged("data", "", [&] { return load_benchmark(c); });
  for (const auto& victim : c.models) {
    std::cerr << "[" << victim << "] training\n";
    auto model = train_victim(c, victim, data.train);
    const fs::path path = checkpoint_path(c, victim);
    staged("save", victim, [&] {
      fs::create_directories(path.parent_path());
      save_checkpoint(*model, path);
    });
  }
}

// ---- reports ----

void ReportTable::add(const UncertaintyReport& row) {
  for (const auto& r : rows) {
    if (r.model == row.model && r.epsilon == row.epsilon && r.tau == row.tau) {
      throw ContractError("duplicate report row for (" + row.model + ", " + format_number(row.epsilon) + ", " +
                          format_number(row.tau) + ")");
    }
  }
  rows.push_back(row);
}

std::string format_number(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string report_csv(const ReportTable& t) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : t.rows) {
    out += r.model + "," + r.dataset + "," + format_number(r.epsilon) + "," + std::to_string(r.iterations) + "," +
           format_number(r.tau) + "," + format_number(r.entropy_clean) + "," + format_number(r.entropy_adv) + "," +
           format_number(r.rejection_clean) + "," + format_number(r.rejection_adv) + "\n";
  }
  return out;
}

void write_report_csv(const ReportTable& t, const fs::path& path) { write_text(path, report_csv(t)); }

ReportTable read_report_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open report " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw FormatError(path.string() + ":1: expected header '" + std::string(kReportHeader) + "'");
  }
  ReportTable t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 9) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 9 columns, got " +
                        std::to_string(cells.size()));
    }
    auto num = [&](const std::string& s) {
      double v = 0.0;
      auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
      }
      return v;
    };
    UncertaintyReport r;
    r.model = cells[0];
    r.dataset = cells[1];
    r.epsilon = num(cells[2]);
    r.iterations = static_cast<std::size_t>(num(cells[3]));
    r.tau = num(cells[4]);
    r.entropy_clean = num(cells[5]);
    r.entropy_adv = num(cells[6]);
    r.rejection_clean = num(cells[7]);
    r.rejection_adv = num(cells[8]);
    t.add(r);
  }
  return t;
}

// ---- experiments ----

ReportTable run_experiment(const ExperimentConfig& c) {
  c.validate();
  const Benchmark data = staged("data", "", [&] { return load_benchmark(c); });
  ReportTable table = new_table(c);
  for (const auto& victim : c.models) {
    auto model = obtain_victim(c, victim, data);
    std::cerr << "[" << victim << "] attacking " << data.out.size() << " samples at epsilon "
              << format_number(c.attack.epsilon) << "\n";
    const AttackedBatch b = attack_victim(c, victim, *model, data, c.attack.epsilon);
    table.attacked_samples += data.out.size();
    table.constraint_violations += b.violations;
    table.add(b.row);
    write_dumps(c, victim, *model, data, b, c.attack.epsilon);
  }
  write_report_csv(table, fs::path(c.output_dir) / "report.csv");
  write_provenance(c, table, "attack");
  return table;
}

ReportTable sweep_epsilon(const ExperimentConfig& c) {
  c.validate();
  if (c.sweep.size() < 2) throw ValidationError("config: an epsilon sweep needs at least 2 radii");
  std::vector<double> radii = c.sweep;
  std::sort(radii.begin(), radii.end());
  if (std::adjacent_find(radii.begin(), radii.end()) != radii.end()) {
    throw ValidationError("config: sweep radii must be distinct");
  }
  const Benchmark data = staged("data", "", [&] { return load_benchmark(c); });
  ReportTable table = new_table(c);
  for (const auto& victim : c.models) {
    auto model = obtain_victim(c, victim, data);
    std::vector<double> entropies;
    for (double eps : radii) {
      std::cerr << "[" << victim << "] sweep epsilon " << format_number(eps) << "\n";
      const AttackedBatch b = attack_victim(c, victim, *model, data, eps);
      table.attacked_samples += data.out.size();
      table.constraint_violations += b.violations;
      table.add(b.row);
      entropies.push_back(b.row.entropy_adv);
      write_dumps(c, victim, *model, data, b, eps);
    }
    for (std::size_t i = 1; i < entropies.size(); ++i) {
      if (!(entropies[i] < entropies[i - 1])) {
        table.non_monotone.push_back(victim);
        std::cerr << "[" << victim << "] entropy is not monotonically decreasing across the sweep\n";
        break;
      }
    }
  }
  write_report_csv(table, fs::path(c.output_dir) / "sweep.csv");
  write_provenance(c, table, "sweep");
  return table;
}

std::vector<CleanEvaluation> evaluate_clean(const ExperimentConfig& c) {
  c.validate();
  const Benchmark data = staged("data", "", [&] { return load_benchmark(c); });
  std::vector<CleanEvaluation> out;
  std::string csv = "model,dataset,tau,test_accuracy,H_clean,R_clean,in_max_conf,out_max_conf\n";
  for (const auto& victim : c.models) {
    auto model = obtain_victim(c, victim, data);
    CleanEvaluation e = staged("evaluate", victim, [&] {
      CleanEvaluation ev;
      ev.model = victim;
      ev.test_accuracy = accuracy(*model, data.test);
      const Tensor in_conf = model->predict_confidence(data.test.features);
      const Tensor out_conf = model->predict_confidence(data.out.features);
      ev.entropy_clean = entropy(out_conf);
      ev.rejection_clean = rejection_rate(out_conf, c.metrics);
      auto mean_max = [](const Tensor& p) {
        double s = 0.0;
        for (std::size_t r = 0; r < p.rows(); ++r) {
          auto row = p.row(r);
          s += *std::max_element(row.begin(), row.end());
        }
        return s / static_cast<double>(p.rows());
      };
      ev.in_domain_max_confidence = mean_max(in_conf);
      ev.out_domain_max_confidence = mean_max(out_conf);
      return ev;
    });
    csv += victim + "," + data.name + "," + format_number(c.metrics.tau) + "," + format_number(e.test_accuracy) + "," +
           format_number(e.entropy_clean) + "," + format_number(e.rejection_clean) + "," +
           format_number(e.in_domain_max_confidence) + "," + format_number(e.out_domain_max_confidence) + "\n";
    out.push_back(e);
  }
  write_text(fs::path(c.output_dir) / "evaluate.csv", csv);
  return out;
}

// ---- per-sample artifacts ----

ConfidenceHistogram emit_confidence_histogram(const UncertaintyModel& model, const Tensor& x, const Tensor& x_adv) {
  ConfidenceHistogram h;
  const Tensor clean = model.predict_confidence(x);
  const Tensor attacked = model.predict_confidence(x_adv);
  if (clean.rows() != 1 || attacked.rows() != 1) throw ContractError("histogram records are per sample");
  h.clean = clean.values();
  h.attacked = attacked.values();
  h.clean_argmax = argmax(h.clean);
  h.attacked_argmax = argmax(h.attacked);
  h.clean_max = h.clean[h.clean_argmax];
  h.attacked_max = h.attacked[h.attacked_argmax];
  return h;
}

void write_histogram_csv(const std::vector<ConfidenceHistogram>& records, const fs::path& path) {
  std::string out = "sample,class,clean,attacked,clean_argmax,clean_max,attacked_argmax,attacked_max\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& h = records[i];
    for (std::size_t k = 0; k < h.clean.size(); ++k) {
      out += std::to_string(i) + "," + std::to_string(k) + "," + format_number(h.clean[k]) + "," +
             format_number(h.attacked[k]) + "," + std::to_string(h.clean_argmax) + "," + format_number(h.clean_max) +
             "," + std::to_string(h.attacked_argmax) + "," + format_number(h.attacked_max) + "\n";
    }
  }
  write_text(path, out);
}

void write_sample_dump(const Tensor& clean, const Tensor& attacked, const fs::path& path) {
  if (clean.rows() != attacked.rows() || clean.cols() != attacked.cols()) {
    throw DimensionError("sample dump: clean and attacked batches differ in shape");
  }
  const std::size_t c = clean.cols();
  std::string out = "index";
  for (std::size_t k = 0; k < c; ++k) out += ",clean_p" + std::to_string(k);
  for (std::size_t k = 0; k < c; ++k) out += ",adv_p" + std::to_string(k);
  out += ",clean_argmax,clean_max,adv_argmax,adv_max\n";
  for (std::size_t r = 0; r < clean.rows(); ++r) {
    out += std::to_string(r);
    for (double p : clean.row(r)) out += "," + format_number(p);
    for (double p : attacked.row(r)) out += "," + format_number(p);
    const std::size_t ca = argmax(clean.row(r)), aa = argmax(attacked.row(r));
    out += "," + std::to_string(ca) + "," + format_number(clean.row(r)[ca]) + "," + std::to_string(aa) + "," +
           format_number(attacked.row(r)[aa]) + "\n";
  }
  write_text(path, out);
}

}  // namespace oodattack
