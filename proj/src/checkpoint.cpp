#include "oodattack/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "oodattack/errors.hpp"

namespace oodattack {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "oodattack-checkpoint";

json spec_to_json(const ModelSpec& s) {
  json j;
  j["input_dim"] = s.input_dim;
  j["num_classes"] = s.num_classes;
  j["hidden"] = s.hidden;
  if (s.family == Family::Ensemble) j["members"] = s.members;
  if (s.family == Family::DUQ) {
    j["duq"] = {{"embedding_dim", s.duq.embedding_dim}, {"length_scale", s.duq.length_scale}, {"gamma", s.duq.gamma}};
  }
  if (s.family == Family::RFFGP) {
    j["rff"] = {{"features", s.rff.features}, {"length_scale", s.rff.length_scale}, {"mean_field", s.rff.mean_field}};
  }
  return j;
}

ModelSpec spec_from_json(Family family, const json& j) {
  ModelSpec s;
  s.family = family;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  if (family == Family::Ensemble) s.members = j.at("members").get<std::size_t>();
  if (family == Family::DUQ) {
    const json& d = j.at("duq");
    s.duq.embedding_dim = d.at("embedding_dim").get<std::size_t>();
    s.duq.length_scale = d.at("length_scale").get<double>();
    s.duq.gamma = d.at("gamma").get<double>();
  }
  if (family == Family::RFFGP) {
    const json& r = j.at("rff");
    s.rff.features = r.at("features").get<std::size_t>();
    s.rff.length_scale = r.at("length_scale").get<double>();
    s.rff.mean_field = r.at("mean_field").get<double>();
  }
  return s;
}

}  // namespace

std::string checkpoint_to_string(UncertaintyModel& model) {
  json j;
  j["format"] = kFormat;
  j["version"] = kCheckpointVersion;
  j["family"] = std::string(family_name(model.family()));
  j["spec"] = spec_to_json(model.spec());
  j["meta"] = {{"seed", model.meta.seed},
               {"epsilon_train", model.meta.epsilon_train},
               {"epochs", model.meta.epochs},
               {"train_accuracy", model.meta.train_accuracy},
               {"fingerprint", model.meta.fingerprint}};
  json tensors = json::array();
  for (const auto& [name, tensor] : model.state()) {
    tensors.push_back({{"name", name}, {"shape", tensor->shape()}, {"data", tensor->values()}});
  }
  j["tensors"] = std::move(tensors);
  return j.dump(1) + "\n";
}

std::unique_ptr<UncertaintyModel> checkpoint_from_string(const std::string& text, std::optional<Family> expected) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", "") != kFormat) throw CheckpointError("not an oodattack checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    const std::string tag = j.at("family").get<std::string>();
    Family family;
    try {
      family = parse_family(tag);
    } catch (const std::exception&) {
      throw CheckpointError("unknown family tag '" + tag + "'");
    }
    if (expected && *expected != family) {
      throw CheckpointError("family tag mismatch: checkpoint holds '" + tag + "', expected '" +
                            std::string(family_name(*expected)) + "'");
    }
    auto model = make_model(spec_from_json(family, j.at("spec")));
    const json& meta = j.at("meta");
    model->meta.seed = meta.at("seed").get<std::uint64_t>();
    model->meta.epsilon_train = meta.at("epsilon_train").get<double>();
    model->meta.epochs = meta.at("epochs").get<std::size_t>();
    model->meta.train_accuracy = meta.at("train_accuracy").get<double>();
    model->meta.fingerprint = meta.at("fingerprint").get<std::uint64_t>();

    const json& tensors = j.at("tensors");
    auto state = model->state();
    if (tensors.size() != state.size()) {
      throw CheckpointError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                            std::to_string(state.size()));
    }
    for (std::size_t i = 0; i < state.size(); ++i) {
      const json& t = tensors[i];
      const auto& [name, target] = state[i];
      if (t.at("name").get<std::string>() != name) {
        throw CheckpointError("tensor " + std::to_string(i) + " is '" + t.at("name").get<std::string>() +
                              "', expected '" + name + "'");
      }
      const auto shape = t.at("shape").get<Tensor::Shape>();
      auto data = t.at("data").get<std::vector<double>>();
      if (shape != target->shape() || data.size() != target->size()) {
        throw CheckpointError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                              shape_string(target->shape()));
      }
      *target = Tensor(shape, std::move(data));
    }
    model->state_loaded();
    return model;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const NumericalError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint(UncertaintyModel& model, const std::filesystem::path& path) {
  const std::string text = checkpoint_to_string(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << text;
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

std::unique_ptr<UncertaintyModel> load_checkpoint(const std::filesystem::path& path, std::optional<Family> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return checkpoint_from_string(buf.str(), expected);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace oodattack
