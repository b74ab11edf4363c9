#include "cl2dc/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cl2dc/error.hpp"

namespace cl2dc {

using nlohmann::json;

namespace {

constexpr const char* kModelFormat = "cl2dc-checkpoint";
constexpr const char* kClassifierFormat = "cl2dc-classifier";
constexpr int kFormatVersion = 1;

json network_json(const DenseNetwork& net) {
  json layers = json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"in", l.weight.cols()},
                      {"out", l.weight.rows()},
                      {"activation", l.activation == Activation::kRelu ? "relu" : "identity"},
                      {"weight", w},
                      {"bias", b}});
  }
  return {{"input_dim", net.input_dim()}, {"output_dim", net.output_dim()}, {"layers", layers}};
}

DenseNetwork network_parse(const json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& lj : j.at("layers")) {
    const auto in = lj.at("in").get<Eigen::Index>();
    const auto out = lj.at("out").get<Eigen::Index>();
    const auto w = lj.at("weight").get<std::vector<double>>();
    const auto b = lj.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != in * out || static_cast<Eigen::Index>(b.size()) != out)
      throw ParseError("layer parameter count does not match its dimensions");
    DenseLayer l;
    l.weight.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = w[static_cast<std::size_t>(r * in + c)];
    l.bias = Eigen::Map<const Vector>(b.data(), out);
    const auto act = lj.at("activation").get<std::string>();
    if (act == "relu") {
      l.activation = Activation::kRelu;
    } else if (act == "identity") {
      l.activation = Activation::kIdentity;
    } else {
      throw ParseError("unknown activation '" + act + "'");
    }
    layers.push_back(std::move(l));
  }
  DenseNetwork net(std::move(layers));
  if (net.input_dim() != j.at("input_dim").get<std::size_t>() ||
      net.output_dim() != j.at("output_dim").get<std::size_t>())
    throw ParseError("network header dimensions do not match its layers");
  return net;
}

json train_config_json(const TrainConfig& c) {
  return {{"epsilon", c.epsilon},
          {"eta", c.eta},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"lambda", c.lambda},
          {"beta0", c.beta0},
          {"seed", c.seed},
          {"mask", c.mask.flags()},
          {"penalty_mode", to_string(c.penalty_mode)},
          {"freeze_classifier", c.freeze_classifier},
          {"gating_hidden", c.gating_hidden},
          {"complement_hidden", c.complement_hidden}};
}

TrainConfig train_config_parse(const json& j) {
  TrainConfig c;
  c.epsilon = j.at("epsilon").get<double>();
  c.eta = j.at("eta").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr0 = j.at("lr0").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.beta0 = j.at("beta0").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto mask = j.at("mask").get<std::vector<bool>>();
  if (!mask.empty()) c.mask = OptionMask(mask);
  c.penalty_mode = penalty_mode_from_string(j.at("penalty_mode").get<std::string>());
  c.freeze_classifier = j.at("freeze_classifier").get<bool>();
  c.gating_hidden = j.at("gating_hidden").get<std::vector<std::size_t>>();
  c.complement_hidden = j.at("complement_hidden").get<std::vector<std::size_t>>();
  return c;
}

json classifier_config_json(const ClassifierConfig& c) {
  return {{"hidden", c.hidden},   {"epochs", c.epochs},     {"batch_size", c.batch_size},
          {"lr0", c.lr0},         {"momentum", c.momentum}, {"weight_decay", c.weight_decay}};
}

ClassifierConfig classifier_config_parse(const json& j) {
  ClassifierConfig c;
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr0 = j.at("lr0").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  return c;
}

json parse_document(const std::string& text, const char* format) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != format)
    throw ParseError(std::string("not a ") + format + " document");
  if (j.value("version", 0) != kFormatVersion) throw ParseError("unsupported checkpoint version");
  return j;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << text;
}

template <class Fn>
auto guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace

std::string to_string(PenaltyMode mode) {
  switch (mode) {
    case PenaltyMode::kAuto:
      return "auto";
    case PenaltyMode::kFullDataset:
      return "full";
    case PenaltyMode::kPerBatch:
      return "batch";
  }
  return "auto";
}

PenaltyMode penalty_mode_from_string(const std::string& text) {
  if (text == "auto") return PenaltyMode::kAuto;
  if (text == "full") return PenaltyMode::kFullDataset;
  if (text == "batch") return PenaltyMode::kPerBatch;
  throw ConfigError("unknown penalty mode '" + text + "' (expected auto, full or batch)");
}

std::string network_to_string(const DenseNetwork& net) { return network_json(net).dump(1) + "\n"; }

DenseNetwork network_from_string(const std::string& text) {
  return guarded([&] { return network_parse(json::parse(text)); });
}

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  json j = {{"format", kModelFormat},
            {"version", kFormatVersion},
            {"config", train_config_json(ckpt.config)},
            {"mask", ckpt.params.mask.flags()},
            {"classifier", network_json(ckpt.params.classifier)},
            {"gating", network_json(ckpt.params.gating)},
            {"complement", network_json(ckpt.params.complement)}};
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  const json j = parse_document(text, kModelFormat);
  return guarded([&] {
    Checkpoint c;
    c.config = train_config_parse(j.at("config"));
    c.params.classifier = network_parse(j.at("classifier"));
    c.params.gating = network_parse(j.at("gating"));
    c.params.complement = network_parse(j.at("complement"));
    c.params.mask = OptionMask(j.at("mask").get<std::vector<bool>>());
    c.params.validate();
    return c;
  });
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, checkpoint_to_string(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_string(read_file(path)); }

std::string classifier_to_string(const ClassifierCheckpoint& ckpt) {
  json j = {{"format", kClassifierFormat},
            {"version", kFormatVersion},
            {"config", classifier_config_json(ckpt.config)},
            {"network", network_json(ckpt.network)}};
  return j.dump(1) + "\n";
}

ClassifierCheckpoint classifier_from_string(const std::string& text) {
  const json j = parse_document(text, kClassifierFormat);
  return guarded([&] {
    return ClassifierCheckpoint{network_parse(j.at("network")), classifier_config_parse(j.at("config"))};
  });
}

void save_classifier(const ClassifierCheckpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, classifier_to_string(ckpt));
}

ClassifierCheckpoint load_classifier(const std::filesystem::path& path) {
  return classifier_from_string(read_file(path));
}

}  // namespace cl2dc
