#include "cl2dc/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "cl2dc/checkpoint.hpp"
#include "cl2dc/error.hpp"

namespace cl2dc {

namespace {

enum class Kind { kText, kReal, kInt, kUint, kBool, kReals, kSizes, kUints };

struct KeySpec {
  const char* key;
  const char* value;
  Kind kind;
  const char* choices = nullptr;  // '|' separated for enumerated text keys
};

// clang-format off
constexpr std::array kKeys = {
  KeySpec{"dataset.generator", "two-region", Kind::kText, "two-region|confusion|superclass|two-group"},
  KeySpec{"dataset.samples", "4000", Kind::kUint},
  KeySpec{"dataset.seed", "1", Kind::kUint},
  KeySpec{"dataset.test_fraction", "0.2", Kind::kReal},
  KeySpec{"dataset.classes", "4", Kind::kInt},
  KeySpec{"dataset.features", "8", Kind::kUint},
  KeySpec{"dataset.separation", "2", Kind::kReal},
  KeySpec{"dataset.class_separation", "0.8416", Kind::kReal},
  KeySpec{"dataset.region_offset", "2", Kind::kReal},
  KeySpec{"dataset.region_spread", "0.5", Kind::kReal},
  KeySpec{"dataset.classes_per_superclass", "5", Kind::kInt},

  KeySpec{"experts.count", "3", Kind::kInt},
  KeySpec{"experts.off_region_error", "0.5", Kind::kReal},
  KeySpec{"experts.accuracies", "0.8,0.65,0.55", Kind::kReals},
  KeySpec{"experts.error_rate_weak", "0.5", Kind::kReal},
  KeySpec{"experts.err_first", "0.05", Kind::kReal},
  KeySpec{"experts.err_second", "0.15", Kind::kReal},

  KeySpec{"consensus.hidden", "512", Kind::kSizes},
  KeySpec{"consensus.epochs", "200", Kind::kInt},
  KeySpec{"consensus.batch_size", "256", Kind::kUint},
  KeySpec{"consensus.lr0", "0.01", Kind::kReal},
  KeySpec{"consensus.momentum", "0.9", Kind::kReal},
  KeySpec{"consensus.weight_decay", "0.0005", Kind::kReal},
  KeySpec{"consensus.quality_threshold", "0.5", Kind::kReal},

  KeySpec{"model.gating_hidden", "512", Kind::kSizes},
  KeySpec{"model.complement_hidden", "512,512", Kind::kSizes},
  KeySpec{"model.options", "all", Kind::kText, "all|no-complement|no-defer|ai-only"},
  KeySpec{"model.eta", "0.01", Kind::kReal},

  KeySpec{"train.epsilon", "0", Kind::kReal},
  KeySpec{"train.epochs", "200", Kind::kInt},
  KeySpec{"train.batch_size", "256", Kind::kUint},
  KeySpec{"train.lr0", "0.01", Kind::kReal},
  KeySpec{"train.momentum", "0.9", Kind::kReal},
  KeySpec{"train.weight_decay", "0.0005", Kind::kReal},
  KeySpec{"train.lambda", "0.01", Kind::kReal},
  KeySpec{"train.beta0", "1", Kind::kReal},
  KeySpec{"train.penalty_mode", "auto", Kind::kText, "auto|full|batch"},
  KeySpec{"train.freeze_classifier", "false", Kind::kBool},
  KeySpec{"train.seed", "0", Kind::kUint},

  KeySpec{"eval.policy", "auto", Kind::kText, "auto|gt|majority"},
  KeySpec{"eval.threads", "1", Kind::kUint},
  KeySpec{"eval.epsilons", "0,0.2,0.4,0.6,0.8", Kind::kReals},
  KeySpec{"eval.seeds", "0,1,2", Kind::kUints},
  KeySpec{"eval.posthoc_step", "0.1", Kind::kReal},
  KeySpec{"eval.random_defer_p", "0.5", Kind::kReal},
};
// clang-format on

const KeySpec& spec_for(const std::string& key) {
  for (const auto& k : kKeys)
    if (key == k.key) return k;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) parts.push_back(trim(item));
  if (parts.empty() || std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.empty(); }))
    throw ConfigError("malformed list '" + text + "'");
  return parts;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("config key '" + key + "' expects a number, got '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + text + "'");
}

void check_value(const KeySpec& spec, const std::string& value) {
  const std::string key = spec.key;
  switch (spec.kind) {
    case Kind::kText:
      if (spec.choices) {
        std::istringstream in(spec.choices);
        std::string choice;
        while (std::getline(in, choice, '|'))
          if (choice == value) return;
        throw ConfigError("config key '" + key + "' must be one of " + spec.choices + ", got '" + value + "'");
      }
      return;
    case Kind::kReal: parse_number<double>(key, value); return;
    case Kind::kInt: parse_number<long long>(key, value); return;
    case Kind::kUint: parse_number<std::uint64_t>(key, value); return;
    case Kind::kBool: parse_bool(key, value); return;
    case Kind::kReals:
      for (const auto& p : split_list(value)) parse_number<double>(key, p);
      return;
    case Kind::kSizes:
    case Kind::kUints:
      for (const auto& p : split_list(value)) parse_number<std::uint64_t>(key, p);
      return;
  }
}

std::size_t as_size(const Config& c, const std::string& key) {
  return static_cast<std::size_t>(c.get_uint(key));
}

int as_int(const Config& c, const std::string& key) {
  const long long v = c.get_int(key);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError("config key '" + key + "' is out of range");
  return static_cast<int>(v);
}

}  // namespace

Config Config::defaults() {
  Config c;
  for (const auto& k : kKeys) c.values_[k.key] = k.value;
  return c;
}

void Config::apply_desk_scale() {
  set("consensus.epochs", "60");
  set("train.epochs", "60");
  set("consensus.hidden", "64");
  set("model.gating_hidden", "64");
  set("model.complement_hidden", "64,64");
}

void Config::merge_ini(std::string_view text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(origin + ": key '" + section + "' is outside any section");
    for (const auto& [key, node] : body) {
      try {
        set(section + "." + key, trim(node.data()));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
      }
    }
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  merge_ini(text.str(), path.string());
}

void Config::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) {
  const auto& spec = spec_for(key);
  check_value(spec, value);
  values_[key] = value;
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }
long long Config::get_int(const std::string& key) const { return parse_number<long long>(key, get(key)); }
std::uint64_t Config::get_uint(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }
bool Config::get_bool(const std::string& key) const { return parse_bool(key, get(key)); }

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& p : split_list(get(key))) out.push_back(parse_number<double>(key, p));
  return out;
}

std::vector<std::size_t> Config::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& p : split_list(get(key))) out.push_back(parse_number<std::size_t>(key, p));
  return out;
}

std::vector<std::uint64_t> Config::get_uints(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& p : split_list(get(key))) out.push_back(parse_number<std::uint64_t>(key, p));
  return out;
}

std::string Config::to_ini() const {
  std::ostringstream out;
  std::string current;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << key.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

std::string Config::hash() const { return sha256_hex(to_ini()); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

SyntheticData simulate(const Config& c) {
  const std::string generator = c.get("dataset.generator");
  const auto n = as_size(c, "dataset.samples");
  const auto seed = c.get_uint("dataset.seed");
  if (generator == "two-region") {
    TwoRegionSpec s;
    s.num_samples = n;
    s.seed = seed;
    s.class_separation = c.get_double("dataset.class_separation");
    s.region_offset = c.get_double("dataset.region_offset");
    s.region_spread = c.get_double("dataset.region_spread");
    s.off_region_error = c.get_double("experts.off_region_error");
    return make_two_region(s);
  }
  if (generator == "confusion") {
    ConfusionSpec s;
    s.num_samples = n;
    s.seed = seed;
    s.num_classes = as_int(c, "dataset.classes");
    s.feature_dim = as_size(c, "dataset.features");
    s.separation = c.get_double("dataset.separation");
    s.annotator_accuracy = c.get_doubles("experts.accuracies");
    return make_confusion(s);
  }
  if (generator == "superclass") {
    SuperclassSpec s;
    s.num_samples = n;
    s.seed = seed;
    s.num_classes = as_int(c, "dataset.classes");
    s.classes_per_superclass = as_int(c, "dataset.classes_per_superclass");
    s.feature_dim = as_size(c, "dataset.features");
    s.separation = c.get_double("dataset.separation");
    s.num_experts = as_int(c, "experts.count");
    s.error_rate_weak = c.get_double("experts.error_rate_weak");
    return make_superclass(s);
  }
  TwoGroupSpec s;
  s.num_samples = n;
  s.seed = seed;
  s.num_classes = as_int(c, "dataset.classes");
  s.feature_dim = as_size(c, "dataset.features");
  s.separation = c.get_double("dataset.separation");
  s.err_first = c.get_double("experts.err_first");
  s.err_second = c.get_double("experts.err_second");
  return make_two_group(s);
}

ClassifierConfig classifier_config(const Config& c) {
  ClassifierConfig cfg;
  cfg.hidden = c.get_sizes("consensus.hidden");
  cfg.epochs = as_int(c, "consensus.epochs");
  cfg.batch_size = as_size(c, "consensus.batch_size");
  cfg.lr0 = c.get_double("consensus.lr0");
  cfg.momentum = c.get_double("consensus.momentum");
  cfg.weight_decay = c.get_double("consensus.weight_decay");
  return cfg;
}

OptionMask option_mask(const std::string& name, std::size_t num_experts) {
  if (name == "all") return OptionMask::all(num_experts);
  if (name == "no-complement") return OptionMask::without_complement(num_experts);
  if (name == "no-defer") return OptionMask::without_defer(num_experts);
  if (name == "ai-only") return OptionMask::ai_only(num_experts);
  throw ConfigError("unknown option set '" + name + "'");
}

TrainConfig train_config(const Config& c, std::size_t num_experts) {
  TrainConfig cfg;
  cfg.epsilon = c.get_double("train.epsilon");
  cfg.eta = c.get_double("model.eta");
  cfg.epochs = as_int(c, "train.epochs");
  cfg.batch_size = as_size(c, "train.batch_size");
  cfg.lr0 = c.get_double("train.lr0");
  cfg.momentum = c.get_double("train.momentum");
  cfg.weight_decay = c.get_double("train.weight_decay");
  cfg.lambda = c.get_double("train.lambda");
  cfg.beta0 = c.get_double("train.beta0");
  cfg.seed = c.get_uint("train.seed");
  cfg.mask = option_mask(c.get("model.options"), num_experts);
  cfg.penalty_mode = penalty_mode_from_string(c.get("train.penalty_mode"));
  cfg.freeze_classifier = c.get_bool("train.freeze_classifier");
  cfg.gating_hidden = c.get_sizes("model.gating_hidden");
  cfg.complement_hidden = c.get_sizes("model.complement_hidden");
  cfg.validate(num_experts);
  return cfg;
}

EvalOptions eval_options(const Config& c) {
  EvalOptions opt;
  opt.policy = reference_policy_from_string(c.get("eval.policy"));
  opt.threads = static_cast<unsigned>(std::max<std::uint64_t>(1, c.get_uint("eval.threads")));
  opt.epsilon = c.get_double("train.epsilon");
  opt.seed = c.get_uint("train.seed");
  return opt;
}

SweepConfig sweep_config(const Config& c, std::size_t num_experts) {
  SweepConfig cfg;
  cfg.epsilons = c.get_doubles("eval.epsilons");
  cfg.seeds = c.get_uints("eval.seeds");
  cfg.classifier = classifier_config(c);
  cfg.train = train_config(c, num_experts);
  cfg.quality_threshold = c.get_double("consensus.quality_threshold");
  cfg.policy = reference_policy_from_string(c.get("eval.policy"));
  return cfg;
}

}  // namespace cl2dc
