#pragma once

// Declarative experiment configuration. Values live in a flat map keyed by
// "section.key"; every key has a default, so a config file only lists what
// it changes. Sections: dataset, experts, consensus, model, train, eval.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cl2dc/consensus.hpp"
#include "cl2dc/eval.hpp"
#include "cl2dc/model.hpp"
#include "cl2dc/synthetic.hpp"

namespace cl2dc {

class Config {
 public:
  /// Full-size defaults (200 epochs, width 512, batch 256).
  static Config defaults();

  /// Epochs 60 and width 64 everywhere.
  void apply_desk_scale();

  /// INI text: "[section]" headers and "key = value" lines. Unknown sections
  /// or keys raise ConfigError.
  void merge_ini(std::string_view text, const std::string& origin = "<string>");
  void merge_file(const std::filesystem::path& path);

  /// Override one value; `assignment` is "section.key=value".
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;
  std::vector<std::uint64_t> get_uints(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted "key = value" lines grouped by section; parses back to an equal
  /// config.
  std::string to_ini() const;
  /// Hex SHA-256 of to_ini().
  std::string hash() const;

  bool operator==(const Config&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Synthetic dataset described by the [dataset] and [experts] sections.
SyntheticData simulate(const Config& config);

ClassifierConfig classifier_config(const Config& config);
TrainConfig train_config(const Config& config, std::size_t num_experts);
SweepConfig sweep_config(const Config& config, std::size_t num_experts);
EvalOptions eval_options(const Config& config);

/// Option mask named by model.options: all, no-complement, no-defer, ai-only.
OptionMask option_mask(const std::string& name, std::size_t num_experts);

}  // namespace cl2dc
