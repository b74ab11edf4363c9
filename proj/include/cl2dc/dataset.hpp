#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cl2dc/numeric.hpp"

namespace cl2dc {

/// Sentinel used in dataset files for an annotation an expert did not give.
inline constexpr int kMissingAnnotation = -1;

struct AnnotatedSample {
  std::string id;
  std::vector<double> features;
  std::vector<int> annotations;  // one class index per expert
  std::optional<int> gt;

  bool operator==(const AnnotatedSample&) const = default;
};

struct DatasetSchema {
  std::size_t num_classes = 0;
  std::size_t num_experts = 0;
  std::size_t feature_dim = 0;

  bool operator==(const DatasetSchema&) const = default;
};

/// Samples with complete expert annotation matrices. Immutable after
/// construction by convention; all members are validated by validate().
struct AnnotatedDataset {
  std::vector<AnnotatedSample> samples;
  DatasetSchema schema;

  std::size_t size() const { return samples.size(); }
  std::size_t num_classes() const { return schema.num_classes; }
  std::size_t num_experts() const { return schema.num_experts; }
  std::size_t feature_dim() const { return schema.feature_dim; }

  /// Throws SchemaError on any violated invariant.
  void validate() const;

  /// Features of the selected samples, one column per sample.
  Matrix feature_matrix(std::span<const std::size_t> indices) const;
  Matrix feature_matrix() const;

  /// Subset in the order given.
  AnnotatedDataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const AnnotatedDataset&) const = default;
};

struct LoadedDataset {
  AnnotatedDataset dataset;
  std::size_t excluded = 0;  // samples dropped for a missing annotation
  std::vector<std::string> excluded_ids;
};

/// Reads JSON Lines. The first line may be a {"C","M","F"} header; when both
/// a header and `schema` are present they must agree.
LoadedDataset load_dataset(const std::filesystem::path& path,
                           std::optional<DatasetSchema> schema = std::nullopt);
LoadedDataset parse_dataset(std::istream& in, std::optional<DatasetSchema> schema = std::nullopt);

/// Writes the header line followed by one object per sample.
void save_dataset(const AnnotatedDataset& dataset, const std::filesystem::path& path);
void write_dataset(const AnnotatedDataset& dataset, std::ostream& out);

/// Most frequent class, lowest index on ties.
int majority_vote(std::span<const int> annotations);

/// True when exactly one class has the highest vote count.
bool has_unique_majority(std::span<const int> annotations);

/// Disjoint, seed-deterministic (train, test) partition. The test split has
/// round(N * fractions[1]) samples and the remainder goes to train. Both
/// splits keep the original sample order.
std::pair<AnnotatedDataset, AnnotatedDataset> split_dataset(const AnnotatedDataset& dataset,
                                                            std::array<double, 2> fractions,
                                                            std::uint64_t seed);

}  // namespace cl2dc
