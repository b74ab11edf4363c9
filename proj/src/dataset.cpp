#include "cl2dc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cl2dc/error.hpp"

namespace cl2dc {

using nlohmann::json;

namespace {

std::optional<DatasetSchema> schema_from_header(const json& obj) {
  if (!obj.is_object() || obj.contains("id") || !obj.contains("C")) return std::nullopt;
  DatasetSchema s;
  s.num_classes = obj.at("C").get<std::size_t>();
  s.num_experts = obj.at("M").get<std::size_t>();
  s.feature_dim = obj.at("F").get<std::size_t>();
  return s;
}

// Returns false when the sample carries a missing-annotation sentinel.
bool parse_sample(const json& obj, const DatasetSchema& schema, AnnotatedSample& out) {
  if (!obj.is_object()) throw ParseError("expected a JSON object");
  out.id = obj.at("id").get<std::string>();
  out.features = obj.at("features").get<std::vector<double>>();
  out.annotations = obj.at("annotations").get<std::vector<int>>();
  out.gt.reset();
  if (obj.contains("gt") && !obj.at("gt").is_null()) out.gt = obj.at("gt").get<int>();

  if (out.features.size() != schema.feature_dim)
    throw SchemaError("sample '" + out.id + "' has " + std::to_string(out.features.size()) +
                      " features, expected " + std::to_string(schema.feature_dim));
  if (out.annotations.size() != schema.num_experts)
    throw SchemaError("sample '" + out.id + "' has " + std::to_string(out.annotations.size()) +
                      " annotations, expected " + std::to_string(schema.num_experts));
  bool complete = true;
  for (int a : out.annotations) {
    if (a == kMissingAnnotation) {
      complete = false;
    } else if (a < 0 || static_cast<std::size_t>(a) >= schema.num_classes) {
      throw SchemaError("sample '" + out.id + "' has annotation " + std::to_string(a) +
                        " outside [0, " + std::to_string(schema.num_classes) + ")");
    }
  }
  return complete;
}

}  // namespace

void AnnotatedDataset::validate() const {
  if (samples.empty()) throw SchemaError("dataset is empty");
  if (schema.num_classes < 2) throw SchemaError("dataset needs at least two classes");
  if (schema.num_experts == 0) throw SchemaError("dataset needs at least one expert");
  if (schema.feature_dim == 0) throw SchemaError("dataset needs at least one feature");
  std::unordered_set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw SchemaError("duplicate sample id '" + s.id + "'");
    if (s.features.size() != schema.feature_dim)
      throw SchemaError("sample '" + s.id + "' has the wrong feature length");
    for (double f : s.features)
      if (!std::isfinite(f)) throw SchemaError("sample '" + s.id + "' has a non-finite feature");
    if (s.annotations.size() != schema.num_experts)
      throw SchemaError("sample '" + s.id + "' has the wrong annotation count");
    for (int a : s.annotations)
      if (a < 0 || static_cast<std::size_t>(a) >= schema.num_classes)
        throw SchemaError("sample '" + s.id + "' has an invalid annotation");
    if (s.gt && (*s.gt < 0 || static_cast<std::size_t>(*s.gt) >= schema.num_classes))
      throw SchemaError("sample '" + s.id + "' has an invalid ground-truth label");
  }
}

Matrix AnnotatedDataset::feature_matrix(std::span<const std::size_t> indices) const {
  Matrix x(static_cast<Eigen::Index>(schema.feature_dim), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t c = 0; c < indices.size(); ++c) {
    const auto& f = samples.at(indices[c]).features;
    for (std::size_t r = 0; r < f.size(); ++r)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f[r];
  }
  return x;
}

Matrix AnnotatedDataset::feature_matrix() const {
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return feature_matrix(all);
}

AnnotatedDataset AnnotatedDataset::subset(std::span<const std::size_t> indices) const {
  AnnotatedDataset out;
  out.schema = schema;
  out.samples.reserve(indices.size());
  for (auto i : indices) out.samples.push_back(samples.at(i));
  return out;
}

LoadedDataset parse_dataset(std::istream& in, std::optional<DatasetSchema> schema) {
  LoadedDataset result;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (first) {
      first = false;
      std::optional<DatasetSchema> header;
      try {
        header = schema_from_header(obj);
      } catch (const json::exception& e) {
        throw ParseError(std::string("malformed header: ") + e.what(), line_no);
      }
      if (header) {
        if (schema && *schema != *header)
          throw SchemaError("dataset header disagrees with the supplied schema");
        schema = header;
        continue;
      }
    }
    if (!schema) throw SchemaError("dataset has no header line and no schema was supplied");
    AnnotatedSample sample;
    bool complete = false;
    try {
      complete = parse_sample(obj, *schema, sample);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed sample: ") + e.what(), line_no);
    }
    if (!complete) {
      ++result.excluded;
      result.excluded_ids.push_back(sample.id);
      continue;
    }
    result.dataset.samples.push_back(std::move(sample));
  }
  if (!schema) throw SchemaError("dataset has no header line and no schema was supplied");
  result.dataset.schema = *schema;
  result.dataset.validate();
  return result;
}

LoadedDataset load_dataset(const std::filesystem::path& path, std::optional<DatasetSchema> schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file " + path.string());
  return parse_dataset(in, schema);
}

void write_dataset(const AnnotatedDataset& dataset, std::ostream& out) {
  json header = {{"C", dataset.num_classes()}, {"M", dataset.num_experts()}, {"F", dataset.feature_dim()}};
  out << header.dump() << '\n';
  for (const auto& s : dataset.samples) {
    json obj;
    obj["id"] = s.id;
    obj["features"] = s.features;
    obj["annotations"] = s.annotations;
    obj["gt"] = s.gt ? json(*s.gt) : json(nullptr);
    out << obj.dump() << '\n';
  }
}

void save_dataset(const AnnotatedDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write dataset file " + path.string());
  write_dataset(dataset, out);
}

int majority_vote(std::span<const int> annotations) {
  if (annotations.empty()) throw DomainError("majority vote of no annotations");
  const int max_label = *std::max_element(annotations.begin(), annotations.end());
  if (*std::min_element(annotations.begin(), annotations.end()) < 0)
    throw DomainError("majority vote over a negative class index");
  std::vector<int> counts(static_cast<std::size_t>(max_label) + 1, 0);
  for (int a : annotations) ++counts[static_cast<std::size_t>(a)];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

bool has_unique_majority(std::span<const int> annotations) {
  const int winner = majority_vote(annotations);
  std::vector<int> counts(static_cast<std::size_t>(*std::max_element(annotations.begin(), annotations.end())) + 1, 0);
  for (int a : annotations) ++counts[static_cast<std::size_t>(a)];
  const int top = counts[static_cast<std::size_t>(winner)];
  return std::count(counts.begin(), counts.end(), top) == 1;
}

std::pair<AnnotatedDataset, AnnotatedDataset> split_dataset(const AnnotatedDataset& dataset,
                                                            std::array<double, 2> fractions,
                                                            std::uint64_t seed) {
  if (fractions[0] < 0.0 || fractions[1] < 0.0 || std::abs(fractions[0] + fractions[1] - 1.0) > 1e-9)
    throw DomainError("split fractions must be non-negative and sum to 1");
  const std::size_t n = dataset.size();
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fractions[1]));
  if (n_test == 0 || n_test >= n) throw DomainError("split would leave an empty partition");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {dataset.subset(train), dataset.subset(test)};
}

}  // namespace cl2dc
