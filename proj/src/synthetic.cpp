#include "cl2dc/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cl2dc/error.hpp"
#include "cl2dc/numeric.hpp"

namespace cl2dc {

namespace {

std::string sample_id(std::size_t i, int group) {
  std::string id = "s" + std::to_string(i);
  if (group >= 0) id += "-g" + std::to_string(group);
  return id;
}

AnnotatedDataset assemble(const std::vector<std::vector<double>>& features,
                          const std::vector<std::vector<int>>& expert_labels,
                          std::span<const int> gt, std::span<const int> group, int num_classes) {
  AnnotatedDataset ds;
  ds.schema.num_classes = static_cast<std::size_t>(num_classes);
  ds.schema.num_experts = expert_labels.size();
  ds.schema.feature_dim = features.empty() ? 0 : features.front().size();
  ds.samples.reserve(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    AnnotatedSample s;
    s.id = sample_id(i, group.empty() ? -1 : group[i]);
    s.features = features[i];
    for (const auto& col : expert_labels) s.annotations.push_back(col[i]);
    s.gt = gt[i];
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<int> balanced_labels(std::size_t n, int num_classes, std::uint64_t seed) {
  if (num_classes <= 0) throw DomainError("need at least one class");
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(num_classes));
  Rng rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

std::vector<std::vector<double>> gaussian_class_features(std::span<const int> labels,
                                                         std::size_t feature_dim,
                                                         double separation, std::uint64_t seed) {
  if (feature_dim == 0) throw DomainError("feature dimension must be positive");
  const int num_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means(static_cast<std::size_t>(num_classes),
                                         std::vector<double>(feature_dim));
  for (auto& m : means) {
    double norm = 0.0;
    for (auto& v : m) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : m) v *= separation / norm;
  }
  std::vector<std::vector<double>> out;
  out.reserve(labels.size());
  for (int y : labels) {
    std::vector<double> x = means[static_cast<std::size_t>(y)];
    for (auto& v : x) v += normal(rng);
    out.push_back(std::move(x));
  }
  return out;
}

SyntheticData make_two_region(const TwoRegionSpec& spec) {
  if (spec.num_samples < 2) throw DomainError("need at least two samples");
  const auto labels = balanced_labels(spec.num_samples, 2, derive_seed(spec.seed, 0));
  const auto region = balanced_labels(spec.num_samples, 2, derive_seed(spec.seed, 1));
  Rng rng(derive_seed(spec.seed, 2));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> features;
  features.reserve(spec.num_samples);
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    const double cls = labels[i] == 1 ? spec.class_separation : -spec.class_separation;
    const double reg = region[i] == 1 ? spec.region_offset : -spec.region_offset;
    const double x0 = cls + normal(rng);
    const double x1 = reg + spec.region_spread * normal(rng);
    features.push_back({x0, x1});
  }
  std::vector<std::vector<int>> experts;
  for (int j = 0; j < 2; ++j) {
    // expert j is perfect on region j
    const double err_a = j == 0 ? 0.0 : spec.off_region_error;
    const double err_b = j == 0 ? spec.off_region_error : 0.0;
    experts.push_back(simulate_two_group_expert(labels, region, err_a, err_b, 2,
                                                derive_seed(spec.seed, 10 + static_cast<std::uint64_t>(j))));
  }
  return {assemble(features, experts, labels, region, 2), region};
}

SyntheticData make_confusion(const ConfusionSpec& spec) {
  if (spec.annotator_accuracy.empty()) throw DomainError("need at least one annotator");
  const auto labels = balanced_labels(spec.num_samples, spec.num_classes, derive_seed(spec.seed, 0));
  const auto features = gaussian_class_features(labels, spec.feature_dim, spec.separation,
                                                derive_seed(spec.seed, 1));
  const std::vector<int> group(labels.size(), 0);
  std::vector<std::vector<int>> experts;
  for (std::size_t j = 0; j < spec.annotator_accuracy.size(); ++j) {
    const double err = 1.0 - spec.annotator_accuracy[j];
    experts.push_back(simulate_two_group_expert(labels, group, err, err, spec.num_classes,
                                                derive_seed(spec.seed, 10 + j)));
  }
  return {assemble(features, experts, labels, {}, spec.num_classes), {}};
}

SyntheticData make_superclass(const SuperclassSpec& spec) {
  const auto superclass_of = contiguous_superclasses(spec.num_classes, spec.classes_per_superclass);
  const auto profiles = spec.profiles.empty()
                            ? superclass_expert_pool(superclass_of, spec.num_experts,
                                                     spec.error_rate_weak, derive_seed(spec.seed, 3))
                            : spec.profiles;
  const auto labels = balanced_labels(spec.num_samples, spec.num_classes, derive_seed(spec.seed, 0));
  const auto features = gaussian_class_features(labels, spec.feature_dim, spec.separation,
                                                derive_seed(spec.seed, 1));
  std::vector<std::vector<int>> experts;
  for (std::size_t j = 0; j < profiles.size(); ++j) {
    if (profiles[j].superclass_of.size() != static_cast<std::size_t>(spec.num_classes))
      throw DomainError("expert profile class count does not match the dataset");
    experts.push_back(simulate_superclass_expert(labels, profiles[j], derive_seed(spec.seed, 10 + j)));
  }
  std::vector<int> group;
  group.reserve(labels.size());
  for (int y : labels) group.push_back(profiles.front().superclass_of[static_cast<std::size_t>(y)]);
  return {assemble(features, experts, labels, {}, spec.num_classes), group};
}

SyntheticData make_two_group(const TwoGroupSpec& spec) {
  std::vector<int> superclass_of = spec.superclass_of;
  if (superclass_of.empty()) {
    for (int c = 0; c < spec.num_classes; ++c)
      superclass_of.push_back(spec.num_classes == 2 ? c : (2 * c) / spec.num_classes);
  }
  if (superclass_of.size() != static_cast<std::size_t>(spec.num_classes))
    throw DomainError("super-class map length does not match class count");
  for (int g : superclass_of)
    if (g != 0 && g != 1) throw DomainError("two-group super-class map must use ids 0 and 1");

  const auto labels = balanced_labels(spec.num_samples, spec.num_classes, derive_seed(spec.seed, 0));
  const auto features = gaussian_class_features(labels, spec.feature_dim, spec.separation,
                                                derive_seed(spec.seed, 1));
  std::vector<int> group;
  for (int y : labels) group.push_back(superclass_of[static_cast<std::size_t>(y)]);
  std::vector<std::vector<int>> experts;
  experts.push_back(simulate_two_group_expert(labels, group, spec.err_first, spec.err_second,
                                              spec.num_classes, derive_seed(spec.seed, 10),
                                              std::span<const int>(superclass_of)));
  experts.push_back(simulate_two_group_expert(labels, group, spec.err_second, spec.err_first,
                                              spec.num_classes, derive_seed(spec.seed, 11),
                                              std::span<const int>(superclass_of)));
  return {assemble(features, experts, labels, group, spec.num_classes), group};
}

std::vector<int> ground_truth(const AnnotatedDataset& dataset) {
  std::vector<int> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.samples) {
    if (!s.gt) throw EvaluationError("sample '" + s.id + "' has no ground-truth label");
    out.push_back(*s.gt);
  }
  return out;
}

std::vector<int> expert_column(const AnnotatedDataset& dataset, std::size_t expert) {
  if (expert >= dataset.num_experts()) throw DomainError("expert index out of range");
  std::vector<int> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.samples) out.push_back(s.annotations[expert]);
  return out;
}

}  // namespace cl2dc
