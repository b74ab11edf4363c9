#pragma once

// Synthetic featurised datasets standing in for image backbones: Gaussian
// class-conditional features plus simulated expert annotations.

#include <cstdint>
#include <span>
#include <vector>

#include "cl2dc/dataset.hpp"
#include "cl2dc/experts.hpp"

namespace cl2dc {

/// Binary task with two feature regions. Feature 0 carries the class signal
/// (N(+-class_separation, 1)); feature 1 carries the region
/// (N(+-region_offset, region_spread)). Expert j labels region j perfectly
/// and flips labels on the other region with probability off_region_error.
struct TwoRegionSpec {
  std::size_t num_samples = 4000;
  double class_separation = 0.8416;  // Phi(0.8416) ~ 0.80 Bayes accuracy
  double region_offset = 2.0;
  double region_spread = 0.5;
  double off_region_error = 0.5;
  std::uint64_t seed = 1;
};

/// Balanced C-class task with Gaussian clusters and M annotators whose
/// errors are uniform over the other classes.
struct ConfusionSpec {
  std::size_t num_samples = 600;
  int num_classes = 4;
  std::size_t feature_dim = 4;
  double separation = 2.0;
  std::vector<double> annotator_accuracy = {0.8, 0.65, 0.55};
  std::uint64_t seed = 1;
};

/// CIFAR-100-style task: Gaussian clusters per class, super-class experts.
struct SuperclassSpec {
  std::size_t num_samples = 5000;
  int num_classes = 100;
  int classes_per_superclass = 5;
  std::size_t feature_dim = 32;
  double separation = 3.0;
  int num_experts = 3;
  double error_rate_weak = 0.5;
  std::vector<ExpertProfile> profiles;  // empty: superclass_expert_pool()
  std::uint64_t seed = 1;
};

/// HAM10000-style task: classes grouped into two super-classes; expert j has
/// error rate err_first on super-class 0 and err_second on super-class 1
/// (mirrored for the second expert).
struct TwoGroupSpec {
  std::size_t num_samples = 4000;
  int num_classes = 2;
  std::vector<int> superclass_of;  // empty: identity for binary, halves otherwise
  std::size_t feature_dim = 8;
  double separation = 1.5;
  double err_first = 0.05;
  double err_second = 0.15;
  std::uint64_t seed = 1;
};

struct SyntheticData {
  AnnotatedDataset dataset;
  std::vector<int> group;  // region / super-class group per sample (may be empty)
};

SyntheticData make_two_region(const TwoRegionSpec& spec);
SyntheticData make_confusion(const ConfusionSpec& spec);
SyntheticData make_superclass(const SuperclassSpec& spec);
SyntheticData make_two_group(const TwoGroupSpec& spec);

/// Balanced labels (i mod C) followed by a seeded shuffle.
std::vector<int> balanced_labels(std::size_t n, int num_classes, std::uint64_t seed);

/// Unit-variance Gaussian features around per-class means. Each mean is a
/// seeded random direction scaled to length `separation`.
std::vector<std::vector<double>> gaussian_class_features(std::span<const int> labels,
                                                         std::size_t feature_dim,
                                                         double separation, std::uint64_t seed);

/// Ground-truth labels of a dataset (every sample must carry one).
std::vector<int> ground_truth(const AnnotatedDataset& dataset);
/// Column j of the annotation matrix.
std::vector<int> expert_column(const AnnotatedDataset& dataset, std::size_t expert);

/// Independent stream seed derived from a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace cl2dc
