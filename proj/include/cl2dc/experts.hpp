#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace cl2dc {

/// Synthetic annotator that is perfect on a set of super-classes and noisy
/// elsewhere.
struct ExpertProfile {
  std::vector<int> superclass_of;      // class -> super-class id
  std::set<int> strong_superclasses;   // super-classes labelled perfectly
  double error_rate_weak = 0.5;        // mislabel probability elsewhere
  bool flip_within_superclass = true;  // errors stay inside the super-class

  void validate() const;
};

/// Keeps labels from strong super-classes; elsewhere keeps them with
/// probability 1 - error_rate_weak and otherwise replaces them by a uniformly
/// drawn different class (of the same super-class when flipping within).
std::vector<int> simulate_superclass_expert(std::span<const int> gt_labels,
                                            const ExpertProfile& profile, std::uint64_t seed);

/// Annotator with group-dependent error rates. `sample_group` holds 0 (group
/// A) or 1 (group B) per sample. An erroneous label is drawn uniformly from
/// the other classes of the true label's super-class when `superclass_of` is
/// given and that super-class has at least two members; otherwise from all
/// other classes (so a binary task is flipped).
std::vector<int> simulate_two_group_expert(std::span<const int> gt_labels,
                                           std::span<const int> sample_group, double err_a,
                                           double err_b, int num_classes, std::uint64_t seed,
                                           std::optional<std::span<const int>> superclass_of = {});

/// Fraction of positions where `annotations` equals `reference`.
double expert_empirical_accuracy(std::span<const int> annotations, std::span<const int> reference);

/// Contiguous super-class map: class c belongs to super-class c / classes_per_superclass.
std::vector<int> contiguous_superclasses(int num_classes, int classes_per_superclass);

/// Profiles for a CIFAR-100-style pool. The first three experts split the
/// super-classes into disjoint strong sets of sizes 7, 7, 6 that together
/// cover every super-class; further experts get random strong sets of size
/// 6 or 7.
std::vector<ExpertProfile> superclass_expert_pool(std::span<const int> superclass_of,
                                                  int num_experts, double error_rate_weak,
                                                  std::uint64_t seed);

}  // namespace cl2dc
