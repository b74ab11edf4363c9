#include "cl2dc/experts.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>

#include "cl2dc/error.hpp"
#include "cl2dc/numeric.hpp"

namespace cl2dc {

namespace {

void check_rate(double r, const char* name) {
  if (!(r >= 0.0 && r <= 1.0)) throw DomainError(std::string(name) + " must lie in [0, 1]");
}

std::map<int, std::vector<int>> members_by_superclass(std::span<const int> superclass_of) {
  std::map<int, std::vector<int>> members;
  for (std::size_t c = 0; c < superclass_of.size(); ++c)
    members[superclass_of[c]].push_back(static_cast<int>(c));
  return members;
}

int draw_other(const std::vector<int>& pool, int exclude, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 2);
  std::size_t k = pick(rng);
  // Skip over the excluded entry so every other member is equally likely.
  auto pos = static_cast<std::size_t>(std::find(pool.begin(), pool.end(), exclude) - pool.begin());
  if (k >= pos) ++k;
  return pool[k];
}

}  // namespace

void ExpertProfile::validate() const {
  if (superclass_of.empty()) throw DomainError("expert profile has no classes");
  check_rate(error_rate_weak, "error_rate_weak");
  std::set<int> existing(superclass_of.begin(), superclass_of.end());
  for (int s : strong_superclasses)
    if (!existing.count(s))
      throw DomainError("strong super-class " + std::to_string(s) + " does not exist");
}

std::vector<int> simulate_superclass_expert(std::span<const int> gt_labels,
                                            const ExpertProfile& profile, std::uint64_t seed) {
  profile.validate();
  const int num_classes = static_cast<int>(profile.superclass_of.size());
  const auto members = members_by_superclass(profile.superclass_of);
  std::vector<int> all(static_cast<std::size_t>(num_classes));
  std::iota(all.begin(), all.end(), 0);

  if (profile.flip_within_superclass && profile.error_rate_weak > 0.0) {
    for (const auto& [sc, cls] : members)
      if (!profile.strong_superclasses.count(sc) && cls.size() < 2)
        throw DomainError("super-class " + std::to_string(sc) +
                          " has a single class; cannot flip within it");
  }

  Rng rng(seed);
  std::bernoulli_distribution err(profile.error_rate_weak);
  std::vector<int> out;
  out.reserve(gt_labels.size());
  for (int y : gt_labels) {
    if (y < 0 || y >= num_classes) throw DomainError("ground-truth label out of range");
    const int sc = profile.superclass_of[static_cast<std::size_t>(y)];
    if (profile.strong_superclasses.count(sc) || !err(rng)) {
      out.push_back(y);
      continue;
    }
    const auto& pool = profile.flip_within_superclass ? members.at(sc) : all;
    out.push_back(draw_other(pool, y, rng));
  }
  return out;
}

std::vector<int> simulate_two_group_expert(std::span<const int> gt_labels,
                                           std::span<const int> sample_group, double err_a,
                                           double err_b, int num_classes, std::uint64_t seed,
                                           std::optional<std::span<const int>> superclass_of) {
  check_rate(err_a, "err_A");
  check_rate(err_b, "err_B");
  if (num_classes < 2) throw DomainError("need at least two classes");
  if (gt_labels.size() != sample_group.size())
    throw ShapeError("group assignment length does not match label count");
  if (superclass_of && superclass_of->size() != static_cast<std::size_t>(num_classes))
    throw ShapeError("super-class map length does not match class count");

  std::vector<int> all(static_cast<std::size_t>(num_classes));
  std::iota(all.begin(), all.end(), 0);
  std::map<int, std::vector<int>> members;
  if (superclass_of) members = members_by_superclass(*superclass_of);

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> out;
  out.reserve(gt_labels.size());
  for (std::size_t i = 0; i < gt_labels.size(); ++i) {
    const int y = gt_labels[i];
    if (y < 0 || y >= num_classes) throw DomainError("ground-truth label out of range");
    const int g = sample_group[i];
    if (g != 0 && g != 1) throw DomainError("sample group must be 0 or 1");
    const double rate = g == 0 ? err_a : err_b;
    if (unit(rng) >= rate) {
      out.push_back(y);
      continue;
    }
    const std::vector<int>* pool = &all;
    if (superclass_of) {
      const auto& same = members.at((*superclass_of)[static_cast<std::size_t>(y)]);
      if (same.size() >= 2) pool = &same;
    }
    out.push_back(draw_other(*pool, y, rng));
  }
  return out;
}

double expert_empirical_accuracy(std::span<const int> annotations, std::span<const int> reference) {
  if (annotations.size() != reference.size())
    throw ShapeError("annotation and reference lengths differ");
  if (annotations.empty()) throw ShapeError("accuracy of an empty annotation list");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < annotations.size(); ++i) hits += annotations[i] == reference[i];
  return static_cast<double>(hits) / static_cast<double>(annotations.size());
}

std::vector<int> contiguous_superclasses(int num_classes, int classes_per_superclass) {
  if (num_classes <= 0 || classes_per_superclass <= 0)
    throw DomainError("class counts must be positive");
  std::vector<int> out(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) out[static_cast<std::size_t>(c)] = c / classes_per_superclass;
  return out;
}

std::vector<ExpertProfile> superclass_expert_pool(std::span<const int> superclass_of,
                                                  int num_experts, double error_rate_weak,
                                                  std::uint64_t seed) {
  if (num_experts <= 0) throw DomainError("need at least one expert");
  std::set<int> ids(superclass_of.begin(), superclass_of.end());
  std::vector<int> supers(ids.begin(), ids.end());
  const int s = static_cast<int>(supers.size());

  std::vector<ExpertProfile> pool;
  auto make = [&](std::set<int> strong) {
    ExpertProfile p;
    p.superclass_of.assign(superclass_of.begin(), superclass_of.end());
    p.strong_superclasses = std::move(strong);
    p.error_rate_weak = error_rate_weak;
    p.flip_within_superclass = true;
    return p;
  };

  // The first three strong sets partition the super-classes.
  const int first = std::min(num_experts, 3);
  const int base = s / 3;
  const int extra = s % 3;
  int start = 0;
  for (int e = 0; e < first; ++e) {
    const int len = base + (e < extra ? 1 : 0);
    std::set<int> strong;
    for (int k = start; k < start + len && k < s; ++k) strong.insert(supers[static_cast<std::size_t>(k)]);
    start += len;
    pool.push_back(make(std::move(strong)));
  }

  Rng rng(seed);
  for (int e = first; e < num_experts; ++e) {
    std::uniform_int_distribution<int> size_pick(6, 7);
    const int len = std::min(size_pick(rng), s);
    std::vector<int> shuffled = supers;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    pool.push_back(make(std::set<int>(shuffled.begin(), shuffled.begin() + len)));
  }
  return pool;
}

}  // namespace cl2dc
