#pragma once

// The cooperative learner: an AI classifier f, a gating model g over
// 2M + 1 options {AI, defer to expert j, complement AI with expert j} and a
// complementary module h that fuses AI probabilities with one expert label.
//
// Option layout everywhere: index 0 is AI alone, 1..M defer to expert
// 1..M, M+1..2M complement with expert 1..M. Expert indices in this API are
// 0-based.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cl2dc/consensus.hpp"
#include "cl2dc/dataset.hpp"
#include "cl2dc/numeric.hpp"

namespace cl2dc {

enum class OptionKind { kAi, kDefer, kComplement };

/// Enabled/disabled flag per gating option.
class OptionMask {
 public:
  OptionMask() = default;
  explicit OptionMask(std::vector<bool> enabled);

  static OptionMask all(std::size_t num_experts);
  static OptionMask ai_only(std::size_t num_experts);
  static OptionMask without_complement(std::size_t num_experts);
  static OptionMask without_defer(std::size_t num_experts);
  static OptionMask single(std::size_t num_experts, std::size_t option);

  std::size_t num_options() const { return enabled_.size(); }
  std::size_t num_experts() const { return enabled_.empty() ? 0 : (enabled_.size() - 1) / 2; }
  bool enabled(std::size_t option) const { return enabled_.at(option); }
  std::size_t enabled_count() const;
  const std::vector<bool>& flags() const { return enabled_; }

  /// Throws ConfigError when every option is disabled.
  void validate() const;

  bool operator==(const OptionMask&) const = default;

 private:
  std::vector<bool> enabled_;
};

/// A point of the (2M)-simplex produced by the gating model.
struct SelectionDistribution {
  double p_ai = 1.0;
  std::vector<double> p_defer;
  std::vector<double> p_complement;

  static SelectionDistribution from_vector(const Vector& probs);
  Vector to_vector() const;
  std::size_t num_experts() const { return p_defer.size(); }
};

struct Decision {
  OptionKind kind = OptionKind::kAi;
  std::size_t expert = 0;  // meaningful for kDefer / kComplement

  static Decision from_option(std::size_t option, std::size_t num_experts);
  std::size_t option(std::size_t num_experts) const;
  std::string to_string() const;  // "AI", "Defer(1)", "Complement(2)" (1-based)

  bool operator==(const Decision&) const = default;
};

struct Cl2dcParams {
  DenseNetwork classifier;  // F -> C
  DenseNetwork gating;      // F -> 2M + 1
  DenseNetwork complement;  // (C + C + M) -> C
  OptionMask mask;

  std::size_t num_classes() const { return classifier.output_dim(); }
  std::size_t num_experts() const { return mask.num_experts(); }
  std::size_t feature_dim() const { return classifier.input_dim(); }

  /// Checks output dimensions and that gating emits exactly 2M + 1 logits.
  void validate() const;

  /// Fresh gating and complement networks around an existing classifier.
  static Cl2dcParams create(DenseNetwork classifier, std::size_t num_experts,
                            std::span<const std::size_t> gating_hidden,
                            std::span<const std::size_t> complement_hidden, OptionMask mask, Rng& rng);

  bool operator==(const Cl2dcParams&) const = default;
};

/// Softmax over the gating logits with disabled options forced to zero.
SelectionDistribution gating_forward(const DenseNetwork& gating, const Vector& x, const OptionMask& mask);

/// concat(ai_probs, onehot(expert_label) over C, onehot(expert) over M).
Vector complement_input(const Vector& ai_probs, int expert_label, std::size_t expert,
                        std::size_t num_experts);

/// Softmax of the complementary module's logits for one (AI, expert) pair.
Vector complement_forward(const DenseNetwork& complement, const Vector& ai_probs, int expert_label,
                          std::size_t expert, std::size_t num_experts);

/// 1 - eta on `label`, eta / (C - 1) elsewhere.
Vector smooth_label(int label, double eta, std::size_t num_classes);

/// Per-option losses [CE(y, f(x)); CE(y, smooth(m_j)); CE(y, h(f(x), m_j, j))].
Vector loss_vector(const Cl2dcParams& params, const Vector& x, int target,
                   std::span<const int> annotations, double eta);

/// g . loss. Throws ShapeError on a length mismatch.
double weighted_instance_loss(const Vector& selection, const Vector& losses);

/// [max(0, epsilon - mean_p_ai)]^2.
double coverage_penalty(double mean_p_ai, double epsilon);

/// beta_k = lambda * (beta_(k-1) + k), advanced once per epoch.
struct PenaltySchedule {
  double lambda = 0.01;
  double beta0 = 1.0;
  double beta = 1.0;  // current beta_k
  int k = 0;

  PenaltySchedule() = default;
  PenaltySchedule(double lambda, double beta0);
};

/// Advances the schedule to k + 1 and returns the new beta.
double beta_update(PenaltySchedule& schedule);

enum class PenaltyMode { kAuto, kFullDataset, kPerBatch };

/// Datasets at or below this size train full-batch in kAuto mode.
inline constexpr std::size_t kFullBatchLimit = 50000;

struct TrainConfig {
  double epsilon = 0.0;  // target coverage
  double eta = 0.01;     // expert-label smoothing
  int epochs = 200;
  std::size_t batch_size = 256;
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lambda = 0.01;
  double beta0 = 1.0;
  std::uint64_t seed = 0;
  OptionMask mask;  // empty: all options
  PenaltyMode penalty_mode = PenaltyMode::kAuto;
  bool freeze_classifier = false;
  std::vector<std::size_t> gating_hidden = {512};
  std::vector<std::size_t> complement_hidden = {512, 512};

  /// Throws ConfigError on invalid values. `num_experts` fixes the mask size.
  void validate(std::size_t num_experts) const;
  OptionMask resolved_mask(std::size_t num_experts) const;
};

/// Column-major batch view used by the penalty objective.
struct TrainingBatch {
  Matrix features;                           // F x B
  std::vector<int> targets;                  // consensus labels
  std::vector<std::vector<int>> annotations; // B x M

  static TrainingBatch gather(const AnnotatedDataset& dataset, std::span<const int> targets,
                              std::span<const std::size_t> indices);
  std::size_t size() const { return targets.size(); }
};

struct Cl2dcGradient {
  NetworkGradient classifier;
  NetworkGradient gating;
  NetworkGradient complement;
};

struct ObjectiveTerms {
  double value = 0.0;               // mean_instance_loss + beta * penalty
  double mean_instance_loss = 0.0;  // mean of g . loss
  double mean_g_ai = 0.0;           // mean AI selection probability
  double penalty = 0.0;
  std::size_t hard_ai = 0;          // samples whose argmax option is AI
};

/// Penalty program over one batch. When `grad` is non-null it receives the
/// exact gradient with respect to every parameter (classifier gradient left
/// at zero when `freeze_classifier`).
ObjectiveTerms penalty_objective(const Cl2dcParams& params, const TrainingBatch& batch, double beta,
                                 double epsilon, double eta, Cl2dcGradient* grad = nullptr,
                                 bool freeze_classifier = false);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double mean_g_ai = 0.0;
  double beta = 0.0;
  double penalty = 0.0;
  double lr = 0.0;
  double mean_instance_loss = 0.0;
  double hard_coverage = 0.0;
};

/// CSV header matching EpochLog::to_csv().
std::string epoch_log_header();
std::string to_csv(const EpochLog& log);

struct TrainResult {
  Cl2dcParams params;  // last-epoch parameters
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Joint training of classifier, gating and complement on consensus targets.
TrainResult train(const PseudoCleanDataset& data, const TrainConfig& cfg, DenseNetwork classifier,
                  const EpochCallback& on_epoch = {});

struct Prediction {
  Decision decision;
  int label = 0;
  SelectionDistribution selection;
};

/// Option with the largest probability, lowest index on ties.
Decision route(const SelectionDistribution& selection);

/// Routing inference for one sample. Throws InferenceError when the chosen
/// expert's annotation is unavailable (missing or kMissingAnnotation).
Prediction infer(const Cl2dcParams& params, const Vector& x, std::span<const int> annotations);

}  // namespace cl2dc
