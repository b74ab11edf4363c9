#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cl2dc/consensus.hpp"
#include "cl2dc/dataset.hpp"
#include "cl2dc/model.hpp"

namespace cl2dc {

/// Where the reference label of a test sample comes from.
enum class ReferencePolicy {
  kAuto,         // ground truth when present, majority vote otherwise
  kGroundTruth,  // ground truth required
  kMajority,     // majority vote of the expert annotations
};

ReferencePolicy reference_policy_from_string(const std::string& text);
std::string to_string(ReferencePolicy policy);

/// Throws EvaluationError when the policy cannot produce a label.
int reference_label(const AnnotatedSample& sample, ReferencePolicy policy);

struct CurvePoint {
  double epsilon = 0.0;
  double coverage = 0.0;  // fraction of samples decided by AI alone
  double accuracy = 0.0;
  std::vector<std::size_t> option_counts;  // per gating option, sums to N
  std::uint64_t seed = 0;
};

struct CoverageCurve {
  std::vector<CurvePoint> points;  // strictly increasing coverage
  double auacc = 0.0;
};

struct EvalOptions {
  ReferencePolicy policy = ReferencePolicy::kAuto;
  unsigned threads = 1;
  double epsilon = 0.0;  // recorded in the CurvePoint
  std::uint64_t seed = 0;
};

struct Evaluation {
  CurvePoint point;
  std::vector<Prediction> predictions;
  std::vector<int> reference;
};

/// Routing inference over a test set. Results do not depend on `threads`.
Evaluation evaluate_detailed(const Cl2dcParams& params, const AnnotatedDataset& test,
                             const EvalOptions& options = {});
CurvePoint evaluate(const Cl2dcParams& params, const AnnotatedDataset& test,
                    const EvalOptions& options = {});

/// Trapezoidal area under accuracy(coverage) on [0, 1]; accuracy is held
/// constant below the lowest and above the highest observed coverage.
double auacc(std::span<const CurvePoint> points);

/// Sorts by coverage, merges points of equal coverage (mean accuracy) and
/// computes the area.
CoverageCurve make_curve(std::vector<CurvePoint> points);

/// Coverage grid 0, step, ..., 1.
std::vector<double> coverage_grid(double step = 0.1);

/// Threshold curve: at coverage c the ceil(c N) samples with the lowest
/// deferral scores (ties by index) are handled by AI, the rest cooperatively.
CoverageCurve posthoc_curve(std::span<const double> deferral_scores, const std::vector<bool>& ai_correct,
                            const std::vector<bool>& coop_correct, std::span<const double> grid);

/// Number of AI-handled samples at coverage c: ceil(c N), robust to the
/// representation error of c.
std::size_t posthoc_ai_count(double coverage, std::size_t n);

struct PosthocInputs {
  std::vector<double> deferral_scores;  // 1 - g_AI
  std::vector<bool> ai_correct;
  std::vector<bool> coop_correct;       // best non-AI option chosen by the gate
};

PosthocInputs posthoc_inputs(const Cl2dcParams& params, const AnnotatedDataset& test,
                             ReferencePolicy policy = ReferencePolicy::kAuto);

struct NamedPoint {
  std::string method;
  CurvePoint point;
};

/// AI-only, random-defer(p), best-single-expert and oracle-router points.
std::vector<NamedPoint> baselines(const AnnotatedDataset& test, const DenseNetwork& classifier,
                                  double random_defer_p = 0.5, std::uint64_t seed = 0,
                                  ReferencePolicy policy = ReferencePolicy::kAuto);

struct SweepConfig {
  std::vector<double> epsilons = {0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  ClassifierConfig classifier;
  TrainConfig train;
  double quality_threshold = 0.5;
  ReferencePolicy policy = ReferencePolicy::kAuto;
};

struct SweepRun {
  double epsilon;
  std::uint64_t seed;
  const Cl2dcParams& params;
  const DenseNetwork& pretrained_classifier;
  const Evaluation& evaluation;
};

struct SweepResult {
  std::vector<CurvePoint> runs;  // epsilon-major, then seed
  CoverageCurve curve;           // per-epsilon means over seeds
};

/// Trains one model per (epsilon, seed) and evaluates it on `test`.
/// Consensus labels are computed once per seed.
SweepResult sweep(const AnnotatedDataset& train_set, const AnnotatedDataset& test_set,
                  const SweepConfig& cfg, const std::function<void(const SweepRun&)>& on_run = {});

// CSV I/O -------------------------------------------------------------------

inline constexpr const char* kCurveHeader = "epsilon,achieved_coverage,accuracy,seed";
inline constexpr const char* kSummaryHeader = "method,auacc";
inline constexpr const char* kPosthocHeader = "coverage,accuracy";

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> points);
void write_summary_csv(std::ostream& out, std::span<const std::pair<std::string, double>> rows);
void write_posthoc_csv(std::ostream& out, const CoverageCurve& curve);
/// Throws ParseError naming the line of the first malformed row.
std::vector<CurvePoint> read_curve_csv(std::istream& in);

}  // namespace cl2dc
