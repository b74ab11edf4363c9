#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cl2dc/dataset.hpp"
#include "cl2dc/numeric.hpp"

namespace cl2dc {

struct ConsensusResult {
  std::string id;
  int y_hat = 0;
  double alpha = 0.0;     // quality score = max of consensus_dist
  Vector consensus_dist;  // may be empty when read back from a file
};

/// Settings for the supervised classifier (majority-vote pretraining).
struct ClassifierConfig {
  std::vector<std::size_t> hidden = {512};
  int epochs = 200;
  std::size_t batch_size = 256;
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Any labeller with the consensus_label signature may be plugged into
/// prepare_consensus().
using ConsensusFn = std::function<ConsensusResult(const Vector& classifier_probs,
                                                  std::span<const int> annotations,
                                                  std::span<const double> annotator_weights,
                                                  double classifier_weight)>;

/// Weighted vote s_c = w0 p_c + sum_j w_j [m_j == c], normalised by the
/// total weight. Throws DomainError for negative or all-zero weights.
ConsensusResult consensus_label(const Vector& classifier_probs, std::span<const int> annotations,
                                std::span<const double> annotator_weights, double classifier_weight);

/// Trains a softmax classifier on `labels` from `init` with seeded minibatch
/// SGD, momentum, weight decay and a per-epoch cosine learning rate.
DenseNetwork train_classifier(const AnnotatedDataset& dataset, std::span<const int> labels,
                              const ClassifierConfig& cfg, DenseNetwork init, std::uint64_t seed);

/// Fresh classifier network for a dataset schema.
DenseNetwork make_classifier(const DatasetSchema& schema, std::span<const std::size_t> hidden,
                             std::uint64_t seed);

struct ConsensusOutput {
  DenseNetwork classifier;  // theta_0, trained on majority vote
  std::vector<ConsensusResult> results;
  std::vector<double> annotator_weights;
  double classifier_weight = 0.0;
};

/// Trains the classifier on majority-vote labels, estimates annotator and
/// classifier weights as agreement rates with the majority vote, and labels
/// every sample with `labeller`. Samples whose vote is tied carry no
/// majority label and are excluded from pretraining and weight estimation
/// (unless every sample is tied).
ConsensusOutput prepare_consensus(const AnnotatedDataset& dataset, const ClassifierConfig& cfg,
                                  std::uint64_t seed, const ConsensusFn& labeller = consensus_label);

/// Same, starting from an existing classifier instead of a fresh one.
ConsensusOutput prepare_consensus(const AnnotatedDataset& dataset, const ClassifierConfig& cfg,
                                  DenseNetwork init, std::uint64_t seed,
                                  const ConsensusFn& labeller = consensus_label);

/// Training set restricted to samples whose quality score is strictly above
/// the threshold, with the consensus labels as targets.
struct PseudoCleanDataset {
  AnnotatedDataset dataset;
  std::vector<int> targets;
};

PseudoCleanDataset filter_by_quality(const AnnotatedDataset& dataset,
                                     std::span<const ConsensusResult> results, double threshold = 0.5);

/// JSON Lines {"id", "y_hat", "alpha"}.
void save_consensus(std::span<const ConsensusResult> results, const std::filesystem::path& path);
std::vector<ConsensusResult> load_consensus(const std::filesystem::path& path);

/// Reorders `results` to match the sample order of `dataset`. Throws
/// SchemaError when an id is missing.
std::vector<ConsensusResult> align_consensus(const AnnotatedDataset& dataset,
                                             std::span<const ConsensusResult> results);

}  // namespace cl2dc
