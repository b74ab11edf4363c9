#include "cl2dc/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "cl2dc/error.hpp"

namespace cl2dc {

using nlohmann::json;

ConsensusResult consensus_label(const Vector& classifier_probs, std::span<const int> annotations,
                                std::span<const double> annotator_weights, double classifier_weight) {
  if (annotations.size() != annotator_weights.size())
    throw ShapeError("one weight per annotation is required");
  const auto num_classes = classifier_probs.size();
  if (num_classes == 0) throw ShapeError("classifier probabilities are empty");
  double total = classifier_weight;
  if (classifier_weight < 0.0) throw DomainError("consensus weights must be non-negative");
  for (double w : annotator_weights) {
    if (w < 0.0) throw DomainError("consensus weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw DomainError("consensus weights are all zero");

  Vector score = classifier_weight * classifier_probs;
  for (std::size_t j = 0; j < annotations.size(); ++j) {
    const int m = annotations[j];
    if (m < 0 || m >= num_classes) throw DomainError("annotation out of class range");
    score(m) += annotator_weights[j];
  }
  ConsensusResult r;
  r.consensus_dist = score / total;
  r.y_hat = static_cast<int>(argmax(r.consensus_dist));
  r.alpha = r.consensus_dist(r.y_hat);
  return r;
}

DenseNetwork make_classifier(const DatasetSchema& schema, std::span<const std::size_t> hidden,
                             std::uint64_t seed) {
  Rng rng(seed);
  return DenseNetwork::mlp(schema.feature_dim, hidden, schema.num_classes, rng);
}

DenseNetwork train_classifier(const AnnotatedDataset& dataset, std::span<const int> labels,
                              const ClassifierConfig& cfg, DenseNetwork net, std::uint64_t seed) {
  if (labels.size() != dataset.size()) throw ShapeError("one label per sample is required");
  if (dataset.size() == 0) throw ConfigError("cannot train a classifier on an empty dataset");
  if (cfg.epochs <= 0 || cfg.batch_size == 0) throw ConfigError("epochs and batch size must be positive");
  const DenseNetwork* nets[] = {&net};
  auto state = OptimizerState::create(cfg.lr0, cfg.momentum, cfg.weight_decay, cfg.epochs, nets);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  NetworkGradient grad;
  std::vector<int> batch_labels;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    state.epoch = epoch;
    const double lr = cosine_lr(epoch - 1, cfg.epochs, cfg.lr0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      batch_labels.clear();
      for (auto i : idx) batch_labels.push_back(labels[i]);
      double loss = 0.0;
      try {
        loss = softmax_cross_entropy_gradient(net, dataset.feature_matrix(idx), batch_labels, grad);
      } catch (const DomainError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch));
      }
      if (!std::isfinite(loss))
        throw TrainingError("classifier loss became non-finite at epoch " + std::to_string(epoch));
      sgd_step(net, grad, state.velocity[0], lr, cfg.momentum, cfg.weight_decay);
    }
  }
  return net;
}

ConsensusOutput prepare_consensus(const AnnotatedDataset& dataset, const ClassifierConfig& cfg,
                                  std::uint64_t seed, const ConsensusFn& labeller) {
  return prepare_consensus(dataset, cfg, make_classifier(dataset.schema, cfg.hidden, seed), seed,
                           labeller);
}

ConsensusOutput prepare_consensus(const AnnotatedDataset& dataset, const ClassifierConfig& cfg,
                                  DenseNetwork init, std::uint64_t seed, const ConsensusFn& labeller) {
  dataset.validate();
  const std::size_t n = dataset.size();
  const std::size_t m = dataset.num_experts();

  // Samples whose vote is tied have no majority label; they are left out of
  // pretraining and weight estimation unless every sample is tied.
  std::vector<int> vote(n);
  std::vector<std::size_t> decided;
  for (std::size_t i = 0; i < n; ++i) {
    vote[i] = majority_vote(dataset.samples[i].annotations);
    if (has_unique_majority(dataset.samples[i].annotations)) decided.push_back(i);
  }
  if (decided.empty()) {
    decided.resize(n);
    std::iota(decided.begin(), decided.end(), std::size_t{0});
  }
  std::vector<int> decided_vote;
  decided_vote.reserve(decided.size());
  for (auto i : decided) decided_vote.push_back(vote[i]);

  ConsensusOutput out;
  out.classifier = train_classifier(dataset.subset(decided), decided_vote, cfg, std::move(init), seed + 1);

  const Matrix probs = softmax_columns(out.classifier.forward_batch(dataset.feature_matrix()));
  std::vector<std::size_t> annotator_hits(m, 0);
  std::size_t classifier_hits = 0;
  for (auto i : decided) {
    for (std::size_t j = 0; j < m; ++j) annotator_hits[j] += dataset.samples[i].annotations[j] == vote[i];
    classifier_hits += static_cast<int>(argmax(probs.col(static_cast<Eigen::Index>(i)))) == vote[i];
  }
  const auto denom = static_cast<double>(decided.size());
  for (auto h : annotator_hits) out.annotator_weights.push_back(static_cast<double>(h) / denom);
  out.classifier_weight = static_cast<double>(classifier_hits) / denom;

  out.results.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = labeller(probs.col(static_cast<Eigen::Index>(i)), dataset.samples[i].annotations,
                      out.annotator_weights, out.classifier_weight);
    r.id = dataset.samples[i].id;
    out.results.push_back(std::move(r));
  }
  return out;
}

PseudoCleanDataset filter_by_quality(const AnnotatedDataset& dataset,
                                     std::span<const ConsensusResult> results, double threshold) {
  if (results.size() != dataset.size()) throw ShapeError("consensus results are not aligned with the dataset");
  PseudoCleanDataset out;
  out.dataset.schema = dataset.schema;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].id != dataset.samples[i].id)
      throw ShapeError("consensus result '" + results[i].id + "' is not aligned with sample '" +
                       dataset.samples[i].id + "'");
    if (results[i].alpha > threshold) {
      out.dataset.samples.push_back(dataset.samples[i]);
      out.targets.push_back(results[i].y_hat);
    }
  }
  if (out.dataset.samples.empty())
    throw ConfigError("no sample has a consensus quality above " + std::to_string(threshold));
  return out;
}

void save_consensus(std::span<const ConsensusResult> results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write consensus file " + path.string());
  for (const auto& r : results) out << json{{"id", r.id}, {"y_hat", r.y_hat}, {"alpha", r.alpha}}.dump() << '\n';
}

std::vector<ConsensusResult> load_consensus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open consensus file " + path.string());
  std::vector<ConsensusResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = json::parse(line);
      ConsensusResult r;
      r.id = obj.at("id").get<std::string>();
      r.y_hat = obj.at("y_hat").get<int>();
      r.alpha = obj.at("alpha").get<double>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed consensus record: ") + e.what(), line_no);
    }
  }
  return out;
}

std::vector<ConsensusResult> align_consensus(const AnnotatedDataset& dataset,
                                             std::span<const ConsensusResult> results) {
  std::unordered_map<std::string, const ConsensusResult*> by_id;
  for (const auto& r : results) by_id[r.id] = &r;
  std::vector<ConsensusResult> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw SchemaError("no consensus label for sample '" + s.id + "'");
    if (it->second->y_hat < 0 || static_cast<std::size_t>(it->second->y_hat) >= dataset.num_classes())
      throw SchemaError("consensus label for sample '" + s.id + "' is out of range");
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace cl2dc
