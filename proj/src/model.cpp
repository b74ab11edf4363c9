#include "cl2dc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "cl2dc/error.hpp"

namespace cl2dc {

// ---------------------------------------------------------------------------
// Options and selection distributions

OptionMask::OptionMask(std::vector<bool> enabled) : enabled_(std::move(enabled)) {
  if (enabled_.empty() || enabled_.size() % 2 == 0)
    throw ConfigError("option mask must have 2M + 1 entries");
}

OptionMask OptionMask::all(std::size_t num_experts) {
  return OptionMask(std::vector<bool>(2 * num_experts + 1, true));
}

OptionMask OptionMask::ai_only(std::size_t num_experts) { return single(num_experts, 0); }

OptionMask OptionMask::without_complement(std::size_t num_experts) {
  std::vector<bool> f(2 * num_experts + 1, true);
  for (std::size_t j = 0; j < num_experts; ++j) f[1 + num_experts + j] = false;
  return OptionMask(std::move(f));
}

OptionMask OptionMask::without_defer(std::size_t num_experts) {
  std::vector<bool> f(2 * num_experts + 1, true);
  for (std::size_t j = 0; j < num_experts; ++j) f[1 + j] = false;
  return OptionMask(std::move(f));
}

OptionMask OptionMask::single(std::size_t num_experts, std::size_t option) {
  std::vector<bool> f(2 * num_experts + 1, false);
  f.at(option) = true;
  return OptionMask(std::move(f));
}

std::size_t OptionMask::enabled_count() const {
  return static_cast<std::size_t>(std::count(enabled_.begin(), enabled_.end(), true));
}

void OptionMask::validate() const {
  if (enabled_.empty()) throw ConfigError("option mask is empty");
  if (enabled_count() == 0) throw ConfigError("every gating option is disabled");
}

SelectionDistribution SelectionDistribution::from_vector(const Vector& probs) {
  if (probs.size() < 3 || probs.size() % 2 == 0)
    throw ShapeError("selection vector must have 2M + 1 entries");
  const auto m = static_cast<std::size_t>((probs.size() - 1) / 2);
  SelectionDistribution s;
  s.p_ai = probs(0);
  for (std::size_t j = 0; j < m; ++j) {
    s.p_defer.push_back(probs(static_cast<Eigen::Index>(1 + j)));
    s.p_complement.push_back(probs(static_cast<Eigen::Index>(1 + m + j)));
  }
  return s;
}

Vector SelectionDistribution::to_vector() const {
  const std::size_t m = p_defer.size();
  Vector v(static_cast<Eigen::Index>(2 * m + 1));
  v(0) = p_ai;
  for (std::size_t j = 0; j < m; ++j) {
    v(static_cast<Eigen::Index>(1 + j)) = p_defer[j];
    v(static_cast<Eigen::Index>(1 + m + j)) = p_complement.at(j);
  }
  return v;
}

Decision Decision::from_option(std::size_t option, std::size_t num_experts) {
  if (option > 2 * num_experts) throw DomainError("option index out of range");
  if (option == 0) return {OptionKind::kAi, 0};
  if (option <= num_experts) return {OptionKind::kDefer, option - 1};
  return {OptionKind::kComplement, option - 1 - num_experts};
}

std::size_t Decision::option(std::size_t num_experts) const {
  switch (kind) {
    case OptionKind::kAi:
      return 0;
    case OptionKind::kDefer:
      return 1 + expert;
    case OptionKind::kComplement:
      return 1 + num_experts + expert;
  }
  return 0;
}

std::string Decision::to_string() const {
  switch (kind) {
    case OptionKind::kAi:
      return "AI";
    case OptionKind::kDefer:
      return "Defer(" + std::to_string(expert + 1) + ")";
    case OptionKind::kComplement:
      return "Complement(" + std::to_string(expert + 1) + ")";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Parameters

void Cl2dcParams::validate() const {
  mask.validate();
  const std::size_t c = num_classes();
  const std::size_t m = num_experts();
  if (c < 2) throw ShapeError("classifier must emit at least two classes");
  if (gating.input_dim() != classifier.input_dim())
    throw ShapeError("gating and classifier must consume the same features");
  if (gating.output_dim() != 2 * m + 1) throw ShapeError("gating must emit exactly 2M + 1 logits");
  if (complement.input_dim() != 2 * c + m) throw ShapeError("complement input must have C + C + M entries");
  if (complement.output_dim() != c) throw ShapeError("complement must emit C logits");
}

Cl2dcParams Cl2dcParams::create(DenseNetwork classifier, std::size_t num_experts,
                                std::span<const std::size_t> gating_hidden,
                                std::span<const std::size_t> complement_hidden, OptionMask mask,
                                Rng& rng) {
  if (num_experts == 0) throw ConfigError("need at least one expert");
  Cl2dcParams p;
  const std::size_t f = classifier.input_dim();
  const std::size_t c = classifier.output_dim();
  p.classifier = std::move(classifier);
  p.gating = DenseNetwork::mlp(f, gating_hidden, 2 * num_experts + 1, rng);
  p.complement = DenseNetwork::mlp(2 * c + num_experts, complement_hidden, c, rng);
  p.mask = mask.num_options() == 0 ? OptionMask::all(num_experts) : std::move(mask);
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Forward pieces

namespace {

void apply_mask(Matrix& logits, const OptionMask& mask) {
  if (static_cast<std::size_t>(logits.rows()) != mask.num_options())
    throw ShapeError("gating output does not match the option mask");
  for (std::size_t r = 0; r < mask.num_options(); ++r)
    if (!mask.enabled(r)) logits.row(static_cast<Eigen::Index>(r)).setConstant(-std::numeric_limits<double>::infinity());
}

double defer_loss(int expert_label, int target, double eta, std::size_t num_classes) {
  return cross_entropy(static_cast<std::size_t>(target), smooth_label(expert_label, eta, num_classes));
}

}  // namespace

SelectionDistribution gating_forward(const DenseNetwork& gating, const Vector& x, const OptionMask& mask) {
  mask.validate();
  Matrix logits = gating.forward(x);
  apply_mask(logits, mask);
  return SelectionDistribution::from_vector(softmax(logits.col(0)));
}

Vector complement_input(const Vector& ai_probs, int expert_label, std::size_t expert,
                        std::size_t num_experts) {
  const auto c = ai_probs.size();
  if (expert >= num_experts) throw DomainError("expert index out of range");
  if (expert_label < 0 || expert_label >= c) throw DomainError("expert label out of class range");
  Vector u = Vector::Zero(2 * c + static_cast<Eigen::Index>(num_experts));
  u.head(c) = ai_probs;
  u(c + expert_label) = 1.0;
  u(2 * c + static_cast<Eigen::Index>(expert)) = 1.0;
  return u;
}

Vector complement_forward(const DenseNetwork& complement, const Vector& ai_probs, int expert_label,
                          std::size_t expert, std::size_t num_experts) {
  return softmax(complement.forward(complement_input(ai_probs, expert_label, expert, num_experts)));
}

Vector smooth_label(int label, double eta, std::size_t num_classes) {
  if (num_classes < 2) throw DomainError("smoothing needs at least two classes");
  if (label < 0 || static_cast<std::size_t>(label) >= num_classes) throw DomainError("label out of range");
  if (!(eta > 0.0 && eta < 1.0)) throw DomainError("smoothing eta must lie in (0, 1)");
  Vector q = Vector::Constant(static_cast<Eigen::Index>(num_classes), eta / static_cast<double>(num_classes - 1));
  q(label) = 1.0 - eta;
  return q;
}

Vector loss_vector(const Cl2dcParams& params, const Vector& x, int target,
                   std::span<const int> annotations, double eta) {
  const std::size_t m = params.num_experts();
  const std::size_t c = params.num_classes();
  if (annotations.size() != m) throw ShapeError("one annotation per expert is required");
  if (target < 0 || static_cast<std::size_t>(target) >= c) throw DomainError("target out of class range");
  const Vector p = softmax(params.classifier.forward(x));
  Vector l(static_cast<Eigen::Index>(2 * m + 1));
  l(0) = cross_entropy(static_cast<std::size_t>(target), p);
  for (std::size_t j = 0; j < m; ++j) {
    l(static_cast<Eigen::Index>(1 + j)) = defer_loss(annotations[j], target, eta, c);
    l(static_cast<Eigen::Index>(1 + m + j)) = cross_entropy(
        static_cast<std::size_t>(target), complement_forward(params.complement, p, annotations[j], j, m));
  }
  return l;
}

double weighted_instance_loss(const Vector& selection, const Vector& losses) {
  if (selection.size() != losses.size()) throw ShapeError("selection and loss vectors differ in length");
  double s = 0.0;
  for (Eigen::Index i = 0; i < selection.size(); ++i)
    if (selection(i) != 0.0) s += selection(i) * losses(i);
  return s;
}

double coverage_penalty(double mean_p_ai, double epsilon) {
  const double gap = std::max(0.0, epsilon - mean_p_ai);
  return gap * gap;
}

PenaltySchedule::PenaltySchedule(double lambda_, double beta0_)
    : lambda(lambda_), beta0(beta0_), beta(beta0_), k(0) {}

double beta_update(PenaltySchedule& s) {
  if (!(s.lambda > 0.0)) throw DomainError("penalty lambda must be positive");
  if (!(s.beta0 > 0.0)) throw DomainError("initial beta must be positive");
  s.k += 1;
  s.beta = s.lambda * (s.beta + static_cast<double>(s.k));
  return s.beta;
}

// ---------------------------------------------------------------------------
// Configuration

OptionMask TrainConfig::resolved_mask(std::size_t num_experts) const {
  return mask.num_options() == 0 ? OptionMask::all(num_experts) : mask;
}

void TrainConfig::validate(std::size_t num_experts) const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("eta must lie in (0, 1)");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(lr0 > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (!(beta0 > 0.0)) throw ConfigError("beta0 must be positive");
  const auto m = resolved_mask(num_experts);
  if (m.num_options() != 2 * num_experts + 1) throw ConfigError("option mask size does not match expert count");
  m.validate();
}

// ---------------------------------------------------------------------------
// Penalty objective

TrainingBatch TrainingBatch::gather(const AnnotatedDataset& dataset, std::span<const int> targets,
                                    std::span<const std::size_t> indices) {
  TrainingBatch b;
  b.features = dataset.feature_matrix(indices);
  b.targets.reserve(indices.size());
  b.annotations.reserve(indices.size());
  for (auto i : indices) {
    b.targets.push_back(targets[i]);
    b.annotations.push_back(dataset.samples[i].annotations);
  }
  return b;
}

ObjectiveTerms penalty_objective(const Cl2dcParams& params, const TrainingBatch& batch, double beta,
                                 double epsilon, double eta, Cl2dcGradient* grad, bool freeze_classifier) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw ConfigError("empty training batch");
  if (batch.features.cols() != n || batch.annotations.size() != batch.size())
    throw ShapeError("training batch components disagree in size");
  const std::size_t c = params.num_classes();
  const std::size_t m = params.num_experts();
  const auto ci = static_cast<Eigen::Index>(c);
  const auto mi = static_cast<Eigen::Index>(m);
  const double inv_n = 1.0 / static_cast<double>(n);

  ForwardTape classifier_tape;
  ForwardTape gating_tape;
  const Matrix ai = softmax_columns(params.classifier.forward_batch(batch.features, &classifier_tape));
  Matrix gate_logits = params.gating.forward_batch(batch.features, &gating_tape);
  apply_mask(gate_logits, params.mask);
  const Matrix g = softmax_columns(gate_logits);

  std::vector<ForwardTape> fusion_tapes(m);
  std::vector<Matrix> fused(m);
  for (std::size_t j = 0; j < m; ++j) {
    Matrix u = Matrix::Zero(2 * ci + mi, n);
    u.topRows(ci) = ai;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int label = batch.annotations[static_cast<std::size_t>(i)][j];
      if (label < 0 || static_cast<std::size_t>(label) >= c) throw DomainError("annotation out of class range");
      u(ci + label, i) = 1.0;
      u(2 * ci + static_cast<Eigen::Index>(j), i) = 1.0;
    }
    fused[j] = softmax_columns(params.complement.forward_batch(u, &fusion_tapes[j]));
  }

  Matrix losses(2 * mi + 1, n);
  ObjectiveTerms terms;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = batch.targets[static_cast<std::size_t>(i)];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw DomainError("target out of class range");
    losses(0, i) = cross_entropy(static_cast<std::size_t>(y), ai.col(i));
    for (std::size_t j = 0; j < m; ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      losses(1 + ji, i) = defer_loss(batch.annotations[static_cast<std::size_t>(i)][j], y, eta, c);
      losses(1 + mi + ji, i) = cross_entropy(static_cast<std::size_t>(y), fused[j].col(i));
    }
    terms.mean_instance_loss += weighted_instance_loss(g.col(i), losses.col(i));
    terms.mean_g_ai += g(0, i);
    terms.hard_ai += argmax(g.col(i)) == 0;
  }
  terms.mean_instance_loss *= inv_n;
  terms.mean_g_ai *= inv_n;
  const double gap = std::max(0.0, epsilon - terms.mean_g_ai);
  terms.penalty = gap * gap;
  terms.value = terms.mean_instance_loss + beta * terms.penalty;

  if (!grad) return terms;

  grad->classifier = params.classifier.zero_gradient();
  grad->gating = params.gating.zero_gradient();
  grad->complement = params.complement.zero_gradient();

  // d value / d g: the loss vector over N, plus the penalty on the AI row.
  Matrix dg = losses * inv_n;
  dg.row(0).array() += -2.0 * beta * gap * inv_n;
  Matrix dgate(g.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    // Disabled options have g = 0 and therefore receive no gradient.
    const double inner = g.col(i).dot(dg.col(i).cwiseProduct((g.col(i).array() > 0.0).cast<double>().matrix()));
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      dgate(r, i) = g(r, i) > 0.0 ? g(r, i) * (dg(r, i) - inner) : 0.0;
  }
  params.gating.backward(gating_tape, dgate, grad->gating);

  Matrix dai = Matrix::Zero(ci, n);
  for (std::size_t j = 0; j < m; ++j) {
    const auto row = 1 + mi + static_cast<Eigen::Index>(j);
    Matrix dfused = fused[j];
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = batch.targets[static_cast<std::size_t>(i)];
      if (fused[j](y, i) > kProbabilityFloor) {
        dfused(y, i) -= 1.0;
        dfused.col(i) *= g(row, i) * inv_n;
      } else {
        dfused.col(i).setZero();
      }
    }
    const Matrix du = params.complement.backward(fusion_tapes[j], dfused, grad->complement);
    dai += du.topRows(ci);
  }

  if (!freeze_classifier) {
    Matrix dlogits(ci, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = batch.targets[static_cast<std::size_t>(i)];
      // Softmax Jacobian applied to the gradient arriving through h.
      const double inner = ai.col(i).dot(dai.col(i));
      dlogits.col(i) = ai.col(i).cwiseProduct((dai.col(i).array() - inner).matrix());
      if (ai(y, i) > kProbabilityFloor) {
        Vector direct = ai.col(i);
        direct(y) -= 1.0;
        dlogits.col(i) += g(0, i) * inv_n * direct;
      }
    }
    params.classifier.backward(classifier_tape, dlogits, grad->classifier);
  }
  return terms;
}

// ---------------------------------------------------------------------------
// Training

std::string epoch_log_header() {
  return "epoch,loss,mean_g_ai,beta,penalty,lr,mean_instance_loss,hard_coverage";
}

std::string to_csv(const EpochLog& log) {
  std::ostringstream os;
  os.precision(17);
  os << log.epoch << ',' << log.loss << ',' << log.mean_g_ai << ',' << log.beta << ',' << log.penalty
     << ',' << log.lr << ',' << log.mean_instance_loss << ',' << log.hard_coverage;
  return os.str();
}

TrainResult train(const PseudoCleanDataset& data, const TrainConfig& cfg, DenseNetwork classifier,
                  const EpochCallback& on_epoch) {
  const auto& ds = data.dataset;
  if (ds.size() == 0) throw ConfigError("cannot train on an empty dataset");
  if (data.targets.size() != ds.size()) throw ShapeError("one consensus target per sample is required");
  const std::size_t m = ds.num_experts();
  cfg.validate(m);
  if (classifier.input_dim() != ds.feature_dim() || classifier.output_dim() != ds.num_classes())
    throw ShapeError("pretrained classifier does not match the dataset schema");

  Rng rng(cfg.seed);
  TrainResult result;
  result.params = Cl2dcParams::create(std::move(classifier), m, cfg.gating_hidden, cfg.complement_hidden,
                                      cfg.resolved_mask(m), rng);
  auto& p = result.params;
  const DenseNetwork* nets[] = {&p.classifier, &p.gating, &p.complement};
  auto opt = OptimizerState::create(cfg.lr0, cfg.momentum, cfg.weight_decay, cfg.epochs, nets);
  PenaltySchedule schedule(cfg.lambda, cfg.beta0);

  const std::size_t n = ds.size();
  const bool full_batch = cfg.penalty_mode == PenaltyMode::kFullDataset ||
                          (cfg.penalty_mode == PenaltyMode::kAuto && n <= kFullBatchLimit);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const TrainingBatch everything = full_batch ? TrainingBatch::gather(ds, data.targets, order) : TrainingBatch{};

  auto step = [&](const Cl2dcGradient& grad, double lr) {
    if (!cfg.freeze_classifier)
      sgd_step(p.classifier, grad.classifier, opt.velocity[0], lr, cfg.momentum, cfg.weight_decay);
    sgd_step(p.gating, grad.gating, opt.velocity[1], lr, cfg.momentum, cfg.weight_decay);
    sgd_step(p.complement, grad.complement, opt.velocity[2], lr, cfg.momentum, cfg.weight_decay);
  };

  Cl2dcGradient grad;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.epoch = epoch;
    const double beta = beta_update(schedule);
    const double lr = cosine_lr(epoch - 1, cfg.epochs, cfg.lr0);
    EpochLog log;
    log.epoch = epoch;
    log.beta = beta;
    log.lr = lr;

    double instance_sum = 0.0;
    double g_ai_sum = 0.0;
    std::size_t hard_ai = 0;
    auto run = [&](const TrainingBatch& batch) {
      ObjectiveTerms terms;
      try {
        terms = penalty_objective(p, batch, beta, cfg.epsilon, cfg.eta, &grad, cfg.freeze_classifier);
      } catch (const DomainError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch));
      }
      if (!std::isfinite(terms.value))
        throw TrainingError("training loss became non-finite at epoch " + std::to_string(epoch));
      const auto b = static_cast<double>(batch.size());
      instance_sum += terms.mean_instance_loss * b;
      g_ai_sum += terms.mean_g_ai * b;
      hard_ai += terms.hard_ai;
      try {
        step(grad, lr);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch));
      }
    };

    if (full_batch) {
      run(everything);
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        const std::size_t end = std::min(n, start + cfg.batch_size);
        run(TrainingBatch::gather(ds, data.targets, std::span<const std::size_t>(order.data() + start, end - start)));
      }
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    log.mean_instance_loss = instance_sum * inv_n;
    log.mean_g_ai = g_ai_sum * inv_n;
    log.penalty = coverage_penalty(log.mean_g_ai, cfg.epsilon);
    log.loss = log.mean_instance_loss + beta * log.penalty;
    log.hard_coverage = static_cast<double>(hard_ai) * inv_n;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

Decision route(const SelectionDistribution& selection) {
  return Decision::from_option(argmax(selection.to_vector()), selection.num_experts());
}

Prediction infer(const Cl2dcParams& params, const Vector& x, std::span<const int> annotations) {
  const std::size_t m = params.num_experts();
  if (annotations.size() != m)
    throw InferenceError("expected " + std::to_string(m) + " annotations, got " + std::to_string(annotations.size()));
  Prediction pred;
  pred.selection = gating_forward(params.gating, x, params.mask);
  pred.decision = route(pred.selection);
  if (pred.decision.kind == OptionKind::kAi) {
    pred.label = static_cast<int>(argmax(softmax(params.classifier.forward(x))));
    return pred;
  }
  const std::size_t j = pred.decision.expert;
  if (annotations[j] == kMissingAnnotation)
    throw InferenceError("annotation of expert " + std::to_string(j + 1) + " is required for " +
                         pred.decision.to_string());
  if (pred.decision.kind == OptionKind::kDefer) {
    pred.label = annotations[j];
    return pred;
  }
  const Vector ai = softmax(params.classifier.forward(x));
  pred.label = static_cast<int>(argmax(complement_forward(params.complement, ai, annotations[j], j, m)));
  return pred;
}

}  // namespace cl2dc
