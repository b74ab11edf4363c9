#include "cl2dc/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "cl2dc/error.hpp"
#include "cl2dc/synthetic.hpp"

namespace cl2dc {

ReferencePolicy reference_policy_from_string(const std::string& text) {
  if (text == "auto") return ReferencePolicy::kAuto;
  if (text == "gt") return ReferencePolicy::kGroundTruth;
  if (text == "majority") return ReferencePolicy::kMajority;
  throw ConfigError("unknown reference policy '" + text + "' (expected auto, gt or majority)");
}

std::string to_string(ReferencePolicy policy) {
  switch (policy) {
    case ReferencePolicy::kAuto:
      return "auto";
    case ReferencePolicy::kGroundTruth:
      return "gt";
    case ReferencePolicy::kMajority:
      return "majority";
  }
  return "auto";
}

int reference_label(const AnnotatedSample& sample, ReferencePolicy policy) {
  if (policy != ReferencePolicy::kMajority && sample.gt) return *sample.gt;
  if (policy == ReferencePolicy::kGroundTruth)
    throw EvaluationError("sample '" + sample.id + "' has no ground-truth label");
  if (sample.annotations.empty() ||
      std::any_of(sample.annotations.begin(), sample.annotations.end(), [](int a) { return a < 0; }))
    throw EvaluationError("sample '" + sample.id + "' has neither ground truth nor complete annotations");
  return majority_vote(sample.annotations);
}

Evaluation evaluate_detailed(const Cl2dcParams& params, const AnnotatedDataset& test,
                             const EvalOptions& options) {
  if (test.size() == 0) throw EvaluationError("empty test set");
  if (test.feature_dim() != params.feature_dim() || test.num_experts() != params.num_experts() ||
      test.num_classes() != params.num_classes())
    throw SchemaError("test set schema does not match the model");
  const std::size_t n = test.size();
  Evaluation ev;
  ev.reference.resize(n);
  for (std::size_t i = 0; i < n; ++i) ev.reference[i] = reference_label(test.samples[i], options.policy);
  ev.predictions.resize(n);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = test.samples[i];
      ev.predictions[i] = infer(params, Eigen::Map<const Vector>(s.features.data(), static_cast<Eigen::Index>(s.features.size())), s.annotations);
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  auto& pt = ev.point;
  pt.epsilon = options.epsilon;
  pt.seed = options.seed;
  pt.option_counts.assign(2 * params.num_experts() + 1, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ++pt.option_counts[ev.predictions[i].decision.option(params.num_experts())];
    correct += ev.predictions[i].label == ev.reference[i];
  }
  pt.coverage = static_cast<double>(pt.option_counts[0]) / static_cast<double>(n);
  pt.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return ev;
}

CurvePoint evaluate(const Cl2dcParams& params, const AnnotatedDataset& test, const EvalOptions& options) {
  return evaluate_detailed(params, test, options).point;
}

double auacc(std::span<const CurvePoint> points) {
  if (points.empty()) throw DomainError("area of an empty curve");
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : points) {
    if (!(p.coverage >= 0.0 && p.coverage <= 1.0)) throw DomainError("coverage outside [0, 1]");
    pts.emplace_back(p.coverage, p.accuracy);
  }
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double area = pts.front().second * pts.front().first;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += 0.5 * (pts[i].second + pts[i - 1].second) * (pts[i].first - pts[i - 1].first);
  area += pts.back().second * (1.0 - pts.back().first);
  return area;
}

CoverageCurve make_curve(std::vector<CurvePoint> points) {
  if (points.empty()) throw DomainError("curve needs at least one point");
  std::stable_sort(points.begin(), points.end(),
                   [](const CurvePoint& a, const CurvePoint& b) { return a.coverage < b.coverage; });
  CoverageCurve curve;
  for (std::size_t i = 0; i < points.size();) {
    std::size_t j = i;
    double acc = 0.0;
    while (j < points.size() && points[j].coverage == points[i].coverage) acc += points[j++].accuracy;
    CurvePoint merged = points[i];
    merged.accuracy = acc / static_cast<double>(j - i);
    curve.points.push_back(std::move(merged));
    i = j;
  }
  curve.auacc = auacc(curve.points);
  return curve;
}

std::vector<double> coverage_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw DomainError("grid step must lie in (0, 1]");
  const auto n = static_cast<int>(std::llround(1.0 / step));
  std::vector<double> grid;
  for (int k = 0; k <= n; ++k) grid.push_back(std::min(1.0, static_cast<double>(k) / static_cast<double>(n)));
  return grid;
}

std::size_t posthoc_ai_count(double coverage, std::size_t n) {
  if (!(coverage >= 0.0 && coverage <= 1.0)) throw DomainError("coverage outside [0, 1]");
  // c * N for c = k / N may land a few ulps above k.
  const double scaled = coverage * static_cast<double>(n);
  const double nearest = std::round(scaled);
  if (std::abs(scaled - nearest) <= 1e-9 * std::max(1.0, scaled)) return static_cast<std::size_t>(nearest);
  return std::min(n, static_cast<std::size_t>(std::ceil(scaled)));
}

CoverageCurve posthoc_curve(std::span<const double> deferral_scores, const std::vector<bool>& ai_correct,
                            const std::vector<bool>& coop_correct, std::span<const double> grid) {
  const std::size_t n = deferral_scores.size();
  if (ai_correct.size() != n || coop_correct.size() != n) throw ShapeError("post-hoc inputs differ in length");
  if (n == 0) throw ShapeError("post-hoc curve of no samples");
  if (grid.empty()) throw DomainError("post-hoc grid is empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return deferral_scores[a] < deferral_scores[b]; });

  // correct_prefix[k]: correctness when the first k of `order` go to AI.
  std::size_t coop_total = 0;
  for (std::size_t i = 0; i < n; ++i) coop_total += coop_correct[i];
  std::vector<std::size_t> correct_prefix(n + 1);
  correct_prefix[0] = coop_total;
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = order[k];
    correct_prefix[k + 1] = correct_prefix[k] + ai_correct[i] - coop_correct[i];
  }

  std::vector<CurvePoint> points;
  for (double c : grid) {
    const std::size_t k = posthoc_ai_count(c, n);
    CurvePoint p;
    p.epsilon = c;
    p.coverage = static_cast<double>(k) / static_cast<double>(n);
    p.accuracy = static_cast<double>(correct_prefix[k]) / static_cast<double>(n);
    p.option_counts = {k, n - k};
    points.push_back(std::move(p));
  }
  return make_curve(std::move(points));
}

PosthocInputs posthoc_inputs(const Cl2dcParams& params, const AnnotatedDataset& test, ReferencePolicy policy) {
  const std::size_t m = params.num_experts();
  PosthocInputs in;
  for (const auto& s : test.samples) {
    const int ref = reference_label(s, policy);
    const Vector x = Eigen::Map<const Vector>(s.features.data(), static_cast<Eigen::Index>(s.features.size()));
    const auto sel = gating_forward(params.gating, x, params.mask);
    const Vector ai = softmax(params.classifier.forward(x));
    in.deferral_scores.push_back(1.0 - sel.p_ai);
    in.ai_correct.push_back(static_cast<int>(argmax(ai)) == ref);

    Vector coop = sel.to_vector();
    coop(0) = -1.0;
    std::size_t best = 0;
    for (std::size_t o = 1; o < 2 * m + 1; ++o)
      if (params.mask.enabled(o) && (best == 0 || coop(static_cast<Eigen::Index>(o)) > coop(static_cast<Eigen::Index>(best)))) best = o;
    if (best == 0) {
      in.coop_correct.push_back(in.ai_correct.back());
      continue;
    }
    const auto d = Decision::from_option(best, m);
    int label = s.annotations.at(d.expert);
    if (d.kind == OptionKind::kComplement)
      label = static_cast<int>(argmax(complement_forward(params.complement, ai, label, d.expert, m)));
    in.coop_correct.push_back(label == ref);
  }
  return in;
}

std::vector<NamedPoint> baselines(const AnnotatedDataset& test, const DenseNetwork& classifier,
                                  double random_defer_p, std::uint64_t seed, ReferencePolicy policy) {
  if (test.size() == 0) throw EvaluationError("empty test set");
  if (!(random_defer_p >= 0.0 && random_defer_p <= 1.0)) throw DomainError("random-defer p must lie in [0, 1]");
  const std::size_t n = test.size();
  const std::size_t m = test.num_experts();
  const std::size_t k = 2 * m + 1;
  std::vector<int> ref(n);
  std::vector<int> ai(n);
  for (std::size_t i = 0; i < n; ++i) {
    ref[i] = reference_label(test.samples[i], policy);
    const auto& f = test.samples[i].features;
    ai[i] = static_cast<int>(argmax(classifier.forward(Eigen::Map<const Vector>(f.data(), static_cast<Eigen::Index>(f.size())))));
  }
  auto point = [&](std::vector<std::size_t> counts, std::size_t correct) {
    CurvePoint p;
    p.seed = seed;
    p.coverage = static_cast<double>(counts[0]) / static_cast<double>(n);
    p.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    p.option_counts = std::move(counts);
    return p;
  };

  std::vector<NamedPoint> out;
  {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += ai[i] == ref[i];
    std::vector<std::size_t> counts(k, 0);
    counts[0] = n;
    out.push_back({"ai-only", point(counts, correct)});
  }
  {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    std::vector<std::size_t> counts(k, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      // p is the probability of keeping the AI decision
      if (unit(rng) < random_defer_p) {
        ++counts[0];
        correct += ai[i] == ref[i];
      } else {
        const std::size_t j = pick(rng);
        ++counts[1 + j];
        correct += test.samples[i].annotations[j] == ref[i];
      }
    }
    out.push_back({"random-defer", point(counts, correct)});
  }
  {
    std::size_t best_j = 0;
    std::size_t best_correct = 0;
    for (std::size_t j = 0; j < m; ++j) {
      std::size_t c = 0;
      for (std::size_t i = 0; i < n; ++i) c += test.samples[i].annotations[j] == ref[i];
      if (c > best_correct || j == 0) {
        best_correct = c;
        best_j = j;
      }
    }
    std::vector<std::size_t> counts(k, 0);
    counts[1 + best_j] = n;
    out.push_back({"best-single-expert", point(counts, best_correct)});
  }
  {
    std::vector<std::size_t> counts(k, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (ai[i] == ref[i]) {
        ++counts[0];
        ++correct;
        continue;
      }
      std::size_t chosen = 0;
      for (std::size_t j = 0; j < m; ++j)
        if (test.samples[i].annotations[j] == ref[i]) {
          chosen = 1 + j;
          break;
        }
      if (chosen) {
        ++counts[chosen];
        ++correct;
      } else {
        ++counts[0];
      }
    }
    out.push_back({"oracle-router", point(counts, correct)});
  }
  return out;
}

SweepResult sweep(const AnnotatedDataset& train_set, const AnnotatedDataset& test_set, const SweepConfig& cfg,
                  const std::function<void(const SweepRun&)>& on_run) {
  if (cfg.epsilons.empty()) throw ConfigError("epsilon list is empty");
  if (cfg.seeds.empty()) throw ConfigError("seed list is empty");

  struct SeedState {
    DenseNetwork classifier;
    PseudoCleanDataset data;
  };
  std::map<std::uint64_t, SeedState> per_seed;
  for (auto seed : cfg.seeds) {
    if (per_seed.count(seed)) continue;
    auto cons = prepare_consensus(train_set, cfg.classifier, seed);
    per_seed.emplace(seed, SeedState{std::move(cons.classifier),
                                     filter_by_quality(train_set, cons.results, cfg.quality_threshold)});
  }

  SweepResult result;
  std::vector<CurvePoint> means;
  for (double eps : cfg.epsilons) {
    CurvePoint mean;
    mean.epsilon = eps;
    for (auto seed : cfg.seeds) {
      const auto& st = per_seed.at(seed);
      TrainConfig tc = cfg.train;
      tc.epsilon = eps;
      tc.seed = seed;
      TrainResult trained;
      try {
        trained = train(st.data, tc, st.classifier);
      } catch (const Error& e) {
        std::ostringstream msg;
        msg << "sweep run epsilon=" << eps << " seed=" << seed << " failed: " << e.what();
        throw TrainingError(msg.str());
      }
      EvalOptions eo;
      eo.policy = cfg.policy;
      eo.epsilon = eps;
      eo.seed = seed;
      const auto ev = evaluate_detailed(trained.params, test_set, eo);
      if (on_run) on_run(SweepRun{eps, seed, trained.params, st.classifier, ev});
      result.runs.push_back(ev.point);
      mean.coverage += ev.point.coverage;
      mean.accuracy += ev.point.accuracy;
      if (mean.option_counts.empty()) mean.option_counts.assign(ev.point.option_counts.size(), 0);
      for (std::size_t o = 0; o < mean.option_counts.size(); ++o) mean.option_counts[o] += ev.point.option_counts[o];
    }
    const double k = static_cast<double>(cfg.seeds.size());
    mean.coverage /= k;
    mean.accuracy /= k;
    means.push_back(std::move(mean));
  }
  result.curve = make_curve(std::move(means));
  return result;
}

// CSV -----------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + s + "'", line);
  }
}

}  // namespace

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> points) {
  out << kCurveHeader << '\n';
  for (const auto& p : points) out << fmt(p.epsilon) << ',' << fmt(p.coverage) << ',' << fmt(p.accuracy) << ',' << p.seed << '\n';
}

void write_summary_csv(std::ostream& out, std::span<const std::pair<std::string, double>> rows) {
  out << kSummaryHeader << '\n';
  for (const auto& [method, value] : rows) out << method << ',' << fmt(value) << '\n';
}

void write_posthoc_csv(std::ostream& out, const CoverageCurve& curve) {
  out << kPosthocHeader << '\n';
  for (const auto& p : curve.points) out << fmt(p.coverage) << ',' << fmt(p.accuracy) << '\n';
}

std::vector<CurvePoint> read_curve_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty curve file", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCurveHeader) throw ParseError("unexpected curve header '" + line + "'", line_no);
  std::vector<CurvePoint> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw ParseError("expected 4 fields", line_no);
    CurvePoint p;
    p.epsilon = parse_double(f[0], line_no);
    p.coverage = parse_double(f[1], line_no);
    p.accuracy = parse_double(f[2], line_no);
    std::uint64_t seed = 0;
    const auto r = std::from_chars(f[3].data(), f[3].data() + f[3].size(), seed);
    if (r.ec != std::errc() || r.ptr != f[3].data() + f[3].size())
      throw ParseError("not a seed: '" + f[3] + "'", line_no);
    p.seed = seed;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace cl2dc
