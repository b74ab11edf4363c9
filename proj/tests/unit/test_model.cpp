#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cl2dc/error.hpp"
#include "cl2dc/model.hpp"
#include "cl2dc/synthetic.hpp"
#include "oracles.hpp"

using namespace cl2dc;

namespace {

PseudoCleanDataset with_ground_truth(const AnnotatedDataset& ds) { return {ds, ground_truth(ds)}; }

TrainConfig small_train(double epsilon) {
  TrainConfig cfg;
  cfg.epsilon = epsilon;
  cfg.epochs = 40;
  cfg.lr0 = 0.1;
  cfg.gating_hidden = {16};
  cfg.complement_hidden = {16, 16};
  return cfg;
}

DenseNetwork small_classifier(const AnnotatedDataset& ds, std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<std::size_t> hidden = {16};
  return DenseNetwork::mlp(ds.feature_dim(), hidden, ds.num_classes(), rng);
}

}  // namespace

TEST_CASE("option masks") {
  CHECK(OptionMask::all(2).enabled_count() == 5);
  CHECK(OptionMask::ai_only(2).enabled_count() == 1);
  const auto no_l2c = OptionMask::without_complement(2);
  CHECK(no_l2c.flags() == std::vector<bool>{true, true, true, false, false});
  const auto no_l2d = OptionMask::without_defer(2);
  CHECK(no_l2d.flags() == std::vector<bool>{true, false, false, true, true});
  CHECK(OptionMask::single(2, 4).flags() == std::vector<bool>{false, false, false, false, true});
  CHECK_THROWS_AS(OptionMask(std::vector<bool>{false, false, false}).validate(), ConfigError);
  CHECK_THROWS_AS(OptionMask(std::vector<bool>{true, true}), ConfigError);
}

TEST_CASE("decisions and option indices") {
  for (std::size_t o = 0; o < 7; ++o) CHECK(Decision::from_option(o, 3).option(3) == o);
  CHECK(Decision::from_option(0, 2).to_string() == "AI");
  CHECK(Decision::from_option(1, 2).to_string() == "Defer(1)");
  CHECK(Decision::from_option(4, 2).to_string() == "Complement(2)");
  CHECK_THROWS_AS(Decision::from_option(5, 2), DomainError);
}

TEST_CASE("gating forward") {
  SUBCASE("zero network is uniform over enabled options") {
    const auto zero = DenseNetwork::zeros(3, std::vector<std::size_t>{4}, 5);
    const auto s = gating_forward(zero, Vector::Ones(3), OptionMask::all(2));
    CHECK(s.p_ai == doctest::Approx(0.2).epsilon(1e-15));
    for (double v : s.p_complement) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
    const auto half = gating_forward(zero, Vector::Ones(3), OptionMask::without_defer(2));
    CHECK(half.p_ai == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(half.p_defer == std::vector<double>{0.0, 0.0});
  }
  SUBCASE("AI as the only option") {
    Rng rng(1);
    const auto net = DenseNetwork::mlp(3, std::vector<std::size_t>{4}, 5, rng);
    CHECK(gating_forward(net, Vector::Ones(3), OptionMask::ai_only(2)).p_ai == 1.0);
  }
  SUBCASE("hand-set logits match a softmax oracle") {
    Vector logits{{0.5, -1.0, 2.0, 0.0, 1.5}};
    const auto net = oracle::constant_net(2, logits);
    const auto s = gating_forward(net, Vector::Zero(2), OptionMask::all(2)).to_vector();
    const auto want = oracle::softmax({0.5, -1.0, 2.0, 0.0, 1.5});
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(s(i) == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-14));
  }
  SUBCASE("every option masked") {
    const auto zero = DenseNetwork::zeros(3, std::vector<std::size_t>{}, 5);
    CHECK_THROWS_AS(gating_forward(zero, Vector::Ones(3), OptionMask(std::vector<bool>(5, false))), ConfigError);
  }
}

TEST_CASE("selection distributions lie on the simplex") {
  Rng rng(9);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    auto net = DenseNetwork::mlp(3, std::vector<std::size_t>{6}, 7, rng);
    for (auto& l : net.mutable_layers()) l.weight *= 5.0;
    std::vector<bool> flags(7);
    for (std::size_t o = 0; o < 7; ++o) flags[o] = coin(rng) == 1;
    flags[static_cast<std::size_t>(trial % 7)] = true;
    const OptionMask mask(flags);
    const Vector s = gating_forward(net, Vector::Random(3) * 3.0, mask).to_vector();
    CHECK(s.sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s.minCoeff() >= 0.0);
    for (std::size_t o = 0; o < 7; ++o)
      if (!flags[o]) CHECK(s(static_cast<Eigen::Index>(o)) == 0.0);
  }
}

TEST_CASE("complement module") {
  SUBCASE("input encoding") {
    const Vector in = complement_input(Vector{{0.1, 0.2, 0.3, 0.4}}, 2, 1, 3);
    CHECK(in.size() == 11);
    CHECK(in(6) == 1.0);
    CHECK(in.segment(4, 4).sum() == 1.0);
    CHECK(in(9) == 1.0);
    CHECK(in.tail(3).sum() == 1.0);
    CHECK_THROWS_AS(complement_input(Vector{{0.5, 0.5}}, 0, 3, 3), DomainError);
    CHECK_THROWS_AS(complement_input(Vector{{0.5, 0.5}}, 2, 0, 3), DomainError);
  }
  SUBCASE("zero network is uniform") {
    const auto zero = DenseNetwork::zeros(11, std::vector<std::size_t>{5, 5}, 4);
    const Vector out = complement_forward(zero, Vector{{0.7, 0.1, 0.1, 0.1}}, 3, 2, 3);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(out(i) == 0.25);
  }
}

TEST_CASE("complement learns to fuse an uncertain AI with a noisy expert") {
  // AI near 80%, expert perfect on one region and a coin flip on the other.
  // The fused output sees only the AI probabilities and the expert label, so
  // it must learn when to trust which.
  const auto data = make_two_region(TwoRegionSpec{.num_samples = 3000, .seed = 5});
  const auto [train_set, test_set] = split_dataset(data.dataset, {0.7, 0.3}, 5);
  auto cfg = small_train(0.0);
  cfg.mask = OptionMask::single(2, 3);
  cfg.epochs = 80;
  cfg.penalty_mode = PenaltyMode::kPerBatch;
  cfg.batch_size = 64;
  cfg.lr0 = 0.05;
  const auto model = train(with_ground_truth(train_set), cfg, small_classifier(train_set, 5)).params;

  std::size_t ai = 0, expert = 0, fused = 0;
  for (const auto& s : test_set.samples) {
    const Vector x = Eigen::Map<const Vector>(s.features.data(), 2);
    const Vector p = softmax(model.classifier.forward(x));
    ai += static_cast<int>(argmax(p)) == *s.gt;
    expert += s.annotations[0] == *s.gt;
    fused += static_cast<int>(argmax(complement_forward(model.complement, p, s.annotations[0], 0, 2))) == *s.gt;
  }
  CHECK(fused > ai);
  CHECK(fused > expert);
}

TEST_CASE("loss vector") {
  // Zero networks: AI and complement are uniform, so their losses are ln C.
  auto p = oracle::routing_params({0.2, 0.2, 0.2, 0.2, 0.2}, Vector::Zero(2), Vector::Zero(2));
  const Vector l = loss_vector(p, Vector::Zero(2), 1, std::vector<int>{1, 0}, 0.01);
  REQUIRE(l.size() == 5);
  CHECK(l(0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(l(1) == doctest::Approx(-std::log(0.99)).epsilon(1e-14));
  CHECK(l(1) == doctest::Approx(0.01005).epsilon(1e-3));
  CHECK(l(2) == doctest::Approx(-std::log(0.01)).epsilon(1e-14));
  CHECK(l(2) == doctest::Approx(4.60517).epsilon(1e-5));
  CHECK(l(3) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(loss_vector(p, Vector::Zero(2), 1, std::vector<int>{1}, 0.01), ShapeError);
  CHECK_THROWS_AS(loss_vector(p, Vector::Zero(2), 2, std::vector<int>{1, 0}, 0.01), DomainError);
}

TEST_CASE("loss vector entries are finite, non-negative and bounded on defer options") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto t = oracle::tiny_instance(seed);
    const std::size_t m = t.params.num_experts();
    const double c = static_cast<double>(t.params.num_classes());
    for (std::size_t i = 0; i < t.batch.size(); ++i) {
      const Vector l = loss_vector(t.params, t.batch.features.col(static_cast<Eigen::Index>(i)), t.batch.targets[i],
                                   t.batch.annotations[i], t.eta);
      CHECK(l.allFinite());
      CHECK(l.minCoeff() >= 0.0);
      for (std::size_t j = 1; j <= m; ++j)
        CHECK(l(static_cast<Eigen::Index>(j)) <= -std::log(t.eta / (c - 1.0)) + 1e-12);
    }
  }
}

TEST_CASE("smoothed labels") {
  const Vector s = smooth_label(2, 0.03, 4);
  CHECK(s(2) == 0.97);
  CHECK(s(0) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(s.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(smooth_label(0, 0.0, 2), DomainError);
}

TEST_CASE("weighted instance loss") {
  CHECK(weighted_instance_loss(Vector{{1.0 / 3, 1.0 / 3, 1.0 / 3, 0, 0}}, Vector{{3, 6, 9, 100, 100}}) ==
        doctest::Approx(6.0).epsilon(1e-15));
  CHECK(weighted_instance_loss(Vector{{1, 0, 0}}, Vector{{0.7, 2, 3}}) == 0.7);
  CHECK_THROWS_AS(weighted_instance_loss(Vector::Ones(3), Vector::Ones(5)), ShapeError);
  Rng rng(6);
  std::uniform_real_distribution<double> unit(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Vector g(5), l(5);
    for (Eigen::Index i = 0; i < 5; ++i) {
      g(i) = unit(rng);
      l(i) = unit(rng);
    }
    double dot = 0.0;
    for (Eigen::Index i = 0; i < 5; ++i) dot += g(i) * l(i);
    CHECK(weighted_instance_loss(g, l) == doctest::Approx(dot).epsilon(1e-14));
  }
}

TEST_CASE("coverage penalty") {
  CHECK(coverage_penalty(0.5, 0.4) == 0.0);
  CHECK(coverage_penalty(0.3, 0.5) == 0.04000000000000001);
  CHECK(coverage_penalty(0.3, 0.5) == doctest::Approx(0.04).epsilon(1e-15));
  for (double x : {0.0, 0.1, 0.9, 1.0}) CHECK(coverage_penalty(x, 0.0) == 0.0);
  for (double m = 0.0; m <= 1.0; m += 0.01) {
    CHECK((coverage_penalty(m, 0.37) == 0.0) == (m >= 0.37));
    // Continuity: small moves give small changes.
    CHECK(std::abs(coverage_penalty(m + 1e-9, 0.37) - coverage_penalty(m, 0.37)) < 1e-8);
  }
}

TEST_CASE("beta recurrence") {
  PenaltySchedule s(1.0, 1.0);
  CHECK(beta_update(s) == 2.0);
  CHECK(beta_update(s) == 4.0);
  CHECK(beta_update(s) == 7.0);
  CHECK(s.k == 3);
  PenaltySchedule bad(0.0, 1.0);
  CHECK_THROWS_AS(beta_update(bad), DomainError);
  PenaltySchedule negative(-0.5, 1.0);
  CHECK_THROWS_AS(beta_update(negative), DomainError);
}

TEST_CASE("objective gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto t = oracle::tiny_instance(seed);
    Cl2dcGradient grad;
    penalty_objective(t.params, t.batch, t.beta, t.epsilon, t.eta, &grad);
    auto value = [&] { return penalty_objective(t.params, t.batch, t.beta, t.epsilon, t.eta).value; };
    oracle::GradientCheck check;
    oracle::central_difference(t.params.classifier, grad.classifier, value, check);
    oracle::central_difference(t.params.gating, grad.gating, value, check);
    oracle::central_difference(t.params.complement, grad.complement, value, check);
    CHECK(check.checked > 0);
    CHECK(check.max_rel_error < 1e-4);
  }
}

TEST_CASE("objective terms recompute from per-sample quantities") {
  auto t = oracle::tiny_instance(77);
  const auto terms = penalty_objective(t.params, t.batch, t.beta, t.epsilon, t.eta);
  double instance = 0.0, g_ai = 0.0;
  for (std::size_t i = 0; i < t.batch.size(); ++i) {
    const Vector x = t.batch.features.col(static_cast<Eigen::Index>(i));
    const auto s = gating_forward(t.params.gating, x, t.params.mask);
    instance += weighted_instance_loss(s.to_vector(),
                                       loss_vector(t.params, x, t.batch.targets[i], t.batch.annotations[i], t.eta));
    g_ai += s.p_ai;
  }
  const double n = static_cast<double>(t.batch.size());
  CHECK(terms.mean_instance_loss == doctest::Approx(instance / n).epsilon(1e-12));
  CHECK(terms.mean_g_ai == doctest::Approx(g_ai / n).epsilon(1e-12));
  CHECK(terms.penalty == doctest::Approx(coverage_penalty(g_ai / n, t.epsilon)).epsilon(1e-12));
  CHECK(terms.value == doctest::Approx(instance / n + t.beta * terms.penalty).epsilon(1e-12));
}

TEST_CASE("frozen classifier receives no gradient") {
  auto t = oracle::tiny_instance(3);
  Cl2dcGradient grad;
  penalty_objective(t.params, t.batch, t.beta, t.epsilon, t.eta, &grad, true);
  CHECK(grad.classifier.max_abs() == 0.0);
  CHECK(grad.gating.max_abs() > 0.0);
}

TEST_CASE("training log obeys the schedule and recomputes at the first epoch") {
  const auto data = make_two_region(TwoRegionSpec{.num_samples = 300, .seed = 2});
  auto cfg = small_train(0.6);
  cfg.epochs = 12;
  cfg.lambda = 0.3;
  cfg.beta0 = 2.0;
  const auto classifier = small_classifier(data.dataset, 2);
  const auto result = train(with_ground_truth(data.dataset), cfg, classifier);
  REQUIRE(result.log.size() == 12);
  double beta = cfg.beta0;
  for (std::size_t k = 1; k <= result.log.size(); ++k) {
    const auto& e = result.log[k - 1];
    beta = cfg.lambda * (beta + static_cast<double>(k));
    CHECK(e.epoch == static_cast<int>(k));
    CHECK(e.beta == beta);
    CHECK(e.lr == cosine_lr(static_cast<int>(k) - 1, cfg.epochs, cfg.lr0));
    CHECK(e.loss == doctest::Approx(e.mean_instance_loss + e.beta * e.penalty).epsilon(1e-12));
    CHECK(e.penalty == coverage_penalty(e.mean_g_ai, cfg.epsilon));
  }

  // Epoch 1 is evaluated on the freshly initialised parameters.
  Rng rng(cfg.seed);
  const auto initial = Cl2dcParams::create(classifier, 2, cfg.gating_hidden, cfg.complement_hidden,
                                           OptionMask::all(2), rng);
  std::vector<std::size_t> all(data.dataset.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto targets = ground_truth(data.dataset);
  const auto batch = TrainingBatch::gather(data.dataset, targets, all);
  const auto terms = penalty_objective(initial, batch, result.log[0].beta, cfg.epsilon, cfg.eta);
  CHECK(result.log[0].loss == doctest::Approx(terms.value).epsilon(1e-12));
  CHECK(result.log[0].mean_g_ai == doctest::Approx(terms.mean_g_ai).epsilon(1e-12));
}

TEST_CASE("training is deterministic") {
  const auto data = make_two_region(TwoRegionSpec{.num_samples = 200, .seed = 3});
  auto cfg = small_train(0.4);
  cfg.epochs = 5;
  cfg.penalty_mode = PenaltyMode::kPerBatch;
  cfg.batch_size = 32;
  const auto a = train(with_ground_truth(data.dataset), cfg, small_classifier(data.dataset, 1));
  const auto b = train(with_ground_truth(data.dataset), cfg, small_classifier(data.dataset, 1));
  CHECK(a.params == b.params);
}

TEST_CASE("full coverage target drives the gate to AI") {
  const auto data = make_two_region(TwoRegionSpec{.num_samples = 400, .seed = 4});
  auto cfg = small_train(1.0);
  cfg.lambda = 0.1;
  cfg.penalty_mode = PenaltyMode::kPerBatch;
  cfg.batch_size = 64;
  const auto result = train(with_ground_truth(data.dataset), cfg, small_classifier(data.dataset, 4));
  CHECK(result.log.back().mean_g_ai >= 0.9);
}

TEST_CASE("perfect experts and a weak AI pull routing away from AI") {
  // Features carry no class signal; both experts are always right.
  auto data = make_two_region(TwoRegionSpec{.num_samples = 400, .class_separation = 0.0, .off_region_error = 0.0, .seed = 6});
  auto cfg = small_train(0.0);
  cfg.penalty_mode = PenaltyMode::kPerBatch;
  cfg.batch_size = 32;
  const auto result = train(with_ground_truth(data.dataset), cfg, small_classifier(data.dataset, 6));
  std::size_t non_ai = 0;
  for (const auto& s : data.dataset.samples) {
    const auto p = infer(result.params, Eigen::Map<const Vector>(s.features.data(), 2), s.annotations);
    non_ai += p.decision.kind != OptionKind::kAi;
  }
  CHECK(static_cast<double>(non_ai) >= 0.9 * static_cast<double>(data.dataset.size()));
}

TEST_CASE("AI-only mask keeps the gate on AI throughout") {
  const auto data = make_two_region(TwoRegionSpec{.num_samples = 200, .seed = 8});
  auto cfg = small_train(0.5);
  cfg.epochs = 10;
  cfg.mask = OptionMask::ai_only(2);
  const auto result = train(with_ground_truth(data.dataset), cfg, small_classifier(data.dataset, 8));
  for (const auto& e : result.log) {
    CHECK(e.mean_g_ai == 1.0);
    CHECK(e.hard_coverage == 1.0);
  }
}

TEST_CASE("training errors") {
  const auto data = make_two_region(TwoRegionSpec{.num_samples = 100});
  const auto clean = with_ground_truth(data.dataset);
  auto cfg = small_train(0.5);
  SUBCASE("bad epsilon") {
    cfg.epsilon = 1.5;
    CHECK_THROWS_AS(train(clean, cfg, small_classifier(data.dataset, 1)), ConfigError);
  }
  SUBCASE("empty dataset") {
    PseudoCleanDataset empty{AnnotatedDataset{{}, data.dataset.schema}, {}};
    CHECK_THROWS_AS(train(empty, cfg, small_classifier(data.dataset, 1)), ConfigError);
  }
  SUBCASE("classifier of the wrong shape") {
    Rng rng(1);
    CHECK_THROWS_AS(train(clean, cfg, DenseNetwork::mlp(3, std::vector<std::size_t>{}, 2, rng)), ShapeError);
  }
  SUBCASE("divergence") {
    cfg.lr0 = 1e300;
    cfg.epochs = 3;
    CHECK_THROWS_AS(train(clean, cfg, small_classifier(data.dataset, 1)), TrainingError);
  }
}

TEST_CASE("routing examples reach their expected decisions") {
  // Complement favours class 0; AI favours class 1.
  const Vector ai{{0.0, 2.0}};
  const Vector fused{{3.0, 0.0}};
  SUBCASE("Complement(2)") {
    const auto p = oracle::routing_params({0.40, 0.00, 0.01, 0.00, 0.59}, ai, fused);
    const auto r = infer(p, Vector::Zero(2), std::vector<int>{1, 1});
    CHECK(r.decision.to_string() == "Complement(2)");
    CHECK(r.label == 0);
  }
  SUBCASE("Defer(1)") {
    const auto p = oracle::routing_params({0.02, 0.98, 0.00, 0.00, 0.00}, ai, fused);
    const auto r = infer(p, Vector::Zero(2), std::vector<int>{1, 0});
    CHECK(r.decision.to_string() == "Defer(1)");
    CHECK(r.label == 1);
  }
  SUBCASE("AI") {
    const auto p = oracle::routing_params({0.80, 0.00, 0.00, 0.00, 0.20}, ai, fused);
    const auto r = infer(p, Vector::Zero(2), std::vector<int>{0, 0});
    CHECK(r.decision.to_string() == "AI");
    CHECK(r.label == 1);
  }
  SUBCASE("missing annotation of the chosen expert") {
    const auto p = oracle::routing_params({0.02, 0.98, 0.00, 0.00, 0.00}, ai, fused);
    CHECK_THROWS_AS(infer(p, Vector::Zero(2), std::vector<int>{kMissingAnnotation, 0}), InferenceError);
    CHECK_THROWS_AS(infer(p, Vector::Zero(2), std::vector<int>{1}), InferenceError);
    CHECK_NOTHROW(infer(p, Vector::Zero(2), std::vector<int>{1, kMissingAnnotation}));
  }
}

TEST_CASE("routing ties go to the lowest option") {
  SelectionDistribution s;
  s.p_ai = 0.4;
  s.p_defer = {0.4, 0.1};
  s.p_complement = {0.05, 0.05};
  CHECK(route(s).kind == OptionKind::kAi);
}

TEST_CASE("shifting every gating logit changes no decision") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto t = oracle::tiny_instance(seed);
    auto shifted = t.params;
    shifted.gating.mutable_layers().back().bias.array() += 3.7 * static_cast<double>(seed) - 30.0;
    for (std::size_t i = 0; i < t.batch.size(); ++i) {
      const Vector x = t.batch.features.col(static_cast<Eigen::Index>(i));
      const auto a = infer(t.params, x, t.batch.annotations[i]);
      const auto b = infer(shifted, x, t.batch.annotations[i]);
      CHECK(a.decision == b.decision);
      CHECK(a.label == b.label);
    }
  }
}
