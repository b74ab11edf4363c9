#include <doctest.h>

#include <filesystem>

#include "cl2dc/consensus.hpp"
#include "cl2dc/error.hpp"
#include "cl2dc/synthetic.hpp"
#include "oracles.hpp"

using namespace cl2dc;

namespace {

ClassifierConfig small_classifier() {
  ClassifierConfig cfg;
  cfg.hidden = {16};
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.lr0 = 0.05;
  return cfg;
}

std::vector<ConsensusResult> results_with_alpha(const AnnotatedDataset& ds, const std::vector<double>& alpha) {
  std::vector<ConsensusResult> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back({ds.samples[i].id, 0, alpha[i], {}});
  return out;
}

}  // namespace

TEST_CASE("weighted vote by hand") {
  SUBCASE("annotators only") {
    const auto r = consensus_label(Vector{{0.9, 0.1}}, std::vector<int>{1, 1, 0}, std::vector<double>{1, 1, 1}, 0.0);
    CHECK(r.y_hat == 1);
    CHECK(r.alpha == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.consensus_dist(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("classifier blended with one annotator") {
    const auto r = consensus_label(Vector{{0.6, 0.4}}, std::vector<int>{1}, std::vector<double>{1}, 1.0);
    CHECK(r.consensus_dist(0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(r.consensus_dist(1) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(r.y_hat == 1);
    CHECK(r.alpha == doctest::Approx(0.7).epsilon(1e-15));
  }
  SUBCASE("single annotator without the classifier returns its label") {
    const auto r = consensus_label(Vector{{0.99, 0.01}}, std::vector<int>{1}, std::vector<double>{0.3}, 0.0);
    CHECK(r.y_hat == 1);
    CHECK(r.alpha == 1.0);
  }
  SUBCASE("unanimous annotators and a certain classifier") {
    for (double w0 : {0.0, 0.2, 5.0}) {
      const auto r = consensus_label(Vector{{0.0, 0.0, 1.0}}, std::vector<int>{2, 2}, std::vector<double>{0.7, 0.4}, w0);
      CHECK(r.y_hat == 2);
      CHECK(r.alpha == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
}

TEST_CASE("weighted vote errors") {
  const Vector p{{0.5, 0.5}};
  CHECK_THROWS_AS(consensus_label(p, std::vector<int>{0}, std::vector<double>{0}, 0.0), DomainError);
  CHECK_THROWS_AS(consensus_label(p, std::vector<int>{0}, std::vector<double>{-1}, 1.0), DomainError);
  CHECK_THROWS_AS(consensus_label(p, std::vector<int>{0, 1}, std::vector<double>{1}, 1.0), ShapeError);
  CHECK_THROWS_AS(consensus_label(p, std::vector<int>{2}, std::vector<double>{1}, 1.0), DomainError);
}

TEST_CASE("weighted vote properties") {
  Rng rng(21);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 500; ++trial) {
    Vector logits(4);
    for (Eigen::Index c = 0; c < 4; ++c) logits(c) = 3.0 * unit(rng);
    const Vector p = softmax(logits);
    std::vector<double> w = {unit(rng), unit(rng), unit(rng)};
    const double w0 = unit(rng);
    std::vector<int> m = {label(rng), label(rng), label(rng)};
    const auto r = consensus_label(p, m, w, w0);
    CHECK(r.consensus_dist.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.consensus_dist.minCoeff() >= 0.0);
    CHECK(r.alpha == r.consensus_dist.maxCoeff());

    const double scale = 0.1 + 10.0 * unit(rng);
    std::vector<double> ws = {w[0] * scale, w[1] * scale, w[2] * scale};
    const auto s = consensus_label(p, m, ws, w0 * scale);
    CHECK(s.y_hat == r.y_hat);
    CHECK(s.alpha == doctest::Approx(r.alpha).epsilon(1e-12));
    CHECK((s.consensus_dist - r.consensus_dist).cwiseAbs().maxCoeff() < 1e-12);

    const int c = label(rng);
    const std::vector<int> same = {c, c, c};
    const auto u = consensus_label(p, same, w, w0);
    const double bound = (w[0] + w[1] + w[2]) / (w0 + w[0] + w[1] + w[2]);
    CHECK(u.consensus_dist(c) >= bound - 1e-15);
    if (static_cast<int>(argmax(p)) == c) CHECK(u.y_hat == c);
  }
}

TEST_CASE("unanimous experts everywhere yield their labels") {
  auto data = make_confusion(ConfusionSpec{.num_samples = 120, .annotator_accuracy = {1.0, 1.0, 1.0}});
  const auto out = prepare_consensus(data.dataset, small_classifier(), 3);
  for (std::size_t i = 0; i < data.dataset.size(); ++i)
    CHECK(out.results[i].y_hat == data.dataset.samples[i].annotations[0]);
}

TEST_CASE("consensus beats majority vote on noisy annotators") {
  const auto data = make_confusion(ConfusionSpec{.num_samples = 600, .annotator_accuracy = {0.8, 0.65, 0.55}, .seed = 4});
  const auto out = prepare_consensus(data.dataset, small_classifier(), 4);
  const auto gt = ground_truth(data.dataset);
  std::size_t mv = 0, cons = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    mv += majority_vote(data.dataset.samples[i].annotations) == gt[i];
    cons += out.results[i].y_hat == gt[i];
  }
  CHECK(cons >= mv);
  // The most accurate annotator gets the largest weight.
  CHECK(out.annotator_weights[0] > out.annotator_weights[1]);
  CHECK(out.annotator_weights[1] > out.annotator_weights[2]);
}

TEST_CASE("custom labeller plugs in") {
  const auto data = make_confusion(ConfusionSpec{.num_samples = 60});
  std::size_t calls = 0;
  const ConsensusFn always_zero = [&](const Vector& p, std::span<const int>, std::span<const double>, double) {
    ++calls;
    return ConsensusResult{"", 0, 1.0, Vector::Unit(p.size(), 0)};
  };
  const auto out = prepare_consensus(data.dataset, small_classifier(), 1, always_zero);
  CHECK(calls == 60);
  for (const auto& r : out.results) CHECK(r.y_hat == 0);
  CHECK(out.results[5].id == data.dataset.samples[5].id);
}

TEST_CASE("quality filter") {
  const auto ds = oracle::make_dataset(2, 1, {{0}, {1}, {2}, {3}}, {{0}, {1}, {0}, {1}});
  SUBCASE("all alpha 1 keeps everything") {
    const auto f = filter_by_quality(ds, results_with_alpha(ds, {1, 1, 1, 1}));
    CHECK(f.dataset == ds);
  }
  SUBCASE("all alpha 0.5 leaves nothing") {
    CHECK_THROWS_AS(filter_by_quality(ds, results_with_alpha(ds, {0.5, 0.5, 0.5, 0.5})), ConfigError);
  }
  SUBCASE("mixed alpha keeps the strict survivors") {
    const auto f = filter_by_quality(ds, results_with_alpha(ds, {0.9, 0.5, 0.51, 0.2}));
    REQUIRE(f.dataset.size() == 2);
    CHECK(f.dataset.samples[0].id == "s0");
    CHECK(f.dataset.samples[1].id == "s2");
    CHECK(f.targets.size() == 2);
  }
  SUBCASE("monotone in the threshold") {
    const auto r = results_with_alpha(ds, {0.9, 0.6, 0.7, 0.8});
    std::size_t previous = ds.size() + 1;
    for (double t : {0.0, 0.65, 0.75, 0.85}) {
      const auto n = filter_by_quality(ds, r, t).dataset.size();
      CHECK(n <= previous);
      previous = n;
    }
  }
}

TEST_CASE("consensus file round trip and alignment") {
  const auto ds = oracle::make_dataset(3, 1, {{0}, {1}, {2}}, {{0}, {1}, {2}});
  std::vector<ConsensusResult> r = {{"s2", 2, 0.75, {}}, {"s0", 0, 0.625, {}}, {"s1", 1, 1.0, {}}};
  const auto path = std::filesystem::temp_directory_path() / "cl2dc_unit_consensus.jsonl";
  save_consensus(r, path);
  const auto back = load_consensus(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == 3);
  CHECK(back[0].alpha == 0.75);
  const auto aligned = align_consensus(ds, back);
  CHECK(aligned[0].id == "s0");
  CHECK(aligned[2].y_hat == 2);
  std::vector<ConsensusResult> missing(back.begin(), back.begin() + 2);
  CHECK_THROWS_AS(align_consensus(ds, missing), SchemaError);
}
