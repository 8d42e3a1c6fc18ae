#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "tempest/data.hpp"
#include "tempest/errors.hpp"
#include "tempest/laplace.hpp"
#include "tempest/metrics.hpp"
#include "tempest/trainer.hpp"

using namespace tempest;

namespace {

Dataset labelled(std::vector<int> labels, std::size_t k) {
  const auto rows = static_cast<Eigen::Index>(labels.size());
  return Dataset::classification(Eigen::MatrixXd::Zero(rows, 1), std::move(labels), k);
}

PredictiveResult with_probs(Eigen::MatrixXd probs) {
  PredictiveResult r;
  r.probs = std::move(probs);
  return r;
}

struct Trained {
  DataSplits splits;
  MapEstimate map;
  CurvatureSummary curvature;
};

Trained trained_blobs() {
  const Dataset data = make_blobs({.n = 500}, 3);
  auto splits = split_dataset(data, {}, 1);
  MlpArchitecture arch;
  arch.layer_sizes = {2, 8, 3};
  TrainConfig c;
  c.epochs = 30;
  auto map = train_map(arch, splits.train, c);
  auto curv = ggn_trace(map.params, splits.train);
  return {std::move(splits), std::move(map), std::move(curv)};
}

}  // namespace

TEST_CASE("perfect one-hot predictions") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(4, 3);
  const std::vector<int> y = {0, 2, 1, 2};
  for (int i = 0; i < 4; ++i) p(i, y[static_cast<std::size_t>(i)]) = 1.0;
  const auto m = evaluate(with_probs(p), labelled(y, 3));
  CHECK(m.zero_one == 0.0);
  CHECK(m.nll == 0.0);
  CHECK(m.ece == 0.0);
}

TEST_CASE("uniform binary predictions on balanced labels") {
  const auto m = evaluate(with_probs(Eigen::MatrixXd::Constant(6, 2, 0.5)), labelled({0, 1, 0, 1, 0, 1}, 2), 15);
  CHECK(m.zero_one == doctest::Approx(0.5));  // ties go to class 0
  CHECK(m.nll == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(m.ece == doctest::Approx(0.0));
}

TEST_CASE("hand-computed ECE with two bins") {
  Eigen::MatrixXd p(4, 2);
  p << 0.9, 0.1,  //
      0.1, 0.9,   //
      0.6, 0.4,   //
      0.4, 0.6;
  // Correctness (1, 0, 1, 1).
  const auto m = evaluate(with_probs(p), labelled({0, 0, 0, 1}, 2), 2);
  CHECK(m.ece == doctest::Approx(0.40).epsilon(1e-12));
  CHECK(m.zero_one == doctest::Approx(0.25));
  CHECK(m.per_bin.size() == 2);
  CHECK(m.per_bin[0].count == 2);
  CHECK(m.per_bin[1].count == 2);
  CHECK(m.per_bin[1].confidence == doctest::Approx(0.9));
  CHECK(m.per_bin[1].accuracy == doctest::Approx(0.5));
  CHECK_THROWS_AS(evaluate(with_probs(p), labelled({0, 0, 0, 1}, 2), 0), InvalidArgument);
}

TEST_CASE("metric triple invariants on random predictions") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 300;
  const int k = 4;
  Eigen::MatrixXd p(n, k);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) p(i, c) = std::pow(u(rng), 3.0);
    p.row(i) /= p.row(i).sum();
    y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % k);
  }
  p(0, y[0]) = 0.0;  // exercises the probability floor
  p.row(0) /= p.row(0).sum();
  const auto m = evaluate(with_probs(p), labelled(y, k));
  CHECK(m.ece >= 0.0);
  CHECK(m.ece <= 1.0);
  CHECK(std::abs(m.ece - ece_from_bins(m.per_bin)) <= 1e-12);
  std::size_t total = 0;
  for (const auto& b : m.per_bin) total += b.count;
  CHECK(total == static_cast<std::size_t>(n));
  CHECK(std::isfinite(m.nll));
  CHECK(m.nll >= -std::log(kProbabilityFloor) / n);

  // Row permutation leaves the triple unchanged.
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd q(n, k);
  std::vector<int> z(n);
  for (int i = 0; i < n; ++i) {
    q.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
    z[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const auto m2 = evaluate(with_probs(q), labelled(z, k));
  CHECK(m2.ece == doctest::Approx(m.ece).epsilon(1e-12));
  CHECK(m2.nll == doctest::Approx(m.nll).epsilon(1e-12));
  CHECK(m2.zero_one == m.zero_one);
}

TEST_CASE("calibration bins cover [1/K, 1]") {
  CHECK(calibration_bin(0.5, 2, 2) == 0);
  CHECK(calibration_bin(0.74, 2, 2) == 0);
  CHECK(calibration_bin(0.76, 2, 2) == 1);
  CHECK(calibration_bin(1.0, 2, 2) == 1);
  CHECK(calibration_bin(1.0 / 3.0, 3, 15) == 0);
}

TEST_CASE("collapsed posterior predictive reproduces the MAP") {
  const auto t = trained_blobs();
  const auto post = fit_tempered_posterior(t.map.params, t.curvature, 1e12, 0.1, PosteriorKind::isotropic);
  const auto pred = posterior_predictive(post, t.splits.test, 1, 3);
  const auto point = point_predictive(t.map.params, t.splits.test);
  CHECK((pred.probs - point.probs).cwiseAbs().maxCoeff() < 1e-6);
  for (Eigen::Index i = 0; i < pred.probs.rows(); ++i) CHECK(pred.probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));

  for (double lambda : {1e10, 1e11, 1e12}) {
    const auto cold = fit_tempered_posterior(t.map.params, t.curvature, lambda, 0.1, PosteriorKind::isotropic);
    CHECK(evaluate(posterior_predictive(cold, t.splits.test, 100, 9), t.splits.test).zero_one ==
          evaluate(point, t.splits.test).zero_one);
  }

  TemperedPosterior degenerate{t.map.params, PosteriorKind::isotropic, 1.0, 0.1, 0.0, {}};
  const auto a = posterior_predictive(degenerate, t.splits.test, 3, 1);
  const auto b = posterior_predictive(degenerate, t.splits.test, 3, 2);
  CHECK((a.probs.array() == b.probs.array()).all());
}

TEST_CASE("Monte Carlo predictive converges and is thread-count independent") {
  const auto t = trained_blobs();
  const auto post = fit_tempered_posterior(t.map.params, t.curvature, 0.01, 1.0, PosteriorKind::isotropic);
  const auto a = posterior_predictive(post, t.splits.test, 1000, 1);
  const auto b = posterior_predictive(post, t.splits.test, 1000, 2);
  CHECK((a.probs - b.probs).cwiseAbs().maxCoeff() < 0.05);
  const auto c = posterior_predictive(post, t.splits.test, 50, 1, 4);
  const auto d = posterior_predictive(post, t.splits.test, 50, 1, 1);
  CHECK((c.probs - d.probs).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK_THROWS_AS(posterior_predictive(post, t.splits.test, 0, 1), InvalidArgument);
}

TEST_CASE("predictive relative entropy") {
  const BlobsSpec spec{.n = 400, .num_classes = 2};
  const Dataset data = make_blobs(spec, 8);
  CHECK(predictive_relative_entropy(with_probs(data.true_conditional()), data) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(std::abs(predictive_relative_entropy(with_probs(data.true_conditional()), data)) < 1e-9);

  Eigen::MatrixXd q(400, 2);
  for (Eigen::Index i = 0; i < 400; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-0.7 * data.inputs()(i, 0) + 0.2));
    q(i, 0) = s;
    q(i, 1) = 1.0 - s;
  }
  // Brute-force per-class summation.
  double expected = 0.0;
  const auto& truth = data.true_conditional();
  for (Eigen::Index i = 0; i < 400; ++i)
    for (Eigen::Index y = 0; y < 2; ++y) expected += truth(i, y) * std::log(truth(i, y) / q(i, y));
  expected /= 400.0;
  CHECK(predictive_relative_entropy(with_probs(q), data) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected >= 0.0);

  const Dataset plain = labelled({0, 1}, 2);
  CHECK_THROWS_AS(predictive_relative_entropy(with_probs(Eigen::MatrixXd::Constant(2, 2, 0.5)), plain), UnsupportedError);
}

TEST_CASE("Jensen chain holds and Gibbs zero-one is an average of per-sample errors") {
  const auto t = trained_blobs();
  const Dataset fresh = make_blobs({.n = 2000}, 77);
  for (double lambda : {1e-3, 1.0, 1e3}) {
    const auto post = fit_tempered_posterior(t.map.params, t.curvature, lambda, 1.0, PosteriorKind::isotropic);
    const auto chain = jensen_chain(post, fresh, 20, 5);
    CHECK(chain.relative_entropy >= 0.0);
    CHECK(chain.relative_entropy <= chain.right_hand_side() + 0.02);

    double manual = 0.0;
    for (std::size_t s = 0; s < 20; ++s) manual += mean_loss(sample_weight(post, 5, s), fresh, LossKind::zero_one());
    CHECK(gibbs_zero_one(post, fresh, 20, 5) == doctest::Approx(manual / 20.0).epsilon(1e-12));
  }
}
