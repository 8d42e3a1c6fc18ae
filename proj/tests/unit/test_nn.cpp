#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "../support/oracles.hpp"
#include "tempest/errors.hpp"
#include "tempest/nn.hpp"

using namespace tempest;

namespace {

MlpArchitecture arch_of(std::vector<std::size_t> sizes, Activation a = Activation::tanh,
                        OutputHead h = OutputHead::softmax_categorical, double noise = 1.0) {
  MlpArchitecture arch;
  arch.layer_sizes = std::move(sizes);
  arch.activation = a;
  arch.output_head = h;
  arch.noise_variance = noise;
  return arch;
}

}  // namespace

TEST_CASE("architecture validation and parameter count") {
  CHECK(arch_of({2, 4, 2}).parameter_count() == 3 * 4 + 5 * 2);
  CHECK_THROWS_AS(arch_of({3}).validate(), InvalidArgument);
  CHECK_THROWS_AS(arch_of({3, 0, 2}).validate(), InvalidArgument);
  CHECK_THROWS_AS(arch_of({3, 2}, Activation::tanh, OutputHead::gaussian).validate(), InvalidArgument);
  const auto arch = arch_of({2, 4, 2});
  CHECK_THROWS_AS(ModelParams(arch, Eigen::VectorXd::Zero(5)), InvalidArgument);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(22);
  bad(3) = std::nan("");
  CHECK_THROWS_AS(ModelParams(arch, bad), InvalidArgument);
}

TEST_CASE("identity single layer passes inputs through") {
  const auto arch = arch_of({2, 2}, Activation::identity, OutputHead::softmax_categorical);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(6);
  w(0) = 1.0;  // W(0,0)
  w(3) = 1.0;  // W(1,1)
  const ModelParams p(arch, w);
  const Eigen::VectorXd f = forward(p, Eigen::Vector2d(1.0, 2.0));
  CHECK(f(0) == 1.0);
  CHECK(f(1) == 2.0);
}

TEST_CASE("zero weights give uniform class probabilities") {
  const auto arch = arch_of({3, 5, 4});
  const ModelParams p(arch, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(arch.parameter_count())));
  const Eigen::VectorXd probs = softmax(forward(p, Eigen::Vector3d(0.3, -2.0, 7.0)));
  for (Eigen::Index k = 0; k < 4; ++k) CHECK(probs(k) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("2-4-2 tanh net matches an independent re-implementation") {
  const auto arch = arch_of({2, 4, 2});
  const ModelParams p = initialize_params(arch, 0);
  const Eigen::Vector2d x(0.5, -0.5);
  const Eigen::VectorXd f = forward(p, x);
  const Eigen::VectorXd ref = oracle::naive_forward(arch, p.weights(), x);
  REQUIRE(f.size() == 2);
  for (Eigen::Index k = 0; k < 2; ++k) CHECK(f(k) == doctest::Approx(ref(k)).epsilon(1e-14));
  // Bitwise purity.
  const Eigen::VectorXd again = forward(p, x);
  CHECK((f.array() == again.array()).all());
}

TEST_CASE("forward rejects wrong input length") {
  const ModelParams p = initialize_params(arch_of({2, 3, 2}), 1);
  CHECK_THROWS_AS(forward(p, Eigen::Vector3d(1, 2, 3)), InvalidArgument);
}

TEST_CASE("batched forward agrees with per-row forward") {
  const ModelParams p = initialize_params(arch_of({3, 6, 5, 4}, Activation::relu), 3);
  std::mt19937_64 rng(5);
  Eigen::MatrixXd X(7, 3);
  for (int i = 0; i < 7; ++i) X.row(i) = oracle::random_input(rng, 3).transpose();
  const Eigen::MatrixXd F = forward_batch(p, X);
  for (int i = 0; i < 7; ++i) {
    const Eigen::VectorXd f = forward(p, X.row(i).transpose());
    for (int k = 0; k < 4; ++k) CHECK(F(i, k) == doctest::Approx(f(k)).epsilon(1e-13));
  }
}

TEST_CASE("analytic loss values") {
  SUBCASE("certain correct class has zero nll") {
    const auto arch = arch_of({1, 2}, Activation::identity);
    Eigen::VectorXd w(4);
    w << 0.0, 0.0, 1000.0, 0.0;  // bias favours class 0 overwhelmingly
    const ModelParams p(arch, w);
    CHECK(loss(p, Eigen::VectorXd::Ones(1), 0.0, LossKind::nll_categorical()) == 0.0);
    CHECK(loss(p, Eigen::VectorXd::Ones(1), 1.0, LossKind::nll_categorical()) == doctest::Approx(1000.0));
  }
  SUBCASE("uniform over ten classes") {
    const auto arch = arch_of({2, 10});
    const ModelParams p(arch, Eigen::VectorXd::Zero(30));
    CHECK(loss(p, Eigen::Vector2d(1, 1), 3.0, LossKind::nll_categorical()) ==
          doctest::Approx(std::log(10.0)).epsilon(1e-15));
    CHECK(std::log(10.0) == doctest::Approx(2.302585).epsilon(1e-6));
  }
  SUBCASE("gaussian nll at zero residual") {
    const auto arch = arch_of({1, 1}, Activation::identity, OutputHead::gaussian);
    Eigen::VectorXd w(2);
    w << 2.0, 0.5;
    const ModelParams p(arch, w);
    const double v = loss(p, Eigen::VectorXd::Constant(1, 1.5), 3.5, LossKind::nll_gaussian(1.0));
    CHECK(v == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
    CHECK(v == doctest::Approx(0.918939).epsilon(1e-6));
  }
  SUBCASE("zero-one takes values in {0, 1}") {
    const ModelParams p = initialize_params(arch_of({2, 3, 3}), 4);
    const Eigen::Vector2d x(0.1, 0.2);
    const auto pred = static_cast<double>(argmax(forward(p, x)));
    CHECK(loss(p, x, pred, LossKind::zero_one()) == 0.0);
    CHECK(loss(p, x, std::fmod(pred + 1.0, 3.0), LossKind::zero_one()) == 1.0);
  }
}

TEST_CASE("loss compatibility errors") {
  const ModelParams cls = initialize_params(arch_of({2, 3}), 0);
  CHECK_THROWS_AS(loss(cls, Eigen::Vector2d(0, 0), 0.0, LossKind::nll_gaussian(1.0)), IncompatibleLoss);
  CHECK_THROWS_AS(grad_loss(cls, Eigen::Vector2d(0, 0), 0.0, LossKind::zero_one()), NonDifferentiableLoss);
  CHECK_THROWS_AS(LossKind::nll_gaussian(0.0), InvalidArgument);
  CHECK_THROWS_AS(loss(cls, Eigen::Vector2d(0, 0), 3.0, LossKind::nll_categorical()), InvalidArgument);
}

TEST_CASE("softmax shift invariance and stability") {
  Eigen::VectorXd z(3);
  z << 1000.0, 999.0, -5.0;
  const Eigen::VectorXd p = softmax(z);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isfinite(log_sum_exp(z)));
  const Eigen::VectorXd q = softmax((z.array() + 123.0).matrix());
  CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(argmax(Eigen::Vector3d(1.0, 3.0, 3.0)) == 1);
}

TEST_CASE("linear gaussian gradient is (f - y) x") {
  const auto arch = arch_of({3, 1}, Activation::identity, OutputHead::gaussian);
  Eigen::VectorXd w(4);
  w << 0.3, -1.2, 2.0, 0.7;
  const ModelParams p(arch, w);
  const Eigen::Vector3d x(1.0, 2.0, -0.5);
  const double y = 0.4;
  const double f = w.head(3).dot(x) + w(3);
  const Eigen::VectorXd g = grad_loss(p, x, y, LossKind::nll_gaussian(1.0));
  for (int j = 0; j < 3; ++j) CHECK(g(j) == doctest::Approx((f - y) * x(j)).epsilon(1e-14));
  CHECK(g(3) == doctest::Approx(f - y).epsilon(1e-14));
  CHECK(per_sample_jacobian(p, x).row(0).head(3).transpose().isApprox(x));
}

TEST_CASE("gradient vanishes at an interior minimum") {
  const auto arch = arch_of({1, 1}, Activation::identity, OutputHead::gaussian);
  Eigen::VectorXd w(2);
  w << 2.0, 1.0;
  const ModelParams p(arch, w);
  CHECK(grad_loss(p, Eigen::VectorXd::Constant(1, 3.0), 7.0, LossKind::nll_gaussian(2.0)).norm() < 1e-10);
}

TEST_CASE("2-3-2 gradient matches central differences") {
  const auto arch = arch_of({2, 3, 2});
  const ModelParams p = initialize_params(arch, 11);
  const Eigen::Vector2d x(0.7, -1.1);
  const Eigen::VectorXd g = grad_loss(p, x, 1.0, LossKind::nll_categorical());
  const Eigen::VectorXd fd = oracle::central_difference(
      [&](const Eigen::VectorXd& w) { return loss(p.with_weights(w), x, 1.0, LossKind::nll_categorical()); },
      p.weights());
  for (Eigen::Index j = 0; j < g.size(); ++j) CHECK(oracle::relative_error(g(j), fd(j)) < 1e-6);
}

TEST_CASE("jacobian matches forward-mode oracle and finite differences") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = oracle::random_net(rng, 5, 200);
    const ModelParams p(net.arch, net.w);
    const Eigen::VectorXd x = oracle::random_input(rng, net.arch.input_dim());
    const Eigen::MatrixXd J = per_sample_jacobian(p, x);
    CHECK(oracle::max_relative_error(J, oracle::forward_mode_jacobian(net.arch, net.w, x), 1e-12) < 1e-10);
  }
}

TEST_CASE("dead input to a zero-bias relu net gives zero first-layer jacobian") {
  const auto arch = arch_of({3, 4, 2}, Activation::relu);
  ModelParams p = initialize_params(arch, 2);
  const Eigen::MatrixXd J = per_sample_jacobian(p, Eigen::Vector3d::Zero());
  const auto first = p.layers().front();
  CHECK(J.leftCols(static_cast<Eigen::Index>(first.in * first.out)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mean gradient over a dataset matches the average of per-sample gradients") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const auto net = oracle::random_net(rng, 4, 120);
    const ModelParams p(net.arch, net.w);
    const Dataset data = oracle::random_dataset(rng, net.arch, 9);
    const LossKind kind = likelihood_of(net.arch);
    Eigen::VectorXd ref = Eigen::VectorXd::Zero(net.w.size());
    double ref_loss = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      ref += grad_loss(p, data.input(i), data.target(i), kind) / 9.0;
      ref_loss += loss(p, data.input(i), data.target(i), kind) / 9.0;
    }
    CHECK(oracle::max_relative_error(mean_grad_loss(p, data, kind), ref, 1e-10) < 1e-9);
    CHECK(mean_loss(p, data, kind) == doctest::Approx(ref_loss).epsilon(1e-12));
  }
}

TEST_CASE("initialization is deterministic with zero biases") {
  const auto arch = arch_of({4, 8, 3});
  const auto a = initialize_params(arch, 42);
  const auto b = initialize_params(arch, 42);
  const auto c = initialize_params(arch, 43);
  CHECK((a.weights().array() == b.weights().array()).all());
  CHECK((a.weights() - c.weights()).norm() > 0.0);
  for (const auto& l : a.layers()) {
    for (std::size_t o = 0; o < l.out; ++o) CHECK(a.weights()(static_cast<Eigen::Index>(l.bias_offset + o)) == 0.0);
    for (std::size_t j = l.weight_offset; j < l.bias_offset; ++j)
      CHECK(std::abs(a.weights()(static_cast<Eigen::Index>(j))) <= 1.0 / std::sqrt(static_cast<double>(l.in)));
  }
}
