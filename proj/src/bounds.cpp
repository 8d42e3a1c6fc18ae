#include "tempest/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tempest/errors.hpp"
#include "tempest/metrics.hpp"
#include "tempest/rng.hpp"

namespace tempest {

namespace {

void check_lambda_delta(double lambda, double delta) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be positive and finite");
  if (!(delta > 0.0 && delta <= 1.0)) throw InvalidArgument("delta must lie in (0, 1]");
}

double catoni_argument(const BoundReport& r) {
  return r.empirical_risk + (r.kl + std::log(1.0 / r.delta)) / (r.lambda * static_cast<double>(r.n));
}

}  // namespace

std::string to_string(BoundKind k) {
  switch (k) {
    case BoundKind::catoni: return "catoni";
    case BoundKind::alquier: return "alquier";
    case BoundKind::proposition: return "proposition";
  }
  return "?";
}

double catoni_inverse(double lambda, double x) {
  if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  // expm1 keeps both tails accurate: tiny lambda -> x, huge lambda -> 1 for x > 0.
  return std::expm1(-lambda * x) / std::expm1(-lambda);
}

BoundReport catoni_bound(double empirical_zero_one, double kl, std::size_t n, double lambda, double delta) {
  check_lambda_delta(lambda, delta);
  if (!(empirical_zero_one >= 0.0 && empirical_zero_one <= 1.0))
    throw InvalidArgument("empirical zero-one risk must lie in [0, 1]");
  if (!(kl >= 0.0)) throw InvalidArgument("KL must be nonnegative");
  if (n < 1) throw InvalidArgument("sample count must be positive");
  BoundReport r;
  r.kind = BoundKind::catoni;
  r.lambda = lambda;
  r.delta = delta;
  r.empirical_risk = empirical_zero_one;
  r.kl = kl;
  r.n = n;
  r.moment_or_complexity = (kl + std::log(1.0 / delta)) / (lambda * static_cast<double>(n));
  r.value = catoni_inverse(lambda, catoni_argument(r));
  r.vacuous = r.value > 1.0;
  return r;
}

BoundReport alquier_bound(double empirical_risk, double kl, std::size_t n, double lambda, double delta,
                          double loss_min, double loss_max) {
  check_lambda_delta(lambda, delta);
  if (!std::isfinite(loss_min) || !std::isfinite(loss_max))
    throw UnsupportedError("the moment term needs a bounded loss; declare a finite loss range");
  if (!(loss_max > loss_min)) throw InvalidArgument("loss range must satisfy min < max");
  if (!(kl >= 0.0)) throw InvalidArgument("KL must be nonnegative");
  if (n < 1) throw InvalidArgument("sample count must be positive");
  const double nn = static_cast<double>(n);
  const double range = loss_max - loss_min;
  BoundReport r;
  r.kind = BoundKind::alquier;
  r.lambda = lambda;
  r.delta = delta;
  r.empirical_risk = empirical_risk;
  r.kl = kl;
  r.n = n;
  r.loss_min = loss_min;
  r.loss_max = loss_max;
  r.moment_or_complexity = lambda * lambda * nn * range * range / 8.0;
  r.value = reassemble(r);
  r.vacuous = r.value > loss_max;
  return r;
}

double reassemble(const BoundReport& r) {
  switch (r.kind) {
    case BoundKind::catoni: return catoni_inverse(r.lambda, catoni_argument(r));
    case BoundKind::alquier:
      return r.empirical_risk +
             (r.kl + std::log(1.0 / r.delta) + r.moment_or_complexity) / (r.lambda * static_cast<double>(r.n));
    case BoundKind::proposition: return r.terms.sum();
  }
  return r.value;
}

std::vector<BoundReport> evaluate_bound_pipeline(const ModelParams& map, const CurvatureSummary& curvature,
                                                 const Dataset& validation, std::span<const double> lambda_grid,
                                                 double prior_variance, double delta,
                                                 const BoundPipelineOptions& options) {
  if (lambda_grid.empty()) throw InvalidArgument("lambda grid is empty");
  if (curvature.n != validation.size())
    throw InvalidArgument("curvature must be fit on the bound-evaluation split");
  std::vector<double> grid(lambda_grid.begin(), lambda_grid.end());
  std::sort(grid.begin(), grid.end());
  std::vector<BoundReport> out;
  out.reserve(grid.size());
  for (double lambda : grid) {
    const auto post = fit_tempered_posterior(map, curvature, lambda, prior_variance, PosteriorKind::isotropic);
    // Posterior mean equals the prior mean, so the KL has no mean-distance term.
    const double kl = gaussian_kl(post, map.weights(), prior_variance);
    const double emp = gibbs_zero_one(post, validation, options.num_mc_samples, options.seed);
    out.push_back(catoni_bound(emp, kl, validation.size(), lambda, delta));
  }
  return out;
}

void SyntheticWorld::validate() const {
  if (d < 1 || n < 1) throw InvalidArgument("world needs d >= 1 and n >= 1");
  auto check_vec = [&](const Eigen::VectorXd& v, const char* name) {
    if (static_cast<std::size_t>(v.size()) != d) throw InvalidArgument(std::string(name) + " must have length d");
  };
  check_vec(w_star, "w_star");
  check_vec(w_prior, "w_prior");
  check_vec(w_posterior, "w_posterior");
  if (!(prior_variance > 0.0) || !(likelihood_variance > 0.0))
    throw InvalidArgument("world variances must be positive");
  if (!(label_noise_variance >= 0.0)) throw InvalidArgument("label noise variance must be nonnegative");
  if (mixture.empty()) throw InvalidArgument("world needs at least one mixture component");
  double total = 0.0;
  for (const auto& c : mixture) {
    if (!(c.weight >= 0.0)) throw InvalidArgument("mixture weights must be nonnegative");
    if (!(c.variance > 0.0)) throw InvalidArgument("mixture variances must be positive");
    check_vec(c.mean, "mixture mean");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("mixture weights must sum to 1");
}

double SyntheticWorld::gradient_variance() const {
  double v = 0.0;
  for (const auto& c : mixture) v += c.weight * c.variance;
  return v;
}

double SyntheticWorld::admissibility_constant() const {
  return 2.0 * static_cast<double>(n) * gradient_variance() * prior_variance;
}

Eigen::MatrixXd SyntheticWorld::gradient_second_moment() const {
  const auto dd = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dd, dd);
  for (const auto& c : mixture) {
    m.noalias() += c.weight * c.mean * c.mean.transpose();
    m.diagonal().array() += c.weight * c.variance;
  }
  return m;
}

SyntheticWorld make_simple_world(std::size_t d, std::size_t n, double gradient_variance) {
  SyntheticWorld w;
  w.d = d;
  w.n = n;
  const auto dd = static_cast<Eigen::Index>(d);
  w.w_star = Eigen::VectorXd::Zero(dd);
  w.w_prior = Eigen::VectorXd::Zero(dd);
  w.w_posterior = Eigen::VectorXd::Zero(dd);
  w.mixture = {MixtureComponent{1.0, Eigen::VectorXd::Zero(dd), gradient_variance}};
  w.validate();
  return w;
}

WorldData generate_world_data(const SyntheticWorld& world, std::size_t n, std::uint64_t seed) {
  world.validate();
  if (n < 1) throw InvalidArgument("sample count must be positive");
  const auto d = static_cast<Eigen::Index>(world.d);
  const auto rows = static_cast<Eigen::Index>(n);
  Rng rng(derive_seed(seed, 0x3091d));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> weights;
  for (const auto& c : world.mixture) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const Eigen::VectorXd shift = world.w_star - world.w_posterior;
  const double noise_sd = std::sqrt(world.label_noise_variance);

  WorldData out{Eigen::MatrixXd(rows, d), Eigen::VectorXd(rows), Eigen::VectorXd(rows)};
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& c = world.mixture[world.mixture.size() == 1 ? 0 : pick(rng)];
    const double sd = std::sqrt(c.variance);
    for (Eigen::Index j = 0; j < d; ++j) out.gradients(i, j) = c.mean(j) + sd * normal(rng);
    out.base_outputs(i) = world.base_output_scale * normal(rng);
    const double eps = noise_sd * normal(rng);
    out.labels(i) = out.base_outputs(i) + out.gradients.row(i).dot(shift) + eps;
  }
  return out;
}

double world_posterior_variance(const SyntheticWorld& world, double h, double lambda) {
  if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  return 1.0 / (lambda * h / (static_cast<double>(world.d) * world.likelihood_variance) + 1.0 / world.prior_variance);
}

BoundReport proposition_bound(const SyntheticWorld& world, double train_residual_sq, double h, double lambda,
                              double delta) {
  world.validate();
  check_lambda_delta(lambda, delta);
  if (h < 0.0) throw InvalidArgument("curvature h must be nonnegative");
  const double c = world.admissibility_constant();
  if (lambda * c >= 1.0)
    throw ConstraintViolation("lambda = " + std::to_string(lambda) + " is not below 1/c with c = 2 n sigma_x^2 sigma_pi^2 = " +
                              std::to_string(c));

  const double n = static_cast<double>(world.n);
  const double d = static_cast<double>(world.d);
  const double s2 = world.likelihood_variance;
  const double sp = world.prior_variance;
  const double sx = world.gradient_variance();
  const double scaled_h = lambda * h / (d * s2);
  const double mean_gap = (world.w_posterior - world.w_prior).squaredNorm();

  BoundReport r;
  r.kind = BoundKind::proposition;
  r.lambda = lambda;
  r.delta = delta;
  r.n = world.n;
  auto& t = r.terms;
  t.residual = train_residual_sq / (n * s2);
  t.log_norm = std::log(2.0 * std::numbers::pi * s2);
  t.noise = world.label_noise_variance;
  t.curvature = h / (2.0 * n * s2) / (scaled_h + 1.0 / sp);
  t.mixture = 2.0 * sx * (sp * d + world.w_star.squaredNorm()) / (1.0 - 2.0 * lambda * n * sx * sp);
  const double kl_like = (d / sp) / (scaled_h + 1.0 / (2.0 * sp)) + mean_gap / sp - d +
                         d * std::log(scaled_h + 1.0 / sp) + d * std::log(sp);
  t.complexity = (kl_like + 2.0 * std::log(1.0 / delta)) / (lambda * n);

  r.empirical_risk = t.residual;
  r.kl = kl_like;
  r.moment_or_complexity = t.complexity;
  r.value = t.sum();
  return r;
}

double mc_true_risk(const SyntheticWorld& world, double posterior_variance, std::size_t num_weight_samples,
                    std::uint64_t seed) {
  world.validate();
  if (num_weight_samples < 1) throw InvalidArgument("num_weight_samples must be at least 1");
  if (!(posterior_variance >= 0.0)) throw InvalidArgument("posterior variance must be nonnegative");
  const Eigen::MatrixXd m = world.gradient_second_moment();
  const double s2 = world.likelihood_variance;
  const double sd = std::sqrt(posterior_variance);
  Rng rng(derive_seed(seed, 0x715c));
  std::normal_distribution<double> normal(0.0, 1.0);
  double total = 0.0;
  Eigen::VectorXd w(static_cast<Eigen::Index>(world.d));
  for (std::size_t s = 0; s < num_weight_samples; ++s) {
    for (Eigen::Index j = 0; j < w.size(); ++j) w(j) = world.w_posterior(j) + sd * normal(rng);
    const Eigen::VectorXd gap = world.w_star - w;
    total += 0.5 * std::log(2.0 * std::numbers::pi * s2) + (gap.dot(m * gap) + world.label_noise_variance) / (2.0 * s2);
  }
  return 2.0 * total / static_cast<double>(num_weight_samples);
}

RiskEstimate mc_sampled_risk(const SyntheticWorld& world, double posterior_variance, std::size_t num_samples,
                             std::uint64_t seed) {
  world.validate();
  if (num_samples < 2) throw InvalidArgument("need at least two samples for a standard error");
  const double s2 = world.likelihood_variance;
  const double sd = std::sqrt(posterior_variance);
  const double noise_sd = std::sqrt(world.label_noise_variance);
  Rng rng(derive_seed(seed, 0x5a3b1e));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> weights;
  for (const auto& c : world.mixture) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const auto d = static_cast<Eigen::Index>(world.d);
  Eigen::VectorXd w(d);
  Eigen::VectorXd g(d);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t s = 0; s < num_samples; ++s) {
    for (Eigen::Index j = 0; j < d; ++j) w(j) = world.w_posterior(j) + sd * normal(rng);
    const auto& c = world.mixture[pick(rng)];
    const double gsd = std::sqrt(c.variance);
    for (Eigen::Index j = 0; j < d; ++j) g(j) = c.mean(j) + gsd * normal(rng);
    // y - f_lin(x; w) = g^T (w_* - w) + eps; the base output cancels.
    const double r = g.dot(world.w_star - w) + noise_sd * normal(rng);
    const double value = 2.0 * (0.5 * std::log(2.0 * std::numbers::pi * s2) + r * r / (2.0 * s2));
    sum += value;
    sum_sq += value * value;
  }
  const double k = static_cast<double>(num_samples);
  const double mean = sum / k;
  const double var = std::max(0.0, (sum_sq - k * mean * mean) / (k - 1.0));
  return {mean, std::sqrt(var / k)};
}

}  // namespace tempest
