#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tempest/dataset.hpp"
#include "tempest/laplace.hpp"

namespace tempest {

enum class BoundKind { catoni, alquier, proposition };
std::string to_string(BoundKind k);

/// Additive pieces of the closed-form linearized-model bound.
struct PropositionTerms {
  double residual = 0.0;    ///< ||y - f(X; w_rho)||^2 / (n sigma^2)
  double log_norm = 0.0;    ///< ln(2 pi sigma^2)
  double noise = 0.0;       ///< sigma^2_eps
  double curvature = 0.0;   ///< h/(2 n sigma^2) (lambda h/(d sigma^2) + 1/sigma^2_pi)^-1
  double mixture = 0.0;     ///< 2 sigma^2_x (sigma^2_pi d + ||w_*||^2) / (1 - 2 lambda n sigma^2_x sigma^2_pi)
  double complexity = 0.0;  ///< (1/(lambda n)) [ ... + 2 ln(1/delta) ]
  double sum() const { return residual + log_norm + noise + curvature + mixture + complexity; }
};

/// Every term of a PAC-Bayes bound, enough to re-assemble `value`.
///
/// `moment_or_complexity` is (kl + ln 1/delta)/(lambda n) for Catoni, the
/// Hoeffding moment surrogate for Alquier, and the complexity addend for the
/// proposition bound.
struct BoundReport {
  BoundKind kind = BoundKind::catoni;
  double lambda = 1.0;
  double delta = 0.05;
  double empirical_risk = 0.0;
  double kl = 0.0;
  double moment_or_complexity = 0.0;
  double value = 0.0;
  std::size_t n = 0;
  bool vacuous = false;  ///< value > 1 for a [0,1] loss
  double loss_min = 0.0;
  double loss_max = 1.0;
  PropositionTerms terms;
};

/// (1 - e^{-lambda x}) / (1 - e^{-lambda})
double catoni_inverse(double lambda, double x);

BoundReport catoni_bound(double empirical_zero_one, double kl, std::size_t n, double lambda, double delta);

/// emp + (kl + ln 1/delta + lambda^2 n (b-a)^2 / 8) / (lambda n). Infinite ranges are unsupported.
BoundReport alquier_bound(double empirical_risk, double kl, std::size_t n, double lambda, double delta,
                          double loss_min, double loss_max);

/// Value re-assembled from the stored terms of a report.
double reassemble(const BoundReport& r);

struct BoundPipelineOptions {
  std::size_t num_mc_samples = 100;
  std::uint64_t seed = 0;
};

/// Catoni bounds over `lambda_grid` for an isotropic posterior centred at the
/// prior mean (the MAP trained on a disjoint split) and fit on `validation`.
/// The empirical risk is the Monte-Carlo posterior-averaged zero-one loss on the
/// validation rows. Reports are ordered by lambda.
std::vector<BoundReport> evaluate_bound_pipeline(const ModelParams& map, const CurvatureSummary& curvature,
                                                 const Dataset& validation, std::span<const double> lambda_grid,
                                                 double prior_variance, double delta,
                                                 const BoundPipelineOptions& options = {});

struct MixtureComponent {
  double weight = 1.0;       ///< phi_i
  Eigen::VectorXd mean;      ///< mu_i
  double variance = 1.0;     ///< sigma^2_{x i}
};

/// Linearized Gaussian-likelihood model: gradients drawn from a Gaussian
/// mixture, labels from the linear labeling function around w_rho.
struct SyntheticWorld {
  std::size_t d = 2;
  std::size_t n = 50;
  Eigen::VectorXd w_star;
  Eigen::VectorXd w_prior;
  double prior_variance = 1.0;     ///< sigma^2_pi
  std::vector<MixtureComponent> mixture;
  double label_noise_variance = 1.0;  ///< sigma^2_eps
  double likelihood_variance = 1.0;   ///< sigma^2
  Eigen::VectorXd w_posterior;        ///< fixed posterior mean w_rho
  double base_output_scale = 1.0;     ///< base outputs f(x; w_rho) ~ N(0, scale^2)

  void validate() const;
  /// sigma^2_x = sum_i phi_i sigma^2_{x i}
  double gradient_variance() const;
  /// c = 2 n sigma^2_x sigma^2_pi; admissible lambda lie in (0, 1/c).
  double admissibility_constant() const;
  /// E[g g^T] = sum_i phi_i (mu_i mu_i^T + sigma^2_{x i} I)
  Eigen::MatrixXd gradient_second_moment() const;
};

/// d-dimensional world with a single zero-mean component.
SyntheticWorld make_simple_world(std::size_t d, std::size_t n, double gradient_variance);

struct WorldData {
  Eigen::MatrixXd gradients;     ///< n x d
  Eigen::VectorXd base_outputs;  ///< f(x_i; w_rho)
  Eigen::VectorXd labels;

  double curvature() const { return gradients.squaredNorm(); }
  double residual_sq() const { return (labels - base_outputs).squaredNorm(); }
};

WorldData generate_world_data(const SyntheticWorld& world, std::size_t n, std::uint64_t seed);

/// Posterior variance of the linearized model, (lambda h/(d sigma^2) + 1/sigma^2_pi)^-1.
double world_posterior_variance(const SyntheticWorld& world, double h, double lambda);

/// Closed-form bound on 2 E_{w~rho} L_D^nll(w). Throws ConstraintViolation for lambda >= 1/c.
BoundReport proposition_bound(const SyntheticWorld& world, double train_residual_sq, double h, double lambda,
                              double delta);

/// 2 x Monte-Carlo average over w ~ N(w_rho, v I) of the analytic per-weight risk.
double mc_true_risk(const SyntheticWorld& world, double posterior_variance, std::size_t num_weight_samples,
                    std::uint64_t seed);

struct RiskEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// Fully sampled counterpart of mc_true_risk: draws weights, gradients and label noise.
RiskEstimate mc_sampled_risk(const SyntheticWorld& world, double posterior_variance, std::size_t num_samples,
                             std::uint64_t seed);

}  // namespace tempest
