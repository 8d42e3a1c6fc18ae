#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tempest/dataset.hpp"
#include "tempest/laplace.hpp"

namespace tempest {

/// Monte-Carlo posterior predictive. For softmax heads `probs` is n x K; for the
/// Gaussian head `probs` is empty and `means`/`variances` hold the predictive
/// mixture moments.
struct PredictiveResult {
  Eigen::MatrixXd probs;
  Eigen::VectorXd means;
  Eigen::VectorXd variances;
  std::size_t num_mc_samples = 1;
  std::uint64_t seed = 0;
};

/// probs = (1/S) sum_s softmax(f(x; w_s)), w_s = sample_weight(post, seed, s).
PredictiveResult posterior_predictive(const TemperedPosterior& post, const Dataset& data, std::size_t num_samples,
                                      std::uint64_t seed, std::size_t jobs = 1);

/// Predictive of a single deterministic network.
PredictiveResult point_predictive(const ModelParams& params, const Dataset& data);

struct CalibrationBin {
  double confidence = 0.0;  ///< mean max-probability of the rows in the bin
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct MetricTriple {
  double zero_one = 0.0;
  double nll = 0.0;
  double ece = 0.0;
  std::vector<CalibrationBin> per_bin;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Index of the calibration bin for confidence c. Bins split [1/K, 1], the range
/// a max-probability can take, into `num_bins` equal widths.
std::size_t calibration_bin(double confidence, std::size_t num_classes, std::size_t num_bins);

/// Zero-one (argmax, lowest index on ties), mean NLL (probabilities floored at
/// 1e-12) and expected calibration error.
MetricTriple evaluate(const PredictiveResult& pred, const Dataset& data, std::size_t num_bins = 15);

/// ECE re-assembled from the per-bin summary.
double ece_from_bins(const std::vector<CalibrationBin>& bins);

/// Mean over rows of sum_y p_D(y|x) [ln p_D(y|x) - ln q(y|x)].
double predictive_relative_entropy(const PredictiveResult& pred, const Dataset& data);

/// Both sides of the Jensen step bounding the predictive relative entropy,
/// evaluated with one shared set of posterior draws.
struct JensenChain {
  double relative_entropy = 0.0;  ///< KL(p_D || E_f p(.|x,f)), row mean
  double gibbs_nll = 0.0;         ///< E_f mean_x sum_y p_D(y|x) (-ln p(y|x,f))
  double data_log_likelihood = 0.0;  ///< mean_x sum_y p_D ln p_D
  double right_hand_side() const { return gibbs_nll + data_log_likelihood; }
};

JensenChain jensen_chain(const TemperedPosterior& post, const Dataset& data, std::size_t num_samples,
                         std::uint64_t seed);

/// Posterior-averaged zero-one risk E_{w~post} mean_i 1{argmax f(x_i;w) != y_i}.
double gibbs_zero_one(const TemperedPosterior& post, const Dataset& data, std::size_t num_samples, std::uint64_t seed);

}  // namespace tempest
