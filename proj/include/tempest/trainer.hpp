#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "tempest/dataset.hpp"
#include "tempest/nn.hpp"

namespace tempest {

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double prior_variance = 1.0;  ///< sigma^2_pi of the Gaussian weight prior
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct MapEstimate {
  ModelParams params;
  double train_nll = 0.0;
  std::optional<double> train_zero_one;  ///< absent for regression heads
  TrainConfig config;
};

/// MAP objective: mean NLL + ||w - w_pi||^2 / (2 n sigma^2_pi).
double map_objective(const ModelParams& params, const Dataset& data, double prior_variance,
                     const Eigen::VectorXd& prior_mean);
Eigen::VectorXd map_objective_gradient(const ModelParams& params, const Dataset& data, double prior_variance,
                                       const Eigen::VectorXd& prior_mean);

/// Minibatch SGD with classical momentum on the MAP objective.
///
/// The prior penalty is applied with a semi-implicit step, so the update stays
/// stable for arbitrarily small prior variances while keeping the same
/// stationary points as the explicit objective. `prior_mean` defaults to zero.
/// Throws DivergenceError if the objective becomes non-finite.
MapEstimate train_map(const MlpArchitecture& arch, const Dataset& data, const TrainConfig& config,
                      const std::optional<Eigen::VectorXd>& prior_mean = std::nullopt);

/// One MAP per seed config.seed + i, returned in seed order. `jobs` > 1 trains
/// seeds on worker threads; the output does not depend on `jobs`.
std::vector<MapEstimate> seed_farm(const MlpArchitecture& arch, const Dataset& data, const TrainConfig& config,
                                   std::size_t num_seeds, std::size_t jobs = 1);

struct SeedFilter {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> rejected;
  double median_zero_one = 0.0;
};

/// Rejects estimates whose train zero-one deviates from the median by more than `tolerance`.
SeedFilter filter_similar(const std::vector<MapEstimate>& maps, double tolerance = 0.02);

}  // namespace tempest
