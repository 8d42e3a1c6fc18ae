#include "tempest/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "tempest/errors.hpp"
#include "tempest/rng.hpp"

namespace tempest {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (epochs < 1) throw InvalidArgument("epochs must be positive");
  if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  if (!(prior_variance > 0.0)) throw InvalidArgument("prior_variance must be positive");
}

double map_objective(const ModelParams& params, const Dataset& data, double prior_variance,
                     const Eigen::VectorXd& prior_mean) {
  const double n = static_cast<double>(data.size());
  return mean_loss(params, data, likelihood_of(params.arch())) +
         (params.weights() - prior_mean).squaredNorm() / (2.0 * n * prior_variance);
}

Eigen::VectorXd map_objective_gradient(const ModelParams& params, const Dataset& data, double prior_variance,
                                       const Eigen::VectorXd& prior_mean) {
  const double n = static_cast<double>(data.size());
  return mean_grad_loss(params, data, likelihood_of(params.arch())) +
         (params.weights() - prior_mean) / (n * prior_variance);
}

MapEstimate train_map(const MlpArchitecture& arch, const Dataset& data, const TrainConfig& config,
                      const std::optional<Eigen::VectorXd>& prior_mean) {
  config.validate();
  arch.validate();
  if (data.size() < 1) throw InvalidArgument("training set is empty");
  if (data.input_dim() != arch.input_dim()) throw InvalidArgument("dataset input dimension does not match architecture");
  if (data.is_classification() != (arch.output_head == OutputHead::softmax_categorical))
    throw IncompatibleLoss("dataset target type does not match the output head");
  if (data.is_classification() && data.num_classes() != arch.output_dim())
    throw InvalidArgument("dataset class count does not match the output layer");

  const auto d = static_cast<Eigen::Index>(arch.parameter_count());
  const Eigen::VectorXd w_pi = prior_mean.value_or(Eigen::VectorXd::Zero(d));
  if (w_pi.size() != d) throw InvalidArgument("prior mean has the wrong length");

  const LossKind nll = likelihood_of(arch);
  const std::size_t n = data.size();
  const double penalty = 1.0 / (static_cast<double>(n) * config.prior_variance);
  const double lr = config.learning_rate;

  ModelParams params = initialize_params(arch, config.seed);
  Eigen::VectorXd w = params.weights();
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(d);
  Rng rng(derive_seed(config.seed, 0x5eed));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> batch;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Eigen::VectorXd g = mean_grad_loss(params, data, nll, batch);
      // v' = m v + g + c (w' - w_pi),  w' = w - lr v'  solved for w'.
      Eigen::VectorXd next = (w - lr * (config.momentum * velocity + g - penalty * w_pi)) / (1.0 + lr * penalty);
      velocity = (w - next) / lr;
      w = std::move(next);
      if (!w.allFinite()) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (seed " +
                                  std::to_string(config.seed) + ")",
                              epoch, config.seed);
      }
      params = params.with_weights(w);
    }
    if (!std::isfinite(mean_loss(params, data, nll))) {
      throw DivergenceError("training loss is NaN at epoch " + std::to_string(epoch) + " (seed " +
                                std::to_string(config.seed) + ")",
                            epoch, config.seed);
    }
  }

  MapEstimate out{params, mean_loss(params, data, nll), std::nullopt, config};
  if (data.is_classification()) out.train_zero_one = mean_loss(params, data, LossKind::zero_one());
  return out;
}

std::vector<MapEstimate> seed_farm(const MlpArchitecture& arch, const Dataset& data, const TrainConfig& config,
                                   std::size_t num_seeds, std::size_t jobs) {
  if (num_seeds < 1) throw InvalidArgument("num_seeds must be at least 1");
  std::vector<std::optional<MapEstimate>> slots(num_seeds);
  std::vector<std::exception_ptr> errors(num_seeds);

  auto run = [&](std::size_t i) {
    TrainConfig c = config;
    c.seed = config.seed + i;
    try {
      slots[i] = train_map(arch, data, c);
    } catch (const DivergenceError& e) {
      errors[i] = std::make_exception_ptr(
          DivergenceError(std::string("seed ") + std::to_string(c.seed) + ": " + e.what(), e.epoch(), c.seed));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, num_seeds));
  if (jobs == 1) {
    for (std::size_t i = 0; i < num_seeds; ++i) run(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < num_seeds; i += jobs) run(i);
      });
  }

  std::vector<MapEstimate> out;
  out.reserve(num_seeds);
  for (std::size_t i = 0; i < num_seeds; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

SeedFilter filter_similar(const std::vector<MapEstimate>& maps, double tolerance) {
  SeedFilter f;
  if (maps.empty()) return f;
  std::vector<double> errs;
  for (const auto& m : maps) errs.push_back(m.train_zero_one.value_or(0.0));
  std::vector<double> sorted = errs;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t k = sorted.size();
  f.median_zero_one = k % 2 == 1 ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (std::abs(errs[i] - f.median_zero_one) > tolerance) {
      f.rejected.push_back(i);
    } else {
      f.kept.push_back(i);
    }
  }
  return f;
}

}  // namespace tempest
