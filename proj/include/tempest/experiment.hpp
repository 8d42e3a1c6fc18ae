#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tempest/bounds.hpp"
#include "tempest/data.hpp"
#include "tempest/laplace.hpp"
#include "tempest/metrics.hpp"
#include "tempest/trainer.hpp"

namespace tempest {

struct DatasetSpec {
  std::string kind = "blobs";  ///< blobs | spirals | idx
  BlobsSpec blobs;
  SpiralsSpec spirals;
  std::uint64_t seed = 0;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::optional<std::size_t> subset;
  Normalization normalization = Normalization::unit;
  std::size_t num_classes = 10;
};

struct PriorPolicy {
  bool marginal_likelihood = false;
  double value = 0.1;               ///< used when fixed, and for bound experiments
  std::vector<double> grid;         ///< candidates for marginal-likelihood selection
};

struct WorldExperiment {
  SyntheticWorld world = make_simple_world(2, 50, 0.001);
  std::vector<double> lambda_grid;
  std::size_t num_worlds = 100;
  std::size_t num_weight_samples = 10000;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  SplitFractions split;
  std::uint64_t split_seed = 0;
  std::vector<std::size_t> hidden = {16};
  Activation activation = Activation::tanh;
  TrainConfig train;
  std::vector<double> lambda_grid;  ///< ascending
  std::size_t num_seeds = 10;
  std::size_t num_mc_samples = 100;
  PriorPolicy prior;
  PosteriorKind posterior = PosteriorKind::isotropic;
  double delta = 0.05;
  std::size_t ece_bins = 15;
  std::filesystem::path output_dir = "out";
  std::size_t jobs = 1;
  bool record_wall_time = false;  ///< off: wall_time_ms is written as 0 so CSVs are reproducible
  bool save_posteriors = false;
  WorldExperiment world;

  void validate() const;
};

/// 30 log-spaced points in [1e-7, 1e4].
std::vector<double> default_lambda_grid();
std::vector<double> log_grid(double lo, double hi, std::size_t points);

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

Dataset load_dataset(const DatasetSpec& spec);
MlpArchitecture make_architecture(const ExperimentConfig& config, const Dataset& data);

struct SeedRecord {
  std::uint64_t seed = 0;
  std::string file;
  double train_nll = 0.0;
  std::optional<double> train_zero_one;
  bool rejected = false;
};

struct TrainMapResult {
  std::vector<SeedRecord> seeds;
  double median_train_zero_one = 0.0;
};

TrainMapResult cmd_train_map(const ExperimentConfig& config);

/// Kept MAP estimates listed in the manifest of `config.output_dir`.
std::vector<MapEstimate> load_maps(const ExperimentConfig& config);

struct SweepRow {
  std::uint64_t seed = 0;
  double lambda = 0.0;
  std::string split;  ///< validation | test
  double zero_one = 0.0;
  double nll = 0.0;
  double ece = 0.0;
  double kl = 0.0;
  std::optional<double> bound_value;
  double wall_time_ms = 0.0;
};

/// Monte-Carlo seed for posterior sampling. All MAP seeds and all lambdas share it (common random numbers),
/// so differences across seeds come from the MAP estimates rather than from sampling noise.
std::uint64_t sweep_mc_seed(std::uint64_t base_seed);
std::string posterior_file_name(std::uint64_t map_seed, std::size_t lambda_index);

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config);

struct VariabilityRow {
  double lambda = 0.0;
  double mean_zero_one = 0.0;
  double std_zero_one = 0.0;
};

struct VariabilityResult {
  std::vector<VariabilityRow> rows;
  double map_mean_zero_one = 0.0;
  double map_std_zero_one = 0.0;
};

VariabilityResult cmd_map_variability(const ExperimentConfig& config);

struct BoundCurveRow {
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double delta = 0.0;
  double bound_value = 0.0;
  double empirical_zero_one = 0.0;
  double kl = 0.0;
  double test_zero_one = 0.0;        ///< posterior-predictive test error
  double test_gibbs_zero_one = 0.0;  ///< posterior-averaged test error
};

struct BoundCurveResult {
  std::vector<BoundCurveRow> rows;
  /// (seed, rank correlation across lambda of the bound against the posterior-averaged test error,
  /// which is the quantity the bound controls)
  std::vector<std::pair<std::uint64_t, double>> spearman;
  /// (seed, rank correlation of the bound against the posterior-predictive test error)
  std::vector<std::pair<std::uint64_t, double>> spearman_predictive;
};

BoundCurveResult cmd_bound_curve(const ExperimentConfig& config);

struct PropBoundRow {
  std::uint64_t world_seed = 0;
  double lambda = 0.0;
  bool admissible = true;
  std::optional<double> bound_value;
  double mc_risk = 0.0;
  std::optional<bool> violated;
};

std::vector<PropBoundRow> cmd_prop_bound(const ExperimentConfig& config);

struct LoadCheckResult {
  std::size_t rows = 0;
  std::size_t features = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> label_counts;
};

LoadCheckResult cmd_load_check(const ExperimentConfig& config);

/// Spearman rank correlation; ties receive average ranks. NaN when either series is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Sample standard deviation (n - 1 denominator).
double sample_std(const std::vector<double>& v);

/// Shortest round-trip decimal text for a double ('.' separator, locale independent).
std::string format_double(double v);
/// RFC-4180 field quoting.
std::string csv_field(const std::string& s);

}  // namespace tempest
