#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tempest/dataset.hpp"
#include "tempest/nn.hpp"
#include "tempest/trainer.hpp"

namespace tempest {

/// Kronecker factors of one layer's GGN block, block ~= A kron G.
///
/// Parameters of a layer are indexed by (input i, output o) where i == in is
/// the bias. A is (in+1) x (in+1) and is the mean of a a^T over samples (a has
/// a trailing 1). G is out x out and is the *sum* over samples of
/// J_s^T Lambda J_s, with J_s = d f / d s_l. With this split a single sample
/// reproduces the exact GGN block.
struct KfacLayerFactors {
  Eigen::MatrixXd A;
  Eigen::MatrixXd G;
  bool a_singular = false;  ///< A needed the 1e-8 I jitter before eigendecomposition
  bool g_singular = false;
};

struct CurvatureSummary {
  double h = 0.0;  ///< GGN trace
  std::vector<KfacLayerFactors> kfac;
  std::size_t d = 0;
  std::size_t n = 0;

  bool has_kfac() const noexcept { return !kfac.empty(); }
};

/// Diagonal of the per-sample output noise matrix Lambda(y; f) = -d^2 log p / df^2.
Eigen::VectorXd output_noise_diagonal(const MlpArchitecture& arch, const Eigen::VectorXd& f);
/// Full Lambda(y; f): diag(p) - p p^T for softmax, I / sigma^2 for the Gaussian head.
Eigen::MatrixXd output_noise_matrix(const MlpArchitecture& arch, const Eigen::VectorXd& f);

/// h = sum_i sum_k [Lambda_i]_kk ||grad_w f_k(x_i)||^2.
CurvatureSummary ggn_trace(const ModelParams& params, const Dataset& data);

/// KFAC factors for every layer (and h).
CurvatureSummary kfac_factors(const ModelParams& params, const Dataset& data);

/// Dense (A kron G) for one layer, rows/cols in the flat parameter order of that layer.
Eigen::MatrixXd kfac_block_dense(const KfacLayerFactors& f, const LayerShape& shape);

/// Jitter added to a singular Kronecker factor before eigendecomposition.
inline constexpr double kFactorJitter = 1e-8;

enum class PosteriorKind { isotropic, kfac };

std::string to_string(PosteriorKind k);
PosteriorKind parse_posterior_kind(const std::string& s);

/// Eigendecomposed factors of one layer; covariance eigenvalues are
/// 1 / (lambda a_i g_o + 1 / sigma^2_pi).
struct KfacEigenLayer {
  Eigen::VectorXd a_values;
  Eigen::MatrixXd a_vectors;
  Eigen::VectorXd g_values;
  Eigen::MatrixXd g_vectors;
};

/// Gaussian over weights centred at a MAP estimate.
struct TemperedPosterior {
  ModelParams mean;
  PosteriorKind kind = PosteriorKind::isotropic;
  double lambda = 1.0;
  double prior_variance = 1.0;
  double variance = 0.0;  ///< isotropic sigma^2 (0 for kfac)
  std::vector<KfacEigenLayer> layers;

  std::size_t dim() const { return mean.size(); }
  /// Covariance eigenvalues of layer l, indexed [o * (in+1) + i].
  Eigen::VectorXd layer_variances(std::size_t l) const;
};

/// (lambda h / d + 1 / sigma^2_pi)^-1
double isotropic_variance(double h, std::size_t d, double lambda, double prior_variance);

TemperedPosterior fit_tempered_posterior(const ModelParams& mean, const CurvatureSummary& curvature, double lambda,
                                         double prior_variance, PosteriorKind kind);

/// Draw number `index` of the stream identified by `seed`. Draws with different
/// indices are independent, so callers can evaluate them in any order.
ModelParams sample_weight(const TemperedPosterior& post, std::uint64_t seed, std::size_t index);
std::vector<ModelParams> sample_weights(const TemperedPosterior& post, std::uint64_t seed, std::size_t count);

struct KlTerms {
  double trace = 0.0;      ///< tr(Sigma) / sigma^2_pi
  double mean = 0.0;       ///< ||w - w_pi||^2 / sigma^2_pi
  double dim = 0.0;        ///< d
  double log_det = 0.0;    ///< d ln sigma^2_pi - ln det Sigma
  double value() const { return 0.5 * (trace + mean - dim + log_det); }
};

/// KL(post || N(prior_mean, prior_variance I)) split into its closed-form terms.
KlTerms gaussian_kl_terms(const TemperedPosterior& post, const Eigen::VectorXd& prior_mean, double prior_variance);
double gaussian_kl(const TemperedPosterior& post, const Eigen::VectorXd& prior_mean, double prior_variance);

/// Laplace log evidence with the isotropic curvature surrogate (h/d per direction):
/// -n L_nll(w) - ||w - w_pi||^2/(2 s) - (d/2) ln s - (d/2) ln(h/d + 1/s).
/// Constants independent of s are dropped.
double laplace_log_evidence(const ModelParams& map, const Dataset& data, double h, double prior_variance,
                            const Eigen::VectorXd& prior_mean);

/// Grid value maximizing the Laplace evidence; ties go to the smaller variance.
double select_prior_variance(const ModelParams& map, const Dataset& data, std::span<const double> grid,
                             const std::optional<Eigen::VectorXd>& prior_mean = std::nullopt);

// Binary blobs: 8-byte magic "TMPSTBLB", uint64 LE header length, UTF-8 JSON
// header, then the payload as little-endian IEEE-754 doubles.
void write_posterior(const std::filesystem::path& path, const TemperedPosterior& post);
TemperedPosterior read_posterior(const std::filesystem::path& path);
void write_map(const std::filesystem::path& path, const MapEstimate& map);
MapEstimate read_map(const std::filesystem::path& path);

}  // namespace tempest
