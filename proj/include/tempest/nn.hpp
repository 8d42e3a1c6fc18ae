#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tempest/dataset.hpp"

namespace tempest {

enum class Activation { relu, tanh, identity };
enum class OutputHead { softmax_categorical, gaussian };

std::string to_string(Activation a);
std::string to_string(OutputHead h);
Activation parse_activation(const std::string& s);
OutputHead parse_output_head(const std::string& s);

/// Location of one dense layer inside the flat weight vector.
///
/// Each layer stores its weight matrix row-major (out x in) followed by its
/// `out` biases; layers appear in forward order.
struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  std::size_t weight_index(std::size_t row, std::size_t col) const { return weight_offset + row * in + col; }
  std::size_t parameter_count() const { return (in + 1) * out; }
};

struct MlpArchitecture {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::tanh;
  OutputHead output_head = OutputHead::softmax_categorical;
  /// Likelihood variance sigma^2 of the Gaussian head; unused for softmax.
  double noise_variance = 1.0;

  void validate() const;
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t parameter_count() const;
  std::vector<LayerShape> layers() const;

  bool operator==(const MlpArchitecture&) const = default;
};

/// Flat weight vector together with the architecture that interprets it.
class ModelParams {
 public:
  ModelParams(MlpArchitecture arch, Eigen::VectorXd weights);

  const MlpArchitecture& arch() const noexcept { return arch_; }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(weights_.size()); }
  const std::vector<LayerShape>& layers() const noexcept { return layers_; }

  ModelParams with_weights(Eigen::VectorXd weights) const { return ModelParams(arch_, std::move(weights)); }

 private:
  MlpArchitecture arch_;
  std::vector<LayerShape> layers_;
  Eigen::VectorXd weights_;
};

/// Zero biases; weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
ModelParams initialize_params(const MlpArchitecture& arch, std::uint64_t seed);

struct LossKind {
  enum class Kind { zero_one, nll_categorical, nll_gaussian };
  Kind kind = Kind::nll_categorical;
  double variance = 1.0;

  static LossKind zero_one() { return {Kind::zero_one, 1.0}; }
  static LossKind nll_categorical() { return {Kind::nll_categorical, 1.0}; }
  static LossKind nll_gaussian(double variance);

  bool differentiable() const { return kind != Kind::zero_one; }
};

/// The likelihood NLL matching the architecture's output head.
LossKind likelihood_of(const MlpArchitecture& arch);

Eigen::VectorXd forward(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Row-wise forward pass: one output row per input row.
Eigen::MatrixXd forward_batch(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs);

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);
void softmax_rows_inplace(Eigen::MatrixXd& logits);
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(const Eigen::Ref<const Eigen::VectorXd>& v);

/// `target` is the class index for categorical losses and the real response for Gaussian NLL.
double loss(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x, double target,
            const LossKind& kind);

Eigen::VectorXd grad_loss(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                          double target, const LossKind& kind);

/// num_outputs x d matrix whose row c is the gradient of output c w.r.t. the flat weights.
Eigen::MatrixXd per_sample_jacobian(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Per-layer quantities needed by curvature code for one input.
struct LayerSensitivity {
  Eigen::VectorXd input;           ///< activation entering the layer (length in)
  Eigen::MatrixXd output_by_preact;  ///< d f / d s_l, num_outputs x out
};

struct SensitivityTrace {
  Eigen::VectorXd output;
  std::vector<LayerSensitivity> layers;
};

SensitivityTrace layer_sensitivities(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Mean loss over the dataset rows.
double mean_loss(const ModelParams& params, const Dataset& data, const LossKind& kind);

/// Gradient of the mean loss over `rows` (all rows when empty).
Eigen::VectorXd mean_grad_loss(const ModelParams& params, const Dataset& data, const LossKind& kind,
                               const std::vector<std::size_t>& rows = {});

}  // namespace tempest
