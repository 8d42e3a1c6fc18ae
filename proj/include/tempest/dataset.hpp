#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tempest {

/// Learning sample: one input row per example, plus class labels or real targets.
///
/// Classification sets carry `num_classes > 0` and integer labels; regression
/// sets carry `num_classes == 0` and real-valued targets. Synthetic sets may also
/// carry the ground-truth conditional p_D(y|x) as an n x K row-stochastic matrix.
class Dataset {
 public:
  static Dataset classification(Eigen::MatrixXd inputs, std::vector<int> labels,
                                std::size_t num_classes, std::string name = {},
                                std::optional<Eigen::MatrixXd> true_conditional = std::nullopt);
  static Dataset regression(Eigen::MatrixXd inputs, Eigen::VectorXd targets, std::string name = {});

  std::size_t size() const noexcept { return static_cast<std::size_t>(inputs_.rows()); }
  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(inputs_.cols()); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  bool is_classification() const noexcept { return num_classes_ > 0; }

  const Eigen::MatrixXd& inputs() const noexcept { return inputs_; }
  Eigen::VectorXd input(std::size_t i) const { return inputs_.row(static_cast<Eigen::Index>(i)).transpose(); }

  /// Label (classification) or target value (regression) of row i, as a real.
  double target(std::size_t i) const;
  int label(std::size_t i) const { return labels_.at(i); }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const Eigen::VectorXd& targets() const noexcept { return targets_; }

  bool has_true_conditional() const noexcept { return true_conditional_.has_value(); }
  const Eigen::MatrixXd& true_conditional() const;
  const std::string& name() const noexcept { return name_; }

  /// Rows `indices` in the given order.
  Dataset subset(std::span<const std::size_t> indices, std::string name = {}) const;
  Dataset head(std::size_t count) const;

 private:
  Dataset() = default;

  Eigen::MatrixXd inputs_;
  std::vector<int> labels_;
  Eigen::VectorXd targets_;
  std::size_t num_classes_ = 0;
  std::optional<Eigen::MatrixXd> true_conditional_;
  std::string name_;
};

}  // namespace tempest
