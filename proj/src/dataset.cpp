#include "tempest/dataset.hpp"

#include <cmath>

#include "tempest/errors.hpp"

namespace tempest {

namespace {

void check_inputs(const Eigen::MatrixXd& inputs) {
  if (inputs.rows() < 1) throw InvalidArgument("dataset must have at least one row");
  if (inputs.cols() < 1) throw InvalidArgument("dataset inputs must have at least one column");
  if (!inputs.allFinite()) throw InvalidArgument("dataset inputs must be finite");
}

}  // namespace

Dataset Dataset::classification(Eigen::MatrixXd inputs, std::vector<int> labels, std::size_t num_classes,
                                std::string name, std::optional<Eigen::MatrixXd> true_conditional) {
  check_inputs(inputs);
  if (num_classes < 1) throw InvalidArgument("classification dataset needs num_classes >= 1");
  if (labels.size() != static_cast<std::size_t>(inputs.rows()))
    throw InvalidArgument("label count does not match input rows");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw InvalidArgument("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  if (true_conditional) {
    const auto& p = *true_conditional;
    if (p.rows() != inputs.rows() || p.cols() != static_cast<Eigen::Index>(num_classes))
      throw InvalidArgument("true conditional must be n x num_classes");
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      if ((p.row(i).array() < 0.0).any() || std::abs(p.row(i).sum() - 1.0) > 1e-9)
        throw InvalidArgument("true conditional row " + std::to_string(i) + " is not a distribution");
    }
  }
  Dataset d;
  d.inputs_ = std::move(inputs);
  d.labels_ = std::move(labels);
  d.num_classes_ = num_classes;
  d.true_conditional_ = std::move(true_conditional);
  d.name_ = std::move(name);
  return d;
}

Dataset Dataset::regression(Eigen::MatrixXd inputs, Eigen::VectorXd targets, std::string name) {
  check_inputs(inputs);
  if (targets.size() != inputs.rows()) throw InvalidArgument("target count does not match input rows");
  if (!targets.allFinite()) throw InvalidArgument("regression targets must be finite");
  Dataset d;
  d.inputs_ = std::move(inputs);
  d.targets_ = std::move(targets);
  d.name_ = std::move(name);
  return d;
}

double Dataset::target(std::size_t i) const {
  if (is_classification()) return static_cast<double>(labels_.at(i));
  if (i >= static_cast<std::size_t>(targets_.size())) throw InvalidArgument("row index out of range");
  return targets_(static_cast<Eigen::Index>(i));
}

const Eigen::MatrixXd& Dataset::true_conditional() const {
  if (!true_conditional_) throw UnsupportedError("dataset '" + name_ + "' has no ground-truth conditional");
  return *true_conditional_;
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string name) const {
  if (indices.empty()) throw InvalidArgument("subset must select at least one row");
  const auto m = static_cast<Eigen::Index>(indices.size());
  Eigen::MatrixXd x(m, inputs_.cols());
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto src = indices[static_cast<std::size_t>(r)];
    if (src >= size()) throw InvalidArgument("subset index out of range");
    x.row(r) = inputs_.row(static_cast<Eigen::Index>(src));
  }
  if (name.empty()) name = name_;
  if (!is_classification()) {
    Eigen::VectorXd t(m);
    for (Eigen::Index r = 0; r < m; ++r) t(r) = targets_(static_cast<Eigen::Index>(indices[static_cast<std::size_t>(r)]));
    return regression(std::move(x), std::move(t), std::move(name));
  }
  std::vector<int> y(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) y[r] = labels_[indices[r]];
  std::optional<Eigen::MatrixXd> p;
  if (true_conditional_) {
    p = Eigen::MatrixXd(m, true_conditional_->cols());
    for (Eigen::Index r = 0; r < m; ++r)
      p->row(r) = true_conditional_->row(static_cast<Eigen::Index>(indices[static_cast<std::size_t>(r)]));
  }
  return classification(std::move(x), std::move(y), num_classes_, std::move(name), std::move(p));
}

Dataset Dataset::head(std::size_t count) const {
  if (count >= size()) return *this;
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  return subset(idx);
}

}  // namespace tempest
