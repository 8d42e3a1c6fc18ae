#include "tempest/nn.hpp"

#include <cmath>
#include <numbers>

#include "tempest/errors.hpp"
#include "tempest/rng.hpp"

namespace tempest {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeightMap = Eigen::Map<const RowMatrix>;

ConstWeightMap weight_map(const ModelParams& p, const LayerShape& s) {
  return {p.weights().data() + s.weight_offset, static_cast<Eigen::Index>(s.out), static_cast<Eigen::Index>(s.in)};
}

Eigen::Map<const Eigen::VectorXd> bias_map(const ModelParams& p, const LayerShape& s) {
  return {p.weights().data() + s.bias_offset, static_cast<Eigen::Index>(s.out)};
}

double activate(Activation a, double s) {
  switch (a) {
    case Activation::relu: return s > 0.0 ? s : 0.0;
    case Activation::tanh: return std::tanh(s);
    case Activation::identity: return s;
  }
  return s;
}

// Derivative from the pre-activation; the relu kink at 0 has derivative 0.
double activate_derivative(Activation a, double s) {
  switch (a) {
    case Activation::relu: return s > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(s);
      return 1.0 - t * t;
    }
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

struct SampleTrace {
  std::vector<Eigen::VectorXd> inputs;    // a_l entering layer l
  std::vector<Eigen::VectorXd> preacts;   // s_l leaving layer l
};

SampleTrace trace_forward(const ModelParams& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const auto& arch = p.arch();
  if (static_cast<std::size_t>(x.size()) != arch.input_dim())
    throw InvalidArgument("input has length " + std::to_string(x.size()) + ", expected " +
                          std::to_string(arch.input_dim()));
  SampleTrace t;
  const auto& layers = p.layers();
  t.inputs.reserve(layers.size());
  t.preacts.reserve(layers.size());
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::VectorXd s = weight_map(p, layers[l]) * a + bias_map(p, layers[l]);
    t.inputs.push_back(std::move(a));
    if (l + 1 < layers.size()) {
      a = s.unaryExpr([&](double v) { return activate(arch.activation, v); });
    }
    t.preacts.push_back(std::move(s));
  }
  return t;
}

// Accumulates d(u . f)/dw into `grad` for the sample described by `t`.
void backprop_into(const ModelParams& p, const SampleTrace& t, Eigen::VectorXd delta, Eigen::VectorXd& grad) {
  const auto& layers = p.layers();
  const auto act = p.arch().activation;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& s = layers[l];
    Eigen::Map<RowMatrix> gw(grad.data() + s.weight_offset, static_cast<Eigen::Index>(s.out),
                             static_cast<Eigen::Index>(s.in));
    gw.noalias() += delta * t.inputs[l].transpose();
    grad.segment(static_cast<Eigen::Index>(s.bias_offset), static_cast<Eigen::Index>(s.out)) += delta;
    if (l > 0) {
      Eigen::VectorXd back = weight_map(p, s).transpose() * delta;
      const auto& pre = t.preacts[l - 1];
      for (Eigen::Index j = 0; j < back.size(); ++j) back(j) *= activate_derivative(act, pre(j));
      delta = std::move(back);
    }
  }
}

void check_loss_head(const MlpArchitecture& arch, const LossKind& kind) {
  const bool categorical = arch.output_head == OutputHead::softmax_categorical;
  switch (kind.kind) {
    case LossKind::Kind::zero_one:
    case LossKind::Kind::nll_categorical:
      if (!categorical) throw IncompatibleLoss("categorical loss requested on a Gaussian output head");
      break;
    case LossKind::Kind::nll_gaussian:
      if (categorical) throw IncompatibleLoss("Gaussian NLL requested on a softmax output head");
      break;
  }
}

std::size_t class_index(double target, std::size_t num_classes) {
  const double r = std::round(target);
  if (r != target || r < 0.0 || r >= static_cast<double>(num_classes))
    throw InvalidArgument("class label must be an integer in [0, " + std::to_string(num_classes) + ")");
  return static_cast<std::size_t>(r);
}

// dLoss/df for one sample.
Eigen::VectorXd output_gradient(const Eigen::VectorXd& f, double target, const LossKind& kind) {
  if (kind.kind == LossKind::Kind::nll_categorical) {
    Eigen::VectorXd g = softmax(f);
    g(static_cast<Eigen::Index>(class_index(target, static_cast<std::size_t>(f.size())))) -= 1.0;
    return g;
  }
  Eigen::VectorXd g(1);
  g(0) = (f(0) - target) / kind.variance;
  return g;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

std::string to_string(OutputHead h) {
  return h == OutputHead::softmax_categorical ? "softmax_categorical" : "gaussian";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw InvalidArgument("unknown activation '" + s + "'");
}

OutputHead parse_output_head(const std::string& s) {
  if (s == "softmax_categorical" || s == "softmax") return OutputHead::softmax_categorical;
  if (s == "gaussian") return OutputHead::gaussian;
  throw InvalidArgument("unknown output head '" + s + "'");
}

void MlpArchitecture::validate() const {
  if (layer_sizes.size() < 2) throw InvalidArgument("architecture needs at least input and output sizes");
  for (auto s : layer_sizes)
    if (s < 1) throw InvalidArgument("layer sizes must be >= 1");
  if (output_head == OutputHead::gaussian && output_dim() != 1)
    throw InvalidArgument("Gaussian head requires a single output");
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance))
    throw InvalidArgument("noise variance must be positive");
}

std::size_t MlpArchitecture::parameter_count() const {
  std::size_t d = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) d += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return d;
}

std::vector<LayerShape> MlpArchitecture::layers() const {
  std::vector<LayerShape> out;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    LayerShape s;
    s.in = layer_sizes[l];
    s.out = layer_sizes[l + 1];
    s.weight_offset = offset;
    s.bias_offset = offset + s.in * s.out;
    offset += s.parameter_count();
    out.push_back(s);
  }
  return out;
}

ModelParams::ModelParams(MlpArchitecture arch, Eigen::VectorXd weights)
    : arch_(std::move(arch)), weights_(std::move(weights)) {
  arch_.validate();
  if (static_cast<std::size_t>(weights_.size()) != arch_.parameter_count())
    throw InvalidArgument("weight vector has length " + std::to_string(weights_.size()) + ", architecture needs " +
                          std::to_string(arch_.parameter_count()));
  if (!weights_.allFinite()) throw InvalidArgument("weights must be finite");
  layers_ = arch_.layers();
}

ModelParams initialize_params(const MlpArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(arch.parameter_count()));
  Rng rng(derive_seed(seed, 0x1417));
  for (const auto& s : arch.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t k = 0; k < s.in * s.out; ++k) w(static_cast<Eigen::Index>(s.weight_offset + k)) = u(rng);
  }
  return ModelParams(arch, std::move(w));
}

LossKind LossKind::nll_gaussian(double variance) {
  if (!(variance > 0.0)) throw InvalidArgument("Gaussian likelihood variance must be positive");
  return {Kind::nll_gaussian, variance};
}

LossKind likelihood_of(const MlpArchitecture& arch) {
  return arch.output_head == OutputHead::gaussian ? LossKind::nll_gaussian(arch.noise_variance)
                                                  : LossKind::nll_categorical();
}

Eigen::VectorXd forward(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  auto t = trace_forward(params, x);
  return std::move(t.preacts.back());
}

Eigen::MatrixXd forward_batch(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  const auto& arch = params.arch();
  if (static_cast<std::size_t>(inputs.cols()) != arch.input_dim())
    throw InvalidArgument("input matrix has " + std::to_string(inputs.cols()) + " columns, expected " +
                          std::to_string(arch.input_dim()));
  const auto& layers = params.layers();
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd s = a * weight_map(params, layers[l]).transpose();
    s.rowwise() += bias_map(params, layers[l]).transpose();
    if (l + 1 < layers.size()) s = s.unaryExpr([&](double v) { return activate(arch.activation, v); });
    a = std::move(s);
  }
  return a;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

void softmax_rows_inplace(Eigen::MatrixXd& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
}

std::size_t argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  std::size_t best = 0;
  for (Eigen::Index k = 1; k < v.size(); ++k)
    if (v(k) > v(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(k);
  return best;
}

double loss(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x, double target,
            const LossKind& kind) {
  check_loss_head(params.arch(), kind);
  const Eigen::VectorXd f = forward(params, x);
  switch (kind.kind) {
    case LossKind::Kind::zero_one: {
      const auto y = class_index(target, static_cast<std::size_t>(f.size()));
      return argmax(f) == y ? 0.0 : 1.0;
    }
    case LossKind::Kind::nll_categorical: {
      const auto y = class_index(target, static_cast<std::size_t>(f.size()));
      return log_sum_exp(f) - f(static_cast<Eigen::Index>(y));
    }
    case LossKind::Kind::nll_gaussian: {
      const double r = target - f(0);
      return 0.5 * std::log(2.0 * std::numbers::pi * kind.variance) + r * r / (2.0 * kind.variance);
    }
  }
  return 0.0;
}

Eigen::VectorXd grad_loss(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x, double target,
                          const LossKind& kind) {
  check_loss_head(params.arch(), kind);
  if (!kind.differentiable()) throw NonDifferentiableLoss("the zero-one loss has no gradient");
  const auto t = trace_forward(params, x);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  backprop_into(params, t, output_gradient(t.preacts.back(), target, kind), grad);
  return grad;
}

SensitivityTrace layer_sensitivities(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const auto t = trace_forward(params, x);
  const auto& layers = params.layers();
  const auto act = params.arch().activation;
  const auto num_out = static_cast<Eigen::Index>(params.arch().output_dim());
  SensitivityTrace out;
  out.output = t.preacts.back();
  out.layers.resize(layers.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(num_out, num_out);
  for (std::size_t l = layers.size(); l-- > 0;) {
    out.layers[l].input = t.inputs[l];
    if (l > 0) {
      Eigen::MatrixXd back = d * weight_map(params, layers[l]);
      const auto& pre = t.preacts[l - 1];
      for (Eigen::Index j = 0; j < back.cols(); ++j) back.col(j) *= activate_derivative(act, pre(j));
      out.layers[l].output_by_preact = std::move(d);
      d = std::move(back);
    } else {
      out.layers[l].output_by_preact = std::move(d);
    }
  }
  return out;
}

Eigen::MatrixXd per_sample_jacobian(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const auto sens = layer_sensitivities(params, x);
  const auto& layers = params.layers();
  const auto num_out = static_cast<Eigen::Index>(params.arch().output_dim());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(num_out, static_cast<Eigen::Index>(params.size()));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = layers[l];
    const auto& ls = sens.layers[l];
    for (Eigen::Index c = 0; c < num_out; ++c) {
      for (std::size_t o = 0; o < s.out; ++o) {
        const double g = ls.output_by_preact(c, static_cast<Eigen::Index>(o));
        for (std::size_t i = 0; i < s.in; ++i)
          jac(c, static_cast<Eigen::Index>(s.weight_index(o, i))) = g * ls.input(static_cast<Eigen::Index>(i));
        jac(c, static_cast<Eigen::Index>(s.bias_offset + o)) = g;
      }
    }
  }
  return jac;
}

double mean_loss(const ModelParams& params, const Dataset& data, const LossKind& kind) {
  check_loss_head(params.arch(), kind);
  const Eigen::MatrixXd f = forward_batch(params, data.inputs());
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    switch (kind.kind) {
      case LossKind::Kind::zero_one:
        total += argmax(f.row(row).transpose()) == class_index(data.target(i), static_cast<std::size_t>(f.cols())) ? 0.0
                                                                                                                    : 1.0;
        break;
      case LossKind::Kind::nll_categorical: {
        const auto y = class_index(data.target(i), static_cast<std::size_t>(f.cols()));
        total += log_sum_exp(f.row(row).transpose()) - f(row, static_cast<Eigen::Index>(y));
        break;
      }
      case LossKind::Kind::nll_gaussian: {
        const double r = data.target(i) - f(row, 0);
        total += 0.5 * std::log(2.0 * std::numbers::pi * kind.variance) + r * r / (2.0 * kind.variance);
        break;
      }
    }
  }
  return total / static_cast<double>(data.size());
}

Eigen::VectorXd mean_grad_loss(const ModelParams& params, const Dataset& data, const LossKind& kind,
                               const std::vector<std::size_t>& rows) {
  check_loss_head(params.arch(), kind);
  if (!kind.differentiable()) throw NonDifferentiableLoss("the zero-one loss has no gradient");
  const auto& arch = params.arch();
  const auto& layers = params.layers();

  Eigen::MatrixXd x;
  if (rows.empty()) {
    x = data.inputs();
  } else {
    x.resize(static_cast<Eigen::Index>(rows.size()), data.inputs().cols());
    for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = data.inputs().row(static_cast<Eigen::Index>(rows[r]));
  }
  const auto m = x.rows();
  if (static_cast<std::size_t>(x.cols()) != arch.input_dim()) throw InvalidArgument("dataset input dimension mismatch");

  // Batched forward keeping every layer input and pre-activation.
  std::vector<Eigen::MatrixXd> ins;
  std::vector<Eigen::MatrixXd> pres;
  ins.reserve(layers.size());
  pres.reserve(layers.size());
  Eigen::MatrixXd a = std::move(x);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd s = a * weight_map(params, layers[l]).transpose();
    s.rowwise() += bias_map(params, layers[l]).transpose();
    ins.push_back(std::move(a));
    if (l + 1 < layers.size()) a = s.unaryExpr([&](double v) { return activate(arch.activation, v); });
    pres.push_back(std::move(s));
  }

  Eigen::MatrixXd delta = pres.back();
  for (Eigen::Index r = 0; r < m; ++r) {
    const std::size_t src = rows.empty() ? static_cast<std::size_t>(r) : rows[static_cast<std::size_t>(r)];
    delta.row(r) = output_gradient(pres.back().row(r).transpose(), data.target(src), kind).transpose();
  }

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& s = layers[l];
    Eigen::Map<RowMatrix> gw(grad.data() + s.weight_offset, static_cast<Eigen::Index>(s.out),
                             static_cast<Eigen::Index>(s.in));
    gw.noalias() = delta.transpose() * ins[l];
    grad.segment(static_cast<Eigen::Index>(s.bias_offset), static_cast<Eigen::Index>(s.out)) =
        delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd back = delta * weight_map(params, s);
      back.array() *= pres[l - 1].unaryExpr([&](double v) { return activate_derivative(arch.activation, v); }).array();
      delta = std::move(back);
    }
  }
  return grad / static_cast<double>(m);
}

}  // namespace tempest
