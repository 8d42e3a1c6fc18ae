#include "tempest/laplace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "blob.hpp"
#include "tempest/errors.hpp"
#include "tempest/rng.hpp"

namespace tempest {

namespace {

// x - log1p(x), accurate near 0 and never negative there.
double excess_log(double x) {
  if (std::abs(x) < 1e-4) return x * x * (0.5 - x * (1.0 / 3.0 - x * 0.25));
  return x - std::log1p(x);
}

bool is_singular(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() < kFactorJitter;
}

KfacEigenLayer decompose(const KfacLayerFactors& f) {
  KfacEigenLayer out;
  auto eig = [](const Eigen::MatrixXd& m, bool singular, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
    Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    if (singular) sym.diagonal().array() += kFactorJitter;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of a Kronecker factor failed");
    values = es.eigenvalues().cwiseMax(0.0);
    vectors = es.eigenvectors();
  };
  eig(f.A, f.a_singular, out.a_values, out.a_vectors);
  eig(f.G, f.g_singular, out.g_values, out.g_vectors);
  return out;
}

nlohmann::json arch_to_json(const MlpArchitecture& a) {
  return {{"layer_sizes", a.layer_sizes},
          {"activation", to_string(a.activation)},
          {"output_head", to_string(a.output_head)},
          {"noise_variance", a.noise_variance}};
}

MlpArchitecture arch_from_json(const nlohmann::json& j) {
  MlpArchitecture a;
  a.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  a.activation = parse_activation(j.at("activation").get<std::string>());
  a.output_head = parse_output_head(j.at("output_head").get<std::string>());
  a.noise_variance = j.at("noise_variance").get<double>();
  a.validate();
  return a;
}

class PayloadReader {
 public:
  explicit PayloadReader(const std::vector<double>& p) : p_(p) {}
  Eigen::VectorXd vector(std::size_t n) {
    need(n);
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(p_.data() + pos_, static_cast<Eigen::Index>(n));
    pos_ += n;
    return v;
  }
  Eigen::MatrixXd matrix(std::size_t rows, std::size_t cols) {
    need(rows * cols);
    Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(p_.data() + pos_, static_cast<Eigen::Index>(rows),
                                                          static_cast<Eigen::Index>(cols));
    pos_ += rows * cols;
    return m;
  }
  void finish() const {
    if (pos_ != p_.size()) throw FormatError("payload has " + std::to_string(p_.size() - pos_) + " trailing values");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > p_.size()) throw FormatError("payload is shorter than its header describes");
  }
  const std::vector<double>& p_;
  std::size_t pos_ = 0;
};

void append(std::vector<double>& out, const Eigen::MatrixXd& m) { out.insert(out.end(), m.data(), m.data() + m.size()); }

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum},        {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"prior_variance", c.prior_variance}, {"seed", c.seed}};
}

}  // namespace

Eigen::VectorXd output_noise_diagonal(const MlpArchitecture& arch, const Eigen::VectorXd& f) {
  if (arch.output_head == OutputHead::gaussian) return Eigen::VectorXd::Constant(f.size(), 1.0 / arch.noise_variance);
  const Eigen::VectorXd p = softmax(f);
  return p.array() * (1.0 - p.array());
}

Eigen::MatrixXd output_noise_matrix(const MlpArchitecture& arch, const Eigen::VectorXd& f) {
  if (arch.output_head == OutputHead::gaussian)
    return Eigen::MatrixXd::Identity(f.size(), f.size()) / arch.noise_variance;
  const Eigen::VectorXd p = softmax(f);
  Eigen::MatrixXd lam = -p * p.transpose();
  lam.diagonal() += p;
  return lam;
}

CurvatureSummary ggn_trace(const ModelParams& params, const Dataset& data) {
  if (data.input_dim() != params.arch().input_dim()) throw InvalidArgument("dataset input dimension mismatch");
  CurvatureSummary out;
  out.d = params.size();
  out.n = data.size();
  double h = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto sens = layer_sensitivities(params, data.input(i));
    const Eigen::VectorXd lam = output_noise_diagonal(params.arch(), sens.output);
    for (const auto& layer : sens.layers) {
      // ||d f_k / d W_l||^2 = ||d f_k / d s_l||^2 (||a_l||^2 + 1)
      const double scale = layer.input.squaredNorm() + 1.0;
      h += scale * (layer.output_by_preact.rowwise().squaredNorm().array() * lam.array()).sum();
    }
  }
  out.h = h;
  return out;
}

CurvatureSummary kfac_factors(const ModelParams& params, const Dataset& data) {
  CurvatureSummary out = ggn_trace(params, data);
  const auto& layers = params.layers();
  out.kfac.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto in1 = static_cast<Eigen::Index>(layers[l].in + 1);
    const auto o = static_cast<Eigen::Index>(layers[l].out);
    out.kfac[l].A = Eigen::MatrixXd::Zero(in1, in1);
    out.kfac[l].G = Eigen::MatrixXd::Zero(o, o);
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto sens = layer_sensitivities(params, data.input(i));
    const Eigen::MatrixXd lam = output_noise_matrix(params.arch(), sens.output);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& ls = sens.layers[l];
      Eigen::VectorXd a(ls.input.size() + 1);
      a << ls.input, 1.0;
      out.kfac[l].A.noalias() += a * a.transpose();
      out.kfac[l].G.noalias() += ls.output_by_preact.transpose() * lam * ls.output_by_preact;
    }
  }
  for (auto& f : out.kfac) {
    f.A /= static_cast<double>(data.size());
    f.a_singular = is_singular(f.A);
    f.g_singular = is_singular(f.G);
  }
  return out;
}

Eigen::MatrixXd kfac_block_dense(const KfacLayerFactors& f, const LayerShape& s) {
  const auto p = static_cast<Eigen::Index>(s.parameter_count());
  Eigen::MatrixXd block(p, p);
  auto local = [&](std::size_t o, std::size_t i) -> Eigen::Index {
    return static_cast<Eigen::Index>(i < s.in ? s.weight_index(o, i) - s.weight_offset : s.bias_offset - s.weight_offset + o);
  };
  for (std::size_t o = 0; o < s.out; ++o)
    for (std::size_t i = 0; i <= s.in; ++i)
      for (std::size_t o2 = 0; o2 < s.out; ++o2)
        for (std::size_t i2 = 0; i2 <= s.in; ++i2)
          block(local(o, i), local(o2, i2)) =
              f.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i2)) *
              f.G(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(o2));
  return block;
}

std::string to_string(PosteriorKind k) { return k == PosteriorKind::isotropic ? "isotropic" : "kfac"; }

PosteriorKind parse_posterior_kind(const std::string& s) {
  if (s == "isotropic") return PosteriorKind::isotropic;
  if (s == "kfac") return PosteriorKind::kfac;
  throw InvalidArgument("unknown posterior kind '" + s + "'");
}

Eigen::VectorXd TemperedPosterior::layer_variances(std::size_t l) const {
  const auto& e = layers.at(l);
  const auto in1 = e.a_values.size();
  const auto out = e.g_values.size();
  Eigen::VectorXd v(in1 * out);
  for (Eigen::Index o = 0; o < out; ++o)
    for (Eigen::Index i = 0; i < in1; ++i)
      v(o * in1 + i) = 1.0 / (lambda * e.a_values(i) * e.g_values(o) + 1.0 / prior_variance);
  return v;
}

double isotropic_variance(double h, std::size_t d, double lambda, double prior_variance) {
  if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  if (!(prior_variance > 0.0)) throw InvalidArgument("prior variance must be positive");
  if (h < 0.0) throw InvalidArgument("curvature h must be nonnegative");
  if (d == 0) throw InvalidArgument("dimension must be positive");
  return 1.0 / (lambda * h / static_cast<double>(d) + 1.0 / prior_variance);
}

TemperedPosterior fit_tempered_posterior(const ModelParams& mean, const CurvatureSummary& curvature, double lambda,
                                         double prior_variance, PosteriorKind kind) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be positive and finite");
  if (!(prior_variance > 0.0) || !std::isfinite(prior_variance))
    throw InvalidArgument("prior variance must be positive and finite");
  if (curvature.d != mean.size()) throw InvalidArgument("curvature was computed for a different parameter count");
  TemperedPosterior post{mean, kind, lambda, prior_variance, 0.0, {}};
  if (kind == PosteriorKind::isotropic) {
    post.variance = isotropic_variance(curvature.h, curvature.d, lambda, prior_variance);
    return post;
  }
  if (!curvature.has_kfac()) throw InvalidArgument("KFAC posterior requires KFAC factors");
  if (curvature.kfac.size() != mean.layers().size()) throw InvalidArgument("KFAC factors do not match the layers");
  for (const auto& f : curvature.kfac) post.layers.push_back(decompose(f));
  return post;
}

ModelParams sample_weight(const TemperedPosterior& post, std::uint64_t seed, std::size_t index) {
  Rng rng = make_rng(seed, index);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd w = post.mean.weights();
  if (post.kind == PosteriorKind::isotropic) {
    const double sd = std::sqrt(post.variance);
    for (Eigen::Index j = 0; j < w.size(); ++j) w(j) += sd * normal(rng);
    return post.mean.with_weights(std::move(w));
  }
  const auto& shapes = post.mean.layers();
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    const auto& e = post.layers[l];
    const auto in1 = static_cast<Eigen::Index>(s.in + 1);
    const auto out = static_cast<Eigen::Index>(s.out);
    const Eigen::VectorXd var = post.layer_variances(l);
    Eigen::MatrixXd z(out, in1);
    for (Eigen::Index o = 0; o < out; ++o)
      for (Eigen::Index i = 0; i < in1; ++i) z(o, i) = normal(rng) * std::sqrt(var(o * in1 + i));
    // Eigenvector (u_A,i kron u_G,o) reshaped to out x (in+1) is u_G,o u_A,i^T.
    const Eigen::MatrixXd delta = e.g_vectors * z * e.a_vectors.transpose();
    for (std::size_t o = 0; o < s.out; ++o) {
      for (std::size_t i = 0; i < s.in; ++i)
        w(static_cast<Eigen::Index>(s.weight_index(o, i))) += delta(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i));
      w(static_cast<Eigen::Index>(s.bias_offset + o)) += delta(static_cast<Eigen::Index>(o), in1 - 1);
    }
  }
  return post.mean.with_weights(std::move(w));
}

std::vector<ModelParams> sample_weights(const TemperedPosterior& post, std::uint64_t seed, std::size_t count) {
  if (count < 1) throw InvalidArgument("sample count must be at least 1");
  std::vector<ModelParams> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) out.push_back(sample_weight(post, seed, s));
  return out;
}

KlTerms gaussian_kl_terms(const TemperedPosterior& post, const Eigen::VectorXd& prior_mean, double prior_variance) {
  if (!(prior_variance > 0.0)) throw InvalidArgument("prior variance must be positive");
  if (prior_mean.size() != static_cast<Eigen::Index>(post.dim())) throw InvalidArgument("prior mean has the wrong length");
  KlTerms t;
  const double d = static_cast<double>(post.dim());
  t.dim = d;
  t.mean = (post.mean.weights() - prior_mean).squaredNorm() / prior_variance;
  if (post.kind == PosteriorKind::isotropic) {
    t.trace = d * post.variance / prior_variance;
    t.log_det = d * std::log(prior_variance) - d * std::log(post.variance);
    return t;
  }
  for (std::size_t l = 0; l < post.layers.size(); ++l) {
    const Eigen::VectorXd v = post.layer_variances(l);
    t.trace += v.sum() / prior_variance;
    t.log_det += static_cast<double>(v.size()) * std::log(prior_variance) - v.array().log().sum();
  }
  return t;
}

double gaussian_kl(const TemperedPosterior& post, const Eigen::VectorXd& prior_mean, double prior_variance) {
  const KlTerms t = gaussian_kl_terms(post, prior_mean, prior_variance);
  // Per direction: r - 1 - ln r with r = posterior variance / prior variance.
  double spread = 0.0;
  if (post.kind == PosteriorKind::isotropic) {
    spread = static_cast<double>(post.dim()) * excess_log(post.variance / prior_variance - 1.0);
  } else {
    for (std::size_t l = 0; l < post.layers.size(); ++l) {
      const Eigen::VectorXd v = post.layer_variances(l);
      for (Eigen::Index j = 0; j < v.size(); ++j) spread += excess_log(v(j) / prior_variance - 1.0);
    }
  }
  return 0.5 * (t.mean + spread);
}

double laplace_log_evidence(const ModelParams& map, const Dataset& data, double h, double prior_variance,
                            const Eigen::VectorXd& prior_mean) {
  if (!(prior_variance > 0.0)) throw InvalidArgument("prior variance must be positive");
  const double n = static_cast<double>(data.size());
  const double d = static_cast<double>(map.size());
  const double fit = n * mean_loss(map, data, likelihood_of(map.arch()));
  return -fit - (map.weights() - prior_mean).squaredNorm() / (2.0 * prior_variance) -
         0.5 * d * std::log(prior_variance) - 0.5 * d * std::log(h / d + 1.0 / prior_variance);
}

double select_prior_variance(const ModelParams& map, const Dataset& data, std::span<const double> grid,
                             const std::optional<Eigen::VectorXd>& prior_mean) {
  if (grid.empty()) throw InvalidArgument("prior variance grid is empty");
  std::vector<double> sorted(grid.begin(), grid.end());
  for (double s : sorted)
    if (!(s > 0.0)) throw InvalidArgument("prior variance candidates must be positive");
  std::sort(sorted.begin(), sorted.end());
  const Eigen::VectorXd w_pi = prior_mean.value_or(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(map.size())));
  const double h = ggn_trace(map, data).h;
  double best = sorted.front();
  double best_value = -std::numeric_limits<double>::infinity();
  for (double s : sorted) {
    const double v = laplace_log_evidence(map, data, h, s, w_pi);
    if (v > best_value) {
      best_value = v;
      best = s;
    }
  }
  return best;
}

void write_posterior(const std::filesystem::path& path, const TemperedPosterior& post) {
  detail::Blob blob;
  blob.header = {{"format", "tempest-posterior"},
                 {"version", 1},
                 {"kind", to_string(post.kind)},
                 {"lambda", post.lambda},
                 {"prior_variance", post.prior_variance},
                 {"variance", post.variance},
                 {"d", post.dim()},
                 {"arch", arch_to_json(post.mean.arch())}};
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : post.mean.layers()) shapes.push_back({s.out, s.in});
  blob.header["layer_shapes"] = shapes;
  append(blob.payload, post.mean.weights());
  for (const auto& e : post.layers) {
    append(blob.payload, e.a_values);
    append(blob.payload, e.a_vectors);
    append(blob.payload, e.g_values);
    append(blob.payload, e.g_vectors);
  }
  detail::write_blob(path, blob);
}

TemperedPosterior read_posterior(const std::filesystem::path& path) {
  const auto blob = detail::read_blob(path);
  try {
    if (blob.header.at("format") != "tempest-posterior") throw FormatError("'" + path.string() + "' is not a posterior file");
    const auto arch = arch_from_json(blob.header.at("arch"));
    PayloadReader r(blob.payload);
    ModelParams mean(arch, r.vector(arch.parameter_count()));
    TemperedPosterior post{mean, parse_posterior_kind(blob.header.at("kind").get<std::string>()),
                           blob.header.at("lambda").get<double>(), blob.header.at("prior_variance").get<double>(),
                           blob.header.at("variance").get<double>(), {}};
    if (post.kind == PosteriorKind::kfac) {
      for (const auto& s : post.mean.layers()) {
        KfacEigenLayer e;
        e.a_values = r.vector(s.in + 1);
        e.a_vectors = r.matrix(s.in + 1, s.in + 1);
        e.g_values = r.vector(s.out);
        e.g_vectors = r.matrix(s.out, s.out);
        post.layers.push_back(std::move(e));
      }
    }
    r.finish();
    return post;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad posterior header in '" + path.string() + "': " + e.what());
  }
}

void write_map(const std::filesystem::path& path, const MapEstimate& map) {
  detail::Blob blob;
  blob.header = {{"format", "tempest-map"},
                 {"version", 1},
                 {"kind", "map"},
                 {"d", map.params.size()},
                 {"arch", arch_to_json(map.params.arch())},
                 {"train_nll", map.train_nll},
                 {"train_config", train_config_to_json(map.config)}};
  blob.header["train_zero_one"] = map.train_zero_one ? nlohmann::json(*map.train_zero_one) : nlohmann::json(nullptr);
  append(blob.payload, map.params.weights());
  detail::write_blob(path, blob);
}

MapEstimate read_map(const std::filesystem::path& path) {
  const auto blob = detail::read_blob(path);
  try {
    if (blob.header.at("format") != "tempest-map") throw FormatError("'" + path.string() + "' is not a MAP file");
    const auto arch = arch_from_json(blob.header.at("arch"));
    PayloadReader r(blob.payload);
    ModelParams params(arch, r.vector(arch.parameter_count()));
    r.finish();
    const auto& c = blob.header.at("train_config");
    TrainConfig cfg;
    cfg.learning_rate = c.at("learning_rate");
    cfg.momentum = c.at("momentum");
    cfg.epochs = c.at("epochs");
    cfg.batch_size = c.at("batch_size");
    cfg.prior_variance = c.at("prior_variance");
    cfg.seed = c.at("seed");
    MapEstimate m{params, blob.header.at("train_nll").get<double>(), std::nullopt, cfg};
    if (!blob.header.at("train_zero_one").is_null()) m.train_zero_one = blob.header.at("train_zero_one").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad MAP header in '" + path.string() + "': " + e.what());
  }
}

}  // namespace tempest
