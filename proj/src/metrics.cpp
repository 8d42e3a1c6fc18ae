#include "tempest/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "tempest/errors.hpp"

namespace tempest {

namespace {

void require_classification(const Dataset& data, const MlpArchitecture& arch) {
  if (!data.is_classification() || arch.output_head != OutputHead::softmax_categorical)
    throw IncompatibleLoss("classification metrics need a softmax head and labelled data");
  if (data.num_classes() != arch.output_dim()) throw InvalidArgument("class count does not match the output layer");
}

std::size_t row_errors(const Eigen::MatrixXd& logits, const Dataset& data) {
  std::size_t errors = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    if (static_cast<int>(argmax(logits.row(i).transpose())) != data.label(static_cast<std::size_t>(i))) ++errors;
  return errors;
}

}  // namespace

PredictiveResult posterior_predictive(const TemperedPosterior& post, const Dataset& data, std::size_t num_samples,
                                      std::uint64_t seed, std::size_t jobs) {
  if (num_samples < 1) throw InvalidArgument("num_samples must be at least 1");
  const auto& arch = post.mean.arch();
  const auto n = static_cast<Eigen::Index>(data.size());
  const bool categorical = arch.output_head == OutputHead::softmax_categorical;

  // Per-sample outputs are summed in sample order so the result is independent of `jobs`.
  std::vector<Eigen::MatrixXd> outputs(num_samples);
  auto compute = [&](std::size_t s) {
    Eigen::MatrixXd f = forward_batch(sample_weight(post, seed, s), data.inputs());
    if (categorical) softmax_rows_inplace(f);
    outputs[s] = std::move(f);
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, num_samples));
  if (jobs == 1) {
    for (std::size_t s = 0; s < num_samples; ++s) compute(s);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t s = t; s < num_samples; s += jobs) compute(s);
      });
  }

  PredictiveResult out;
  out.num_mc_samples = num_samples;
  out.seed = seed;
  const double inv = 1.0 / static_cast<double>(num_samples);
  if (categorical) {
    out.probs = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(arch.output_dim()));
    for (const auto& p : outputs) out.probs += p;
    out.probs *= inv;
    return out;
  }
  out.means = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd second = Eigen::VectorXd::Zero(n);
  for (const auto& f : outputs) {
    out.means += f.col(0);
    second += f.col(0).cwiseAbs2();
  }
  out.means *= inv;
  out.variances = (second * inv - out.means.cwiseAbs2()).cwiseMax(0.0).array() + arch.noise_variance;
  return out;
}

PredictiveResult point_predictive(const ModelParams& params, const Dataset& data) {
  PredictiveResult out;
  Eigen::MatrixXd f = forward_batch(params, data.inputs());
  if (params.arch().output_head == OutputHead::softmax_categorical) {
    softmax_rows_inplace(f);
    out.probs = std::move(f);
  } else {
    out.means = f.col(0);
    out.variances = Eigen::VectorXd::Constant(f.rows(), params.arch().noise_variance);
  }
  return out;
}

std::size_t calibration_bin(double confidence, std::size_t num_classes, std::size_t num_bins) {
  const double lo = 1.0 / static_cast<double>(num_classes);
  const double width = (1.0 - lo) / static_cast<double>(num_bins);
  if (!(width > 0.0)) return 0;
  const double pos = (confidence - lo) / width;
  if (pos <= 0.0) return 0;
  return std::min(num_bins - 1, static_cast<std::size_t>(pos));
}

MetricTriple evaluate(const PredictiveResult& pred, const Dataset& data, std::size_t num_bins) {
  if (num_bins < 1) throw InvalidArgument("num_bins must be at least 1");
  if (!data.is_classification()) throw UnsupportedError("metric triple is defined for classification only");
  const auto& p = pred.probs;
  if (p.rows() != static_cast<Eigen::Index>(data.size()) || p.cols() != static_cast<Eigen::Index>(data.num_classes()))
    throw InvalidArgument("predictive probabilities do not match the dataset shape");

  const std::size_t n = data.size();
  const std::size_t k = data.num_classes();
  std::vector<double> conf_sum(num_bins, 0.0);
  std::vector<double> correct_sum(num_bins, 0.0);
  std::vector<std::size_t> counts(num_bins, 0);
  double errors = 0.0;
  double nll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = p.row(static_cast<Eigen::Index>(i));
    const std::size_t top = argmax(row.transpose());
    const double conf = row(static_cast<Eigen::Index>(top));
    const int y = data.label(i);
    const bool correct = static_cast<int>(top) == y;
    if (!correct) errors += 1.0;
    nll -= std::log(std::max(row(y), kProbabilityFloor));
    const std::size_t b = calibration_bin(conf, k, num_bins);
    conf_sum[b] += conf;
    correct_sum[b] += correct ? 1.0 : 0.0;
    ++counts[b];
  }

  MetricTriple m;
  m.zero_one = errors / static_cast<double>(n);
  m.nll = nll / static_cast<double>(n);
  m.per_bin.resize(num_bins);
  for (std::size_t b = 0; b < num_bins; ++b) {
    m.per_bin[b].count = counts[b];
    if (counts[b] > 0) {
      m.per_bin[b].confidence = conf_sum[b] / static_cast<double>(counts[b]);
      m.per_bin[b].accuracy = correct_sum[b] / static_cast<double>(counts[b]);
    }
  }
  m.ece = ece_from_bins(m.per_bin);
  return m;
}

double ece_from_bins(const std::vector<CalibrationBin>& bins) {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  if (n == 0) return 0.0;
  double ece = 0.0;
  for (const auto& b : bins)
    ece += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(b.accuracy - b.confidence);
  return ece;
}

double predictive_relative_entropy(const PredictiveResult& pred, const Dataset& data) {
  if (!data.has_true_conditional())
    throw UnsupportedError("dataset '" + data.name() + "' has no ground-truth conditional");
  const auto& truth = data.true_conditional();
  if (pred.probs.rows() != truth.rows() || pred.probs.cols() != truth.cols())
    throw InvalidArgument("predictive probabilities do not match the dataset shape");
  double total = 0.0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    for (Eigen::Index y = 0; y < truth.cols(); ++y) {
      const double t = truth(i, y);
      if (t > 0.0) total += t * (std::log(t) - std::log(std::max(pred.probs(i, y), kProbabilityFloor)));
    }
  }
  return total / static_cast<double>(truth.rows());
}

JensenChain jensen_chain(const TemperedPosterior& post, const Dataset& data, std::size_t num_samples,
                         std::uint64_t seed) {
  require_classification(data, post.mean.arch());
  const auto& truth = data.true_conditional();
  const auto n = truth.rows();
  JensenChain out;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index y = 0; y < truth.cols(); ++y)
      if (truth(i, y) > 0.0) out.data_log_likelihood += truth(i, y) * std::log(truth(i, y));
  out.data_log_likelihood /= static_cast<double>(n);

  Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(n, truth.cols());
  double gibbs = 0.0;
  for (std::size_t s = 0; s < num_samples; ++s) {
    Eigen::MatrixXd logits = forward_batch(sample_weight(post, seed, s), data.inputs());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lse = log_sum_exp(logits.row(i).transpose());
      for (Eigen::Index y = 0; y < truth.cols(); ++y) {
        const double logp = logits(i, y) - lse;
        gibbs -= truth(i, y) * logp;
        mix(i, y) += std::exp(logp);
      }
    }
  }
  gibbs /= static_cast<double>(num_samples) * static_cast<double>(n);
  out.gibbs_nll = gibbs;
  PredictiveResult pred;
  pred.probs = mix / static_cast<double>(num_samples);
  pred.num_mc_samples = num_samples;
  pred.seed = seed;
  out.relative_entropy = predictive_relative_entropy(pred, data);
  return out;
}

double gibbs_zero_one(const TemperedPosterior& post, const Dataset& data, std::size_t num_samples, std::uint64_t seed) {
  if (num_samples < 1) throw InvalidArgument("num_samples must be at least 1");
  require_classification(data, post.mean.arch());
  double total = 0.0;
  for (std::size_t s = 0; s < num_samples; ++s)
    total += static_cast<double>(row_errors(forward_batch(sample_weight(post, seed, s), data.inputs()), data));
  return total / (static_cast<double>(num_samples) * static_cast<double>(data.size()));
}

}  // namespace tempest
