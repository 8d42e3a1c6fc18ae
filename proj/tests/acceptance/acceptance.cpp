// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.
// Pass criterion numbers as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "tempest/bounds.hpp"
#include "tempest/data.hpp"
#include "tempest/errors.hpp"
#include "tempest/experiment.hpp"
#include "tempest/laplace.hpp"
#include "tempest/metrics.hpp"
#include "tempest/rng.hpp"
#include "tempest/trainer.hpp"

using namespace tempest;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::filesystem::path work_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "tempest_acceptance" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Smallest |pre-activation| over hidden units; finite differences are meaningless across a relu kink.
double min_abs_preactivation(const MlpArchitecture& arch, const Eigen::VectorXd& w, const Eigen::VectorXd& x) {
  double smallest = std::numeric_limits<double>::infinity();
  std::vector<double> a(x.data(), x.data() + x.size());
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < arch.layer_sizes.size(); ++l) {
    const std::size_t in = arch.layer_sizes[l];
    const std::size_t out = arch.layer_sizes[l + 1];
    std::vector<double> s(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = w(static_cast<Eigen::Index>(offset + in * out + o));
      for (std::size_t i = 0; i < in; ++i) acc += w(static_cast<Eigen::Index>(offset + o * in + i)) * a[i];
      s[o] = acc;
      if (l + 2 < arch.layer_sizes.size()) smallest = std::min(smallest, std::abs(acc));
    }
    if (l + 2 < arch.layer_sizes.size())
      for (auto& v : s)
        v = arch.activation == Activation::tanh ? std::tanh(v) : arch.activation == Activation::relu ? std::max(v, 0.0) : v;
    a = std::move(s);
    offset += (in + 1) * out;
  }
  return smallest;
}

// Component-wise relative error with a small absolute floor for entries that are zero in both.
double fd_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& fd) {
  return oracle::max_relative_error(analytic, fd, 1e-6);
}

Outcome criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240611);
  double worst = 0.0;
  int configs = 0;
  while (configs < 100) {
    const auto net = oracle::random_net(rng, 8, 400);
    const Eigen::VectorXd x = oracle::random_input(rng, net.arch.input_dim());
    if (net.arch.activation == Activation::relu && min_abs_preactivation(net.arch, net.w, x) < 1e-2) continue;
    const ModelParams p(net.arch, net.w);
    const LossKind kind = likelihood_of(net.arch);
    const double target = net.arch.output_head == OutputHead::gaussian
                              ? std::normal_distribution<double>(0.0, 1.0)(rng)
                              : static_cast<double>(rng() % net.arch.output_dim());
    const Eigen::VectorXd g = grad_loss(p, x, target, kind);
    const Eigen::VectorXd g_fd = oracle::five_point_difference(
        [&](const Eigen::VectorXd& w) { return loss(p.with_weights(w), x, target, kind); }, net.w);
    worst = std::max(worst, fd_error(g, g_fd));

    const Eigen::MatrixXd J = per_sample_jacobian(p, x);
    Eigen::MatrixXd J_fd(J.rows(), J.cols());
    for (Eigen::Index k = 0; k < J.rows(); ++k)
      J_fd.row(k) = oracle::five_point_difference(
                        [&](const Eigen::VectorXd& w) { return forward(p.with_weights(w), x)(k); }, net.w)
                        .transpose();
    worst = std::max(worst, fd_error(J, J_fd));
    ++configs;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst < 1e-5 && seconds < 30.0,
          fmt("%d configurations, max relative error %.3g, %.2f s", configs, worst, seconds)};
}

Outcome criterion_ggn() {
  std::mt19937_64 rng(4242);
  double worst_trace = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = oracle::random_net(rng, 7, 200);
    const Dataset data = oracle::random_dataset(rng, net.arch, 6);
    const auto dense = oracle::dense_ggn(net.arch, net.w, data);
    worst_trace = std::max(worst_trace, oracle::relative_error(ggn_trace(ModelParams(net.arch, net.w), data).h,
                                                              dense.diagonal_h));
  }
  double worst_block = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = oracle::random_net(rng, 7, 200);
    const ModelParams p(net.arch, net.w);
    const Dataset one = oracle::random_dataset(rng, net.arch, 1);
    const auto dense = oracle::dense_ggn(net.arch, net.w, one);
    const auto curv = kfac_factors(p, one);
    for (std::size_t l = 0; l < p.layers().size(); ++l) {
      const auto& s = p.layers()[l];
      const auto off = static_cast<Eigen::Index>(s.weight_offset);
      const auto n = static_cast<Eigen::Index>(s.parameter_count());
      const Eigen::MatrixXd diff = kfac_block_dense(curv.kfac[l], s) - dense.matrix.block(off, off, n, n);
      worst_block = std::max(worst_block, diff.cwiseAbs().maxCoeff());
    }
  }
  return {worst_trace < 1e-8 && worst_block < 1e-8,
          fmt("trace relative error %.3g on 20 nets, single-sample KFAC block error %.3g", worst_trace, worst_block)};
}

TemperedPosterior isotropic_posterior(const Eigen::VectorXd& mean, double variance, double prior_variance) {
  MlpArchitecture arch;
  arch.layer_sizes = {static_cast<std::size_t>(mean.size()) - 1, 1};
  arch.activation = Activation::identity;
  arch.output_head = OutputHead::gaussian;
  return TemperedPosterior{ModelParams(arch, mean), PosteriorKind::isotropic, 1.0, prior_variance, variance, {}};
}

Outcome criterion_kl() {
  const Eigen::Vector2d mean(0.4, -0.3);
  const Eigen::Vector2d prior_mean(-0.1, 0.2);
  const double v = 0.6;
  const double s = 1.5;
  const int steps = 1200;
  const double half = 10.0 * std::sqrt(v);
  const double dx = 2.0 * half / steps;
  double quad = 0.0;
  for (int a = 0; a < steps; ++a) {
    for (int b = 0; b < steps; ++b) {
      const Eigen::Vector2d w(mean(0) - half + (a + 0.5) * dx, mean(1) - half + (b + 0.5) * dx);
      const double lp = -(w - mean).squaredNorm() / (2 * v) - std::log(2 * std::numbers::pi * v);
      const double lq = -(w - prior_mean).squaredNorm() / (2 * s) - std::log(2 * std::numbers::pi * s);
      quad += std::exp(lp) * (lp - lq) * dx * dx;
    }
  }
  const double quad_error = std::abs(gaussian_kl(isotropic_posterior(mean, v, s), prior_mean, s) - quad);

  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> dim(2, 40);
  std::uniform_real_distribution<double> log_scale(-6.0, 6.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  int negative = 0;
  double smallest = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 100000; ++trial) {
    const auto d = dim(rng);
    Eigen::VectorXd m(d), pm(d);
    const double scale = std::pow(10.0, log_scale(rng) / 3.0);
    for (int j = 0; j < d; ++j) {
      m(j) = scale * normal(rng);
      pm(j) = trial % 4 == 0 ? m(j) : scale * normal(rng);
    }
    const double kl = gaussian_kl(isotropic_posterior(m, std::pow(10.0, log_scale(rng)), std::pow(10.0, log_scale(rng))),
                                  pm, std::pow(10.0, log_scale(rng)));
    if (!(kl >= 0.0)) ++negative;
    smallest = std::min(smallest, kl);
  }
  // Equal variances and means give exactly zero up to rounding.
  Eigen::VectorXd m = Eigen::VectorXd::Constant(5, 0.3);
  const double equal = gaussian_kl(isotropic_posterior(m, 0.7, 0.7), m, 0.7);
  return {quad_error < 1e-4 && negative == 0 && std::abs(equal) < 1e-12,
          fmt("quadrature error %.3g, %d negative of 1e5 (min %.3g), equal-distribution KL %.3g", quad_error,
              negative, smallest, equal)};
}

Outcome criterion_catoni() {
  bool endpoints = true;
  for (double lambda : {1e-9, 1e-4, 0.3, 1.0, 2.5, 40.0, 700.0, 1e5})
    endpoints = endpoints && catoni_inverse(lambda, 0.0) == 0.0 && catoni_inverse(lambda, 1.0) == 1.0;
  // Reference values from 50-digit evaluations of (1 - e^{-x}) / (1 - e^{-1}).
  const double at_argument = catoni_inverse(1.0, 0.110300);
  const double expected_argument = 0.16521306446525508763;
  const double full = catoni_bound(0.1, 100.0, 10000, 1.0, 0.05).value;
  const double expected_full = 0.16521245982915962337;
  const double err = std::max(std::abs(at_argument - expected_argument), std::abs(full - expected_full));
  return {endpoints && err <= 1e-6,
          fmt("endpoints %s, Phi^-1_1(0.110300) = %.12f, bound(0.1, KL 100, n 1e4, delta 0.05) = %.12f, error %.3g",
              endpoints ? "exact" : "wrong", at_argument, full, err)};
}

Outcome criterion_catoni_frequency() {
  const auto start = std::chrono::steady_clock::now();
  const BlobsSpec spec{.n = 500};
  MlpArchitecture arch;
  arch.layer_sizes = {2, 8, 3};
  arch.activation = Activation::tanh;
  // Prior mean from an independent sample, fixed across draws.
  const Dataset prior_data = make_blobs({.n = 1000}, 900001);
  const MapEstimate map = train_map(arch, prior_data, TrainConfig{.epochs = 40, .seed = 3});
  const Dataset heldout = make_blobs({.n = 100000}, 900002);
  const std::vector<double> lambdas = log_grid(1e-2, 1e2, 10);
  const double prior_variance = 0.1;
  const std::size_t mc = 10;
  std::vector<int> held(lambdas.size(), 0);
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    const Dataset sample = make_blobs(spec, derive_seed(31337, draw));
    const CurvatureSummary curvature = ggn_trace(map.params, sample);
    const std::uint64_t mc_seed = derive_seed(4711, draw);
    const auto reports = evaluate_bound_pipeline(map.params, curvature, sample, lambdas, prior_variance, 0.05,
                                                 {.num_mc_samples = mc, .seed = mc_seed});
    for (std::size_t j = 0; j < lambdas.size(); ++j) {
      const auto post = fit_tempered_posterior(map.params, curvature, lambdas[j], prior_variance, PosteriorKind::isotropic);
      const double risk = gibbs_zero_one(post, heldout, mc, mc_seed);
      if (reports[j].value >= risk) ++held[j];
      min_gap = std::min(min_gap, reports[j].value - risk);
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const int fewest = *std::min_element(held.begin(), held.end());
  std::string counts;
  for (int h : held) counts += std::to_string(h) + " ";
  return {fewest >= 95 && seconds < 600.0,
          fmt("bound >= held-out risk per lambda: %s(min %d/100, smallest gap %.3g), %.1f s", counts.c_str(), fewest,
              min_gap, seconds)};
}

Outcome criterion_proposition_frequency() {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig config = parse_config(json{{"output_dir", work_dir("prop").string()}});
  const auto rows = cmd_prop_bound(config);
  const double delta = config.delta;
  std::vector<double> lambdas;
  for (const auto& r : rows)
    if (std::find(lambdas.begin(), lambdas.end(), r.lambda) == lambdas.end()) lambdas.push_back(r.lambda);
  double worst_rate = 0.0;
  std::size_t admissible = 0;
  bool complete = true;
  for (double lambda : lambdas) {
    std::size_t n = 0, violated = 0;
    for (const auto& r : rows) {
      if (r.lambda != lambda || !r.admissible) continue;
      ++n;
      violated += *r.violated ? 1 : 0;
    }
    if (n == 0) continue;
    complete = complete && n == config.world.num_worlds;
    ++admissible;
    worst_rate = std::max(worst_rate, static_cast<double>(violated) / static_cast<double>(n));
  }

  const SyntheticWorld& world = config.world.world;
  const double c = world.admissibility_constant();
  const WorldData data = generate_world_data(world, world.n, 1);
  bool pole = true;
  double previous = 0.0;
  for (int i = 1; i <= 12; ++i) {
    const double v = proposition_bound(world, data.residual_sq(), data.curvature(), (1.0 - std::pow(10.0, -i)) / c, delta).value;
    pole = pole && v > previous;
    previous = v;
  }
  pole = pole && previous > 1e6;
  int refused = 0;
  for (double factor : {1.0, 1.0 + 1e-12, 2.0, 1e3}) {
    try {
      proposition_bound(world, data.residual_sq(), data.curvature(), factor / c, delta);
    } catch (const ConstraintViolation&) {
      ++refused;
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {complete && admissible > 0 && worst_rate <= delta + 0.03 && pole && refused == 4 && seconds < 300.0,
          fmt("%zu worlds x %zu admissible lambdas, worst violation rate %.3f, pole %s, %d/4 inadmissible refused, %.1f s",
              config.world.num_worlds, admissible, worst_rate, pole ? "diverges" : "missing", refused, seconds)};
}

// Test 0-1 of each kept MAP against the sweep's lambda = 1e12 test rows.
std::pair<std::size_t, std::size_t> collapse_matches(const json& j) {
  const ExperimentConfig config = parse_config(j);
  cmd_train_map(config);
  const auto rows = cmd_sweep(config);
  const auto maps = load_maps(config);
  const auto splits = split_dataset(load_dataset(config.dataset), config.split, config.split_seed);
  std::size_t equal = 0;
  for (const auto& m : maps) {
    const double map_test = evaluate(point_predictive(m.params, splits.test), splits.test).zero_one;
    for (const auto& r : rows)
      if (r.seed == m.config.seed && r.split == "test" && r.zero_one == map_test) ++equal;
  }
  return {equal, maps.size()};
}

Outcome criterion_collapse() {
  const auto blobs_dir = work_dir("collapse_blobs");
  const auto blobs = collapse_matches({{"dataset", {{"kind", "blobs"}, {"n", 1000}, {"seed", 5}}},
                                       {"train", {{"epochs", 30}}},
                                       {"lambda_grid", {1e12}},
                                       {"num_seeds", 10},
                                       {"num_mc_samples", 20},
                                       {"output_dir", blobs_dir.string()}});
  const auto idx_dir = work_dir("collapse_idx");
  write_synthetic_idx(idx_dir / "images.idx", idx_dir / "labels.idx", 1200, 4, 8, 12);
  const auto idx = collapse_matches({{"dataset",
                                      {{"kind", "idx"},
                                       {"images", (idx_dir / "images.idx").string()},
                                       {"labels", (idx_dir / "labels.idx").string()},
                                       {"subset", 800},
                                       {"num_classes", 4}}},
                                     {"model", {{"hidden", {12}}}},
                                     {"train", {{"epochs", 20}}},
                                     {"lambda_grid", {1e12}},
                                     {"num_seeds", 10},
                                     {"num_mc_samples", 20},
                                     {"output_dir", (idx_dir / "out").string()}});
  return {blobs.second == 10 && idx.second == 10 && blobs.first == 10 && idx.first == 10,
          fmt("lambda = 1e12 test 0-1 equals the MAP test 0-1 for %zu/%zu blobs seeds and %zu/%zu IDX seeds",
              blobs.first, blobs.second, idx.first, idx.second)};
}

Outcome criterion_map_variability() {
  std::vector<double> grid = {1e-300};
  for (int e = -6; e <= 4; ++e) grid.push_back(std::pow(10.0, e));
  grid.push_back(1e12);
  const ExperimentConfig config = parse_config({{"dataset", {{"kind", "blobs"}, {"n", 1000}, {"seed", 1}}},
                                                {"model", {{"hidden", {16}}, {"activation", "tanh"}}},
                                                {"train", {{"epochs", 50}}},
                                                {"lambda_grid", grid},
                                                {"num_seeds", 10},
                                                {"num_mc_samples", 100},
                                                {"prior", {{"value", 1e8}}},
                                                {"output_dir", work_dir("variability").string()}});
  cmd_train_map(config);
  const auto result = cmd_map_variability(config);
  const double lo = result.rows.front().std_zero_one;
  const double hi = result.rows.back().std_zero_one;
  double peak = 0.0;
  double peak_lambda = 0.0;
  for (std::size_t i = 1; i + 1 < result.rows.size(); ++i)
    if (result.rows[i].std_zero_one > peak) {
      peak = result.rows[i].std_zero_one;
      peak_lambda = result.rows[i].lambda;
    }
  const double map_std = result.map_std_zero_one;
  return {lo <= map_std + 1e-6 && hi <= map_std + 1e-6 && peak > map_std,
          fmt("MAP std %.5f; std at 1e-300 %.5f, at 1e12 %.5f, peak %.5f at lambda %.3g", map_std, lo, hi, peak,
              peak_lambda)};
}

Outcome criterion_bound_correlation() {
  const ExperimentConfig config = parse_config({{"dataset", {{"kind", "blobs"}, {"n", 2000}, {"seed", 1}}},
                                                {"model", {{"hidden", {16}}}},
                                                {"train", {{"epochs", 50}}},
                                                {"lambda_grid", {{"min", 1e-2}, {"max", 1.0}, {"points", 20}}},
                                                {"num_seeds", 3},
                                                {"num_mc_samples", 100},
                                                {"prior", {{"value", 0.1}}},
                                                {"output_dir", work_dir("bound_curve").string()}});
  cmd_train_map(config);
  const auto result = cmd_bound_curve(config);
  int good = 0;
  std::string values;
  for (std::size_t i = 0; i < result.spearman.size(); ++i) {
    if (result.spearman[i].second >= 0.8) ++good;
    values += fmt("%.3f ", result.spearman[i].second);
  }
  std::string predictive;
  for (const auto& s : result.spearman_predictive) predictive += fmt("%.3f ", s.second);
  return {result.spearman.size() == 3 && good == 3,
          fmt("Spearman(bound, Gibbs test 0-1) = %s(%d/3 >= 0.8); against predictive test 0-1: %s", values.c_str(),
              good, predictive.c_str())};
}

Outcome criterion_determinism() {
  const auto dir = work_dir("determinism");
  ExperimentConfig config = parse_config({{"dataset", {{"kind", "blobs"}, {"n", 600}, {"seed", 8}}},
                                          {"train", {{"epochs", 20}}},
                                          {"lambda_grid", {{"min", 1e-4}, {"max", 1e4}, {"points", 9}}},
                                          {"num_seeds", 4},
                                          {"num_mc_samples", 30},
                                          {"output_dir", dir.string()}});
  config.jobs = 1;
  cmd_train_map(config);
  cmd_sweep(config);
  const std::string first = slurp(dir / "sweep.csv");
  cmd_sweep(config);
  const std::string second = slurp(dir / "sweep.csv");
  return {!first.empty() && first == second,
          fmt("two --jobs 1 sweeps: %zu bytes, %s", first.size(), first == second ? "identical" : "different")};
}

Outcome criterion_jensen() {
  MlpArchitecture arch;
  arch.layer_sizes = {2, 10, 3};
  arch.activation = Activation::tanh;
  const Dataset train = make_blobs({.n = 600}, 1);
  const Dataset rows = make_blobs({.n = 10000}, 2);
  struct Cell {
    std::uint64_t seed;
    double lambda;
  };
  double worst_slack = std::numeric_limits<double>::infinity();
  bool nonnegative = true;
  for (const Cell& cell : {Cell{1, 1e-3}, Cell{2, 1e-1}, Cell{3, 1.0}, Cell{4, 10.0}, Cell{5, 1e3}}) {
    const MapEstimate map = train_map(arch, train, TrainConfig{.epochs = 30, .seed = cell.seed});
    const auto curvature = ggn_trace(map.params, train);
    const auto post = fit_tempered_posterior(map.params, curvature, cell.lambda, 1.0, PosteriorKind::isotropic);
    const auto chain = jensen_chain(post, rows, 50, derive_seed(cell.seed, 77));
    nonnegative = nonnegative && chain.relative_entropy >= 0.0;
    worst_slack = std::min(worst_slack, chain.right_hand_side() + 0.02 - chain.relative_entropy);
  }
  return {nonnegative && worst_slack >= 0.0,
          fmt("5 cells on 1e4 rows, smallest (rhs + 0.02 - relative entropy) = %.4f", worst_slack)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion_gradients},          {2, criterion_ggn},
      {3, criterion_kl},                 {4, criterion_catoni},
      {5, criterion_catoni_frequency},   {6, criterion_proposition_frequency},
      {7, criterion_collapse},           {8, criterion_map_variability},
      {9, criterion_bound_correlation},  {10, criterion_determinism},
      {11, criterion_jensen},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d: %s  %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
