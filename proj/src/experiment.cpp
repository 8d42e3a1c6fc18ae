#include "tempest/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <thread>

#include "svg.hpp"
#include "tempest/errors.hpp"
#include "tempest/rng.hpp"

namespace tempest {

namespace {

using nlohmann::json;

template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  std::vector<std::exception_ptr> errors(count);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) guarded(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < count; i += jobs) guarded(i);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

std::vector<double> parse_grid(const json& j, const std::string& where) {
  if (j.is_array()) return j.get<std::vector<double>>();
  if (j.is_object()) {
    check_keys(j, {"min", "max", "points"}, where);
    return log_grid(j.at("min").get<double>(), j.at("max").get<double>(), j.at("points").get<std::size_t>());
  }
  throw ConfigError(where + " must be a list or {min, max, points}");
}

Eigen::VectorXd parse_vector(const json& j, std::size_t d, const char* key) {
  if (!j.contains(key)) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != d) throw ConfigError(std::string("world.") + key + " must have length d");
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::filesystem::path manifest_path(const ExperimentConfig& c) { return c.output_dir / "manifest.json"; }

std::string map_file_name(std::uint64_t seed) { return "map_seed_" + std::to_string(seed) + ".bin"; }

void ensure_output_dir(const ExperimentConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + c.output_dir.string() + "': " + ec.message());
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot open '" + p.string() + "' for writing");
  return os;
}

std::string opt_double(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

double prior_variance_for(const ExperimentConfig& c, const MapEstimate& map, const Dataset& train) {
  if (!c.prior.marginal_likelihood) return c.prior.value;
  return select_prior_variance(map.params, train, c.prior.grid);
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::vector<double> log_grid(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0) || !(hi >= lo) || points < 1) throw ConfigError("log grid needs 0 < min <= max and points >= 1");
  std::vector<double> g(points);
  if (points == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

std::vector<double> default_lambda_grid() { return log_grid(1e-7, 1e4, 30); }

void ExperimentConfig::validate() const {
  split.validate();
  if (lambda_grid.empty()) throw ConfigError("lambda_grid is empty");
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] > 0.0) || !std::isfinite(lambda_grid[i]))
      throw ConfigError("lambda_grid entries must be positive, got " + format_double(lambda_grid[i]));
    if (i > 0 && !(lambda_grid[i] > lambda_grid[i - 1])) throw ConfigError("lambda_grid must be strictly ascending");
  }
  if (num_seeds < 1) throw ConfigError("num_seeds must be at least 1");
  if (num_mc_samples < 1) throw ConfigError("num_mc_samples must be at least 1");
  if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in (0, 1]");
  if (ece_bins < 1) throw ConfigError("ece_bins must be at least 1");
  if (!(prior.value > 0.0)) throw ConfigError("prior.value must be positive");
  if (prior.marginal_likelihood && prior.grid.empty()) throw ConfigError("prior.grid is empty");
  try {
    train.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  for (double l : world.lambda_grid)
    if (!(l > 0.0)) throw ConfigError("world.lambda_grid entries must be positive");
}

ExperimentConfig parse_config(const json& j) {
  check_keys(j, {"dataset", "split", "model", "train", "lambda_grid", "num_seeds", "num_mc_samples", "prior",
                 "posterior", "delta", "ece_bins", "output_dir", "jobs", "record_wall_time", "save_posteriors",
                 "world"},
             "config");
  ExperimentConfig c;
  c.lambda_grid = default_lambda_grid();
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      check_keys(d, {"kind", "seed", "n", "num_classes", "dim", "radius", "noise", "turns", "images", "labels", "subset",
                     "normalization"},
                 "dataset");
      c.dataset.kind = get_or<std::string>(d, "kind", "blobs");
      c.dataset.seed = get_or<std::uint64_t>(d, "seed", 0);
      if (c.dataset.kind == "blobs") {
        c.dataset.blobs.n = get_or<std::size_t>(d, "n", c.dataset.blobs.n);
        c.dataset.blobs.num_classes = get_or<std::size_t>(d, "num_classes", c.dataset.blobs.num_classes);
        c.dataset.blobs.dim = get_or<std::size_t>(d, "dim", c.dataset.blobs.dim);
        c.dataset.blobs.radius = get_or<double>(d, "radius", c.dataset.blobs.radius);
        c.dataset.blobs.noise = get_or<double>(d, "noise", c.dataset.blobs.noise);
      } else if (c.dataset.kind == "spirals") {
        c.dataset.spirals.n = get_or<std::size_t>(d, "n", c.dataset.spirals.n);
        c.dataset.spirals.turns = get_or<double>(d, "turns", c.dataset.spirals.turns);
        c.dataset.spirals.noise = get_or<double>(d, "noise", c.dataset.spirals.noise);
      } else if (c.dataset.kind == "idx") {
        c.dataset.images = get_or<std::string>(d, "images", "");
        c.dataset.labels = get_or<std::string>(d, "labels", "");
        if (d.contains("subset")) c.dataset.subset = d.at("subset").get<std::size_t>();
        c.dataset.normalization = parse_normalization(get_or<std::string>(d, "normalization", "unit"));
        c.dataset.num_classes = get_or<std::size_t>(d, "num_classes", 10);
      } else {
        throw ConfigError("unknown dataset kind '" + c.dataset.kind + "'");
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"train", "validation", "test", "seed"}, "split");
      c.split.train = get_or<double>(s, "train", c.split.train);
      c.split.validation = get_or<double>(s, "validation", c.split.validation);
      c.split.test = get_or<double>(s, "test", c.split.test);
      c.split_seed = get_or<std::uint64_t>(s, "seed", 0);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"hidden", "activation"}, "model");
      c.hidden = get_or<std::vector<std::size_t>>(m, "hidden", c.hidden);
      c.activation = parse_activation(get_or<std::string>(m, "activation", "tanh"));
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, {"learning_rate", "momentum", "epochs", "batch_size", "prior_variance", "seed"}, "train");
      c.train.learning_rate = get_or<double>(t, "learning_rate", c.train.learning_rate);
      c.train.momentum = get_or<double>(t, "momentum", c.train.momentum);
      c.train.epochs = get_or<std::size_t>(t, "epochs", c.train.epochs);
      c.train.batch_size = get_or<std::size_t>(t, "batch_size", c.train.batch_size);
      c.train.prior_variance = get_or<double>(t, "prior_variance", c.train.prior_variance);
      c.train.seed = get_or<std::uint64_t>(t, "seed", c.train.seed);
    }
    if (j.contains("lambda_grid")) c.lambda_grid = parse_grid(j.at("lambda_grid"), "lambda_grid");
    c.num_seeds = get_or<std::size_t>(j, "num_seeds", c.num_seeds);
    c.num_mc_samples = get_or<std::size_t>(j, "num_mc_samples", c.num_mc_samples);
    if (j.contains("prior")) {
      const auto& p = j.at("prior");
      check_keys(p, {"policy", "value", "grid"}, "prior");
      const auto policy = get_or<std::string>(p, "policy", "fixed");
      if (policy != "fixed" && policy != "marginal_likelihood") throw ConfigError("unknown prior policy '" + policy + "'");
      c.prior.marginal_likelihood = policy == "marginal_likelihood";
      c.prior.value = get_or<double>(p, "value", c.prior.value);
      if (p.contains("grid")) c.prior.grid = parse_grid(p.at("grid"), "prior.grid");
    }
    c.posterior = parse_posterior_kind(get_or<std::string>(j, "posterior", "isotropic"));
    c.delta = get_or<double>(j, "delta", c.delta);
    c.ece_bins = get_or<std::size_t>(j, "ece_bins", c.ece_bins);
    c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir.string());
    c.jobs = get_or<std::size_t>(j, "jobs", c.jobs);
    c.record_wall_time = get_or<bool>(j, "record_wall_time", false);
    c.save_posteriors = get_or<bool>(j, "save_posteriors", false);
    if (j.contains("world")) {
      const auto& w = j.at("world");
      check_keys(w, {"d", "n", "prior_variance", "likelihood_variance", "label_noise_variance", "w_star", "w_prior",
                     "w_posterior", "mixture", "base_output_scale", "lambda_grid", "num_worlds", "num_weight_samples"},
                 "world");
      auto& world = c.world.world;
      world.d = get_or<std::size_t>(w, "d", 2);
      world.n = get_or<std::size_t>(w, "n", 50);
      world.prior_variance = get_or<double>(w, "prior_variance", 1.0);
      world.likelihood_variance = get_or<double>(w, "likelihood_variance", 1.0);
      world.label_noise_variance = get_or<double>(w, "label_noise_variance", 1.0);
      world.base_output_scale = get_or<double>(w, "base_output_scale", 1.0);
      world.w_star = parse_vector(w, world.d, "w_star");
      world.w_prior = parse_vector(w, world.d, "w_prior");
      world.w_posterior = parse_vector(w, world.d, "w_posterior");
      world.mixture.clear();
      if (w.contains("mixture")) {
        for (const auto& m : w.at("mixture")) {
          check_keys(m, {"weight", "mean", "variance"}, "world.mixture[]");
          world.mixture.push_back({get_or<double>(m, "weight", 1.0), parse_vector(m, world.d, "mean"),
                                   get_or<double>(m, "variance", 1.0)});
        }
      } else {
        world.mixture.push_back({1.0, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(world.d)), 0.001});
      }
      try {
        world.validate();
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("world: ") + e.what());
      }
      if (w.contains("lambda_grid")) c.world.lambda_grid = parse_grid(w.at("lambda_grid"), "world.lambda_grid");
      c.world.num_worlds = get_or<std::size_t>(w, "num_worlds", c.world.num_worlds);
      c.world.num_weight_samples = get_or<std::size_t>(w, "num_weight_samples", c.world.num_weight_samples);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (c.world.lambda_grid.empty()) {
    const double inv_c = 1.0 / c.world.world.admissibility_constant();
    c.world.lambda_grid = log_grid(inv_c * 1e-3, inv_c * (1.0 - 1e-6), 12);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  ExperimentConfig c = parse_config(j);
  // IDX paths are relative to the config file.
  const auto base = path.parent_path();
  if (!c.dataset.images.empty() && c.dataset.images.is_relative()) c.dataset.images = base / c.dataset.images;
  if (!c.dataset.labels.empty() && c.dataset.labels.is_relative()) c.dataset.labels = base / c.dataset.labels;
  return c;
}

Dataset load_dataset(const DatasetSpec& spec) {
  if (spec.kind == "blobs") return make_blobs(spec.blobs, spec.seed);
  if (spec.kind == "spirals") return make_spirals(spec.spirals, spec.seed);
  if (spec.kind == "idx") return load_idx_dataset(spec.images, spec.labels, spec.subset, spec.normalization, spec.num_classes);
  throw ConfigError("unknown dataset kind '" + spec.kind + "'");
}

MlpArchitecture make_architecture(const ExperimentConfig& config, const Dataset& data) {
  MlpArchitecture a;
  a.layer_sizes.push_back(data.input_dim());
  for (auto h : config.hidden) a.layer_sizes.push_back(h);
  a.layer_sizes.push_back(data.num_classes());
  a.activation = config.activation;
  a.output_head = OutputHead::softmax_categorical;
  a.validate();
  return a;
}

TrainMapResult cmd_train_map(const ExperimentConfig& config) {
  config.validate();
  const Dataset data = load_dataset(config.dataset);
  const DataSplits splits = split_dataset(data, config.split, config.split_seed);
  const MlpArchitecture arch = make_architecture(config, data);
  const auto maps = seed_farm(arch, splits.train, config.train, config.num_seeds, config.jobs);
  const SeedFilter filter = filter_similar(maps);

  ensure_output_dir(config);
  TrainMapResult result;
  result.median_train_zero_one = filter.median_zero_one;
  json manifest;
  manifest["num_params"] = arch.parameter_count();
  manifest["layer_sizes"] = arch.layer_sizes;
  manifest["split_sizes"] = {splits.train.size(), splits.validation.size(), splits.test.size()};
  manifest["median_train_zero_one"] = filter.median_zero_one;
  json seeds = json::array();
  json rejected = json::array();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    SeedRecord rec;
    rec.seed = maps[i].config.seed;
    rec.file = map_file_name(rec.seed);
    rec.train_nll = maps[i].train_nll;
    rec.train_zero_one = maps[i].train_zero_one;
    rec.rejected = std::find(filter.rejected.begin(), filter.rejected.end(), i) != filter.rejected.end();
    write_map(config.output_dir / rec.file, maps[i]);
    seeds.push_back({{"seed", rec.seed},
                     {"file", rec.file},
                     {"train_nll", rec.train_nll},
                     {"train_zero_one", rec.train_zero_one ? json(*rec.train_zero_one) : json(nullptr)},
                     {"rejected", rec.rejected}});
    if (rec.rejected) rejected.push_back(rec.seed);
    result.seeds.push_back(std::move(rec));
  }
  manifest["seeds"] = seeds;
  manifest["rejected_seeds"] = rejected;
  auto os = open_out(manifest_path(config));
  os << manifest.dump(2) << '\n';
  return result;
}

std::vector<MapEstimate> load_maps(const ExperimentConfig& config) {
  std::ifstream is(manifest_path(config));
  if (!is) throw IoError("no MAP manifest at '" + manifest_path(config).string() + "'; run train-map first");
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError("bad manifest '" + manifest_path(config).string() + "': " + e.what());
  }
  std::vector<MapEstimate> maps;
  for (const auto& s : manifest.at("seeds")) {
    if (s.at("rejected").get<bool>()) continue;
    maps.push_back(read_map(config.output_dir / s.at("file").get<std::string>()));
  }
  if (maps.empty()) throw ConfigError("manifest lists no usable MAP estimates");
  return maps;
}

std::uint64_t sweep_mc_seed(std::uint64_t base_seed) { return derive_seed(base_seed, 0x5eeb); }

std::string posterior_file_name(std::uint64_t map_seed, std::size_t lambda_index) {
  return "posterior_seed_" + std::to_string(map_seed) + "_lambda_" + std::to_string(lambda_index) + ".bin";
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config) {
  config.validate();
  const Dataset data = load_dataset(config.dataset);
  const DataSplits splits = split_dataset(data, config.split, config.split_seed);
  const auto maps = load_maps(config);
  const std::size_t num_lambda = config.lambda_grid.size();

  // Curvature and prior variance once per MAP, then independent (seed, lambda) cells.
  std::vector<CurvatureSummary> curvature(maps.size());
  std::vector<double> prior_variance(maps.size());
  parallel_for(maps.size(), config.jobs, [&](std::size_t s) {
    curvature[s] = config.posterior == PosteriorKind::kfac ? kfac_factors(maps[s].params, splits.train)
                                                           : ggn_trace(maps[s].params, splits.train);
    prior_variance[s] = prior_variance_for(config, maps[s], splits.train);
  });

  if (config.save_posteriors) std::filesystem::create_directories(config.output_dir / "posteriors");
  std::vector<std::array<SweepRow, 2>> cells(maps.size() * num_lambda);
  parallel_for(cells.size(), config.jobs, [&](std::size_t cell) {
    const std::size_t s = cell / num_lambda;
    const std::size_t li = cell % num_lambda;
    const auto start = std::chrono::steady_clock::now();
    const auto& map = maps[s];
    const auto post =
        fit_tempered_posterior(map.params, curvature[s], config.lambda_grid[li], prior_variance[s], config.posterior);
    const double kl = gaussian_kl(post, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(post.dim())), prior_variance[s]);
    const std::uint64_t mc = sweep_mc_seed(config.train.seed);
    const Dataset* parts[2] = {&splits.validation, &splits.test};
    const char* names[2] = {"validation", "test"};
    for (int p = 0; p < 2; ++p) {
      const auto metrics = evaluate(posterior_predictive(post, *parts[p], config.num_mc_samples, mc), *parts[p],
                                    config.ece_bins);
      auto& row = cells[cell][static_cast<std::size_t>(p)];
      row.seed = map.config.seed;
      row.lambda = config.lambda_grid[li];
      row.split = names[p];
      row.zero_one = metrics.zero_one;
      row.nll = metrics.nll;
      row.ece = metrics.ece;
      row.kl = kl;
    }
    if (config.save_posteriors)
      write_posterior(config.output_dir / "posteriors" / posterior_file_name(map.config.seed, li), post);
    const double ms = config.record_wall_time ? elapsed_ms(start) : 0.0;
    cells[cell][0].wall_time_ms = ms;
    cells[cell][1].wall_time_ms = ms;
  });

  std::vector<SweepRow> rows;
  rows.reserve(cells.size() * 2);
  for (const auto& c : cells) {
    rows.push_back(c[0]);
    rows.push_back(c[1]);
  }

  ensure_output_dir(config);
  {
    auto os = open_out(config.output_dir / "sweep.csv");
    os << "seed,lambda,split,zero_one,nll,ece,kl,bound_value,wall_time_ms\n";
    for (const auto& r : rows) {
      os << r.seed << ',' << format_double(r.lambda) << ',' << csv_field(r.split) << ',' << format_double(r.zero_one)
         << ',' << format_double(r.nll) << ',' << format_double(r.ece) << ',' << format_double(r.kl) << ','
         << opt_double(r.bound_value) << ',' << format_double(r.wall_time_ms) << '\n';
    }
  }

  // One plot per metric: individual test traces, test mean, validation mean.
  const char* metric_names[3] = {"zero_one", "nll", "ece"};
  for (int m = 0; m < 3; ++m) {
    auto value = [&](const SweepRow& r) { return m == 0 ? r.zero_one : (m == 1 ? r.nll : r.ece); };
    std::vector<detail::SvgSeries> series;
    std::vector<double> mean_test(num_lambda, 0.0);
    std::vector<double> mean_val(num_lambda, 0.0);
    for (std::size_t s = 0; s < maps.size(); ++s) {
      detail::SvgSeries trace{"seed " + std::to_string(maps[s].config.seed) + " test", {}, "#c9a6e8", 1.0, false};
      for (std::size_t li = 0; li < num_lambda; ++li) {
        const auto& c = cells[s * num_lambda + li];
        trace.y.push_back(value(c[1]));
        mean_test[li] += value(c[1]) / static_cast<double>(maps.size());
        mean_val[li] += value(c[0]) / static_cast<double>(maps.size());
      }
      series.push_back(std::move(trace));
    }
    series.push_back({"test mean", mean_test, "#6a1b9a", 2.5, false});
    series.push_back({"validation mean", mean_val, "#e91e63", 2.0, true});
    detail::write_line_plot(config.output_dir / ("sweep_" + std::string(metric_names[m]) + ".svg"),
                            std::string("Posterior predictive ") + metric_names[m], metric_names[m], config.lambda_grid,
                            series);
  }
  return rows;
}

VariabilityResult cmd_map_variability(const ExperimentConfig& config) {
  config.validate();
  const Dataset data = load_dataset(config.dataset);
  const DataSplits splits = split_dataset(data, config.split, config.split_seed);
  const auto maps = load_maps(config);
  if (maps.size() < 2) throw ConfigError("map-variability needs at least two MAP seeds");
  const std::size_t num_lambda = config.lambda_grid.size();
  const double sp = config.prior.value;

  std::vector<CurvatureSummary> curvature(maps.size());
  parallel_for(maps.size(), config.jobs, [&](std::size_t s) { curvature[s] = ggn_trace(maps[s].params, splits.train); });

  std::vector<double> errors(maps.size() * num_lambda);
  parallel_for(errors.size(), config.jobs, [&](std::size_t cell) {
    const std::size_t s = cell / num_lambda;
    const std::size_t li = cell % num_lambda;
    const auto post =
        fit_tempered_posterior(maps[s].params, curvature[s], config.lambda_grid[li], sp, PosteriorKind::isotropic);
    errors[cell] = evaluate(posterior_predictive(post, splits.test, config.num_mc_samples,
                                                 sweep_mc_seed(config.train.seed)),
                            splits.test, config.ece_bins)
                       .zero_one;
  });

  VariabilityResult result;
  std::vector<double> map_errors;
  for (const auto& m : maps) map_errors.push_back(evaluate(point_predictive(m.params, splits.test), splits.test).zero_one);
  result.map_mean_zero_one = std::accumulate(map_errors.begin(), map_errors.end(), 0.0) / static_cast<double>(maps.size());
  result.map_std_zero_one = sample_std(map_errors);
  for (std::size_t li = 0; li < num_lambda; ++li) {
    std::vector<double> col;
    for (std::size_t s = 0; s < maps.size(); ++s) col.push_back(errors[s * num_lambda + li]);
    result.rows.push_back({config.lambda_grid[li],
                           std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size()),
                           sample_std(col)});
  }

  ensure_output_dir(config);
  {
    auto os = open_out(config.output_dir / "map_variability.csv");
    os << "lambda,mean_zero_one,std_zero_one\n";
    for (const auto& r : result.rows)
      os << format_double(r.lambda) << ',' << format_double(r.mean_zero_one) << ',' << format_double(r.std_zero_one)
         << '\n';
  }
  {
    auto os = open_out(config.output_dir / "map_variability_summary.json");
    json j = {{"map_mean_zero_one", result.map_mean_zero_one},
              {"map_std_zero_one", result.map_std_zero_one},
              {"num_seeds", maps.size()},
              {"prior_variance", sp}};
    os << j.dump(2) << '\n';
  }
  std::vector<double> stds;
  for (const auto& r : result.rows) stds.push_back(r.std_zero_one);
  detail::write_line_plot(config.output_dir / "map_variability.svg", "Test 0-1 std across MAP seeds", "std zero_one",
                          config.lambda_grid, {{"std across seeds", stds, "#6a1b9a", 2.5, false}});
  return result;
}

BoundCurveResult cmd_bound_curve(const ExperimentConfig& config) {
  config.validate();
  const Dataset data = load_dataset(config.dataset);
  const DataSplits splits = split_dataset(data, config.split, config.split_seed);
  if (splits.validation.size() < 1) throw ConfigError("validation split is empty");
  const auto maps = load_maps(config);
  const std::size_t num_lambda = config.lambda_grid.size();
  const double sp = config.prior.value;

  std::vector<std::vector<BoundCurveRow>> per_seed(maps.size());
  parallel_for(maps.size(), config.jobs, [&](std::size_t s) {
    const auto& map = maps[s];
    // The MAP was trained on the training split only and serves as the prior mean.
    const CurvatureSummary curv = ggn_trace(map.params, splits.validation);
    const std::uint64_t mc = sweep_mc_seed(config.train.seed);
    const auto reports = evaluate_bound_pipeline(map.params, curv, splits.validation, config.lambda_grid, sp,
                                                 config.delta, {config.num_mc_samples, mc});
    for (std::size_t li = 0; li < num_lambda; ++li) {
      const auto post = fit_tempered_posterior(map.params, curv, config.lambda_grid[li], sp, PosteriorKind::isotropic);
      BoundCurveRow row;
      row.seed = map.config.seed;
      row.lambda = reports[li].lambda;
      row.delta = reports[li].delta;
      row.bound_value = reports[li].value;
      row.empirical_zero_one = reports[li].empirical_risk;
      row.kl = reports[li].kl;
      row.test_zero_one =
          evaluate(posterior_predictive(post, splits.test, config.num_mc_samples, mc), splits.test).zero_one;
      row.test_gibbs_zero_one = gibbs_zero_one(post, splits.test, config.num_mc_samples, mc);
      per_seed[s].push_back(row);
    }
  });

  BoundCurveResult result;
  for (std::size_t s = 0; s < maps.size(); ++s) {
    std::vector<double> bound;
    std::vector<double> gibbs;
    std::vector<double> predictive;
    for (const auto& r : per_seed[s]) {
      bound.push_back(r.bound_value);
      gibbs.push_back(r.test_gibbs_zero_one);
      predictive.push_back(r.test_zero_one);
      result.rows.push_back(r);
    }
    const bool single = bound.size() < 2;
    result.spearman.emplace_back(maps[s].config.seed, single ? 0.0 : spearman(bound, gibbs));
    result.spearman_predictive.emplace_back(maps[s].config.seed, single ? 0.0 : spearman(bound, predictive));
  }

  ensure_output_dir(config);
  {
    auto os = open_out(config.output_dir / "bound_curve.csv");
    os << "seed,lambda,delta,bound_value,empirical_zero_one,kl,test_zero_one,test_gibbs_zero_one\n";
    for (const auto& r : result.rows)
      os << r.seed << ',' << format_double(r.lambda) << ',' << format_double(r.delta) << ','
         << format_double(r.bound_value) << ',' << format_double(r.empirical_zero_one) << ',' << format_double(r.kl)
         << ',' << format_double(r.test_zero_one) << ',' << format_double(r.test_gibbs_zero_one) << '\n';
  }
  {
    auto os = open_out(config.output_dir / "bound_curve_summary.csv");
    os << "seed,spearman_gibbs,spearman_predictive\n";
    for (std::size_t s = 0; s < result.spearman.size(); ++s)
      os << result.spearman[s].first << ',' << format_double(result.spearman[s].second) << ','
         << format_double(result.spearman_predictive[s].second) << '\n';
  }
  std::vector<detail::SvgSeries> series;
  for (std::size_t s = 0; s < maps.size(); ++s) {
    detail::SvgSeries b{"bound seed " + std::to_string(maps[s].config.seed), {}, "#6a1b9a", 2.0, false};
    detail::SvgSeries t{"test (posterior-averaged) seed " + std::to_string(maps[s].config.seed), {}, "#e91e63", 2.0, true};
    for (const auto& r : per_seed[s]) {
      b.y.push_back(r.bound_value);
      t.y.push_back(r.test_gibbs_zero_one);
    }
    series.push_back(std::move(b));
    series.push_back(std::move(t));
  }
  detail::write_line_plot(config.output_dir / "bound_curve.svg", "Catoni bound vs test 0-1", "zero_one",
                          config.lambda_grid, series);
  return result;
}

std::vector<PropBoundRow> cmd_prop_bound(const ExperimentConfig& config) {
  config.validate();
  const auto& we = config.world;
  const auto& world = we.world;
  world.validate();
  const double c = world.admissibility_constant();
  const std::size_t num_lambda = we.lambda_grid.size();
  std::vector<PropBoundRow> rows(we.num_worlds * num_lambda);
  parallel_for(we.num_worlds, config.jobs, [&](std::size_t k) {
    const std::uint64_t seed = config.train.seed + k;
    const WorldData data = generate_world_data(world, world.n, seed);
    const double h = data.curvature();
    const double residual = data.residual_sq();
    for (std::size_t li = 0; li < num_lambda; ++li) {
      auto& row = rows[k * num_lambda + li];
      row.world_seed = seed;
      row.lambda = we.lambda_grid[li];
      row.admissible = row.lambda * c < 1.0;
      row.mc_risk = mc_true_risk(world, world_posterior_variance(world, h, row.lambda), we.num_weight_samples,
                                 derive_seed(seed, li));
      if (row.admissible) {
        row.bound_value = proposition_bound(world, residual, h, row.lambda, config.delta).value;
        row.violated = *row.bound_value < row.mc_risk;
      }
    }
  });

  ensure_output_dir(config);
  auto os = open_out(config.output_dir / "prop_bound.csv");
  os << "world_seed,lambda,admissible,bound_value,mc_risk,violated\n";
  for (const auto& r : rows) {
    os << r.world_seed << ',' << format_double(r.lambda) << ',' << (r.admissible ? "true" : "false") << ','
       << opt_double(r.bound_value) << ',' << format_double(r.mc_risk) << ','
       << (r.violated ? (*r.violated ? "true" : "false") : "") << '\n';
  }
  return rows;
}

LoadCheckResult cmd_load_check(const ExperimentConfig& config) {
  const Dataset data = load_dataset(config.dataset);
  LoadCheckResult r;
  r.rows = data.size();
  r.features = data.input_dim();
  r.num_classes = data.num_classes();
  r.label_counts.assign(data.num_classes(), 0);
  for (int y : data.labels()) ++r.label_counts[static_cast<std::size_t>(y)];
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("spearman needs two equal-length series of length >= 2");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace tempest
