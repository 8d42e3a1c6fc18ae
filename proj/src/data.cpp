#include "tempest/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "tempest/errors.hpp"
#include "tempest/rng.hpp"

namespace tempest {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  os.write(bytes, 4);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

Eigen::MatrixXd blobs_means(const BlobsSpec& spec) {
  const auto k = static_cast<Eigen::Index>(spec.num_classes);
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(k, static_cast<Eigen::Index>(spec.dim));
  for (Eigen::Index c = 0; c < k; ++c) {
    if (spec.dim >= 2) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
      means(c, 0) = spec.radius * std::cos(angle);
      means(c, 1) = spec.radius * std::sin(angle);
    } else {
      means(c, 0) = spec.radius * (static_cast<double>(c) - 0.5 * static_cast<double>(k - 1));
    }
  }
  return means;
}

Eigen::MatrixXd blobs_conditional(const BlobsSpec& spec, const Eigen::MatrixXd& inputs) {
  const Eigen::MatrixXd means = blobs_means(spec);
  Eigen::MatrixXd p(inputs.rows(), means.rows());
  const double inv = 1.0 / (2.0 * spec.noise * spec.noise);
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    for (Eigen::Index c = 0; c < means.rows(); ++c) p(i, c) = -(inputs.row(i) - means.row(c)).squaredNorm() * inv;
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Dataset make_blobs(const BlobsSpec& spec, std::uint64_t seed) {
  if (spec.n < 1 || spec.num_classes < 1 || spec.dim < 1) throw InvalidArgument("blobs need n, classes, dim >= 1");
  if (!(spec.noise > 0.0)) throw InvalidArgument("blobs noise must be positive");
  const Eigen::MatrixXd means = blobs_means(spec);
  Rng rng(derive_seed(seed, 0xb10b5));
  std::normal_distribution<double> normal(0.0, spec.noise);
  const auto n = static_cast<Eigen::Index>(spec.n);
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(spec.dim));
  std::vector<int> y(spec.n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(static_cast<std::size_t>(i) % spec.num_classes);
    y[static_cast<std::size_t>(i)] = static_cast<int>(c);
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = means(c, j) + normal(rng);
  }
  Eigen::MatrixXd p = blobs_conditional(spec, x);
  return Dataset::classification(std::move(x), std::move(y), spec.num_classes, "blobs", std::move(p));
}

Dataset make_spirals(const SpiralsSpec& spec, std::uint64_t seed) {
  if (spec.n < 2) throw InvalidArgument("spirals need n >= 2");
  Rng rng(derive_seed(seed, 0x5b1a));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, spec.noise);
  const auto n = static_cast<Eigen::Index>(spec.n);
  Eigen::MatrixXd x(n, 2);
  std::vector<int> y(spec.n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    const double t = std::sqrt(u(rng)) * spec.turns * 2.0 * std::numbers::pi;
    const double r = t / (spec.turns * 2.0 * std::numbers::pi);
    const double phase = c == 0 ? 0.0 : std::numbers::pi;
    x(i, 0) = r * std::cos(t + phase) + normal(rng);
    x(i, 1) = r * std::sin(t + phase) + normal(rng);
    y[static_cast<std::size_t>(i)] = c;
  }
  return Dataset::classification(std::move(x), std::move(y), 2, "spirals");
}

void SplitFractions::validate() const {
  if (!(train > 0.0 && validation > 0.0 && test > 0.0)) throw InvalidArgument("split fractions must be positive");
  if (std::abs(train + validation + test - 1.0) > 1e-9) throw InvalidArgument("split fractions must sum to 1");
}

SplitIndices split_indices(std::size_t n, const SplitFractions& fractions, std::uint64_t seed) {
  fractions.validate();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5b117));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(fractions.validation * static_cast<double>(n)));
  if (n_train < 1 || n_val < 1 || n_train + n_val >= n)
    throw InvalidArgument("dataset of " + std::to_string(n) + " rows is too small for the requested split");
  SplitIndices s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                      perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  return s;
}

DataSplits split_dataset(const Dataset& data, const SplitFractions& fractions, std::uint64_t seed) {
  SplitIndices idx = split_indices(data.size(), fractions, seed);
  Dataset train = data.subset(idx.train, data.name() + "/train");
  Dataset validation = data.subset(idx.validation, data.name() + "/validation");
  Dataset test = data.subset(idx.test, data.name() + "/test");
  return {std::move(train), std::move(validation), std::move(test), std::move(idx)};
}

Normalization parse_normalization(const std::string& s) {
  if (s == "unit") return Normalization::unit;
  if (s == "standardize") return Normalization::standardize;
  throw InvalidArgument("unknown normalization '" + s + "'");
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::optional<std::size_t> subset, Normalization normalization, std::size_t num_classes) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (img.size() < 4) throw FormatError("'" + images.string() + "' is too short for an IDX header");
  if (lab.size() < 4) throw FormatError("'" + labels.string() + "' is too short for an IDX header");
  const std::uint32_t img_magic = be32(img, 0);
  if (img_magic != kIdxImagesMagic)
    throw FormatError("'" + images.string() + "': expected image magic 0x00000803, found " + hex32(img_magic));
  const std::uint32_t lab_magic = be32(lab, 0);
  if (lab_magic != kIdxLabelsMagic)
    throw FormatError("'" + labels.string() + "': expected label magic 0x00000801, found " + hex32(lab_magic));
  if (img.size() < 16 || lab.size() < 8) throw FormatError("truncated IDX header");

  const std::size_t n = be32(img, 4);
  const std::size_t rows = be32(img, 8);
  const std::size_t cols = be32(img, 12);
  const std::size_t n_labels = be32(lab, 4);
  if (n != n_labels)
    throw FormatError("image count " + std::to_string(n) + " does not match label count " + std::to_string(n_labels));
  const std::size_t p = rows * cols;
  if (img.size() != 16 + n * p) throw FormatError("'" + images.string() + "' payload size does not match its header");
  if (lab.size() != 8 + n) throw FormatError("'" + labels.string() + "' payload size does not match its header");

  const std::size_t keep = subset ? std::min(*subset, n) : n;
  if (keep < 1) throw InvalidArgument("IDX subset selects no rows");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(keep), static_cast<Eigen::Index>(p));
  std::vector<int> y(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const int label = lab[8 + i];
    if (static_cast<std::size_t>(label) >= num_classes)
      throw FormatError("label " + std::to_string(label) + " at row " + std::to_string(i) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    y[i] = label;
    for (std::size_t j = 0; j < p; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(img[16 + i * p + j]) / 255.0;
  }
  if (normalization == Normalization::standardize) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double mean = x.col(j).mean();
      x.col(j).array() -= mean;
      const double sd = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(x.rows()));
      if (sd > 0.0) x.col(j) /= sd;
    }
  }
  return Dataset::classification(std::move(x), std::move(y), num_classes, images.stem().string());
}

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels) {
  if (rows * cols == 0 || pixels.size() % (rows * cols) != 0)
    throw InvalidArgument("pixel buffer is not a whole number of images");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  put_be32(os, kIdxImagesMagic);
  put_be32(os, static_cast<std::uint32_t>(pixels.size() / (rows * cols)));
  put_be32(os, static_cast<std::uint32_t>(rows));
  put_be32(os, static_cast<std::uint32_t>(cols));
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  put_be32(os, kIdxLabelsMagic);
  put_be32(os, static_cast<std::uint32_t>(labels.size()));
  os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

void write_synthetic_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t n,
                         std::size_t num_classes, std::size_t side, std::uint64_t seed) {
  if (num_classes < 1 || num_classes > 255 || side < 2) throw InvalidArgument("bad synthetic IDX shape");
  Rng rng(derive_seed(seed, 0x1d8));
  std::normal_distribution<double> noise(0.0, 60.0);
  std::vector<std::uint8_t> pixels(n * side * side);
  std::vector<std::uint8_t> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % num_classes;
    ys[i] = static_cast<std::uint8_t>(c);
    // Class c lights up a diagonal stripe at an offset that depends on c.
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t q = 0; q < side; ++q) {
        const bool on = (r + q + c * side / num_classes) % side < side / 4 + 1;
        const double v = (on ? 170.0 : 40.0) + noise(rng);
        pixels[i * side * side + r * side + q] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  write_idx_images(images, side, side, pixels);
  write_idx_labels(labels, ys);
}

}  // namespace tempest
