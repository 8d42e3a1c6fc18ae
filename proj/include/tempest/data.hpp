#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tempest/dataset.hpp"

namespace tempest {

struct BlobsSpec {
  std::size_t n = 1000;
  std::size_t num_classes = 3;
  std::size_t dim = 2;
  double radius = 2.0;  ///< class means sit on a circle of this radius in the first two coordinates
  double noise = 1.0;   ///< isotropic standard deviation around each mean
};

/// Balanced Gaussian blobs with the exact conditional p_D(y|x) attached.
Dataset make_blobs(const BlobsSpec& spec, std::uint64_t seed);

/// p_D(y|x) for the blobs model at the given inputs.
Eigen::MatrixXd blobs_conditional(const BlobsSpec& spec, const Eigen::MatrixXd& inputs);
Eigen::MatrixXd blobs_means(const BlobsSpec& spec);

struct SpiralsSpec {
  std::size_t n = 1000;
  double turns = 1.5;
  double noise = 0.1;
};

/// Two interleaved spirals (two classes); no ground-truth conditional.
Dataset make_spirals(const SpiralsSpec& spec, std::uint64_t seed);

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Seeded random partition of [0, n) into three non-empty disjoint parts.
SplitIndices split_indices(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

struct DataSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
  SplitIndices indices;
};

DataSplits split_dataset(const Dataset& data, const SplitFractions& fractions, std::uint64_t seed);

enum class Normalization { unit, standardize };
Normalization parse_normalization(const std::string& s);

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image/label pair (big-endian headers, unsigned byte payloads).
///
/// Pixels are scaled to [0, 1]; `standardize` additionally centres and scales
/// each feature over the loaded rows. `subset` keeps the first k rows. Labels
/// must lie in [0, num_classes).
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::optional<std::size_t> subset = std::nullopt,
                         Normalization normalization = Normalization::unit, std::size_t num_classes = 10);

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Writes a small IDX image/label pair of class-dependent noisy stripe patterns.
void write_synthetic_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t n,
                         std::size_t num_classes, std::size_t side, std::uint64_t seed);

}  // namespace tempest
