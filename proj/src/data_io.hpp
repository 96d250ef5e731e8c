#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core_math.hpp"

namespace vaeas {

enum class Split { train, test };

inline constexpr Eigen::Index kImageSide = 28;
inline constexpr Eigen::Index kImagePixels = kImageSide * kImageSide;

/// Binary images, one per column (pixels x N), with their original indices.
struct Dataset {
  Matrix pixels;
  std::vector<std::uint32_t> indices;
  Split split = Split::train;

  Eigen::Index size() const { return pixels.cols(); }
  Eigen::Index dim() const { return pixels.rows(); }
};

/// Parses an IDX3 image file (big-endian u32 magic 0x00000803, count, rows,
/// cols, then row-major u8 pixels). gzip-compressed files are accepted.
/// Pixels >= 128 become 1. `limit` keeps the first `limit` images (0 = all).
Dataset load_idx(const std::filesystem::path& path, std::size_t limit = 0, Split split = Split::train);
Dataset parse_idx(std::span<const std::uint8_t> bytes, std::size_t limit = 0, Split split = Split::train);

// Grayscale values in [0, 1], same layout checks as load_idx.
Matrix load_idx_gray(const std::filesystem::path& path, std::size_t limit = 0);
Matrix parse_idx_gray(std::span<const std::uint8_t> bytes, std::size_t limit = 0);

// Writes raw (uncompressed) IDX3 with pixel values 0/255.
void write_idx(const std::filesystem::path& path, const Dataset& data);

Dataset synth_random_images(std::size_t n, double p_on, std::uint64_t seed,
                            Eigen::Index pixels = kImagePixels);

// Draws each pixel as Bernoulli(gray/255) instead of thresholding.
Dataset binarize_dynamic(const Matrix& gray01, std::uint64_t seed, std::uint32_t epoch);

// Splits off the last `count` images as a test set.
std::pair<Dataset, Dataset> holdout_split(const Dataset& data, std::size_t count);

struct BatchPlan {
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  Eigen::Index batch_size = 100;
  bool drop_last = false;
};

// Epoch permutation, identical for identical (seed, epoch).
std::vector<std::uint32_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint32_t epoch);

struct Batch {
  Matrix pixels;
  std::vector<std::uint32_t> positions;  // column positions in the dataset
  std::vector<std::uint32_t> indices;    // original indices
};

std::vector<Batch> batches(const Dataset& data, const BatchPlan& plan);

}  // namespace vaeas
