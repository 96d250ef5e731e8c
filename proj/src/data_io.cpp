#include "data_io.hpp"

#include <fstream>
#include <iterator>

#include <zlib.h>

namespace vaeas {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) fail(ErrorCode::io, "zlib init failed");
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::vector<std::uint8_t> out;
  std::uint8_t chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof chunk;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrorCode::data_truncated, "corrupt or truncated gzip stream");
    }
    out.insert(out.end(), chunk, chunk + (sizeof chunk - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      fail(ErrorCode::data_truncated, "truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::uint32_t be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

}  // namespace

Matrix parse_idx_gray(std::span<const std::uint8_t> bytes, std::size_t limit) {
  std::vector<std::uint8_t> inflated;
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) {
    inflated = gunzip(bytes);
    bytes = inflated;
  }
  if (bytes.size() < 16) fail(ErrorCode::data_header, "IDX header truncated (" + std::to_string(bytes.size()) + " bytes)");
  const std::uint32_t magic = be32(bytes.data());
  if (magic != 0x00000803u) fail(ErrorCode::data_magic, "IDX magic is not 0x00000803");
  const std::uint32_t count = be32(bytes.data() + 4);
  const std::uint32_t rows = be32(bytes.data() + 8);
  const std::uint32_t cols = be32(bytes.data() + 12);
  if (rows != kImageSide || cols != kImageSide)
    fail(ErrorCode::data_dims, "IDX images are " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected 28x28");
  const std::size_t n = limit > 0 ? std::min<std::size_t>(limit, count) : count;
  const std::size_t need = 16 + n * static_cast<std::size_t>(kImagePixels);
  if (bytes.size() < need) fail(ErrorCode::data_truncated, "IDX pixel data truncated");

  Matrix gray(kImagePixels, static_cast<Eigen::Index>(n));
  const std::uint8_t* px = bytes.data() + 16;
  for (std::size_t i = 0; i < n; ++i)
    for (Eigen::Index p = 0; p < kImagePixels; ++p)
      gray(p, static_cast<Eigen::Index>(i)) = px[i * kImagePixels + p] / 255.0;
  return gray;
}

Dataset parse_idx(std::span<const std::uint8_t> bytes, std::size_t limit, Split split) {
  const Matrix gray = parse_idx_gray(bytes, limit);
  Dataset d;
  d.split = split;
  // u8 >= 128  <=>  gray >= 128/255
  d.pixels = (gray.array() >= 128.0 / 255.0).cast<double>();
  d.indices.resize(static_cast<std::size_t>(gray.cols()));
  for (std::size_t i = 0; i < d.indices.size(); ++i) d.indices[i] = static_cast<std::uint32_t>(i);
  return d;
}

Dataset load_idx(const std::filesystem::path& path, std::size_t limit, Split split) {
  const auto bytes = read_file(path);
  return parse_idx(bytes, limit, split);
}

Matrix load_idx_gray(const std::filesystem::path& path, std::size_t limit) {
  const auto bytes = read_file(path);
  return parse_idx_gray(bytes, limit);
}

void write_idx(const std::filesystem::path& path, const Dataset& data) {
  require(data.dim() == kImagePixels, ErrorCode::dimension, "write_idx: images must be 28x28");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  auto put = [&](std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
  };
  put(0x00000803u);
  put(static_cast<std::uint32_t>(data.size()));
  put(kImageSide);
  put(kImageSide);
  for (Eigen::Index i = 0; i < data.size(); ++i)
    for (Eigen::Index p = 0; p < kImagePixels; ++p) out.put(data.pixels(p, i) > 0.5 ? static_cast<char>(255) : 0);
}

Dataset synth_random_images(std::size_t n, double p_on, std::uint64_t seed, Eigen::Index pixels) {
  require(p_on > 0.0 && p_on < 1.0, ErrorCode::domain, "synth_random_images: p_on must be in (0,1)");
  require(n >= 1, ErrorCode::config, "synth_random_images: need at least one image");
  Dataset d;
  d.pixels.resize(pixels, static_cast<Eigen::Index>(n));
  d.indices.resize(n);
  SeededRng rng = SeededRng::substream(seed, 0, 0, SeededRng::Purpose::data);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index p = 0; p < pixels; ++p)
      d.pixels(p, static_cast<Eigen::Index>(i)) = rng.uniform() < p_on ? 1.0 : 0.0;
    d.indices[i] = static_cast<std::uint32_t>(i);
  }
  return d;
}

Dataset binarize_dynamic(const Matrix& gray01, std::uint64_t seed, std::uint32_t epoch) {
  Dataset d;
  d.pixels.resize(gray01.rows(), gray01.cols());
  d.indices.resize(static_cast<std::size_t>(gray01.cols()));
  SeededRng rng = SeededRng::substream(seed, epoch, 0, SeededRng::Purpose::data);
  for (Eigen::Index i = 0; i < gray01.cols(); ++i) {
    for (Eigen::Index p = 0; p < gray01.rows(); ++p) d.pixels(p, i) = rng.uniform() < gray01(p, i) ? 1.0 : 0.0;
    d.indices[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
  }
  return d;
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& data, std::size_t count) {
  require(count < static_cast<std::size_t>(data.size()), ErrorCode::config,
          "holdout must leave at least one training image");
  const Eigen::Index n_train = data.size() - static_cast<Eigen::Index>(count);
  Dataset train, test;
  train.split = Split::train;
  test.split = Split::test;
  train.pixels = data.pixels.leftCols(n_train);
  test.pixels = data.pixels.rightCols(static_cast<Eigen::Index>(count));
  train.indices.assign(data.indices.begin(), data.indices.begin() + n_train);
  test.indices.assign(data.indices.begin() + n_train, data.indices.end());
  return {std::move(train), std::move(test)};
}

std::vector<std::uint32_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint32_t epoch) {
  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
  SeededRng rng = SeededRng::substream(seed, epoch, 0, SeededRng::Purpose::shuffle);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

std::vector<Batch> batches(const Dataset& data, const BatchPlan& plan) {
  const auto n = static_cast<std::size_t>(data.size());
  require(plan.batch_size >= 1 && static_cast<std::size_t>(plan.batch_size) <= n, ErrorCode::config,
          "batch size must be in [1, N]");
  const auto perm = epoch_permutation(n, plan.seed, plan.epoch);
  const auto bs = static_cast<std::size_t>(plan.batch_size);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t len = std::min(bs, n - start);
    if (len < bs && plan.drop_last) break;
    Batch b;
    b.pixels.resize(data.dim(), static_cast<Eigen::Index>(len));
    for (std::size_t k = 0; k < len; ++k) {
      const auto pos = perm[start + k];
      b.pixels.col(static_cast<Eigen::Index>(k)) = data.pixels.col(pos);
      b.positions.push_back(pos);
      b.indices.push_back(data.indices[pos]);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace vaeas
