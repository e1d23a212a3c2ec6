#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "xmr/error.hpp"
#include "xmr/matrix.hpp"

namespace xmr {

/// Per-dimension 2-bit scalar quantizer for residuals. Bucket k of dimension
/// j covers [cut(j,k-1), cut(j,k)) with open outer ends.
struct ResidualCodec {
  std::size_t dim = 0;
  std::vector<float> cuts;             // dim x 3
  std::vector<float> representatives;  // dim x 4

  float cut(std::size_t j, std::size_t k) const { return cuts[j * 3 + k]; }
  float representative(std::size_t j, std::size_t k) const { return representatives[j * 4 + k]; }

  std::uint8_t bucket(std::size_t j, float value) const {
    std::uint8_t b = 0;
    for (std::size_t k = 0; k < 3; ++k)
      if (value >= cut(j, k)) b = static_cast<std::uint8_t>(k + 1);
    return b;
  }

  void encode(std::span<const float> residual, std::span<std::uint8_t> code) const {
    require(residual.size() == dim && code.size() == dim, ErrorCode::DimensionMismatch,
            "residual dim " + std::to_string(residual.size()) + " != codec dim " + std::to_string(dim));
    for (std::size_t j = 0; j < dim; ++j) code[j] = bucket(j, residual[j]);
  }

  void decode(std::span<const std::uint8_t> code, std::span<float> residual) const {
    for (std::size_t j = 0; j < dim; ++j) residual[j] = representative(j, code[j]);
  }

  friend bool operator==(const ResidualCodec&, const ResidualCodec&) = default;
};

namespace detail {
// Linear-interpolated quantile of sorted values.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}
}  // namespace detail

/// Cut points at the 25/50/75th percentiles of each dimension; each
/// representative is the mean of the sample values falling in its bucket.
/// An empty bucket takes the midpoint of its interval, with the outer
/// intervals clamped to the sample range.
inline ResidualCodec fit_codec(const Matrix<float>& residuals, std::size_t dim) {
  require(residuals.rows() >= 1, ErrorCode::EmptyInput, "codec sample is empty");
  require(residuals.cols() == dim, ErrorCode::DimensionMismatch,
          "residual sample dim " + std::to_string(residuals.cols()) + " != " + std::to_string(dim));
  ResidualCodec codec;
  codec.dim = dim;
  codec.cuts.resize(dim * 3);
  codec.representatives.resize(dim * 4);
  std::vector<double> column(residuals.rows());
  for (std::size_t j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < residuals.rows(); ++i) column[i] = residuals(i, j);
    std::sort(column.begin(), column.end());
    for (std::size_t k = 0; k < 3; ++k)
      codec.cuts[j * 3 + k] = static_cast<float>(detail::quantile_sorted(column, 0.25 * static_cast<double>(k + 1)));

    std::array<double, 4> sums{};
    std::array<std::size_t, 4> counts{};
    for (std::size_t i = 0; i < residuals.rows(); ++i) {
      const float v = residuals(i, j);
      const auto b = codec.bucket(j, v);
      sums[b] += v;
      ++counts[b];
    }
    const std::array<double, 5> edges{column.front(), codec.cut(j, 0), codec.cut(j, 1), codec.cut(j, 2), column.back()};
    for (std::size_t b = 0; b < 4; ++b) {
      const double rep = counts[b] > 0 ? sums[b] / static_cast<double>(counts[b]) : 0.5 * (edges[b] + edges[b + 1]);
      codec.representatives[j * 4 + b] = static_cast<float>(rep);
    }
  }
  return codec;
}

/// LSB-first bit stream of fixed-width records.
class PackedCodes {
 public:
  PackedCodes() = default;
  PackedCodes(std::size_t record_bits, std::size_t records)
      : record_bits_(record_bits), records_(records), bytes_((record_bits * records + 7) / 8, 0) {}
  PackedCodes(std::size_t record_bits, std::size_t records, std::vector<std::uint8_t> bytes)
      : record_bits_(record_bits), records_(records), bytes_(std::move(bytes)) {
    require(bytes_.size() == (record_bits * records + 7) / 8, ErrorCode::Format,
            "packed code section has " + std::to_string(bytes_.size()) + " bytes, expected " +
                std::to_string((record_bits * records + 7) / 8));
  }

  void put(std::size_t record, std::size_t offset, std::size_t width, std::uint64_t value) {
    std::size_t bit = record * record_bits_ + offset;
    for (std::size_t k = 0; k < width; ++k, ++bit) {
      if ((value >> k) & 1u) bytes_[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }

  std::uint64_t get(std::size_t record, std::size_t offset, std::size_t width) const {
    std::uint64_t value = 0;
    std::size_t bit = record * record_bits_ + offset;
    for (std::size_t k = 0; k < width; ++k, ++bit) {
      value |= static_cast<std::uint64_t>((bytes_[bit / 8] >> (bit % 8)) & 1u) << k;
    }
    return value;
  }

  std::size_t record_bits() const noexcept { return record_bits_; }
  std::size_t records() const noexcept { return records_; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::size_t record_bits_ = 0;
  std::size_t records_ = 0;
  std::vector<std::uint8_t> bytes_;
};

}  // namespace xmr
