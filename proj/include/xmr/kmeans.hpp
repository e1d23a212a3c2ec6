#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "xmr/error.hpp"
#include "xmr/matrix.hpp"
#include "xmr/rng.hpp"

namespace xmr {

/// |C| rows of d_out floats; |C| is a power of two.
struct CentroidTable {
  Matrix<float> values;

  std::size_t count() const noexcept { return values.rows(); }
  std::size_t dim() const noexcept { return values.cols(); }

  /// ceil(log2 |C|)
  std::uint32_t id_bits() const noexcept {
    std::uint32_t bits = 0;
    while ((std::size_t{1} << bits) < count()) ++bits;
    return bits;
  }
};

/// Smallest power of two p with p*p >= total_estimate.
inline std::size_t centroid_count_for(std::size_t total_estimate) {
  require(total_estimate >= 1, ErrorCode::InvalidArgument, "total_estimate must be >= 1");
  std::size_t p = 1;
  while (p * p < total_estimate) p *= 2;
  return p;
}

namespace detail {

// Squared-distance proxy ||c||^2 - 2 x.c for a block of rows against all
// centroids, computed with one sgemm per centroid tile. `visit(row, tile_start,
// tile_len, proxies)` sees the proxies of one tile for each row in order.
template <typename Visit>
void centroid_proxy_tiles(std::span<const float> rows, std::size_t n_rows, const CentroidTable& table,
                          const std::vector<float>& norms, Visit&& visit) {
  const std::size_t d = table.dim();
  const std::size_t c = table.count();
  constexpr std::size_t kRowTile = 256;
  constexpr std::size_t kCentroidTile = 4096;
  std::vector<float> dots;
  for (std::size_t r0 = 0; r0 < n_rows; r0 += kRowTile) {
    const std::size_t nr = std::min(kRowTile, n_rows - r0);
    for (std::size_t c0 = 0; c0 < c; c0 += kCentroidTile) {
      const std::size_t nc = std::min(kCentroidTile, c - c0);
      dots.resize(nr * nc);
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(nr), static_cast<int>(nc),
                  static_cast<int>(d), 1.0f, rows.data() + r0 * d, static_cast<int>(d),
                  table.values.values().data() + c0 * d, static_cast<int>(d), 0.0f, dots.data(),
                  static_cast<int>(nc));
      for (std::size_t i = 0; i < nr; ++i) {
        float* proxies = dots.data() + i * nc;
        for (std::size_t j = 0; j < nc; ++j) proxies[j] = norms[c0 + j] - 2.0f * proxies[j];
        visit(r0 + i, c0, nc, std::span<const float>(proxies, nc));
      }
    }
  }
}

inline std::vector<float> centroid_norms(const CentroidTable& table) {
  std::vector<float> norms(table.count());
  for (std::size_t j = 0; j < table.count(); ++j) {
    float s = 0.0f;
    for (float v : table.values.row(j)) s += v * v;
    norms[j] = s;
  }
  return norms;
}

}  // namespace detail

/// Nearest centroid (Euclidean) for each row of `rows`; ties go to the
/// lowest id.
inline std::vector<std::uint32_t> nearest_centroids(const Matrix<float>& rows, const CentroidTable& table) {
  require(rows.cols() == table.dim(), ErrorCode::DimensionMismatch,
          "vector dim " + std::to_string(rows.cols()) + " != centroid dim " + std::to_string(table.dim()));
  require(table.count() >= 1, ErrorCode::EmptyInput, "centroid table is empty");
  const auto norms = detail::centroid_norms(table);
  std::vector<std::uint32_t> best(rows.rows(), 0);
  std::vector<float> best_proxy(rows.rows(), std::numeric_limits<float>::infinity());
  detail::centroid_proxy_tiles(rows.values(), rows.rows(), table, norms,
                               [&](std::size_t r, std::size_t c0, std::size_t, std::span<const float> px) {
                                 for (std::size_t j = 0; j < px.size(); ++j) {
                                   if (px[j] < best_proxy[r]) {
                                     best_proxy[r] = px[j];
                                     best[r] = static_cast<std::uint32_t>(c0 + j);
                                   }
                                 }
                               });
  return best;
}

/// The `n` closest centroids of each row, closest first, ties to lowest id.
inline std::vector<std::vector<std::uint32_t>> closest_centroids(const Matrix<float>& rows,
                                                                 const CentroidTable& table, std::size_t n) {
  require(rows.cols() == table.dim(), ErrorCode::DimensionMismatch,
          "query dim " + std::to_string(rows.cols()) + " != index dim " + std::to_string(table.dim()));
  n = std::min(n, table.count());
  const auto norms = detail::centroid_norms(table);
  std::vector<std::vector<float>> proxies(rows.rows(), std::vector<float>(table.count()));
  detail::centroid_proxy_tiles(rows.values(), rows.rows(), table, norms,
                               [&](std::size_t r, std::size_t c0, std::size_t, std::span<const float> px) {
                                 std::copy(px.begin(), px.end(), proxies[r].begin() + static_cast<std::ptrdiff_t>(c0));
                               });
  std::vector<std::vector<std::uint32_t>> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    std::vector<std::uint32_t> ids(table.count());
    std::iota(ids.begin(), ids.end(), 0u);
    const auto& px = proxies[r];
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                      [&](std::uint32_t a, std::uint32_t b) { return px[a] < px[b] || (px[a] == px[b] && a < b); });
    ids.resize(n);
    out[r] = std::move(ids);
  }
  return out;
}

struct KMeansOptions {
  std::size_t max_iterations = 25;
  double tolerance = 1e-6;  // max centroid shift that counts as converged
};

struct CentroidSelection {
  CentroidTable table;
  std::size_t iterations = 0;
  /// Set when the sample had fewer distinct vectors than |C|, so some
  /// centroids are copies.
  bool has_duplicates = false;
};

/// Seeded k-means++ seeding followed by Lloyd iterations on the pooled rows
/// of `sample`. `count` overrides the square-root rule when non-zero.
inline CentroidSelection kmeans(const Matrix<float>& points, std::size_t count, std::uint64_t seed,
                                const KMeansOptions& options = {}) {
  require(points.rows() >= 1, ErrorCode::EmptyInput, "k-means sample is empty");
  require(count >= 1, ErrorCode::InvalidArgument, "centroid count must be >= 1");
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  Rng rng(seed);
  CentroidSelection out;
  out.table.values = Matrix<float>(count, d);

  // k-means++ seeding with exact double distances.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  auto update_d2 = [&](std::size_t center) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(points(i, k)) - points(center, k);
        s += diff * diff;
      }
      d2[i] = std::min(d2[i], s);
    }
  };
  std::size_t pick = rng.index(n);
  for (std::size_t c = 0; c < count; ++c) {
    if (c > 0) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      if (total <= 0.0) {
        out.has_duplicates = true;
        pick = 0;
      } else {
        double target = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          target -= d2[i];
          if (target < 0.0 && d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    }
    std::copy(points.row(pick).begin(), points.row(pick).end(), out.table.values.row(c).begin());
    update_d2(pick);
  }

  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    const auto assign = nearest_centroids(points, out.table);
    std::vector<double> sums(count * d, 0.0);
    std::vector<std::size_t> sizes(count, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++sizes[assign[i]];
      for (std::size_t k = 0; k < d; ++k) sums[assign[i] * d + k] += points(i, k);
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < count; ++c) {
      if (sizes[c] == 0) continue;  // empty cluster keeps its centroid
      double moved = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const auto mean = static_cast<float>(sums[c * d + k] / static_cast<double>(sizes[c]));
        const double delta = static_cast<double>(mean) - out.table.values(c, k);
        moved += delta * delta;
        out.table.values(c, k) = mean;
      }
      shift = std::max(shift, std::sqrt(moved));
    }
    out.iterations = iter + 1;
    if (shift <= options.tolerance) break;
  }
  return out;
}

/// Centroids for an index whose corpus holds about `total_estimate` term
/// embeddings: |C| = 2^ceil(log2 sqrt(total_estimate)), trained on the rows
/// of the sampled passages.
template <typename T>
CentroidSelection select_centroids(const std::vector<Matrix<T>>& sample, std::size_t total_estimate,
                                   std::uint64_t seed, const KMeansOptions& options = {}) {
  require(!sample.empty(), ErrorCode::EmptyInput, "centroid sample is empty");
  const std::size_t count = centroid_count_for(total_estimate);
  Matrix<float> points;
  for (const auto& m : sample) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      std::vector<float> row(m.row(i).begin(), m.row(i).end());
      points.append_row(row);
    }
  }
  require(points.rows() >= 1, ErrorCode::EmptyInput, "centroid sample has no vectors");
  return kmeans(points, count, seed, options);
}

}  // namespace xmr
