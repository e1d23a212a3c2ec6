#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include "xmr/error.hpp"
#include "xmr/matrix.hpp"

namespace xmr {

enum class SimilarityMode { MaxSim, Pooled };
enum class Pooling { Mean, Max, Cls };

struct SimilarityConfig {
  SimilarityMode mode = SimilarityMode::MaxSim;
  Pooling pooling = Pooling::Mean;  // ignored for MaxSim
};

/// Cosine similarity accumulated in double. Zero-norm inputs score 0.
template <typename A, typename B>
double cosine(std::span<const A> u, std::span<const B> v) {
  require(u.size() == v.size(), ErrorCode::DimensionMismatch,
          "cosine: " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double a = static_cast<double>(u[k]);
    const double b = static_cast<double>(v[k]);
    dot += a * b;
    uu += a * a;
    vv += b * b;
  }
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

template <typename A, typename B>
  requires(!std::is_const_v<A> || !std::is_const_v<B>)
double cosine(std::span<A> u, std::span<B> v) {
  return cosine(std::span<const std::remove_const_t<A>>(u), std::span<const std::remove_const_t<B>>(v));
}

template <typename A, typename B>
double cosine(const std::vector<A>& u, const std::vector<B>& v) {
  return cosine(std::span<const A>(u), std::span<const B>(v));
}

namespace detail {
template <typename A, typename B>
void check_score_inputs(const Matrix<A>& q, const Matrix<B>& p) {
  require(q.cols() == p.cols(), ErrorCode::DimensionMismatch,
          "query dim " + std::to_string(q.cols()) + " != passage dim " + std::to_string(p.cols()));
  require(p.rows() >= 1, ErrorCode::EmptyInput, "passage embedding matrix has no rows");
}
}  // namespace detail

struct MaxSimTrace {
  double score = 0.0;
  std::vector<std::size_t> best_passage_row;  // per query row
  std::vector<double> best_cosine;
};

/// Late-interaction score with the per-query-row winners kept for backprop.
/// Ties pick the lowest passage row.
template <typename A, typename B>
MaxSimTrace maxsim_trace(const Matrix<A>& query, const Matrix<B>& passage) {
  detail::check_score_inputs(query, passage);
  MaxSimTrace trace;
  trace.best_passage_row.resize(query.rows());
  trace.best_cosine.resize(query.rows());
  for (std::size_t i = 0; i < query.rows(); ++i) {
    double best = -2.0;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < passage.rows(); ++j) {
      const double c = cosine(query.row(i), passage.row(j));
      if (c > best) {
        best = c;
        arg = j;
      }
    }
    trace.best_passage_row[i] = arg;
    trace.best_cosine[i] = best;
    trace.score += best;
  }
  return trace;
}

/// Sum over query rows of the best cosine against any passage row. Every
/// query row counts, including [CLS], [Q] and mask padding.
template <typename A, typename B>
double maxsim_score(const Matrix<A>& query, const Matrix<B>& passage) {
  detail::check_score_inputs(query, passage);
  double total = 0.0;
  for (std::size_t i = 0; i < query.rows(); ++i) {
    double best = -2.0;
    for (std::size_t j = 0; j < passage.rows(); ++j) {
      best = std::max(best, cosine(query.row(i), passage.row(j)));
    }
    total += best;
  }
  return total;
}

template <typename T>
std::vector<double> pool_rows(const Matrix<T>& m, Pooling pooling) {
  require(m.rows() >= 1, ErrorCode::EmptyInput, "cannot pool an empty matrix");
  std::vector<double> out(m.cols(), 0.0);
  switch (pooling) {
    case Pooling::Mean:
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t k = 0; k < m.cols(); ++k) out[k] += static_cast<double>(m(i, k));
      for (double& v : out) v /= static_cast<double>(m.rows());
      break;
    case Pooling::Max:
      for (std::size_t k = 0; k < m.cols(); ++k) out[k] = static_cast<double>(m(0, k));
      for (std::size_t i = 1; i < m.rows(); ++i)
        for (std::size_t k = 0; k < m.cols(); ++k)
          out[k] = std::max(out[k], static_cast<double>(m(i, k)));
      break;
    case Pooling::Cls:
      for (std::size_t k = 0; k < m.cols(); ++k) out[k] = static_cast<double>(m(0, k));
      break;
  }
  return out;
}

/// Single-vector similarity: cosine of the pooled query and passage vectors.
template <typename A, typename B>
double pooled_score(const Matrix<A>& query, const Matrix<B>& passage, Pooling pooling) {
  detail::check_score_inputs(query, passage);
  require(query.rows() >= 1, ErrorCode::EmptyInput, "query embedding matrix has no rows");
  return cosine(pool_rows(query, pooling), pool_rows(passage, pooling));
}

template <typename A, typename B>
double similarity(const Matrix<A>& query, const Matrix<B>& passage,
                  const SimilarityConfig& config) {
  return config.mode == SimilarityMode::MaxSim ? maxsim_score(query, passage)
                                               : pooled_score(query, passage, config.pooling);
}

}  // namespace xmr
