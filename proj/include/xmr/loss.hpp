#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "xmr/error.hpp"

namespace xmr {

/// Softmax cross-entropy of the first score against all scores, computed as
/// logsumexp(scores) - scores[0]. `grad`, when non-empty, receives
/// d loss / d score for each entry.
inline double softmax_cross_entropy_first(std::span<const double> scores,
                                          std::span<double> grad = {}) {
  require(!scores.empty(), ErrorCode::EmptyInput, "no scores");
  for (double s : scores) {
    require(std::isfinite(s), ErrorCode::NonFinite, "non-finite score in contrastive loss");
  }
  const double top = *std::max_element(scores.begin(), scores.end());
  double denom = 0.0;
  for (double s : scores) denom += std::exp(s - top);
  const double log_denom = top + std::log(denom);
  if (!grad.empty()) {
    require(grad.size() == scores.size(), ErrorCode::DimensionMismatch, "gradient buffer size");
    for (std::size_t k = 0; k < scores.size(); ++k) grad[k] = std::exp(scores[k] - log_denom);
    grad[0] -= 1.0;
  }
  return std::max(0.0, log_denom - scores[0]);
}

/// -log(e^pos / (e^pos + e^neg))
inline double pairwise_loss(double s_pos, double s_neg) {
  const double scores[2] = {s_pos, s_neg};
  return softmax_cross_entropy_first(scores);
}

/// -log(e^pos / sum of e^s over {pos, neg} and the in-batch scores)
inline double inbatch_loss(double s_pos, double s_neg, std::span<const double> s_ib) {
  std::vector<double> scores;
  scores.reserve(2 + s_ib.size());
  scores.push_back(s_pos);
  scores.push_back(s_neg);
  scores.insert(scores.end(), s_ib.begin(), s_ib.end());
  return softmax_cross_entropy_first(scores);
}

}  // namespace xmr
