#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xmr/encoder.hpp"
#include "xmr/error.hpp"
#include "xmr/loss.hpp"
#include "xmr/rng.hpp"
#include "xmr/sequence.hpp"
#include "xmr/similarity.hpp"

namespace xmr {

struct TrainingTriple {
  PreparedSequence query;
  PreparedSequence positive;
  PreparedSequence hard_negative;
};

struct Batch {
  std::vector<TrainingTriple> triples;

  std::size_t size() const noexcept { return triples.size(); }
};

inline void validate_batch(const Batch& batch) {
  require(!batch.triples.empty(), ErrorCode::EmptyInput, "batch has no triples");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& t = batch.triples[i];
    require(t.positive.language == t.query.language && t.hard_negative.language == t.query.language,
            ErrorCode::InvalidArgument, "triple " + std::to_string(i) + " mixes languages");
  }
}

/// Passages of every other triple: p+_j then p-_j for j != i, ascending j.
inline std::vector<PreparedSequence> build_inbatch_negatives(const Batch& batch, std::size_t i) {
  require(i < batch.size(), ErrorCode::OutOfRange,
          "triple index " + std::to_string(i) + " outside batch of " + std::to_string(batch.size()));
  std::vector<PreparedSequence> out;
  out.reserve(2 * (batch.size() - 1));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (j == i) continue;
    out.push_back(batch.triples[j].positive);
    out.push_back(batch.triples[j].hard_negative);
  }
  return out;
}

/// Pairwise plus in-batch contrastive loss for one query, from scores that
/// are already computed. Passage layout: own positive, own negative, then the
/// in-batch passages.
inline double triple_loss(double s_pos, double s_neg, std::span<const double> s_ib) {
  return pairwise_loss(s_pos, s_neg) + inbatch_loss(s_pos, s_neg, s_ib);
}

namespace detail {

// d cos(u, v) / du and / dv accumulated into du, dv (scaled by `scale`).
template <typename T>
void cosine_backward(std::span<const T> u, std::span<const T> v, double scale, std::span<T> du,
                     std::span<T> dv) {
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    dot += static_cast<double>(u[k]) * v[k];
    uu += static_cast<double>(u[k]) * u[k];
    vv += static_cast<double>(v[k]) * v[k];
  }
  if (uu == 0.0 || vv == 0.0) return;
  const double inv = 1.0 / (std::sqrt(uu) * std::sqrt(vv));
  const double c = dot * inv;
  for (std::size_t k = 0; k < u.size(); ++k) {
    du[k] += static_cast<T>(scale * (v[k] * inv - c * u[k] / uu));
    dv[k] += static_cast<T>(scale * (u[k] * inv - c * v[k] / vv));
  }
}

template <typename T>
void maxsim_backward(const Matrix<T>& q, const Matrix<T>& p, const MaxSimTrace& trace, double scale,
                     Matrix<T>& dq, Matrix<T>& dp) {
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t j = trace.best_passage_row[i];
    cosine_backward<T>(q.row(i), p.row(j), scale, dq.row(i), dp.row(j));
  }
}

}  // namespace detail

/// Contrastive loss from already-encoded sequences. `passages[2i]` is the
/// positive of query i and `passages[2i+1]` its hard negative; every other
/// passage acts as an in-batch negative. Returns the mean over queries of
/// pairwise + in-batch loss. Gradients w.r.t. the embeddings are accumulated
/// into `d_queries` / `d_passages` when both are non-null.
template <typename T>
double contrastive_loss(const std::vector<Matrix<T>>& queries, const std::vector<Matrix<T>>& passages,
                        std::vector<Matrix<T>>* d_queries = nullptr,
                        std::vector<Matrix<T>>* d_passages = nullptr) {
  const std::size_t n = queries.size();
  require(n >= 1, ErrorCode::EmptyInput, "batch has no queries");
  require(passages.size() == 2 * n, ErrorCode::InvalidArgument, "need two passages per query");
  const bool want_grad = d_queries != nullptr && d_passages != nullptr;

  double total = 0.0;
  const double weight = 1.0 / static_cast<double>(n);
  std::vector<double> scores(2 * n), d_pair(2), d_ib(2 * n);
  std::vector<MaxSimTrace> traces(2 * n);
  std::vector<std::size_t> order(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    order[0] = 2 * i;
    order[1] = 2 * i + 1;
    std::size_t next = 2;
    for (std::size_t j = 0; j < 2 * n; ++j)
      if (j / 2 != i) order[next++] = j;
    for (std::size_t k = 0; k < 2 * n; ++k) {
      traces[k] = maxsim_trace(queries[i], passages[order[k]]);
      scores[k] = traces[k].score;
    }
    const std::span<const double> all(scores);
    total += softmax_cross_entropy_first(all.first(2), d_pair);
    total += softmax_cross_entropy_first(all, d_ib);
    if (!want_grad) continue;
    for (std::size_t k = 0; k < 2 * n; ++k) {
      const double d = (k < 2 ? d_pair[k] : 0.0) + d_ib[k];
      if (d == 0.0) continue;
      detail::maxsim_backward(queries[i], passages[order[k]], traces[k], d * weight, (*d_queries)[i],
                              (*d_passages)[order[k]]);
    }
  }
  return total * weight;
}

/// Encodes every sequence of the batch once and evaluates contrastive_loss
/// with MaxSim scores. When `grads` is given, d loss / d params is accumulated
/// into it for all groups regardless of stage.
template <typename T>
double total_loss(const Batch& batch, const ModularEncoderParams<T>& p,
                  ModularEncoderParams<T>* grads = nullptr) {
  validate_batch(batch);
  const std::size_t n = batch.size();
  std::vector<EncodeCache<T>> q_cache(n), p_cache(2 * n);
  std::vector<Matrix<T>> queries, passages;
  queries.reserve(n);
  passages.reserve(2 * n);
  auto* qc = grads != nullptr ? q_cache.data() : nullptr;
  auto* pc = grads != nullptr ? p_cache.data() : nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = batch.triples[i];
    queries.push_back(encode(t.query, p, qc ? qc + i : nullptr));
    passages.push_back(encode(t.positive, p, pc ? pc + 2 * i : nullptr));
    passages.push_back(encode(t.hard_negative, p, pc ? pc + 2 * i + 1 : nullptr));
  }
  if (grads == nullptr) return contrastive_loss(queries, passages);

  std::vector<Matrix<T>> d_queries, d_passages;
  for (const auto& m : queries) d_queries.emplace_back(m.rows(), m.cols());
  for (const auto& m : passages) d_passages.emplace_back(m.rows(), m.cols());
  const double loss = contrastive_loss(queries, passages, &d_queries, &d_passages);
  for (std::size_t i = 0; i < n; ++i) backward(q_cache[i], p, d_queries[i], *grads);
  for (std::size_t j = 0; j < 2 * n; ++j) backward(p_cache[j], p, d_passages[j], *grads);
  return loss;
}

/// Plain SGD on the groups the current stage allows to move.
template <typename T>
void apply_sgd(ModularEncoderParams<T>& p, const ModularEncoderParams<T>& grads, double lr) {
  if (lr == 0.0) return;
  auto pg = parameter_groups(p);
  auto gg = parameter_groups(grads);
  for (std::size_t k = 0; k < pg.size(); ++k) {
    if (!is_trainable(p, pg[k].info)) continue;
    auto values = pg[k].values;
    auto g = gg[k].values;
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= static_cast<T>(lr) * g[i];
  }
}

/// One contrastive step on shared layers and output projection.
template <typename T>
double finetune_step(const Batch& batch, ModularEncoderParams<T>& p, double lr) {
  require(p.stage == Stage::Finetune, ErrorCode::Staging,
          "finetune_step requires the finetune stage, model is in " + std::string(stage_name(p.stage)));
  validate_batch(batch);
  for (const auto& t : batch.triples) {
    require(t.query.language == batch.triples.front().query.language, ErrorCode::InvalidArgument,
            "fine-tuning batch must be monolingual");
  }
  auto grads = zeros_like(p);
  const double loss = total_loss(batch, p, &grads);
  apply_sgd(p, grads, lr);
  return loss;
}

struct MaskedSample {
  PreparedSequence input;
  std::vector<std::size_t> positions;
  std::vector<TokenId> targets;
};

/// Picks round(mask_rate * text positions) text positions and replaces them
/// with [M]. Special tokens are never masked.
inline MaskedSample mask_tokens(const PreparedSequence& seq, double mask_rate, Rng& rng) {
  require(mask_rate >= 0.0 && mask_rate <= 1.0, ErrorCode::InvalidConfig, "mask_rate must be in [0, 1]");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < seq.length(); ++i)
    if (seq.token_ids[i] >= kFirstTextToken) candidates.push_back(i);
  const auto count = static_cast<std::size_t>(std::llround(mask_rate * static_cast<double>(candidates.size())));
  rng.shuffle(candidates);
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  MaskedSample out{seq, candidates, {}};
  for (std::size_t pos : candidates) {
    out.targets.push_back(seq.token_ids[pos]);
    out.input.token_ids[pos] = special::kMask;
  }
  return out;
}

/// Masked-token cross-entropy, averaged over masked positions, with the
/// prediction head tied to the embedding table plus a per-token output bias.
/// Zero when nothing is masked.
template <typename T>
double mlm_loss(const MaskedSample& sample, const ModularEncoderParams<T>& p,
                ModularEncoderParams<T>* grads = nullptr) {
  if (sample.positions.empty()) return 0.0;
  EncodeCache<T> cache;
  const Matrix<T> hidden = encode_hidden(sample.input, p, grads != nullptr ? &cache : nullptr);
  const std::size_t vocab = p.shape.vocab_size;
  const std::size_t d = p.shape.hidden;
  const double weight = 1.0 / static_cast<double>(sample.positions.size());
  Matrix<T> d_hidden(hidden.rows(), d);
  std::vector<double> logits(vocab);
  double total = 0.0;
  for (std::size_t m = 0; m < sample.positions.size(); ++m) {
    const auto h = hidden.row(sample.positions[m]);
    double top = -INFINITY;
    for (std::size_t v = 0; v < vocab; ++v) {
      const auto e = p.embedding.row(v);
      double acc = static_cast<double>(p.mlm_bias[v]);
      for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(h[k]) * e[k];
      logits[v] = acc;
      top = std::max(top, acc);
    }
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - top);
    const double log_denom = top + std::log(denom);
    total += log_denom - logits[sample.targets[m]];
    if (grads == nullptr) continue;
    auto dh = d_hidden.row(sample.positions[m]);
    for (std::size_t v = 0; v < vocab; ++v) {
      double g = std::exp(logits[v] - log_denom);
      if (v == sample.targets[m]) g -= 1.0;
      g *= weight;
      grads->mlm_bias[v] += static_cast<T>(g);
      const auto e = p.embedding.row(v);
      auto ge = grads->embedding.row(v);
      for (std::size_t k = 0; k < d; ++k) {
        dh[k] += static_cast<T>(g * e[k]);
        ge[k] += static_cast<T>(g * h[k]);
      }
    }
  }
  if (grads != nullptr) backward_hidden(cache, p, std::move(d_hidden), *grads);
  return total * weight;
}

/// One masked-language-model step. In the pretrain stage it moves the
/// embedding table, shared layers and the sample language's adapters; in the
/// extend stage only adapters of post-hoc languages move.
template <typename T>
double mlm_pretrain_step(const PreparedSequence& sample, double mask_rate, ModularEncoderParams<T>& p,
                         double lr, Rng& rng) {
  require(p.stage == Stage::Pretrain || p.stage == Stage::Extend, ErrorCode::Staging,
          "MLM steps need the pretrain or extend stage, model is in " + std::string(stage_name(p.stage)));
  const auto& lang = p.language(sample.language);
  if (p.stage == Stage::Extend) {
    require(lang.post_hoc, ErrorCode::Staging,
            "extend-stage MLM only trains languages added after pretraining; '" + sample.language +
                "' is an original language");
  }
  const MaskedSample masked = mask_tokens(sample, mask_rate, rng);
  if (masked.positions.empty()) return 0.0;
  auto grads = zeros_like(p);
  const double loss = mlm_loss(masked, p, &grads);
  apply_sgd(p, grads, lr);
  return loss;
}

}  // namespace xmr
