#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xmr/codec.hpp"
#include "xmr/error.hpp"
#include "xmr/kmeans.hpp"
#include "xmr/matrix.hpp"
#include "xmr/rng.hpp"
#include "xmr/similarity.hpp"

namespace xmr {

using PassageId = std::uint32_t;
using EmbeddingId = std::uint32_t;

struct ScoredPassage {
  PassageId passage = 0;
  double score = 0.0;

  friend bool operator==(const ScoredPassage&, const ScoredPassage&) = default;
};

/// Descending score, ties to the lowest passage id.
inline bool ranks_before(const ScoredPassage& a, const ScoredPassage& b) {
  return a.score > b.score || (a.score == b.score && a.passage < b.passage);
}

inline void sort_ranked(std::vector<ScoredPassage>& list) { std::sort(list.begin(), list.end(), ranks_before); }

struct SearchParams {
  std::size_t n_probe = 4;
  std::size_t candidate_k = 1000;
  std::size_t final_k = 10;
};

/// Score given to a query term that fetched no embedding of a passage during
/// candidate generation. It is the cosine floor, so the approximate score
/// never exceeds the exact MaxSim.
inline constexpr double kUnfetchedTermScore = -1.0;

/// Centroid ids plus 2-bit residual codes for every term embedding, grouped
/// into per-centroid inverted lists.
struct CompressedIndex {
  CentroidTable centroids;
  ResidualCodec codec;
  PackedCodes codes;                                   // one record per embedding
  std::vector<std::vector<EmbeddingId>> inverted_lists;  // centroid -> ascending embedding ids
  std::vector<std::uint64_t> passage_offsets;          // passage -> [begin, end) in embedding ids
  std::vector<PassageId> embedding_passage;            // embedding -> passage
  std::vector<std::string> passage_names;              // external ids, may be empty
  std::uint64_t seed = 0;

  std::size_t dim() const noexcept { return centroids.dim(); }
  std::size_t centroid_count() const noexcept { return centroids.count(); }
  std::size_t embedding_count() const noexcept { return embedding_passage.size(); }
  std::size_t passage_count() const noexcept { return passage_offsets.empty() ? 0 : passage_offsets.size() - 1; }
  std::size_t bits_per_embedding() const noexcept { return 2 * dim() + centroids.id_bits(); }

  /// (passage id, position within the passage)
  std::pair<PassageId, std::size_t> locate(EmbeddingId e) const {
    const PassageId p = embedding_passage.at(e);
    return {p, e - passage_offsets[p]};
  }

  std::uint32_t centroid_of(EmbeddingId e) const {
    return static_cast<std::uint32_t>(codes.get(e, 0, centroids.id_bits()));
  }

  std::vector<std::uint8_t> residual_code(EmbeddingId e) const {
    std::vector<std::uint8_t> code(dim());
    const std::size_t base = centroids.id_bits();
    for (std::size_t j = 0; j < dim(); ++j) code[j] = static_cast<std::uint8_t>(codes.get(e, base + 2 * j, 2));
    return code;
  }

  void decompress_into(EmbeddingId e, std::span<float> out) const;
  std::vector<float> decompress_embedding(EmbeddingId e) const {
    std::vector<float> out(dim());
    decompress_into(e, out);
    return out;
  }
  Matrix<float> decompress_passage(PassageId p) const;
};

struct CompressedVector {
  std::uint32_t centroid = 0;
  std::vector<std::uint8_t> residual;
};

/// Nearest centroid (ties to the lowest id) plus the bucket of each residual
/// dimension.
inline CompressedVector compress(std::span<const float> embedding, const CentroidTable& centroids,
                                 const ResidualCodec& codec) {
  require(embedding.size() == centroids.dim() && codec.dim == centroids.dim(), ErrorCode::DimensionMismatch,
          "embedding dim " + std::to_string(embedding.size()) + " != index dim " + std::to_string(centroids.dim()));
  Matrix<float> one(1, embedding.size(), std::vector<float>(embedding.begin(), embedding.end()));
  CompressedVector out;
  out.centroid = nearest_centroids(one, centroids)[0];
  std::vector<float> residual(embedding.size());
  const auto c = centroids.values.row(out.centroid);
  for (std::size_t j = 0; j < residual.size(); ++j) residual[j] = embedding[j] - c[j];
  out.residual.resize(embedding.size());
  codec.encode(residual, out.residual);
  return out;
}

/// Centroid plus the representative residual of the code.
inline std::vector<float> decompress(std::uint32_t centroid, std::span<const std::uint8_t> residual,
                                     const CentroidTable& centroids, const ResidualCodec& codec) {
  require(centroid < centroids.count(), ErrorCode::OutOfRange,
          "centroid id " + std::to_string(centroid) + " outside table of " + std::to_string(centroids.count()));
  require(residual.size() == codec.dim, ErrorCode::DimensionMismatch, "residual code length mismatch");
  std::vector<float> out(codec.dim);
  const auto c = centroids.values.row(centroid);
  for (std::size_t j = 0; j < codec.dim; ++j) {
    require(residual[j] < 4, ErrorCode::OutOfRange, "residual bucket out of range");
    out[j] = c[j] + codec.representative(j, residual[j]);
  }
  return out;
}

inline void CompressedIndex::decompress_into(EmbeddingId e, std::span<float> out) const {
  require(e < embedding_count(), ErrorCode::OutOfRange, "embedding id " + std::to_string(e) + " out of range");
  const auto c = centroids.values.row(centroid_of(e));
  const std::size_t base = centroids.id_bits();
  for (std::size_t j = 0; j < dim(); ++j) {
    out[j] = c[j] + codec.representative(j, static_cast<std::size_t>(codes.get(e, base + 2 * j, 2)));
  }
}

inline Matrix<float> CompressedIndex::decompress_passage(PassageId p) const {
  require(p < passage_count(), ErrorCode::OutOfRange, "unknown passage id " + std::to_string(p));
  const auto begin = passage_offsets[p];
  const auto end = passage_offsets[p + 1];
  Matrix<float> out(end - begin, dim());
  for (auto e = begin; e < end; ++e) decompress_into(static_cast<EmbeddingId>(e), out.row(e - begin));
  return out;
}

namespace detail {
template <typename T>
void check_corpus(const std::vector<Matrix<T>>& corpus) {
  require(!corpus.empty(), ErrorCode::EmptyInput, "corpus is empty");
  const std::size_t d = corpus.front().cols();
  for (std::size_t p = 0; p < corpus.size(); ++p) {
    require(corpus[p].cols() == d, ErrorCode::DimensionMismatch,
            "passage " + std::to_string(p) + " has dim " + std::to_string(corpus[p].cols()) + ", expected " +
                std::to_string(d));
    require(corpus[p].rows() >= 1, ErrorCode::EmptyInput, "passage " + std::to_string(p) + " has no embeddings");
    require(corpus[p].all_finite(), ErrorCode::NonFinite, "passage " + std::to_string(p) + " has non-finite values");
  }
}

template <typename T>
Matrix<float> stack_rows(const std::vector<Matrix<T>>& corpus, const std::vector<std::size_t>& which) {
  std::size_t rows = 0;
  for (auto p : which) rows += corpus[p].rows();
  Matrix<float> out(rows, corpus.front().cols());
  std::size_t r = 0;
  for (auto p : which)
    for (std::size_t i = 0; i < corpus[p].rows(); ++i, ++r)
      std::transform(corpus[p].row(i).begin(), corpus[p].row(i).end(), out.row(r).begin(),
                     [](T v) { return static_cast<float>(v); });
  return out;
}

inline Matrix<float> residuals_of(const Matrix<float>& rows, const std::vector<std::uint32_t>& assign,
                                  const CentroidTable& table) {
  Matrix<float> out(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    const auto c = table.values.row(assign[i]);
    for (std::size_t j = 0; j < rows.cols(); ++j) out(i, j) = rows(i, j) - c[j];
  }
  return out;
}
}  // namespace detail

/// Compresses every passage against a given centroid table and codec and
/// builds the inverted lists. Embedding ids follow corpus order.
template <typename T>
CompressedIndex assemble_index(const std::vector<Matrix<T>>& corpus, CentroidTable centroids, ResidualCodec codec,
                               std::uint64_t seed = 0) {
  detail::check_corpus(corpus);
  require(corpus.front().cols() == centroids.dim() && codec.dim == centroids.dim(), ErrorCode::DimensionMismatch,
          "corpus dim " + std::to_string(corpus.front().cols()) + " != index dim " + std::to_string(centroids.dim()));
  CompressedIndex index;
  index.seed = seed;
  index.passage_offsets.push_back(0);
  for (std::size_t p = 0; p < corpus.size(); ++p) {
    index.passage_offsets.push_back(index.passage_offsets.back() + corpus[p].rows());
    index.embedding_passage.insert(index.embedding_passage.end(), corpus[p].rows(), static_cast<PassageId>(p));
  }
  require(index.embedding_passage.size() <= UINT32_MAX, ErrorCode::InvalidArgument, "too many embeddings");

  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Matrix<float> rows = detail::stack_rows(corpus, all);
  const auto assign = nearest_centroids(rows, centroids);

  const std::size_t id_bits = centroids.id_bits();
  const std::size_t d = centroids.dim();
  index.codes = PackedCodes(2 * d + id_bits, rows.rows());
  index.inverted_lists.assign(centroids.count(), {});
  std::vector<float> residual(d);
  std::vector<std::uint8_t> code(d);
  for (std::size_t e = 0; e < rows.rows(); ++e) {
    const auto c = centroids.values.row(assign[e]);
    for (std::size_t j = 0; j < d; ++j) residual[j] = rows(e, j) - c[j];
    codec.encode(residual, code);
    index.codes.put(e, 0, id_bits, assign[e]);
    for (std::size_t j = 0; j < d; ++j) index.codes.put(e, id_bits + 2 * j, 2, code[j]);
    index.inverted_lists[assign[e]].push_back(static_cast<EmbeddingId>(e));
  }
  index.centroids = std::move(centroids);
  index.codec = std::move(codec);
  return index;
}

struct IndexBuildOptions {
  std::uint64_t seed = 0;
  std::size_t sample_passages = 256;  // passages used to fit centroids and codec
  std::size_t centroid_count = 0;     // 0: square-root rule over the corpus size
  KMeansOptions kmeans;
};

/// Full build: sample passages, k-means centroids, codec fit on the sample's
/// residuals, then compression of the whole corpus.
template <typename T>
CompressedIndex build_index(const std::vector<Matrix<T>>& corpus, const IndexBuildOptions& options = {}) {
  detail::check_corpus(corpus);
  std::vector<std::size_t> sample(corpus.size());
  std::iota(sample.begin(), sample.end(), std::size_t{0});
  if (options.sample_passages > 0 && corpus.size() > options.sample_passages) {
    Rng rng(options.seed ^ 0x5eed5a3b1e5ULL);
    rng.shuffle(sample);
    sample.resize(options.sample_passages);
    std::sort(sample.begin(), sample.end());
  }
  std::size_t total = 0;
  for (const auto& m : corpus) total += m.rows();

  const Matrix<float> points = detail::stack_rows(corpus, sample);
  const std::size_t count = options.centroid_count > 0 ? options.centroid_count : centroid_count_for(total);
  auto selection = kmeans(points, count, options.seed, options.kmeans);
  const auto assign = nearest_centroids(points, selection.table);
  auto codec = fit_codec(detail::residuals_of(points, assign, selection.table), points.cols());
  return assemble_index(corpus, std::move(selection.table), std::move(codec), options.seed);
}

/// First-stage scores: each query term probes its n_probe closest centroids
/// and scores only the embeddings stored there. Per passage, each term keeps
/// its best cosine (kUnfetchedTermScore if it fetched nothing from that
/// passage) and the terms are summed. Returns the top candidate_k passages.
template <typename T>
std::vector<ScoredPassage> approximate_candidates(const Matrix<T>& query, const CompressedIndex& index,
                                                  const SearchParams& params) {
  require(query.cols() == index.dim(), ErrorCode::DimensionMismatch,
          "query dim " + std::to_string(query.cols()) + " != index dim " + std::to_string(index.dim()));
  require(params.n_probe >= 1 && params.n_probe <= index.centroid_count(), ErrorCode::InvalidConfig,
          "n_probe must be in [1, " + std::to_string(index.centroid_count()) + "]");
  const Matrix<float> q = query.template cast<float>();
  const auto probes = closest_centroids(q, index.centroids, params.n_probe);
  const std::size_t terms = q.rows();
  const std::size_t d = index.dim();

  std::map<std::uint32_t, Matrix<float>> decoded;  // centroid -> decompressed list
  std::unordered_map<PassageId, std::size_t> slot_of;
  std::vector<PassageId> slot_passage;
  std::vector<double> best;  // slot * terms + term
  constexpr double kUnset = -3.0;

  for (std::size_t t = 0; t < terms; ++t) {
    for (std::uint32_t c : probes[t]) {
      const auto& list = index.inverted_lists[c];
      auto it = decoded.find(c);
      if (it == decoded.end()) {
        Matrix<float> m(list.size(), d);
        for (std::size_t k = 0; k < list.size(); ++k) index.decompress_into(list[k], m.row(k));
        it = decoded.emplace(c, std::move(m)).first;
      }
      for (std::size_t k = 0; k < list.size(); ++k) {
        const PassageId p = index.embedding_passage[list[k]];
        auto [pos, inserted] = slot_of.try_emplace(p, slot_passage.size());
        if (inserted) {
          slot_passage.push_back(p);
          best.resize(best.size() + terms, kUnset);
        }
        double& b = best[pos->second * terms + t];
        b = std::max(b, cosine(q.row(t), std::as_const(it->second).row(k)));
      }
    }
  }

  std::vector<ScoredPassage> out;
  out.reserve(slot_passage.size());
  for (std::size_t s = 0; s < slot_passage.size(); ++s) {
    double total = 0.0;
    for (std::size_t t = 0; t < terms; ++t) {
      const double b = best[s * terms + t];
      total += b == kUnset ? kUnfetchedTermScore : b;
    }
    out.push_back({slot_passage[s], total});
  }
  sort_ranked(out);
  if (out.size() > params.candidate_k) out.resize(params.candidate_k);
  return out;
}

/// Exact MaxSim against the full decompressed embedding set of each candidate.
template <typename T>
std::vector<ScoredPassage> exact_rerank(const Matrix<T>& query, const std::vector<PassageId>& candidates,
                                        const CompressedIndex& index) {
  require(query.cols() == index.dim(), ErrorCode::DimensionMismatch,
          "query dim " + std::to_string(query.cols()) + " != index dim " + std::to_string(index.dim()));
  const Matrix<float> q = query.template cast<float>();
  std::vector<ScoredPassage> out;
  out.reserve(candidates.size());
  for (PassageId p : candidates) {
    require(p < index.passage_count(), ErrorCode::OutOfRange, "unknown passage id " + std::to_string(p));
    out.push_back({p, maxsim_score(q, index.decompress_passage(p))});
  }
  sort_ranked(out);
  return out;
}

/// Candidate generation followed by exact re-ranking, cut to final_k.
template <typename T>
std::vector<ScoredPassage> search(const Matrix<T>& query, const CompressedIndex& index, const SearchParams& params) {
  require(params.final_k <= params.candidate_k, ErrorCode::InvalidConfig, "final_k must not exceed candidate_k");
  const auto candidates = approximate_candidates(query, index, params);
  std::vector<PassageId> ids;
  ids.reserve(candidates.size());
  for (const auto& c : candidates) ids.push_back(c.passage);
  auto ranked = exact_rerank(query, ids, index);
  if (ranked.size() > params.final_k) ranked.resize(params.final_k);
  return ranked;
}

}  // namespace xmr
