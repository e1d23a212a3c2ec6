#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "xmr/config.hpp"
#include "xmr/corpus.hpp"
#include "xmr/encoder.hpp"
#include "xmr/training.hpp"

namespace xmr {

struct TripleIds {
  std::string query, positive, negative;
};

/// Whitespace-separated `qid pos_pid neg_pid`, one per line; blank lines and
/// lines starting with '#' are skipped.
inline std::vector<TripleIds> read_triples(std::istream& in, const std::string& source = "triples") {
  std::vector<TripleIds> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    TripleIds t;
    std::string extra;
    if (!(fields >> t.query >> t.positive >> t.negative) || (fields >> extra))
      fail(ErrorCode::Parse, source + ":" + std::to_string(n) + ": expected `qid pos_pid neg_pid`");
    out.push_back(std::move(t));
  }
  return out;
}

inline PreparedSequence prepare_record(const CorpusRecord& r, SequenceKind kind, const RunConfig& config) {
  require(r.text.has_value(), ErrorCode::InvalidArgument, "record '" + r.id + "' has no text to encode");
  const HashTokenizer tokenize(config.encoder.vocab_size);
  const auto tokens = tokenize(*r.text);
  return kind == SequenceKind::Query ? prepare_query(tokens, config.n, r.language)
                                     : prepare_passage(tokens, config.m, r.language);
}

/// Embedding rows of a record: the stored rows, or the encoder output.
inline Matrix<float> record_embeddings(const CorpusRecord& r, SequenceKind kind, const RunConfig& config,
                                       const ModularEncoderParams<double>* params) {
  if (r.embeddings.has_value()) return *r.embeddings;
  require(params != nullptr, ErrorCode::InvalidArgument,
          "record '" + r.id + "' is text; a checkpoint is needed to encode it");
  return encode(prepare_record(r, kind, config), *params).template cast<float>();
}

struct LossPoint {
  Stage stage;
  std::size_t step;
  double loss;
};

inline void write_loss_csv(std::ostream& out, const std::vector<LossPoint>& points) {
  out << "stage,step,loss\n";
  char loss[32];
  for (const auto& p : points) {
    std::snprintf(loss, sizeof loss, "%.17g", p.loss);
    out << stage_name(p.stage) << ',' << p.step << ',' << loss << '\n';
  }
}

namespace detail {
// Cycles through a pool in seeded shuffled order, reshuffling per epoch.
class Cycler {
 public:
  Cycler(std::size_t size, Rng& rng) : order_(size), rng_(&rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_->shuffle(order_);
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      rng_->shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  Rng* rng_;
  std::size_t pos_ = 0;
};
}  // namespace detail

/// Masked-token steps over `passages`, one sequence per step. Used both for
/// pretraining and, in the extend stage, for a post-hoc language.
inline void run_mlm(ModularEncoderParams<double>& p, const std::vector<PreparedSequence>& passages,
                    std::size_t steps, const RunConfig& config, Rng& rng, std::vector<LossPoint>& report) {
  if (steps == 0) return;
  require(!passages.empty(), ErrorCode::EmptyInput, "no text passages to train on");
  detail::Cycler cycle(passages.size(), rng);
  for (std::size_t s = 0; s < steps; ++s) {
    const double loss = mlm_pretrain_step(passages[cycle.next()], config.mask_rate, p, config.mlm_learning_rate, rng);
    report.push_back({p.stage, s + 1, loss});
  }
}

/// Contrastive steps; every batch is drawn from one language, languages
/// taking turns in name order.
inline void run_finetune(ModularEncoderParams<double>& p, const std::vector<TrainingTriple>& triples,
                         std::size_t steps, const RunConfig& config, Rng& rng, std::vector<LossPoint>& report) {
  if (steps == 0) return;
  require(!triples.empty(), ErrorCode::EmptyInput, "fine-tuning needs at least one triple");
  std::map<Language, std::vector<std::size_t>> by_language;
  for (std::size_t i = 0; i < triples.size(); ++i) by_language[triples[i].query.language].push_back(i);
  std::vector<Language> languages;
  std::vector<detail::Cycler> cycles;
  for (const auto& [lang, ids] : by_language) {
    p.language(lang);  // unknown language fails here, before any step
    languages.push_back(lang);
    cycles.emplace_back(ids.size(), rng);
  }
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t l = s % languages.size();
    const auto& pool = by_language[languages[l]];
    Batch batch;
    for (std::size_t i = 0; i < std::min(config.batch_size, pool.size()); ++i)
      batch.triples.push_back(triples[pool[cycles[l].next()]]);
    report.push_back({p.stage, s + 1, finetune_step(batch, p, config.learning_rate)});
  }
}

/// Resolves triple ids against query and passage records.
inline std::vector<TrainingTriple> resolve_triples(const std::vector<TripleIds>& ids,
                                                   const std::vector<CorpusRecord>& queries,
                                                   const std::vector<CorpusRecord>& passages,
                                                   const RunConfig& config) {
  std::map<std::string, const CorpusRecord*> q_by_id, p_by_id;
  for (const auto& r : queries) q_by_id[r.id] = &r;
  for (const auto& r : passages) p_by_id[r.id] = &r;
  auto find = [](const auto& map, const std::string& id, const char* what) -> const CorpusRecord& {
    auto it = map.find(id);
    require(it != map.end(), ErrorCode::OutOfRange, std::string("triples reference unknown ") + what + " id '" + id + "'");
    return *it->second;
  };
  std::vector<TrainingTriple> out;
  for (const auto& t : ids) {
    out.push_back({prepare_record(find(q_by_id, t.query, "query"), SequenceKind::Query, config),
                   prepare_record(find(p_by_id, t.positive, "passage"), SequenceKind::Passage, config),
                   prepare_record(find(p_by_id, t.negative, "passage"), SequenceKind::Passage, config)});
  }
  return out;
}

}  // namespace xmr
