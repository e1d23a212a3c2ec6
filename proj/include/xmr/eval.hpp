#pragma once

#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xmr/error.hpp"
#include "xmr/index.hpp"
#include "xmr/similarity.hpp"

namespace xmr {

/// query id -> passage id -> grade (>= 0)
struct Qrels {
  std::map<std::string, std::map<std::string, int>> grades;

  void add(const std::string& query, const std::string& passage, int grade) {
    require(grade >= 0, ErrorCode::InvalidArgument,
            "negative grade " + std::to_string(grade) + " for " + query + "/" + passage);
    grades[query][passage] = grade;
  }

  std::set<std::string> relevant(const std::string& query) const {
    std::set<std::string> out;
    if (auto it = grades.find(query); it != grades.end())
      for (const auto& [p, g] : it->second)
        if (g > 0) out.insert(p);
    return out;
  }
};

struct RunEntry {
  std::string passage;
  double score = 0.0;

  friend bool operator==(const RunEntry&, const RunEntry&) = default;
};

/// query id -> ranked list; position i holds rank i + 1.
struct RunFile {
  std::map<std::string, std::vector<RunEntry>> queries;
};

inline void validate_run(const RunFile& run) {
  for (const auto& [q, list] : run.queries) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < list.size(); ++i) {
      require(seen.insert(list[i].passage).second, ErrorCode::Format,
              "query " + q + " lists passage " + list[i].passage + " twice");
      require(i == 0 || list[i - 1].score >= list[i].score, ErrorCode::Format,
              "query " + q + " scores increase at rank " + std::to_string(i + 1));
    }
  }
}

/// Metric value plus the queries left out of the mean.
struct MetricReport {
  double value = 0.0;
  std::size_t evaluated = 0;
  std::vector<std::string> not_in_qrels;     // in the run, absent from qrels
  std::vector<std::string> no_relevant;      // judged, but no positive grade
};

namespace detail {
template <typename PerQuery>
MetricReport mean_over_queries(const RunFile& run, const Qrels& qrels, std::size_t k, PerQuery&& per_query) {
  require(k >= 1, ErrorCode::InvalidArgument, "metric cutoff must be >= 1");
  MetricReport report;
  double sum = 0.0;
  for (const auto& [q, list] : run.queries) {
    if (!qrels.grades.contains(q)) {
      report.not_in_qrels.push_back(q);
      continue;
    }
    const auto relevant = qrels.relevant(q);
    if (relevant.empty()) {
      report.no_relevant.push_back(q);
      continue;
    }
    sum += per_query(list, relevant);
    ++report.evaluated;
  }
  report.value = report.evaluated > 0 ? sum / static_cast<double>(report.evaluated) : 0.0;
  return report;
}
}  // namespace detail

/// Mean of 1/rank of the first relevant passage within the top k (0 if none).
inline MetricReport mrr_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  return detail::mean_over_queries(run, qrels, k, [k](const auto& list, const auto& relevant) {
    const std::size_t depth = std::min(k, list.size());
    for (std::size_t i = 0; i < depth; ++i)
      if (relevant.contains(list[i].passage)) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
  });
}

/// Mean of |relevant within top k| / |relevant|.
inline MetricReport recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  return detail::mean_over_queries(run, qrels, k, [k](const auto& list, const auto& relevant) {
    const std::size_t depth = std::min(k, list.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < depth; ++i) hits += relevant.contains(list[i].passage) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
  });
}

// TREC text formats: qrels `qid 0 pid grade`, run `qid Q0 pid rank score tag`.

inline Qrels read_qrels(std::istream& in, const std::string& source = "qrels") {
  Qrels qrels;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string q, iter, p, extra;
    int grade = 0;
    if (!(fields >> q >> iter >> p >> grade) || (fields >> extra))
      fail(ErrorCode::Parse, source + ":" + std::to_string(n) + ": expected `qid 0 pid grade`");
    require(grade >= 0, ErrorCode::Parse, source + ":" + std::to_string(n) + ": negative grade");
    qrels.add(q, p, grade);
  }
  return qrels;
}

inline void write_qrels(std::ostream& out, const Qrels& qrels) {
  for (const auto& [q, judged] : qrels.grades)
    for (const auto& [p, g] : judged) out << q << " 0 " << p << ' ' << g << '\n';
}

inline RunFile read_run(std::istream& in, const std::string& source = "run") {
  std::map<std::string, std::map<std::size_t, RunEntry>> by_rank;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string q, q0, p, tag, extra;
    std::size_t rank = 0;
    double score = 0.0;
    if (!(fields >> q >> q0 >> p >> rank >> score >> tag) || (fields >> extra))
      fail(ErrorCode::Parse, source + ":" + std::to_string(n) + ": expected `qid Q0 pid rank score tag`");
    require(rank >= 1, ErrorCode::Parse, source + ":" + std::to_string(n) + ": rank must be >= 1");
    require(by_rank[q].emplace(rank, RunEntry{p, score}).second, ErrorCode::Parse,
            source + ":" + std::to_string(n) + ": duplicate rank " + std::to_string(rank) + " for query " + q);
  }
  RunFile run;
  for (auto& [q, ranks] : by_rank) {
    auto& list = run.queries[q];
    for (auto& [rank, entry] : ranks) {
      require(rank == list.size() + 1, ErrorCode::Parse,
              source + ": ranks of query " + q + " are not contiguous from 1");
      list.push_back(std::move(entry));
    }
  }
  validate_run(run);
  return run;
}

/// Scores are written with 17 significant digits so they read back exactly.
inline void write_run(std::ostream& out, const RunFile& run, const std::string& tag = "xmr") {
  char score[32];
  for (const auto& [q, list] : run.queries) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      std::snprintf(score, sizeof score, "%.17g", list[i].score);
      out << q << " Q0 " << list[i].passage << ' ' << (i + 1) << ' ' << score << ' ' << tag << '\n';
    }
  }
}

/// Exact MaxSim against every passage; descending, ties to the lowest id.
template <typename A, typename B>
std::vector<ScoredPassage> brute_force_search(const Matrix<A>& query, const std::vector<Matrix<B>>& corpus,
                                              std::size_t k) {
  std::vector<ScoredPassage> out;
  out.reserve(corpus.size());
  for (std::size_t p = 0; p < corpus.size(); ++p) {
    require(corpus[p].cols() == query.cols(), ErrorCode::DimensionMismatch,
            "query dim " + std::to_string(query.cols()) + " != passage dim " + std::to_string(corpus[p].cols()));
    out.push_back({static_cast<PassageId>(p), maxsim_score(query, corpus[p])});
  }
  sort_ranked(out);
  if (out.size() > k) out.resize(k);
  return out;
}

struct HardwareProfile {
  double devices = 1;
  double tdp_watts = 0;
  double train_hours = 0;
  double carbon_efficiency = 0;  // kgCO2eq per kWh
};

struct EnergyEstimate {
  double kwh = 0;
  double kg_co2eq = 0;
};

/// kWh = devices * TDP * hours / 1000; emissions = kWh * carbon efficiency.
inline EnergyEstimate estimate_energy_emissions(const HardwareProfile& h) {
  require(h.devices > 0 && h.tdp_watts > 0 && h.train_hours > 0 && h.carbon_efficiency > 0,
          ErrorCode::InvalidArgument, "hardware profile fields must all be positive");
  EnergyEstimate e;
  e.kwh = h.devices * h.tdp_watts * h.train_hours / 1000.0;
  e.kg_co2eq = e.kwh * h.carbon_efficiency;
  return e;
}

}  // namespace xmr
