#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "xmr/encoder.hpp"
#include "xmr/error.hpp"
#include "xmr/index.hpp"

namespace xmr {

struct StageSteps {
  std::size_t pretrain = 200;
  std::size_t finetune = 200;
  std::size_t extend = 200;
};

/// Everything a pipeline run needs besides its input files.
struct RunConfig {
  std::size_t n = kDefaultQueryLength;     // query length after augmentation
  std::size_t m = kDefaultPassageLength;   // passage length cap
  EncoderShape encoder;                    // output_dim is d_out
  std::uint64_t seed = 0;
  SearchParams search;
  std::size_t batch_size = 8;              // N
  double learning_rate = 0.005;
  double mlm_learning_rate = 0.02;
  double mask_rate = 0.15;
  StageSteps steps;
  std::size_t sample_passages = 256;       // passages used to fit centroids and codec

  void validate() const {
    encoder.validate();
    require(n >= 3 && m >= 3, ErrorCode::InvalidConfig, "n and m must be >= 3");
    require(batch_size >= 1, ErrorCode::InvalidConfig, "batch_size must be >= 1");
    require(search.n_probe >= 1 && search.candidate_k >= 1 && search.final_k >= 1, ErrorCode::InvalidConfig,
            "n_probe, candidate_k and final_k must be >= 1");
    require(search.final_k <= search.candidate_k, ErrorCode::InvalidConfig, "final_k must not exceed candidate_k");
    require(learning_rate >= 0 && mlm_learning_rate >= 0, ErrorCode::InvalidConfig, "learning rates must be >= 0");
    require(mask_rate >= 0 && mask_rate <= 1, ErrorCode::InvalidConfig, "mask_rate must be in [0, 1]");
    require(sample_passages >= 1, ErrorCode::InvalidConfig, "sample_passages must be >= 1");
  }
};

namespace detail {
template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::InvalidConfig, std::string("config field '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok |= key == k;
    require(ok, ErrorCode::InvalidConfig, "unknown config field '" + where + key + "'");
  }
}
}  // namespace detail

/// Missing keys keep their defaults; unknown keys are errors.
inline RunConfig parse_config(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::InvalidConfig, "config must be a JSON object");
  detail::reject_unknown(j,
                         {"n", "m", "d_out", "vocab_size", "hidden", "bottleneck", "layers", "seed", "n_probe",
                          "candidate_k", "final_k", "batch_size", "learning_rate", "mlm_learning_rate", "mask_rate",
                          "steps", "sample_passages"},
                         "");
  RunConfig c;
  detail::read_field(j, "n", c.n);
  detail::read_field(j, "m", c.m);
  detail::read_field(j, "d_out", c.encoder.output_dim);
  detail::read_field(j, "vocab_size", c.encoder.vocab_size);
  detail::read_field(j, "hidden", c.encoder.hidden);
  detail::read_field(j, "bottleneck", c.encoder.bottleneck);
  detail::read_field(j, "layers", c.encoder.layers);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "n_probe", c.search.n_probe);
  detail::read_field(j, "candidate_k", c.search.candidate_k);
  detail::read_field(j, "final_k", c.search.final_k);
  detail::read_field(j, "batch_size", c.batch_size);
  detail::read_field(j, "learning_rate", c.learning_rate);
  detail::read_field(j, "mlm_learning_rate", c.mlm_learning_rate);
  detail::read_field(j, "mask_rate", c.mask_rate);
  detail::read_field(j, "sample_passages", c.sample_passages);
  if (j.contains("steps")) {
    const auto& s = j["steps"];
    require(s.is_object(), ErrorCode::InvalidConfig, "config field 'steps' must be an object");
    detail::reject_unknown(s, {"pretrain", "finetune", "extend"}, "steps.");
    detail::read_field(s, "pretrain", c.steps.pretrain);
    detail::read_field(s, "finetune", c.steps.finetune);
    detail::read_field(s, "extend", c.steps.extend);
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Parse, path.string() + ": invalid JSON (" + e.what() + ")");
  }
  return parse_config(j);
}

}  // namespace xmr
