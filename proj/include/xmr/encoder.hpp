#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmr/error.hpp"
#include "xmr/matrix.hpp"
#include "xmr/rng.hpp"
#include "xmr/sequence.hpp"

namespace xmr {

struct EncoderShape {
  std::size_t vocab_size = 1024;
  std::size_t hidden = 32;      // d
  std::size_t bottleneck = 8;   // adapter width
  std::size_t layers = 2;       // L
  std::size_t output_dim = 128; // d_out

  void validate() const {
    require(vocab_size > kFirstTextToken, ErrorCode::InvalidConfig, "vocab_size too small");
    require(hidden >= 1 && bottleneck >= 1 && layers >= 1 && output_dim >= 1,
            ErrorCode::InvalidConfig, "encoder dimensions must be >= 1");
  }

  friend bool operator==(const EncoderShape&, const EncoderShape&) = default;
};

/// Learning stage; decides which parameter groups a training step may touch.
enum class Stage : std::uint8_t { Pretrain = 0, Finetune = 1, ZeroShot = 2, Extend = 3 };

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Finetune: return "finetune";
    case Stage::ZeroShot: return "zeroshot";
    case Stage::Extend: return "extend";
  }
  return "?";
}

inline Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::Pretrain, Stage::Finetune, Stage::ZeroShot, Stage::Extend}) {
    if (stage_name(s) == name) return s;
  }
  fail(ErrorCode::InvalidArgument, "unknown stage '" + std::string(name) + "'");
}

template <typename T>
struct SharedLayer {
  Matrix<T> token_map;    // d x d, applied per position
  Matrix<T> context_map;  // d x d, applied to the sequence mean
  std::vector<T> bias;    // d
};

/// Bottleneck adapter: up(tanh(down(h))) added back onto h.
template <typename T>
struct AdapterBlock {
  Matrix<T> down;          // d x b
  std::vector<T> down_bias;
  Matrix<T> up;            // b x d
  std::vector<T> up_bias;
};

template <typename T>
struct LanguageAdapters {
  Language language;
  bool post_hoc = false;  // registered after pretraining
  std::vector<AdapterBlock<T>> blocks;
};

/// One parameter set shared by the query and passage encoders.
template <typename T>
struct ModularEncoderParams {
  EncoderShape shape;
  Matrix<T> embedding;                  // vocab x d
  std::vector<T> mlm_bias;              // vocab, output bias of the tied MLM head
  std::vector<SharedLayer<T>> shared;   // L blocks
  std::vector<LanguageAdapters<T>> adapters;  // registration order
  Matrix<T> output_projection;          // d x d_out
  Stage stage = Stage::Pretrain;

  const LanguageAdapters<T>* find_language(std::string_view lang) const {
    for (const auto& a : adapters)
      if (a.language == lang) return &a;
    return nullptr;
  }
  LanguageAdapters<T>* find_language(std::string_view lang) {
    for (auto& a : adapters)
      if (a.language == lang) return &a;
    return nullptr;
  }
  const LanguageAdapters<T>& language(std::string_view lang) const {
    const auto* a = find_language(lang);
    if (a == nullptr) fail(ErrorCode::UnknownLanguage, "language '" + std::string(lang) + "' has no adapters");
    return *a;
  }
  bool has_language(std::string_view lang) const { return find_language(lang) != nullptr; }

  std::vector<Language> languages() const {
    std::vector<Language> out;
    for (const auto& a : adapters) out.push_back(a.language);
    return out;
  }
};

enum class ParamKind : std::uint8_t { Embedding, Shared, Output, Adapter };

struct ParamGroupInfo {
  std::string name;
  ParamKind kind;
  Language language;  // adapters only
};

template <typename T>
struct ParamGroup {
  ParamGroupInfo info;
  std::span<T> values;
};

/// Parameter blocks in declaration order: embedding table and MLM head bias,
/// shared layers, output projection, then adapters per language in
/// registration order.
template <typename T>
std::vector<ParamGroup<T>> parameter_groups(ModularEncoderParams<T>& p) {
  std::vector<ParamGroup<T>> groups;
  groups.push_back({{"embedding", ParamKind::Embedding, {}}, p.embedding.values()});
  groups.push_back({{"mlm_bias", ParamKind::Embedding, {}}, std::span<T>(p.mlm_bias)});
  for (std::size_t l = 0; l < p.shared.size(); ++l) {
    auto& s = p.shared[l];
    const std::string prefix = "shared." + std::to_string(l) + ".";
    groups.push_back({{prefix + "token_map", ParamKind::Shared, {}}, s.token_map.values()});
    groups.push_back({{prefix + "context_map", ParamKind::Shared, {}}, s.context_map.values()});
    groups.push_back({{prefix + "bias", ParamKind::Shared, {}}, std::span<T>(s.bias)});
  }
  groups.push_back({{"output_projection", ParamKind::Output, {}}, p.output_projection.values()});
  for (auto& lang : p.adapters) {
    for (std::size_t l = 0; l < lang.blocks.size(); ++l) {
      auto& a = lang.blocks[l];
      const std::string prefix = "adapter." + lang.language + "." + std::to_string(l) + ".";
      groups.push_back({{prefix + "down", ParamKind::Adapter, lang.language}, a.down.values()});
      groups.push_back({{prefix + "down_bias", ParamKind::Adapter, lang.language}, std::span<T>(a.down_bias)});
      groups.push_back({{prefix + "up", ParamKind::Adapter, lang.language}, a.up.values()});
      groups.push_back({{prefix + "up_bias", ParamKind::Adapter, lang.language}, std::span<T>(a.up_bias)});
    }
  }
  return groups;
}

template <typename T>
std::vector<ParamGroup<const T>> parameter_groups(const ModularEncoderParams<T>& p) {
  auto groups = parameter_groups(const_cast<ModularEncoderParams<T>&>(p));
  std::vector<ParamGroup<const T>> out;
  out.reserve(groups.size());
  for (auto& g : groups) out.push_back({std::move(g.info), g.values});
  return out;
}

namespace detail {
inline constexpr double kInitRange = 0.05;

template <typename T>
void init_uniform(std::span<T> values, Rng& rng) {
  for (T& v : values) v = static_cast<T>(rng.uniform(-kInitRange, kInitRange));
}

template <typename T>
AdapterBlock<T> make_adapter(const EncoderShape& shape, Rng& rng) {
  AdapterBlock<T> a{Matrix<T>(shape.hidden, shape.bottleneck), std::vector<T>(shape.bottleneck),
                    Matrix<T>(shape.bottleneck, shape.hidden), std::vector<T>(shape.hidden)};
  init_uniform(a.down.values(), rng);
  init_uniform(std::span<T>(a.down_bias), rng);
  init_uniform(a.up.values(), rng);
  init_uniform(std::span<T>(a.up_bias), rng);
  return a;
}

template <typename T>
LanguageAdapters<T> make_language(const EncoderShape& shape, Language lang, bool post_hoc, Rng& rng) {
  LanguageAdapters<T> out{std::move(lang), post_hoc, {}};
  for (std::size_t l = 0; l < shape.layers; ++l) out.blocks.push_back(make_adapter<T>(shape, rng));
  return out;
}
}  // namespace detail

/// Fresh parameters in the pretrain stage. Every value is drawn from
/// uniform(-0.05, 0.05) in declaration order.
template <typename T = double>
ModularEncoderParams<T> init_params(const EncoderShape& shape, const std::vector<Language>& languages,
                                    std::uint64_t seed) {
  shape.validate();
  Rng rng(seed);
  ModularEncoderParams<T> p;
  p.shape = shape;
  p.embedding = Matrix<T>(shape.vocab_size, shape.hidden);
  detail::init_uniform(p.embedding.values(), rng);
  p.mlm_bias.resize(shape.vocab_size);
  detail::init_uniform(std::span<T>(p.mlm_bias), rng);
  for (std::size_t l = 0; l < shape.layers; ++l) {
    SharedLayer<T> s{Matrix<T>(shape.hidden, shape.hidden), Matrix<T>(shape.hidden, shape.hidden),
                     std::vector<T>(shape.hidden)};
    detail::init_uniform(s.token_map.values(), rng);
    detail::init_uniform(s.context_map.values(), rng);
    detail::init_uniform(std::span<T>(s.bias), rng);
    p.shared.push_back(std::move(s));
  }
  p.output_projection = Matrix<T>(shape.hidden, shape.output_dim);
  detail::init_uniform(p.output_projection.values(), rng);
  for (const auto& lang : languages) {
    require(!p.has_language(lang), ErrorCode::DuplicateLanguage, "language '" + lang + "' listed twice");
    p.adapters.push_back(detail::make_language<T>(shape, lang, false, rng));
  }
  p.stage = Stage::Pretrain;
  return p;
}

/// Same structure as `p`, all zeros. Used as a gradient accumulator.
template <typename T>
ModularEncoderParams<T> zeros_like(const ModularEncoderParams<T>& p) {
  ModularEncoderParams<T> z = p;
  for (auto& g : parameter_groups(z)) std::fill(g.values.begin(), g.values.end(), T{});
  return z;
}

/// Registers adapters for a new language. Nothing already present changes.
template <typename T>
void add_language(ModularEncoderParams<T>& p, const Language& lang, std::uint64_t init_seed) {
  require(!p.has_language(lang), ErrorCode::DuplicateLanguage,
          "language '" + lang + "' is already registered");
  Rng rng(init_seed);
  p.adapters.push_back(detail::make_language<T>(p.shape, lang, p.stage != Stage::Pretrain, rng));
}

/// Stage transitions follow the learning protocol: pretraining comes first
/// and cannot be re-entered; fine-tuning directly follows pretraining.
template <typename T>
void set_stage(ModularEncoderParams<T>& p, Stage next) {
  if (next == p.stage) return;
  const bool ok = (next == Stage::Finetune && p.stage == Stage::Pretrain) ||
                  (next == Stage::Extend) || (next == Stage::ZeroShot);
  require(ok, ErrorCode::Staging,
          "cannot move from stage " + std::string(stage_name(p.stage)) + " to " +
              std::string(stage_name(next)));
  p.stage = next;
}

template <typename T>
bool is_trainable(const ModularEncoderParams<T>& p, const ParamGroupInfo& g) {
  switch (p.stage) {
    case Stage::Pretrain:
      return g.kind != ParamKind::Output;
    case Stage::Finetune:
      return g.kind == ParamKind::Shared || g.kind == ParamKind::Output;
    case Stage::Extend: {
      if (g.kind != ParamKind::Adapter) return false;
      const auto* lang = p.find_language(g.language);
      return lang != nullptr && lang->post_hoc;
    }
    case Stage::ZeroShot:
      return false;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct LayerCache {
  Matrix<T> input;          // n x d
  std::vector<T> mean;      // d
  Matrix<T> hidden;         // n x d, tanh output of the shared map
  Matrix<T> gate;           // n x b, tanh output of the adapter down-projection
};

template <typename T>
struct EncodeCache {
  std::vector<TokenId> tokens;
  Language language;
  std::vector<LayerCache<T>> layers;
  Matrix<T> final_hidden;   // n x d, before the output projection
};

namespace detail {
// out[i] += a[i] * W, with a: n x r, W: r x c
template <typename T>
void matmul_add(const Matrix<T>& a, const Matrix<T>& w, Matrix<T>& out) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    auto ar = a.row(i);
    for (std::size_t k = 0; k < w.rows(); ++k) {
      const T s = ar[k];
      if (s == T{}) continue;
      auto wr = w.row(k);
      for (std::size_t j = 0; j < w.cols(); ++j) o[j] += s * wr[j];
    }
  }
}

// out += a^T * b   (a: n x r, b: n x c, out: r x c)
template <typename T>
void matmul_tn_add(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    auto br = b.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T s = ar[k];
      if (s == T{}) continue;
      auto o = out.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += s * br[j];
    }
  }
}

// out += a * W^T  (a: n x c, W: r x c, out: n x r)
template <typename T>
void matmul_nt_add(const Matrix<T>& a, const Matrix<T>& w, Matrix<T>& out) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    auto o = out.row(i);
    for (std::size_t k = 0; k < w.rows(); ++k) {
      auto wr = w.row(k);
      T acc{};
      for (std::size_t j = 0; j < w.cols(); ++j) acc += ar[j] * wr[j];
      o[k] += acc;
    }
  }
}

template <typename T>
std::vector<T> column_sums(const Matrix<T>& m) {
  std::vector<T> out(m.cols(), T{});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(i, j);
  return out;
}
}  // namespace detail

/// Runs the shared layers with the sequence language's adapters and returns
/// the hidden states before the output projection. The cache holds what the
/// backward pass needs.
template <typename T>
Matrix<T> encode_hidden(const PreparedSequence& seq, const ModularEncoderParams<T>& p,
                        EncodeCache<T>* cache = nullptr) {
  const auto& lang = p.language(seq.language);
  check_vocabulary(seq, p.shape.vocab_size);
  const std::size_t n = seq.length();
  const std::size_t d = p.shape.hidden;
  const std::size_t b = p.shape.bottleneck;
  require(n >= 1, ErrorCode::EmptyInput, "cannot encode an empty sequence");

  Matrix<T> x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto src = p.embedding.row(seq.token_ids[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  if (cache != nullptr) {
    cache->tokens = seq.token_ids;
    cache->language = seq.language;
    cache->layers.clear();
  }

  for (std::size_t l = 0; l < p.shape.layers; ++l) {
    const auto& s = p.shared[l];
    const auto& a = lang.blocks[l];

    std::vector<T> mean = detail::column_sums(x);
    for (T& v : mean) v /= static_cast<T>(n);
    std::vector<T> context(s.bias);
    for (std::size_t k = 0; k < d; ++k) {
      if (mean[k] == T{}) continue;
      auto row = s.context_map.row(k);
      for (std::size_t j = 0; j < d; ++j) context[j] += mean[k] * row[j];
    }

    Matrix<T> hidden(n, d);
    for (std::size_t i = 0; i < n; ++i) std::copy(context.begin(), context.end(), hidden.row(i).begin());
    detail::matmul_add(x, s.token_map, hidden);
    for (T& v : hidden.values()) v = std::tanh(v);

    Matrix<T> gate(n, b);
    for (std::size_t i = 0; i < n; ++i) std::copy(a.down_bias.begin(), a.down_bias.end(), gate.row(i).begin());
    detail::matmul_add(hidden, a.down, gate);
    for (T& v : gate.values()) v = std::tanh(v);

    Matrix<T> next = x;
    for (std::size_t i = 0; i < n; ++i) {
      auto nr = next.row(i);
      auto hr = hidden.row(i);
      for (std::size_t j = 0; j < d; ++j) nr[j] += hr[j] + a.up_bias[j];
    }
    detail::matmul_add(gate, a.up, next);

    if (cache != nullptr) {
      cache->layers.push_back({std::move(x), std::move(mean), std::move(hidden), std::move(gate)});
    }
    x = std::move(next);
  }
  if (cache != nullptr) cache->final_hidden = x;
  return x;
}

/// Per-position output vectors: hidden states times the output projection.
template <typename T>
TermEmbeddingMatrix<T> encode(const PreparedSequence& seq, const ModularEncoderParams<T>& p,
                              EncodeCache<T>* cache = nullptr) {
  Matrix<T> hidden = encode_hidden(seq, p, cache);
  Matrix<T> out(hidden.rows(), p.shape.output_dim);
  detail::matmul_add(hidden, p.output_projection, out);
  return out;
}

/// Accumulates parameter gradients given d loss / d final hidden states.
template <typename T>
void backward_hidden(const EncodeCache<T>& cache, const ModularEncoderParams<T>& p,
                     Matrix<T> d_hidden_out, ModularEncoderParams<T>& grads) {
  const std::size_t n = cache.tokens.size();
  const std::size_t d = p.shape.hidden;
  const auto& lang = p.language(cache.language);
  auto* glang = grads.find_language(cache.language);
  require(glang != nullptr, ErrorCode::UnknownLanguage, "gradient buffer lacks language " + cache.language);

  Matrix<T> dx = std::move(d_hidden_out);
  for (std::size_t l = p.shape.layers; l-- > 0;) {
    const auto& lc = cache.layers[l];
    const auto& s = p.shared[l];
    const auto& a = lang.blocks[l];
    auto& gs = grads.shared[l];
    auto& ga = glang->blocks[l];

    // next = x + hidden + gate * up + up_bias; d_next == dx
    const Matrix<T>& d_adapter = dx;
    detail::matmul_tn_add(lc.gate, d_adapter, ga.up);
    const auto up_bias_grad = detail::column_sums(d_adapter);
    for (std::size_t j = 0; j < d; ++j) ga.up_bias[j] += up_bias_grad[j];

    Matrix<T> d_gate(n, p.shape.bottleneck);
    detail::matmul_nt_add(d_adapter, a.up, d_gate);
    for (std::size_t i = 0; i < d_gate.size(); ++i) {
      const T g = lc.gate.values()[i];
      d_gate.values()[i] *= T(1) - g * g;
    }
    detail::matmul_tn_add(lc.hidden, d_gate, ga.down);
    const auto down_bias_grad = detail::column_sums(d_gate);
    for (std::size_t j = 0; j < ga.down_bias.size(); ++j) ga.down_bias[j] += down_bias_grad[j];

    Matrix<T> d_pre = d_adapter;  // residual path through the adapter
    detail::matmul_nt_add(d_gate, a.down, d_pre);
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
      const T h = lc.hidden.values()[i];
      d_pre.values()[i] *= T(1) - h * h;
    }

    detail::matmul_tn_add(lc.input, d_pre, gs.token_map);
    const auto d_context = detail::column_sums(d_pre);
    for (std::size_t k = 0; k < d; ++k) {
      auto row = gs.context_map.row(k);
      for (std::size_t j = 0; j < d; ++j) row[j] += lc.mean[k] * d_context[j];
    }
    for (std::size_t j = 0; j < d; ++j) gs.bias[j] += d_context[j];

    Matrix<T> d_input = dx;  // block residual
    detail::matmul_nt_add(d_pre, s.token_map, d_input);
    std::vector<T> d_mean(d, T{});
    for (std::size_t k = 0; k < d; ++k) {
      auto row = s.context_map.row(k);
      T acc{};
      for (std::size_t j = 0; j < d; ++j) acc += row[j] * d_context[j];
      d_mean[k] = acc / static_cast<T>(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto r = d_input.row(i);
      for (std::size_t k = 0; k < d; ++k) r[k] += d_mean[k];
    }
    dx = std::move(d_input);
  }

  for (std::size_t i = 0; i < n; ++i) {
    auto g = grads.embedding.row(cache.tokens[i]);
    auto r = dx.row(i);
    for (std::size_t k = 0; k < d; ++k) g[k] += r[k];
  }
}

/// Backward through the output projection and the encoder.
template <typename T>
void backward(const EncodeCache<T>& cache, const ModularEncoderParams<T>& p, const Matrix<T>& d_out,
              ModularEncoderParams<T>& grads) {
  detail::matmul_tn_add(cache.final_hidden, d_out, grads.output_projection);
  Matrix<T> d_hidden(d_out.rows(), p.shape.hidden);
  detail::matmul_nt_add(d_out, p.output_projection, d_hidden);
  backward_hidden(cache, p, std::move(d_hidden), grads);
}

}  // namespace xmr
