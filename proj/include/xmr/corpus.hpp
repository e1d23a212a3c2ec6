#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmr/binary_io.hpp"
#include "xmr/error.hpp"
#include "xmr/matrix.hpp"
#include "xmr/sequence.hpp"

namespace xmr {

/// One passage or query: raw text for the toy tokenizer, or precomputed
/// embedding rows. Exactly one of the two is set.
struct CorpusRecord {
  std::string id;
  Language language;
  std::optional<std::string> text;
  std::optional<Matrix<float>> embeddings;
};

namespace detail {
inline void check_unique_ids(const std::vector<CorpusRecord>& records, const std::string& source) {
  std::set<std::string> seen;
  for (const auto& r : records)
    require(seen.insert(r.id).second, ErrorCode::Parse, source + ": duplicate id '" + r.id + "'");
}
}  // namespace detail

/// JSON lines: {"id": str, "lang": str, "text": str} or
/// {"id": str, "lang": str, "embeddings": [[float, ...], ...]}.
inline std::vector<CorpusRecord> read_corpus_jsonl(std::istream& in, const std::string& source = "corpus") {
  std::vector<CorpusRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(n) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::Parse, where + "invalid JSON (" + e.what() + ")");
    }
    require(j.is_object(), ErrorCode::Parse, where + "record must be a JSON object");
    require(j.contains("id") && j["id"].is_string(), ErrorCode::Parse, where + "missing string field 'id'");
    CorpusRecord r;
    r.id = j["id"].get<std::string>();
    if (j.contains("lang")) {
      require(j["lang"].is_string(), ErrorCode::Parse, where + "'lang' must be a string");
      r.language = j["lang"].get<std::string>();
    }
    const bool has_text = j.contains("text");
    const bool has_emb = j.contains("embeddings");
    require(has_text != has_emb, ErrorCode::Parse, where + "exactly one of 'text' and 'embeddings' is required");
    if (has_text) {
      require(j["text"].is_string(), ErrorCode::Parse, where + "'text' must be a string");
      r.text = j["text"].get<std::string>();
    } else {
      const auto& rows = j["embeddings"];
      require(rows.is_array() && !rows.empty(), ErrorCode::Parse, where + "'embeddings' must be a nonempty array");
      Matrix<float> m;
      for (const auto& row : rows) {
        require(row.is_array() && !row.empty(), ErrorCode::Parse, where + "embedding rows must be nonempty arrays");
        std::vector<float> v;
        for (const auto& x : row) {
          require(x.is_number(), ErrorCode::Parse, where + "embedding values must be numbers");
          v.push_back(x.get<float>());
        }
        require(m.rows() == 0 || v.size() == m.cols(), ErrorCode::Parse, where + "embedding rows differ in length");
        m.append_row(v);
      }
      r.embeddings = std::move(m);
    }
    for (const auto& [key, value] : j.items()) {
      require(key == "id" || key == "lang" || key == "text" || key == "embeddings", ErrorCode::Parse,
              where + "unknown field '" + key + "'");
    }
    out.push_back(std::move(r));
  }
  detail::check_unique_ids(out, source);
  return out;
}

// Binary embedding block, little-endian:
//   "XMREMB01" | u32 dim | u64 record count |
//   per record: string id | string lang | u32 rows | rows x dim float32
// where string = LEB128 length + bytes.
inline constexpr std::string_view kEmbeddingMagic = "XMREMB01";

inline std::vector<std::uint8_t> encode_embedding_block(const std::vector<CorpusRecord>& records) {
  require(!records.empty(), ErrorCode::EmptyInput, "no embedding records to write");
  io::Writer w;
  w.magic(kEmbeddingMagic);
  const std::size_t dim = records.front().embeddings.value().cols();
  w.u32(static_cast<std::uint32_t>(dim));
  w.u64(records.size());
  for (const auto& r : records) {
    require(r.embeddings.has_value(), ErrorCode::InvalidArgument, "record '" + r.id + "' has no embeddings");
    require(r.embeddings->cols() == dim, ErrorCode::DimensionMismatch,
            "record '" + r.id + "' has dim " + std::to_string(r.embeddings->cols()) + ", expected " +
                std::to_string(dim));
    w.string(r.id);
    w.string(r.language);
    w.u32(static_cast<std::uint32_t>(r.embeddings->rows()));
    w.array(r.embeddings->values());
  }
  return w.buffer();
}

inline std::vector<CorpusRecord> decode_embedding_block(std::span<const std::uint8_t> bytes,
                                                        const std::string& source = "embeddings") {
  io::Reader r(bytes, source);
  r.expect_magic(kEmbeddingMagic);
  const std::size_t dim = r.u32();
  const std::size_t count = r.u64();
  require(dim >= 1, ErrorCode::Format, source + ": embedding dim must be >= 1");
  std::vector<CorpusRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    CorpusRecord rec;
    rec.id = r.string();
    rec.language = r.string();
    const std::size_t rows = r.u32();
    require(rows >= 1, ErrorCode::Format, source + ": record '" + rec.id + "' has no rows");
    Matrix<float> m(rows, dim);
    r.array(m.values());
    rec.embeddings = std::move(m);
    out.push_back(std::move(rec));
  }
  r.expect_end();
  detail::check_unique_ids(out, source);
  return out;
}

/// Reads either format; the binary block is recognised by its magic.
inline std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() >= kEmbeddingMagic.size() &&
      std::equal(kEmbeddingMagic.begin(), kEmbeddingMagic.end(), bytes.begin()))
    return decode_embedding_block(bytes, path.string());
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  return read_corpus_jsonl(in, path.string());
}

}  // namespace xmr
