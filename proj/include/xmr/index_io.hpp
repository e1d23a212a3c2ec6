#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xmr/binary_io.hpp"
#include "xmr/index.hpp"

namespace xmr {

// Index directory, all integers little-endian (docs/FORMATS.md has the
// byte-level description):
//   meta.bin       versioned header, dims, counts, seed, codec tables
//   centroids.bin  |C| x d_out float32, row-major
//   codes.bin      bit-packed (centroid id, 2-bit residual) records
//   ivf.bin        non-empty inverted lists, delta + LEB128 encoded
//   passages.bin   per-passage embedding counts and external ids
namespace index_files {
inline constexpr const char* kMeta = "meta.bin";
inline constexpr const char* kCentroids = "centroids.bin";
inline constexpr const char* kCodes = "codes.bin";
inline constexpr const char* kInvertedLists = "ivf.bin";
inline constexpr const char* kPassages = "passages.bin";
}  // namespace index_files

inline constexpr std::uint32_t kIndexVersion = 1;
/// magic (8) + u64 record count + u32 bits per record
inline constexpr std::size_t kCodesHeaderBytes = 20;

struct IndexFileSizes {
  std::size_t meta = 0, centroids = 0, codes = 0, inverted_lists = 0, passages = 0;
  std::size_t total() const { return meta + centroids + codes + inverted_lists + passages; }
};

namespace detail {
inline std::vector<std::uint8_t> encode_meta(const CompressedIndex& index) {
  io::Writer w;
  w.magic("XMRMETA1");
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(index.dim()));
  w.u32(static_cast<std::uint32_t>(index.centroid_count()));
  w.u64(index.embedding_count());
  w.u64(index.passage_count());
  w.u64(index.seed);
  w.u32(index.centroids.id_bits());
  w.u32(static_cast<std::uint32_t>(index.bits_per_embedding()));
  w.array(std::span<const float>(index.codec.cuts));
  w.array(std::span<const float>(index.codec.representatives));
  return w.buffer();
}

inline std::vector<std::uint8_t> encode_centroids(const CompressedIndex& index) {
  io::Writer w;
  w.magic("XMRCENT1");
  w.u32(static_cast<std::uint32_t>(index.centroid_count()));
  w.u32(static_cast<std::uint32_t>(index.dim()));
  w.array(index.centroids.values.values());
  return w.buffer();
}

inline std::vector<std::uint8_t> encode_codes(const CompressedIndex& index) {
  io::Writer w;
  w.magic("XMRCODE1");
  w.u64(index.codes.records());
  w.u32(static_cast<std::uint32_t>(index.codes.record_bits()));
  w.bytes(index.codes.bytes());
  return w.buffer();
}

inline std::vector<std::uint8_t> encode_inverted_lists(const CompressedIndex& index) {
  io::Writer w;
  w.magic("XMRIVF01");
  std::uint32_t non_empty = 0;
  for (const auto& list : index.inverted_lists) non_empty += list.empty() ? 0 : 1;
  w.u32(non_empty);
  std::uint64_t previous_centroid = 0;
  for (std::size_t c = 0; c < index.inverted_lists.size(); ++c) {
    const auto& list = index.inverted_lists[c];
    if (list.empty()) continue;
    w.varint(c - previous_centroid);
    previous_centroid = c;
    w.varint(list.size());
    std::uint64_t previous = 0;
    for (EmbeddingId e : list) {
      w.varint(e - previous);
      previous = e;
    }
  }
  return w.buffer();
}

inline std::vector<std::uint8_t> encode_passages(const CompressedIndex& index) {
  io::Writer w;
  w.magic("XMRPSG01");
  w.u64(index.passage_count());
  for (std::size_t p = 0; p < index.passage_count(); ++p) w.varint(index.passage_offsets[p + 1] - index.passage_offsets[p]);
  w.u8(index.passage_names.empty() ? 0 : 1);
  for (const auto& name : index.passage_names) w.string(name);
  return w.buffer();
}
}  // namespace detail

inline IndexFileSizes save_index(const CompressedIndex& index, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  IndexFileSizes sizes;
  auto put = [&](const char* name, const std::vector<std::uint8_t>& bytes, std::size_t& size) {
    io::write_file(dir / name, bytes);
    size = bytes.size();
  };
  put(index_files::kMeta, detail::encode_meta(index), sizes.meta);
  put(index_files::kCentroids, detail::encode_centroids(index), sizes.centroids);
  put(index_files::kCodes, detail::encode_codes(index), sizes.codes);
  put(index_files::kInvertedLists, detail::encode_inverted_lists(index), sizes.inverted_lists);
  put(index_files::kPassages, detail::encode_passages(index), sizes.passages);
  return sizes;
}

inline CompressedIndex load_index(const std::filesystem::path& dir) {
  CompressedIndex index;

  const auto meta_bytes = io::read_file(dir / index_files::kMeta);
  io::Reader meta(meta_bytes, (dir / index_files::kMeta).string());
  meta.expect_magic("XMRMETA1");
  const auto version = meta.u32();
  require(version == kIndexVersion, ErrorCode::Format, "unsupported index version " + std::to_string(version));
  const std::size_t dim = meta.u32();
  const std::size_t count = meta.u32();
  const std::size_t embeddings = meta.u64();
  const std::size_t passages = meta.u64();
  index.seed = meta.u64();
  const std::uint32_t id_bits = meta.u32();
  const std::uint32_t record_bits = meta.u32();
  index.codec.dim = dim;
  index.codec.cuts.resize(3 * dim);
  index.codec.representatives.resize(4 * dim);
  meta.array(std::span<float>(index.codec.cuts));
  meta.array(std::span<float>(index.codec.representatives));
  meta.expect_end();

  const auto cent_bytes = io::read_file(dir / index_files::kCentroids);
  io::Reader cent(cent_bytes, (dir / index_files::kCentroids).string());
  cent.expect_magic("XMRCENT1");
  require(cent.u32() == count && cent.u32() == dim, ErrorCode::Format, "centroid table shape disagrees with meta");
  index.centroids.values = Matrix<float>(count, dim);
  cent.array(index.centroids.values.values());
  cent.expect_end();
  require(index.centroids.id_bits() == id_bits && record_bits == 2 * dim + id_bits, ErrorCode::Format,
          "record width disagrees with centroid count");

  const auto code_bytes = io::read_file(dir / index_files::kCodes);
  io::Reader codes(code_bytes, (dir / index_files::kCodes).string());
  codes.expect_magic("XMRCODE1");
  require(codes.u64() == embeddings && codes.u32() == record_bits, ErrorCode::Format, "code header disagrees with meta");
  const auto packed = codes.bytes((embeddings * record_bits + 7) / 8);
  index.codes = PackedCodes(record_bits, embeddings, std::vector<std::uint8_t>(packed.begin(), packed.end()));
  codes.expect_end();

  const auto psg_bytes = io::read_file(dir / index_files::kPassages);
  io::Reader psg(psg_bytes, (dir / index_files::kPassages).string());
  psg.expect_magic("XMRPSG01");
  require(psg.u64() == passages, ErrorCode::Format, "passage count disagrees with meta");
  index.passage_offsets.push_back(0);
  for (std::size_t p = 0; p < passages; ++p) {
    const auto n = psg.varint();
    index.passage_offsets.push_back(index.passage_offsets.back() + n);
    index.embedding_passage.insert(index.embedding_passage.end(), n, static_cast<PassageId>(p));
  }
  require(index.embedding_passage.size() == embeddings, ErrorCode::Format, "passage map does not cover all embeddings");
  if (psg.u8() != 0) {
    for (std::size_t p = 0; p < passages; ++p) index.passage_names.push_back(psg.string());
  }
  psg.expect_end();

  const auto ivf_bytes = io::read_file(dir / index_files::kInvertedLists);
  io::Reader ivf(ivf_bytes, (dir / index_files::kInvertedLists).string());
  ivf.expect_magic("XMRIVF01");
  index.inverted_lists.assign(count, {});
  const auto non_empty = ivf.u32();
  std::uint64_t centroid = 0;
  std::size_t listed = 0;
  for (std::uint32_t i = 0; i < non_empty; ++i) {
    centroid += ivf.varint();
    require(centroid < count, ErrorCode::Format, "inverted list for unknown centroid");
    const auto len = ivf.varint();
    auto& list = index.inverted_lists[centroid];
    std::uint64_t e = 0;
    for (std::uint64_t k = 0; k < len; ++k) {
      e += ivf.varint();
      require(e < embeddings, ErrorCode::Format, "inverted list entry out of range");
      list.push_back(static_cast<EmbeddingId>(e));
    }
    listed += len;
  }
  ivf.expect_end();
  require(listed == embeddings, ErrorCode::Format, "inverted lists do not partition the embeddings");
  return index;
}

}  // namespace xmr
