#include "xmrbench/embedding.hpp"

#include <cmath>

#include "xmrbench/byteio.hpp"
#include "xmrbench/error.hpp"
#include "xmrbench/image.hpp"

namespace xmr {

void check_finite(std::span<const float> values, std::string_view what) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kValidation, "non-finite value in " + std::string(what));
    }
  }
}

void EmbeddingTable::add(EmbeddingVector entry) {
  if (entry.values.size() != dim_) {
    throw Error(ErrorCode::kValidation,
                "embedding '" + entry.id + "' has length " + std::to_string(entry.values.size()) +
                    ", table dim is " + std::to_string(dim_));
  }
  check_finite(entry.values, "embedding '" + entry.id + "'");
  if (index_.contains(entry.id)) {
    throw Error(ErrorCode::kDuplicateId, "duplicate embedding id '" + entry.id + "'");
  }
  index_.emplace(entry.id, entries_.size());
  entries_.push_back(std::move(entry));
}

const EmbeddingVector* EmbeddingTable::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

namespace {
constexpr char kMagic[4] = {'X', 'E', 'M', 'B'};
}

std::vector<std::uint8_t> serialize_embeddings(const EmbeddingTable& table) {
  byteio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kEmbeddingFileVersion);
  w.u32(static_cast<std::uint32_t>(table.size()));
  w.u32(static_cast<std::uint32_t>(table.dim()));
  for (const auto& e : table.entries()) {
    if (e.id.size() > UINT16_MAX) {
      throw Error(ErrorCode::kValidation, "embedding id longer than 65535 bytes");
    }
    w.u16(static_cast<std::uint16_t>(e.id.size()));
    w.text(e.id);
    for (float v : e.values) w.f32(v);
  }
  return w.take();
}

EmbeddingTable deserialize_embeddings(std::span<const std::uint8_t> bytes) {
  byteio::Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::kMagicMismatch, "not an XEMB embedding file");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kEmbeddingFileVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "unsupported XEMB version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("count");
  const std::uint32_t dim = r.u32("dim");
  // Smallest possible payload for the declared header; checked before any
  // allocation sized from it.
  const std::uint64_t min_payload =
      static_cast<std::uint64_t>(count) * (2 + static_cast<std::uint64_t>(dim) * 4);
  if (min_payload > r.remaining()) {
    throw Error(ErrorCode::kTruncated, "XEMB header declares more data than the file holds");
  }
  EmbeddingTable table(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16("id length");
    std::string id = r.text(len, "id");
    r.require(static_cast<std::size_t>(dim) * 4, "embedding values");
    std::vector<float> values(dim);
    r.bytes(values.data(), values.size() * sizeof(float), "embedding values");
    table.add(std::move(id), std::move(values));
  }
  if (r.remaining() != 0) {
    throw Error(ErrorCode::kValidation, "trailing bytes after XEMB payload");
  }
  return table;
}

void write_embeddings(const EmbeddingTable& table, const std::string& path) {
  write_file_bytes(path, serialize_embeddings(table));
}

EmbeddingTable read_embeddings(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return deserialize_embeddings(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace xmr
