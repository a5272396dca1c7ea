#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xmr {

struct EmbeddingVector {
  std::string id;
  std::vector<float> values;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

/// Ordered (id, vector) collection with unique ids and a common dimension.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  /// Throws Error(kDuplicateId) for a repeated id and Error(kValidation) for a
  /// wrong length or a non-finite value.
  void add(EmbeddingVector entry);
  void add(std::string id, std::vector<float> values) {
    add(EmbeddingVector{std::move(id), std::move(values)});
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  const EmbeddingVector& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<EmbeddingVector>& entries() const noexcept { return entries_; }

  /// nullptr when absent.
  const EmbeddingVector* find(std::string_view id) const;

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.entries_ == b.entries_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<EmbeddingVector> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Throws Error(kValidation) if any value is NaN or infinite.
void check_finite(std::span<const float> values, std::string_view what);

// Binary table file:
//   "XEMB" | u32 version=1 | u32 count | u32 dim |
//   count x (u16 id_len | id bytes | dim x f32), all little-endian.
inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

std::vector<std::uint8_t> serialize_embeddings(const EmbeddingTable& table);
EmbeddingTable deserialize_embeddings(std::span<const std::uint8_t> bytes);

void write_embeddings(const EmbeddingTable& table, const std::string& path);
EmbeddingTable read_embeddings(const std::string& path);

}  // namespace xmr
