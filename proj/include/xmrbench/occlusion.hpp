#pragma once

#include <cstddef>
#include <cstdint>

#include "xmrbench/image.hpp"

namespace xmr {

/// Block occlusion of `ratio_percent` percent of the image area.
struct OcclusionSpec {
  double ratio_percent = 0.0;
  std::uint64_t seed = 0;
  float fill_value = 0.0f;
};

struct BlockPlacement {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t block_h = 0;
  std::size_t block_w = 0;

  std::size_t area() const noexcept { return block_h * block_w; }
  bool contains(std::size_t row, std::size_t col) const noexcept {
    return row >= top && row < top + block_h && col >= left && col < left + block_w;
  }
  friend bool operator==(const BlockPlacement&, const BlockPlacement&) = default;
};

struct BlockDims {
  std::size_t block_h = 0;
  std::size_t block_w = 0;
  friend bool operator==(const BlockDims&, const BlockDims&) = default;
};

/// Side fraction f = sqrt(ratio/100) applied per dimension, rounded half away
/// from zero. Throws Error(kValidation) for ratio outside [0, 100] or zero size.
BlockDims block_dims(double ratio_percent, std::size_t height, std::size_t width);

/// Chooses a fully interior position uniformly among the
/// (H - bh + 1) * (W - bw + 1) candidates using Rng(spec.seed).
BlockPlacement place_block(const OcclusionSpec& spec, std::size_t height, std::size_t width);

/// Returns a copy of `image` with the placed block set to fill_value in all
/// channels. Ratio 0 returns an identical copy.
ImageTensor apply_occlusion(const ImageTensor& image, const OcclusionSpec& spec);

/// Seed for one occlusion draw: base_seed XOR a SplitMix64 hash chain over
/// (image index, ratio bits, trial, report index). The report index is only
/// set in per-pair mode.
std::uint64_t occlusion_seed(std::uint64_t base_seed, std::size_t image_index,
                             double ratio_percent, std::size_t trial,
                             std::uint64_t report_index = UINT64_MAX);

}  // namespace xmr
