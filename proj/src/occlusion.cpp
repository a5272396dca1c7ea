#include "xmrbench/occlusion.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "xmrbench/error.hpp"
#include "xmrbench/rng.hpp"

namespace xmr {

BlockDims block_dims(double ratio_percent, std::size_t height, std::size_t width) {
  if (!(ratio_percent >= 0.0 && ratio_percent <= 100.0)) {
    throw Error(ErrorCode::kValidation,
                "occlusion ratio must be in [0, 100], got " + std::to_string(ratio_percent));
  }
  if (height == 0 || width == 0) {
    throw Error(ErrorCode::kValidation, "image dimensions must be positive");
  }
  const double f = std::sqrt(ratio_percent / 100.0);
  auto side = [f](std::size_t n) {
    const auto v = static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
    return std::min(v, n);
  };
  return {side(height), side(width)};
}

BlockPlacement place_block(const OcclusionSpec& spec, std::size_t height, std::size_t width) {
  const BlockDims dims = block_dims(spec.ratio_percent, height, width);
  BlockPlacement placement{0, 0, dims.block_h, dims.block_w};
  if (dims.block_h == 0 || dims.block_w == 0) return placement;
  const std::uint64_t rows = height - dims.block_h + 1;
  const std::uint64_t cols = width - dims.block_w + 1;
  Rng rng(spec.seed);
  const std::uint64_t index = rng.uniform_index(rows * cols);
  placement.top = static_cast<std::size_t>(index / cols);
  placement.left = static_cast<std::size_t>(index % cols);
  return placement;
}

ImageTensor apply_occlusion(const ImageTensor& image, const OcclusionSpec& spec) {
  if (!(spec.fill_value >= 0.0f && spec.fill_value <= 1.0f)) {
    throw Error(ErrorCode::kValidation, "fill value must be in [0, 1]");
  }
  const BlockPlacement block = place_block(spec, image.height(), image.width());
  auto src = image.pixels();
  std::vector<float> out(src.begin(), src.end());
  const std::size_t c = image.channels();
  for (std::size_t r = block.top; r < block.top + block.block_h; ++r) {
    float* row = out.data() + (r * image.width() + block.left) * c;
    std::fill(row, row + block.block_w * c, spec.fill_value);
  }
  return ImageTensor(image.height(), image.width(), c, std::move(out));
}

std::uint64_t occlusion_seed(std::uint64_t base_seed, std::size_t image_index,
                             double ratio_percent, std::size_t trial,
                             std::uint64_t report_index) {
  std::uint64_t h = mix64(image_index);
  h = hash_combine(h, double_bits(ratio_percent));
  h = hash_combine(h, trial);
  h = hash_combine(h, report_index);
  return base_seed ^ h;
}

}  // namespace xmr
