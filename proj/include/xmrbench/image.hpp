#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace xmr {

enum class ImageFormat { kPng, kJpeg };

/// H x W x C pixel array with values in [0, 1], row-major, channels
/// interleaved. Immutable after construction.
class ImageTensor {
 public:
  ImageTensor() = default;

  /// Throws Error(kValidation) if dimensions are invalid, channels is not
  /// 1 or 3, the pixel count does not match, or any value is outside [0, 1].
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
              std::vector<float> pixels);

  /// Constant-valued image.
  static ImageTensor filled(std::size_t height, std::size_t width,
                            std::size_t channels, float value);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  std::span<const float> pixels() const noexcept { return pixels_; }

  float at(std::size_t row, std::size_t col, std::size_t channel = 0) const {
    return pixels_[(row * width_ + col) * channels_ + channel];
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> pixels_;
};

/// Sniffs PNG or JPEG from the leading bytes; throws Error(kDecode) otherwise.
ImageFormat detect_format(std::span<const std::uint8_t> bytes);

/// Decodes an 8-bit PNG or JPEG. Grayscale stays 1-channel; everything else
/// becomes 3-channel RGB (alpha is dropped). Values are scaled by 1/255.
ImageTensor decode_image(std::span<const std::uint8_t> bytes);

/// Encodes with 8-bit quantization round(v * 255).
std::vector<std::uint8_t> encode_png(const ImageTensor& image);
std::vector<std::uint8_t> encode_jpeg(const ImageTensor& image, int quality = 95);
std::vector<std::uint8_t> encode_image(const ImageTensor& image, ImageFormat format);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

ImageTensor load_image(const std::string& path);

}  // namespace xmr
