#include "xmrbench/image.hpp"

#include <png.h>
// jpeglib.h needs size_t and FILE declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xmrbench/error.hpp"

namespace xmr {

ImageTensor::ImageTensor(std::size_t height, std::size_t width,
                         std::size_t channels, std::vector<float> pixels)
    : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
  if (height == 0 || width == 0) {
    throw Error(ErrorCode::kValidation, "image dimensions must be positive");
  }
  if (channels != 1 && channels != 3) {
    throw Error(ErrorCode::kValidation,
                "image must have 1 or 3 channels, got " + std::to_string(channels));
  }
  if (pixels_.size() != height * width * channels) {
    throw Error(ErrorCode::kValidation, "pixel count does not match H*W*C");
  }
  for (float v : pixels_) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(ErrorCode::kValidation, "pixel value outside [0, 1]");
    }
  }
}

ImageTensor ImageTensor::filled(std::size_t height, std::size_t width,
                                std::size_t channels, float value) {
  return ImageTensor(height, width, channels,
                     std::vector<float>(height * width * channels, value));
}

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::vector<float> scale_bytes(std::span<const std::uint8_t> raw) {
  std::vector<float> out(raw.size());
  std::transform(raw.begin(), raw.end(), out.begin(),
                 [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return out;
}

std::vector<std::uint8_t> quantize(const ImageTensor& image) {
  std::vector<std::uint8_t> raw(image.size());
  auto px = image.pixels();
  std::transform(px.begin(), px.end(), raw.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  return raw;
}

ImageTensor decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    std::string msg = "PNG decode failed: ";
    msg += img.message;
    throw Error(ErrorCode::kDecode, msg);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const std::size_t channels = gray ? 1 : 3;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(img));
  // Alpha, if any, is composited onto black.
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&img, &background, raw.data(), 0, nullptr)) {
    std::string msg = "PNG decode failed: ";
    msg += img.message;
    png_image_free(&img);
    throw Error(ErrorCode::kDecode, msg);
  }
  return ImageTensor(img.height, img.width, channels, scale_bytes(raw));
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

// No C++ objects with destructors may be live across setjmp/longjmp here.
bool decode_jpeg_raw(std::span<const std::uint8_t> bytes, std::vector<std::uint8_t>& raw,
                     std::size_t& height, std::size_t& width, std::size_t& channels,
                     std::string& error) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    error = err.message;
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  height = cinfo.output_height;
  width = cinfo.output_width;
  channels = static_cast<std::size_t>(cinfo.output_components);
  raw.resize(height * width * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = raw.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

ImageTensor decode_jpeg(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> raw;
  std::size_t h = 0, w = 0, c = 0;
  std::string error;
  if (!decode_jpeg_raw(bytes, raw, h, w, c, error)) {
    throw Error(ErrorCode::kDecode, "JPEG decode failed: " + error);
  }
  return ImageTensor(h, w, c, scale_bytes(raw));
}

bool encode_jpeg_raw(const std::vector<std::uint8_t>& raw, std::size_t height,
                     std::size_t width, std::size_t channels, int quality,
                     unsigned char** out, unsigned long* out_size, std::string& error) {
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    error = err.message;
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, out, out_size);
  cinfo.image_width = static_cast<JDIMENSION>(width);
  cinfo.image_height = static_cast<JDIMENSION>(height);
  cinfo.input_components = static_cast<int>(channels);
  cinfo.in_color_space = channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPLE*>(raw.data() + cinfo.next_scanline * width * channels);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}

}  // namespace

ImageFormat detect_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 8 && std::equal(std::begin(kPngSignature), std::end(kPngSignature), bytes.begin())) {
    return ImageFormat::kPng;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) {
    return ImageFormat::kJpeg;
  }
  throw Error(ErrorCode::kDecode, "unsupported image encoding (expected PNG or JPEG)");
}

ImageTensor decode_image(std::span<const std::uint8_t> bytes) {
  switch (detect_format(bytes)) {
    case ImageFormat::kPng: return decode_png(bytes);
    case ImageFormat::kJpeg: return decode_jpeg(bytes);
  }
  throw Error(ErrorCode::kDecode, "unsupported image encoding");
}

std::vector<std::uint8_t> encode_png(const ImageTensor& image) {
  if (image.empty()) throw Error(ErrorCode::kValidation, "cannot encode an empty image");
  const auto raw = quantize(image);
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = image.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw Error(ErrorCode::kInternal, std::string("PNG encode failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw Error(ErrorCode::kInternal, std::string("PNG encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_jpeg(const ImageTensor& image, int quality) {
  if (image.empty()) throw Error(ErrorCode::kValidation, "cannot encode an empty image");
  const auto raw = quantize(image);
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  std::string error;
  const bool ok = encode_jpeg_raw(raw, image.height(), image.width(), image.channels(),
                                  quality, &buffer, &size, error);
  std::vector<std::uint8_t> out;
  if (ok) out.assign(buffer, buffer + size);
  std::free(buffer);
  if (!ok) throw Error(ErrorCode::kInternal, "JPEG encode failed: " + error);
  return out;
}

std::vector<std::uint8_t> encode_image(const ImageTensor& image, ImageFormat format) {
  return format == ImageFormat::kPng ? encode_png(image) : encode_jpeg(image);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

ImageTensor load_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace xmr
