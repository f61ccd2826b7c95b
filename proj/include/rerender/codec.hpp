#pragma once

// PNG (libpng simplified API) and JPEG (libjpeg) codecs for Frames, plus the
// `<seq_no>_<timestamp_ms>.png` naming used by the images directory.

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rerender/error.hpp"
#include "rerender/image.hpp"

namespace rerender {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::not_found, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io_error, "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// PNG

inline Bytes encode_png(const Frame& f) {
  require(f.valid(), "cannot encode an invalid frame");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(f.width);
  image.height = static_cast<png_uint_32>(f.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, f.pixels.data(), 0, nullptr))
    fail(ErrorCode::io_error, std::string("png encode failed: ") + image.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, f.pixels.data(), 0, nullptr))
    fail(ErrorCode::io_error, std::string("png encode failed: ") + image.message);
  out.resize(size);
  return out;
}

inline Frame decode_png(const Bytes& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (bytes.empty() || !png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::invalid_argument, std::string("not a PNG image: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::invalid_argument, std::string("png decode failed: ") + image.message);
  }
  return Frame(static_cast<int>(image.width), static_cast<int>(image.height), std::move(pixels));
}

inline void write_png(const std::filesystem::path& path, const Frame& f) { write_file_bytes(path, encode_png(f)); }
inline Frame read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

/// Lossless 8-bit export of a gray image (values rounded and clamped).
inline Frame gray_to_frame(const GrayImage& g) {
  Frame f(g.width, g.height);
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const auto v = detail::to_byte(g.values[i]);
    f.pixels[i * 3] = f.pixels[i * 3 + 1] = f.pixels[i * 3 + 2] = v;
  }
  return f;
}

inline std::string frame_file_name(const Frame& f) {
  return std::to_string(f.seq_no) + "_" + std::to_string(f.timestamp_ms) + ".png";
}

// ---------------------------------------------------------------------------
// JPEG

namespace detail {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace detail

inline Bytes encode_jpeg(const Frame& f, int quality = 85) {
  require(f.valid(), "cannot encode an invalid frame");
  require(quality >= 1 && quality <= 100, "jpeg quality must be in [1,100]");
  jpeg_compress_struct cinfo{};
  detail::JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = detail::jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    fail(ErrorCode::io_error, std::string("jpeg encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(f.width);
  cinfo.image_height = static_cast<JDIMENSION>(f.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  // No chroma subsampling: GUI frames are full of thin coloured edges.
  cinfo.comp_info[0].h_samp_factor = 1;
  cinfo.comp_info[0].v_samp_factor = 1;
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(f.at(0, static_cast<int>(cinfo.next_scanline)));
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  Bytes out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

inline Frame decode_jpeg(const Bytes& bytes) {
  require(!bytes.empty(), "empty jpeg payload");
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = detail::jpeg_error_exit;
  std::vector<std::uint8_t> pixels;  // declared before setjmp so a longjmp never skips its destructor
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorCode::invalid_argument, std::string("jpeg decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  pixels.resize(static_cast<std::size_t>(cinfo.output_width) * cinfo.output_height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * cinfo.output_width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return Frame(w, h, std::move(pixels));
}

/// Peak signal-to-noise ratio in dB over all channels; +inf for identical frames.
inline double psnr(const Frame& a, const Frame& b) {
  require(a.width == b.width && a.height == b.height, "psnr needs equally sized frames");
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.pixels.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

}  // namespace rerender
