#pragma once

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "spst/image.hpp"

namespace spst::io {

using TextChunks = std::map<std::string, std::string>;

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path);
  return f;
}

struct PngDecoded {
  int width = 0, height = 0;
  std::vector<std::uint16_t> rgb;  // 16-bit samples, interleaved
  int bit_depth = 8;
  TextChunks text;
};

// Returns an empty string on success, the libpng message otherwise. Kept free
// of non-trivial locals because libpng reports errors through longjmp.
inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

inline bool png_decode(std::FILE* fp, PngDecoded& out, std::vector<png_bytep>& rows,
                       std::vector<png_byte>& storage, std::string& err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn,
                                           png_warning_fn);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian host order
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.bit_depth = depth == 16 ? 16 : 8;
  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  storage.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = storage.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, info);
  png_textp text = nullptr;
  int n_text = 0;
  if (png_get_text(png, info, &text, &n_text) > 0) {
    for (int i = 0; i < n_text; ++i) {
      out.text[text[i].key] = std::string(text[i].text, text[i].text_length);
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline bool png_encode(std::FILE* fp, int width, int height, int bit_depth,
                       const std::vector<png_bytep>& rows, std::vector<png_text>& text,
                       std::string& err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn,
                                            png_warning_fn);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (!text.empty()) png_set_text(png, info, text.data(), static_cast<int>(text.size()));
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return true;
}

struct JpegErrorMgr {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

inline bool jpeg_decode(std::FILE* fp, int& width, int& height, std::vector<unsigned char>& rgb,
                        std::string& err) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    err = jerr.message;
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  rgb.resize(static_cast<std::size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

inline bool jpeg_encode(std::FILE* fp, int width, int height,
                        const std::vector<unsigned char>& rgb, int quality, std::string& err) {
  jpeg_compress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    err = jerr.message;
    jpeg_destroy_compress(&cinfo);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, fp);
  cinfo.image_width = static_cast<JDIMENSION>(width);
  cinfo.image_height = static_cast<JDIMENSION>(height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(rgb.data() +
                                     static_cast<std::size_t>(cinfo.next_scanline) * width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}

template <typename T>
std::uint16_t quantize(T v, double maxval) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(c * maxval));
}

}  // namespace detail

enum class FileKind { png, jpeg, unknown };

inline FileKind sniff(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  if (in.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) return FileKind::png;
  if (in.gcount() >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) {
    return FileKind::jpeg;
  }
  return FileKind::unknown;
}

// Decodes an 8- or 16-bit PNG or a JPEG into [0,1] RGB values.
inline Image<float> read_image(const std::string& path, TextChunks* text = nullptr) {
  const FileKind kind = sniff(path);
  auto fp = detail::open_file(path, "rb");
  std::string err;
  if (kind == FileKind::png) {
    detail::PngDecoded dec;
    std::vector<png_bytep> rows;
    std::vector<png_byte> storage;
    if (!detail::png_decode(fp.get(), dec, rows, storage, err)) {
      throw FormatError("bad PNG " + path + ": " + err);
    }
    Image<float> img(dec.height, dec.width);
    const double maxval = dec.bit_depth == 16 ? 65535.0 : 255.0;
    for (int y = 0; y < dec.height; ++y) {
      const png_bytep row = rows[static_cast<std::size_t>(y)];
      for (int x = 0; x < dec.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          double v;
          if (dec.bit_depth == 16) {
            std::uint16_t s;
            std::memcpy(&s, row + (static_cast<std::size_t>(x) * 3 + c) * 2, 2);
            v = s;
          } else {
            v = row[static_cast<std::size_t>(x) * 3 + c];
          }
          img.at(c, y, x) = static_cast<float>(v / maxval);
        }
      }
    }
    if (text) *text = std::move(dec.text);
    return img;
  }
  if (kind == FileKind::jpeg) {
    int w = 0, h = 0;
    std::vector<unsigned char> rgb;
    if (!detail::jpeg_decode(fp.get(), w, h, rgb, err)) {
      throw FormatError("bad JPEG " + path + ": " + err);
    }
    Image<float> img(h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          img.at(c, y, x) = rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
        }
      }
    }
    if (text) text->clear();
    return img;
  }
  throw FormatError("unrecognized image format: " + path);
}

inline TextChunks read_png_text(const std::string& path) {
  TextChunks text;
  read_image(path, &text);
  return text;
}

// Writes an RGB PNG, clamping values to [0,1]. bit_depth is 8 or 16.
template <typename T>
void write_png(const std::string& path, const Image<T>& img, int bit_depth = 8,
               const TextChunks& text = {}) {
  if (bit_depth != 8 && bit_depth != 16) throw FormatError("PNG bit depth must be 8 or 16");
  const int w = img.width(), h = img.height();
  const std::size_t bps = bit_depth == 16 ? 2 : 1;
  const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<png_byte> storage(static_cast<std::size_t>(w) * h * 3 * bps);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    png_bytep row = storage.data() + static_cast<std::size_t>(y) * w * 3 * bps;
    rows[static_cast<std::size_t>(y)] = row;
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const std::uint16_t q = detail::quantize(img.at(c, y, x), maxval);
        const std::size_t i = static_cast<std::size_t>(x) * 3 + c;
        if (bit_depth == 16) {
          std::memcpy(row + i * 2, &q, 2);
        } else {
          row[i] = static_cast<png_byte>(q);
        }
      }
    }
  }
  std::vector<std::string> keys, values;
  for (const auto& [k, v] : text) {
    keys.push_back(k);
    values.push_back(v);
  }
  std::vector<png_text> chunks(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::memset(&chunks[i], 0, sizeof(png_text));
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = keys[i].data();
    chunks[i].text = values[i].data();
    chunks[i].text_length = values[i].size();
  }
  auto fp = detail::open_file(path, "wb");
  std::string err;
  if (!detail::png_encode(fp.get(), w, h, bit_depth, rows, chunks, err)) {
    throw FormatError("PNG encode failed for " + path + ": " + err);
  }
}

template <typename T>
void write_jpeg(const std::string& path, const Image<T>& img, int quality = 95) {
  const int w = img.width(), h = img.height();
  std::vector<unsigned char> rgb(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<unsigned char>(detail::quantize(img.at(c, y, x), 255.0));
      }
    }
  }
  auto fp = detail::open_file(path, "wb");
  std::string err;
  if (!detail::jpeg_encode(fp.get(), w, h, rgb, quality, err)) {
    throw FormatError("JPEG encode failed for " + path + ": " + err);
  }
}

// Chooses the encoder from the file extension (.jpg/.jpeg, otherwise PNG).
template <typename T>
void write_image(const std::string& path, const Image<T>& img, const TextChunks& text = {}) {
  auto ends_with = [&](const char* ext) {
    const std::size_t n = std::strlen(ext);
    if (path.size() < n) return false;
    std::string tail = path.substr(path.size() - n);
    for (auto& ch : tail) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return tail == ext;
  };
  if (ends_with(".jpg") || ends_with(".jpeg")) {
    write_jpeg(path, img);
  } else {
    write_png(path, img, 8, text);
  }
}

}  // namespace spst::io
