#include "apseg/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include "apseg/errors.hpp"

namespace apseg::png {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) {
    if (mode[0] == 'r') throw LoadError("cannot open " + path.string());
    throw Error("cannot create " + path.string());
  }
  return f;
}

void write_rows(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
                const std::vector<png_bytep>& rows) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // rows are host little-endian
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  int width = 0, height = 0, bit_depth = 0, color_type = 0, row_bytes = 0;
  std::vector<png_byte> data;
};

Decoded decode(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw LoadError("not a PNG file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw LoadError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  Decoded out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG file: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  if (out.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (out.bit_depth < 8) png_set_expand(png);
  if (out.bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  out.row_bytes = static_cast<int>(png_get_rowbytes(png, info));
  out.data.resize(static_cast<std::size_t>(out.row_bytes) * out.height);
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int r = 0; r < out.height; ++r) rows[static_cast<std::size_t>(r)] = &out.data[static_cast<std::size_t>(r) * out.row_bytes];
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_rgb8(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw ArgumentError("write_rgb8: channels must be 1 or 3");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw ShapeError("write_rgb8: pixel buffer size mismatch");
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  auto* base = const_cast<std::uint8_t*>(img.pixels.data());
  for (int r = 0; r < img.height; ++r) rows[static_cast<std::size_t>(r)] = base + static_cast<std::size_t>(r) * img.width * img.channels;
  write_rows(path, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, rows);
}

void write_gray16(const std::filesystem::path& path, const Image16& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw ShapeError("write_gray16: pixel buffer size mismatch");
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  auto* base = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(img.pixels.data()));
  for (int r = 0; r < img.height; ++r) rows[static_cast<std::size_t>(r)] = base + static_cast<std::size_t>(r) * img.width * 2;
  write_rows(path, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

Image8 read_rgb8(const std::filesystem::path& path) {
  Decoded d = decode(path);
  if (d.bit_depth != 8) throw LoadError("expected 8-bit PNG: " + path.string());
  int src_channels = 0;
  switch (d.color_type) {
    case PNG_COLOR_TYPE_GRAY: src_channels = 1; break;
    case PNG_COLOR_TYPE_GRAY_ALPHA: src_channels = 2; break;
    case PNG_COLOR_TYPE_RGB: src_channels = 3; break;
    case PNG_COLOR_TYPE_RGB_ALPHA: src_channels = 4; break;
    default: throw LoadError("unsupported PNG color type: " + path.string());
  }
  Image8 img{d.width, d.height, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(d.width) * d.height * 3)};
  for (int r = 0; r < d.height; ++r)
    for (int c = 0; c < d.width; ++c) {
      const png_byte* px = &d.data[static_cast<std::size_t>(r) * d.row_bytes + static_cast<std::size_t>(c) * src_channels];
      for (int k = 0; k < 3; ++k)
        img.pixels[(static_cast<std::size_t>(r) * d.width + c) * 3 + k] = src_channels < 3 ? px[0] : px[k];
    }
  return img;
}

Image16 read_gray16(const std::filesystem::path& path) {
  Decoded d = decode(path);
  if (d.color_type != PNG_COLOR_TYPE_GRAY) throw LoadError("expected single-channel PNG: " + path.string());
  Image16 img{d.width, d.height, std::vector<std::uint16_t>(static_cast<std::size_t>(d.width) * d.height)};
  for (int r = 0; r < d.height; ++r)
    for (int c = 0; c < d.width; ++c) {
      const std::size_t o = static_cast<std::size_t>(r) * d.row_bytes;
      img.pixels[static_cast<std::size_t>(r) * d.width + c] =
          d.bit_depth == 16 ? static_cast<std::uint16_t>(d.data[o + 2 * c] | (d.data[o + 2 * c + 1] << 8))
                            : d.data[o + c];
    }
  return img;
}

}  // namespace apseg::png
