#include "tempo/image_io.hpp"

#include <cstddef>
#include <cstdio>
// jpeglib.h needs stdio/stddef declared first
#include <jpeglib.h>
#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "tempo/errors.hpp"

namespace tempo {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open " + path);
  return f;
}

// Reads the raw interleaved rows of a PNG after normalizing transforms.
// Returns 8- or 16-bit samples with 1 or 3 channels.
struct PngPixels {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<unsigned char> rows;  // height * rowbytes
  size_t rowbytes = 0;
};

PngPixels read_png_pixels(std::FILE* f, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png decoder init failed for " + path);
  }
  PngPixels px;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("failed to decode " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);

  const png_byte color_type = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  px.width = static_cast<int>(png_get_image_width(png, info));
  px.height = static_cast<int>(png_get_image_height(png, info));
  px.bit_depth = png_get_bit_depth(png, info);
  px.channels = png_get_channels(png, info);
  px.rowbytes = png_get_rowbytes(png, info);
  px.rows.resize(px.rowbytes * px.height);
  row_ptrs.resize(px.height);
  for (int y = 0; y < px.height; ++y) row_ptrs[y] = px.rows.data() + y * px.rowbytes;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return px;
}

Frame load_png(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  const PngPixels px = read_png_pixels(f.get(), path);
  if (px.channels != 1 && px.channels != 3)
    throw DataError(path + ": unsupported channel count " + std::to_string(px.channels));
  Frame out(px.channels, px.height, px.width);
  if (px.bit_depth == 8) {
    for (int y = 0; y < px.height; ++y) {
      const unsigned char* row = px.rows.data() + y * px.rowbytes;
      for (int x = 0; x < px.width; ++x)
        for (int c = 0; c < px.channels; ++c)
          out.at(c, y, x) = row[x * px.channels + c] / 255.0;
    }
  } else if (px.bit_depth == 16) {
    // PNG stores 16-bit samples big-endian.
    for (int y = 0; y < px.height; ++y) {
      const unsigned char* row = px.rows.data() + y * px.rowbytes;
      for (int x = 0; x < px.width; ++x)
        for (int c = 0; c < px.channels; ++c) {
          const size_t i = (static_cast<size_t>(x) * px.channels + c) * 2;
          out.at(c, y, x) = ((row[i] << 8) | row[i + 1]) / 65535.0;
        }
    }
  } else {
    throw DataError(path + ": unsupported bit depth " + std::to_string(px.bit_depth));
  }
  return out;
}

struct JpegErr {
  jpeg_error_mgr mgr;
  std::jmp_buf jb;
};

void jpeg_error_throw(j_common_ptr cinfo) {
  JpegErr* err = reinterpret_cast<JpegErr*>(cinfo->err);
  longjmp(err->jb, 1);
}

Frame load_jpeg(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegErr jerr;
  Frame out;  // declared ahead of setjmp so longjmp never skips destructors
  std::vector<unsigned char> row;
  cinfo.err = jpeg_std_error(&jerr.mgr);
  jerr.mgr.error_exit = jpeg_error_throw;
  if (setjmp(jerr.jb)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("failed to decode " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = cinfo.output_width, h = cinfo.output_height, c = cinfo.output_components;
  if (c != 1 && c != 3) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError(path + ": unsupported channel count " + std::to_string(c));
  }
  out = Frame(c, h, w);
  row.resize(static_cast<size_t>(w) * c);
  unsigned char* rowp = row.data();
  for (int y = 0; y < h; ++y) {
    jpeg_read_scanlines(&cinfo, &rowp, 1);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) out.at(ch, y, x) = row[x * c + ch] / 255.0;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

Frame load_image(const std::string& path) {
  unsigned char magic[2] = {0, 0};
  {
    FilePtr f = open_file(path, "rb");
    if (std::fread(magic, 1, 2, f.get()) != 2) throw DataError(path + ": file too short");
  }
  Frame out;
  if (magic[0] == 0x89 && magic[1] == 'P')
    out = load_png(path);
  else if (magic[0] == 0xFF && magic[1] == 0xD8)
    out = load_jpeg(path);
  else
    throw DataError(path + ": not a PNG or JPEG file");
  validate_frame(out, path);
  return out;
}

void save_png(const Frame& f, const std::string& path) {
  if (f.channels != 1 && f.channels != 3)
    throw DataError("save_png: expected 1 or 3 channels, got " + std::to_string(f.channels));
  FilePtr fp = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png encoder init failed for " + path);
  }
  std::vector<unsigned char> rows(static_cast<size_t>(f.height) * f.width * f.channels);
  std::vector<png_bytep> row_ptrs(f.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, f.width, f.height, 8,
               f.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (int y = 0; y < f.height; ++y) {
    unsigned char* row = rows.data() + static_cast<size_t>(y) * f.width * f.channels;
    for (int x = 0; x < f.width; ++x)
      for (int c = 0; c < f.channels; ++c) {
        double v = f.at(c, y, x);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        row[x * f.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    row_ptrs[y] = row;
  }
  png_set_rows(png, info, row_ptrs.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image<double> load_class_mask(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  const PngPixels px = read_png_pixels(f.get(), path);
  if (px.channels != 1 || px.bit_depth != 8)
    throw DataError(path + ": class masks must be 8-bit grayscale PNG");
  Image<double> out(1, px.height, px.width);
  for (int y = 0; y < px.height; ++y) {
    const unsigned char* row = px.rows.data() + y * px.rowbytes;
    for (int x = 0; x < px.width; ++x) out.at(0, y, x) = row[x];
  }
  return out;
}

}  // namespace tempo
