#include "camadapt/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include "camadapt/error.hpp"

namespace camadapt {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string());
  return f;
}

RawImage read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kIo, "libpng initialisation failed");
  }
  RawImage raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kIo, "corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(raw.width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kIo, "unsupported PNG layout in " + path.string());
  }
  raw.rgb.resize(static_cast<std::size_t>(raw.width) * raw.height * 3);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.rgb.data() + static_cast<std::size_t>(y) * raw.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

RawImage read_jpeg(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  RawImage raw;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::kIo, "corrupt JPEG " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  raw.width = static_cast<int>(cinfo.output_width);
  raw.height = static_cast<int>(cinfo.output_height);
  raw.rgb.resize(static_cast<std::size_t>(raw.width) * raw.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = raw.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * raw.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return raw;
}

}  // namespace

Image normalize(const RawImage& raw) {
  Image img(raw.height, raw.width);
  const std::size_t plane = img.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) img.data[c * plane + i] = raw.rgb[i * 3 + c] / 255.0;
  }
  return img;
}

RawImage quantize(const Image& image) {
  RawImage raw{image.height, image.width, {}};
  const std::size_t plane = image.plane();
  raw.rgb.resize(plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(image.data[c * plane + i], 0.0, 1.0);
      raw.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return raw;
}

RawImage read_raw_image(const std::filesystem::path& path) {
  unsigned char magic[8] = {};
  {
    FilePtr file = open_file(path, "rb");
    if (std::fread(magic, 1, sizeof magic, file.get()) < 3) {
      fail(ErrorKind::kIo, "file too short to be an image: " + path.string());
    }
  }
  if (png_sig_cmp(magic, 0, 8) == 0) return read_png(path);
  if (magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return read_jpeg(path);
  fail(ErrorKind::kIo, "unrecognised image format: " + path.string());
}

Image read_image(const std::filesystem::path& path) { return normalize(read_raw_image(path)); }

void write_png(const std::filesystem::path& path, const RawImage& raw) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "libpng initialisation failed");
  }
  std::vector<png_bytep> rows(raw.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, raw.width, raw.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < raw.height; ++y) {
    rows[y] = const_cast<png_bytep>(raw.rgb.data() + static_cast<std::size_t>(y) * raw.width * 3);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png(const std::filesystem::path& path, const Image& image) {
  write_png(path, quantize(image));
}

Tensor to_tensor(const std::vector<Image>& images) {
  if (images.empty()) fail(ErrorKind::kInvalidArgument, "to_tensor: empty image list");
  const int h = images.front().height, w = images.front().width;
  Tensor t({static_cast<int>(images.size()), 3, h, w});
  const std::size_t per = static_cast<std::size_t>(3) * h * w;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w) {
      fail(ErrorKind::kInvalidArgument, "to_tensor: images differ in size");
    }
    std::copy(images[i].data.begin(), images[i].data.end(), t.data() + i * per);
  }
  return t;
}

Tensor to_tensor(const Image& image) { return to_tensor(std::vector<Image>{image}); }

Image image_from_tensor(const Tensor& batch, int index) {
  if (batch.rank() != 4 || batch.dim(1) != 3) {
    fail(ErrorKind::kInvalidArgument, "image_from_tensor: expected [N,3,H,W], got " + batch.shape_string());
  }
  Image img(batch.dim(2), batch.dim(3));
  const std::size_t per = img.data.size();
  std::copy(batch.data() + index * per, batch.data() + (index + 1) * per, img.data.begin());
  return img;
}

}  // namespace camadapt
