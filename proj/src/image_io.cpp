#include "smarc/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <vector>

#include <jpeglib.h>

namespace smarc {

namespace {

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Tensor<float> from_rgb8(const std::vector<unsigned char>& buf, Index h, Index w) {
  auto img = Tensor<float>::uninitialized({h, w, 3});
  for (Index i = 0; i < h * w * 3; ++i)
    img.data()[i] = static_cast<float>(buf[static_cast<std::size_t>(i)]) / 255.f;
  return img;
}

Tensor<float> read_png_file(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw std::runtime_error("read_image: cannot decode PNG " + path + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("read_image: cannot decode PNG " + path + ": " + image.message);
  }
  return from_rgb8(buf, image.height, image.width);
}

Tensor<float> read_jpeg_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("read_image: cannot open " + path);

  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  std::vector<unsigned char> buf;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw std::runtime_error("read_image: cannot decode JPEG " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const Index h = cinfo.output_height, w = cinfo.output_width;
  buf.resize(static_cast<std::size_t>(h * w * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * static_cast<std::size_t>(w * 3);
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);
  return from_rgb8(buf, h, w);
}

}  // namespace

Tensor<float> read_image(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("read_image: cannot open " + path);
  unsigned char magic[4] = {0, 0, 0, 0};
  const std::size_t got = std::fread(magic, 1, 4, f);
  std::fclose(f);
  if (got >= 4 && magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G')
    return read_png_file(path);
  if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg_file(path);
  throw std::runtime_error("read_image: " + path + " is neither PNG nor JPEG");
}

void write_png(const std::string& path, const Tensor<float>& img) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
    fail("write_png: image must be HxWx1 or HxWx3, got " + shape_str(img.shape()));
  const Index h = img.dim(0), w = img.dim(1), c = img.dim(2);
  std::vector<unsigned char> buf(static_cast<std::size_t>(h * w * 3));
  for (Index p = 0; p < h * w; ++p)
    for (Index ci = 0; ci < 3; ++ci) {
      const float v = img[p * c + (c == 3 ? ci : 0)];
      const float clamped = std::min(1.f, std::max(0.f, v));
      buf[static_cast<std::size_t>(p * 3 + ci)] =
          static_cast<unsigned char>(std::lround(clamped * 255.f));
    }

  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("write_png: cannot write " + path + ": " + image.message);
}

Tensor<float> resize_bilinear(const Tensor<float>& img, Index out_h, Index out_w) {
  const Index h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (h == out_h && w == out_w) return img.clone();
  auto out = Tensor<float>::uninitialized({out_h, out_w, c});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (Index y = 0; y < out_h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(fy)));
    const Index y1 = std::min(h - 1, y0 + 1);
    const double wy = std::min(1.0, std::max(0.0, fy - static_cast<double>(y0)));
    for (Index x = 0; x < out_w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(fx)));
      const Index x1 = std::min(w - 1, x0 + 1);
      const double wx = std::min(1.0, std::max(0.0, fx - static_cast<double>(x0)));
      for (Index ci = 0; ci < c; ++ci) {
        const double v00 = img[(y0 * w + x0) * c + ci];
        const double v01 = img[(y0 * w + x1) * c + ci];
        const double v10 = img[(y1 * w + x0) * c + ci];
        const double v11 = img[(y1 * w + x1) * c + ci];
        out.data()[(y * out_w + x) * c + ci] = static_cast<float>(
            (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

}  // namespace smarc
