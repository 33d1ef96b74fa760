#include "gsopt/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

namespace gsopt {

namespace {

std::uint8_t quantize(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

std::vector<std::uint8_t> to_bytes(const Image& img) {
  std::vector<std::uint8_t> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) bytes[i] = quantize(img.data[i]);
  return bytes;
}

void write_png_bytes(const std::string& path,
                     const std::vector<std::uint8_t>& bytes, std::size_t h,
                     std::size_t w, std::size_t c) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0,
                               nullptr))
    raise(ErrorKind::Io,
          "cannot write PNG " + path + ": " + png.message);
}

}  // namespace

Image read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    raise(ErrorKind::Data, "cannot read PNG " + path + ": " + png.message);

  const bool gray = PNG_IMAGE_SAMPLE_CHANNELS(png.format) == 1;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image img(png.height, png.width, gray ? 1 : 3);
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
  if (bytes.size() != img.size()) {
    png_image_free(&png);
    raise(ErrorKind::Data, "unexpected PNG layout in " + path);
  }
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr))
    raise(ErrorKind::Data, "cannot decode PNG " + path + ": " + png.message);
  for (std::size_t i = 0; i < img.size(); ++i)
    img.data[i] = bytes[i] / 255.0;
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3)
    raise(ErrorKind::Contract, "PNG writer expects 1 or 3 channels");
  if (img.h == 0 || img.w == 0)
    raise(ErrorKind::Contract, "cannot write empty image");
  write_png_bytes(path, to_bytes(img), img.h, img.w, img.c);
}

Tensor read_label_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    raise(ErrorKind::Data, "cannot read PNG " + path + ": " + png.message);
  png.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr))
    raise(ErrorKind::Data, "cannot decode PNG " + path + ": " + png.message);
  Tensor out({png.height, png.width});
  for (std::size_t i = 0; i < bytes.size(); ++i)
    out[i] = static_cast<double>(bytes[i]);
  return out;
}

void write_label_png(const std::string& path, const Tensor& labels) {
  if (labels.rank() != 2)
    raise(ErrorKind::Contract, "label map must be rank 2");
  std::vector<std::uint8_t> bytes(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = labels[i];
    if (v < 0.0 || v > 255.0 || v != std::floor(v))
      raise(ErrorKind::Contract,
            "label map entries must be integers in [0,255]");
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  write_png_bytes(path, bytes, labels.dim(0), labels.dim(1), 1);
}

Image resize_bilinear(const Image& src, std::size_t nh, std::size_t nw) {
  if (src.h == 0 || src.w == 0)
    raise(ErrorKind::Contract, "cannot resize empty image");
  Image out(nh, nw, src.c);
  const double sy = nh > 1 ? double(src.h - 1) / double(nh - 1) : 0.0;
  const double sx = nw > 1 ? double(src.w - 1) / double(nw - 1) : 0.0;
  for (std::size_t y = 0; y < nh; ++y) {
    const double fy = nh > 1 ? y * sy : (src.h - 1) * 0.5;
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.h - 1);
    const double wy = fy - y0;
    for (std::size_t x = 0; x < nw; ++x) {
      const double fx = nw > 1 ? x * sx : (src.w - 1) * 0.5;
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.w - 1);
      const double wx = fx - x0;
      for (std::size_t ch = 0; ch < src.c; ++ch) {
        const double top =
            (1.0 - wx) * src.at(y0, x0, ch) + wx * src.at(y0, x1, ch);
        const double bot =
            (1.0 - wx) * src.at(y1, x0, ch) + wx * src.at(y1, x1, ch);
        out.at(y, x, ch) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

}  // namespace gsopt
