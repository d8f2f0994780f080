#include "poseforge/image.hpp"

#include "poseforge/binio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace poseforge {

namespace {
constexpr std::string_view kRawImageMagic{"PFSIMG\0\1", 8};
}

Image::Image(int channels, int height, int width, float fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 1 || height < 1 || width < 1) {
    throw std::invalid_argument("Image: dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

double mean_abs_diff(const Image& a, const Image& b, int channel) {
  if (a.height() != b.height() || a.width() != b.width() ||
      channel >= a.channels() || channel >= b.channels()) {
    throw std::invalid_argument("mean_abs_diff: image dimensions differ");
  }
  double total = 0.0;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      total += std::abs(static_cast<double>(a.at(channel, y, x)) - b.at(channel, y, x));
    }
  }
  return total / (static_cast<double>(a.height()) * a.width());
}

Image resize_bilinear(const Image& src, int height, int width) {
  Image out(src.channels(), height, width);
  const double sy = static_cast<double>(src.height()) / height;
  const double sx = static_cast<double>(src.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double tx = fx - x0;
      for (int c = 0; c < src.channels(); ++c) {
        const double top = src.at(c, y0, x0) * (1 - tx) + src.at(c, y0, x1) * tx;
        const double bot = src.at(c, y1, x0) * (1 - tx) + src.at(c, y1, x1) * tx;
        out.at(c, y, x) = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

Image flip_horizontal(const Image& src) {
  Image out = src;
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < src.height(); ++y) {
      for (int x = 0; x < src.width(); ++x) {
        out.at(c, y, x) = src.at(c, y, src.width() - 1 - x);
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_raw_image(const Image& img) {
  binio::Writer w;
  w.magic(kRawImageMagic);
  w.pod<std::uint32_t>(img.channels());
  w.pod<std::uint32_t>(img.height());
  w.pod<std::uint32_t>(img.width());
  w.bytes(img.data().data(), img.data().size() * sizeof(float));
  return w.take();
}

Image decode_raw_image(const std::vector<std::uint8_t>& bytes) {
  binio::Reader r(bytes);
  r.expect_magic(kRawImageMagic, "raw image");
  const auto c = r.pod<std::uint32_t>();
  const auto h = r.pod<std::uint32_t>();
  const auto w = r.pod<std::uint32_t>();
  if (c == 0 || h == 0 || w == 0 ||
      r.remaining() != static_cast<std::size_t>(c) * h * w * sizeof(float)) {
    throw std::runtime_error("raw image payload does not match its header");
  }
  Image img(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  r.bytes(img.data().data(), img.data().size() * sizeof(float));
  return img;
}

void save_raw_image(const Image& img, const std::filesystem::path& path) {
  binio::write_file(path, encode_raw_image(img));
}

Image load_raw_image(const std::filesystem::path& path) {
  return decode_raw_image(binio::read_file(path));
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  const int h = img.height(), w = img.width();
  std::vector<png_byte> rgb(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src_c = img.channels() >= 3 ? c : 0;
        const float v = std::clamp(img.at(src_c, y, x), 0.0f, 1.0f);
        rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }
    }
  }
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(w);
  desc.height = static_cast<png_uint_32>(h);
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("PNG sizing failed: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("PNG encoding failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

void save_png(const Image& img, const std::filesystem::path& path) {
  binio::write_file(path, encode_png(img));
}

Image load_png(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size())) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + desc.message);
  }
  desc.format = PNG_FORMAT_RGB;
  std::vector<png_byte> rgb(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, rgb.data(), 0, nullptr)) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + desc.message);
  }
  const int h = static_cast<int>(desc.height), w = static_cast<int>(desc.width);
  Image img(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
      }
    }
  }
  return img;
}

}  // namespace poseforge
