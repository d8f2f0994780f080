#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace poseforge {

/// Planar (channel-major) float image. Channel order is RGB, then depth when
/// present, then the three normal components when present.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, float fill = 0.0f);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Mean absolute difference of one channel; images must share dimensions.
double mean_abs_diff(const Image& a, const Image& b, int channel);

/// Bilinear resample of every channel to the requested size.
Image resize_bilinear(const Image& src, int height, int width);

Image flip_horizontal(const Image& src);

/// Raw tensor: magic "PFSIMG\0\1", u32 channels, u32 height, u32 width,
/// then little-endian f32 payload in channel-major order.
std::vector<std::uint8_t> encode_raw_image(const Image& img);
Image decode_raw_image(const std::vector<std::uint8_t>& bytes);
void save_raw_image(const Image& img, const std::filesystem::path& path);
Image load_raw_image(const std::filesystem::path& path);

/// 8-bit RGB PNG of the first three channels (a single channel is written
/// as grey).
std::vector<std::uint8_t> encode_png(const Image& img);
void save_png(const Image& img, const std::filesystem::path& path);
/// Reads any PNG libpng understands into a 3-channel float image.
Image load_png(const std::filesystem::path& path);

}  // namespace poseforge
