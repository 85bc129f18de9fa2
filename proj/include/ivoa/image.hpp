#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace ivoa {

// Grayscale image, values in [0, 1], row-major. Pixel (x, y) covers the unit
// square [x, x+1) x [y, y+1) and has continuous center (x + 0.5, y + 0.5);
// all projection math uses continuous coordinates.
class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.0f)
      : width_(width), height_(height),
        px_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return px_.empty(); }

  float& at(int x, int y) { return px_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return px_[static_cast<std::size_t>(y) * width_ + x]; }

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width_ && y >= 0 && y < height_;
  }

  // Bilinear sample at continuous pixel coordinates. Valid where the four
  // surrounding pixel centers exist, i.e. u in [0.5, width-0.5].
  std::optional<float> sample(double u, double v) const;

  bool can_sample(double u, double v) const {
    return u >= 0.5 && u <= width_ - 0.5 && v >= 0.5 && v <= height_ - 0.5;
  }

  const std::vector<float>& pixels() const { return px_; }
  std::vector<float>& pixels() { return px_; }

  // Quantize to the 8-bit grid used on disk, so in-memory values match a
  // PGM write/read round trip exactly.
  void quantize_u8();

  bool operator==(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && px_ == o.px_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> px_;
};

std::uint8_t to_u8(float v);

// Binary PGM (P5, 8 bit). Values quantized with round-to-nearest.
void write_pgm(const Image& img, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);
std::vector<std::uint8_t> to_u8_buffer(const Image& img);

// Depth raster: 16-byte header (magic "IVOADPTH", u32 LE width, u32 LE
// height) followed by width*height little-endian float32 values. Depth is
// Euclidean range in meters along the pixel ray; 0 marks "no return".
inline constexpr float kNoDepthReturn = 0.0f;
void write_depth_raster(const Image& depth, const std::filesystem::path& path);
Image read_depth_raster(const std::filesystem::path& path);

// Write-to-temp-then-rename, so readers never observe partial files.
void atomic_write_bytes(const std::filesystem::path& path,
                        const void* data, std::size_t size);
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ivoa
