#include "ivoa/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ivoa/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "depth raster I/O assumes a little-endian host");

namespace ivoa {

std::optional<float> Image::sample(double u, double v) const {
  if (!can_sample(u, v)) return std::nullopt;
  const double a = u - 0.5;
  const double b = v - 0.5;
  int x0 = static_cast<int>(std::floor(a));
  int y0 = static_cast<int>(std::floor(b));
  x0 = std::clamp(x0, 0, width_ - 2);
  y0 = std::clamp(y0, 0, height_ - 2);
  const double fx = a - x0;
  const double fy = b - y0;
  const double v00 = at(x0, y0);
  const double v10 = at(x0 + 1, y0);
  const double v01 = at(x0, y0 + 1);
  const double v11 = at(x0 + 1, y0 + 1);
  return static_cast<float>((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 +
                            (1 - fx) * fy * v01 + fx * fy * v11);
}

std::uint8_t to_u8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void Image::quantize_u8() {
  for (float& v : px_) v = to_u8(v) / 255.0f;
}

std::vector<std::uint8_t> to_u8_buffer(const Image& img) {
  std::vector<std::uint8_t> buf(img.pixels().size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_u8(img.pixels()[i]);
  return buf;
}

void atomic_write_bytes(const std::filesystem::path& path,
                        const void* data, std::size_t size) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw DataError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  atomic_write_bytes(path, text.data(), text.size());
}

void write_pgm(const Image& img, const std::filesystem::path& path) {
  if (img.empty()) throw DataError("refusing to write empty image: " + path.string());
  std::ostringstream header;
  header << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> buf;
  buf.reserve(h.size() + img.pixels().size());
  buf.insert(buf.end(), h.begin(), h.end());
  for (float v : img.pixels()) buf.push_back(to_u8(v));
  atomic_write_bytes(path, buf.data(), buf.size());
}

namespace {

int read_pnm_token(std::istream& in, const std::filesystem::path& path) {
  // skips whitespace and '#' comments
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  std::string tok;
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (tok.empty()) throw DataError("truncated PGM header: " + path.string());
  return std::stoi(tok);
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open PGM: " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5')
    throw DataError("not a binary PGM (P5): " + path.string());
  const int w = read_pnm_token(in, path);
  const int h = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw DataError("unsupported PGM geometry in " + path.string());
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw DataError("truncated PGM payload: " + path.string());
  Image img(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i)
    img.pixels()[i] = buf[i] / 255.0f;
  return img;
}

namespace {
constexpr char kDepthMagic[8] = {'I', 'V', 'O', 'A', 'D', 'P', 'T', 'H'};
}

void write_depth_raster(const Image& depth, const std::filesystem::path& path) {
  if (depth.empty()) throw DataError("refusing to write empty depth raster");
  std::vector<std::uint8_t> buf(16 + depth.pixels().size() * 4);
  std::memcpy(buf.data(), kDepthMagic, 8);
  const std::uint32_t w = static_cast<std::uint32_t>(depth.width());
  const std::uint32_t h = static_cast<std::uint32_t>(depth.height());
  std::memcpy(buf.data() + 8, &w, 4);
  std::memcpy(buf.data() + 12, &h, 4);
  std::memcpy(buf.data() + 16, depth.pixels().data(), depth.pixels().size() * 4);
  atomic_write_bytes(path, buf.data(), buf.size());
}

Image read_depth_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open depth raster: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kDepthMagic, 8) != 0)
    throw DataError("bad depth raster magic: " + path.string());
  std::uint32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!in || w == 0 || h == 0 || w > 1u << 16 || h > 1u << 16)
    throw DataError("bad depth raster dimensions: " + path.string());
  Image img(static_cast<int>(w), static_cast<int>(h));
  in.read(reinterpret_cast<char*>(img.pixels().data()),
          static_cast<std::streamsize>(img.pixels().size() * 4));
  if (!in) throw DataError("truncated depth raster: " + path.string());
  return img;
}

}  // namespace ivoa
