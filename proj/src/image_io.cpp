#include "aled/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "aled/errors.hpp"

namespace aled {

ImageRGB::ImageRGB(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }
}

void ImageRGB::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || x >= width || y < 0 || y >= height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  rgb[i] = r;
  rgb[i + 1] = g;
  rgb[i + 2] = b;
}

namespace {

void put_u32_be(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  const auto crc =
      crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_png(const std::filesystem::path& path, const ImageRGB& img) {
  if (img.width <= 0 || img.height <= 0) throw UsageError("write_png: empty image");

  // filter byte 0 in front of each scanline
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (1 + 3 * img.width));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
    raw.insert(raw.end(), row, row + 3 * img.width);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw DataError("write_png: compression failed");
  z.resize(zlen);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

namespace {

struct Rgb {
  double r, g, b;
};

// coarse inferno-style anchors
constexpr Rgb kScale[] = {
    {0, 0, 4},      {31, 12, 72},   {85, 15, 109},  {136, 34, 106}, {186, 54, 85},
    {227, 89, 51},  {249, 140, 10}, {249, 201, 50}, {252, 255, 164}};

Rgb scale_color(double s) {
  s = std::clamp(s, 0.0, 1.0);
  const int n = static_cast<int>(std::size(kScale)) - 1;
  const double pos = s * n;
  const int k = std::min(n - 1, static_cast<int>(pos));
  const double f = pos - k;
  return {kScale[k].r + f * (kScale[k + 1].r - kScale[k].r),
          kScale[k].g + f * (kScale[k + 1].g - kScale[k].g),
          kScale[k].b + f * (kScale[k + 1].b - kScale[k].b)};
}

std::uint8_t u8(double v) { return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)); }

}  // namespace

ImageRGB colormap_depth(const Tensor& meters, double lo, double hi) {
  if (meters.rank() != 2) throw UsageError("colormap_depth: rank-2 tensor expected");
  const double span = hi > lo ? hi - lo : 1.0;
  ImageRGB img(meters.w(), meters.h());
  for (int y = 0; y < meters.h(); ++y)
    for (int x = 0; x < meters.w(); ++x) {
      const Rgb c = scale_color((meters.at(y, x) - lo) / span);
      img.set(x, y, u8(c.r), u8(c.g), u8(c.b));
    }
  return img;
}

ImageRGB draw_events(const EventWindow& window, int height, int width) {
  ImageRGB img(width, height);
  for (const Event& e : window.events) {
    if (e.p > 0)
      img.set(e.x, e.y, 30, 80, 220);
    else
      img.set(e.x, e.y, 220, 50, 40);
  }
  return img;
}

ImageRGB draw_sparse_depth(const SparseDepthImage& sparse, double lo, double hi) {
  const double span = hi > lo ? hi - lo : 1.0;
  ImageRGB img(sparse.data.w(), sparse.data.h(), 0, 0, 0);
  for (int y = 0; y < sparse.data.h(); ++y)
    for (int x = 0; x < sparse.data.w(); ++x) {
      const double d = sparse.data.at(y, x);
      if (d == 0.0) continue;
      const Rgb c = scale_color((d - lo) / span);
      img.set(x, y, u8(c.r), u8(c.g), u8(c.b));
    }
  return img;
}

ImageRGB draw_change_overlay(const DepthPair& pred_m, const EventWindow& window, double tau) {
  ImageRGB img(pred_m.d_bf.w(), pred_m.d_bf.h());
  for (const Event& e : window.events) {
    const double delta = pred_m.d_af.at(e.y, e.x) - pred_m.d_bf.at(e.y, e.x);
    if (delta < -tau)
      img.set(e.x, e.y, 0x00, 0x00, 0x04);  // closer object edge
    else if (delta > tau)
      img.set(e.x, e.y, 0xFC, 0xFF, 0xA4);  // revealed farther surface
    else
      img.set(e.x, e.y, 0xBC, 0x37, 0x54);  // same surface
  }
  return img;
}

ImageRGB vstack(const std::vector<ImageRGB>& images, int gap) {
  if (images.empty()) throw UsageError("vstack: no images");
  const int w = images.front().width;
  int h = -gap;
  for (const ImageRGB& img : images) {
    if (img.width != w) throw UsageError("vstack: widths differ");
    h += img.height + gap;
  }
  ImageRGB out(w, h);
  int y0 = 0;
  for (const ImageRGB& img : images) {
    for (int y = 0; y < img.height; ++y)
      std::memcpy(out.rgb.data() + (static_cast<std::size_t>(y0 + y) * w) * 3,
                  img.rgb.data() + static_cast<std::size_t>(y) * w * 3,
                  static_cast<std::size_t>(w) * 3);
    y0 += img.height + gap;
  }
  return out;
}

}  // namespace aled
