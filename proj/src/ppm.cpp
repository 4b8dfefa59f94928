#include "sivs/ppm.hpp"

#include <cmath>
#include <fstream>

#include "sivs/error.hpp"

namespace sivs {

std::uint8_t ppm_quantize(float x) {
  const float v = std::round(127.5f * (x + 1.f));
  if (v <= 0.f) return 0;
  if (v >= 255.f) return 255;
  return static_cast<std::uint8_t>(v);
}

namespace {

std::vector<std::uint8_t> header(std::int64_t h, std::int64_t w) {
  const std::string head = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  return {head.begin(), head.end()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("short write: " + path);
}

}  // namespace

std::vector<std::uint8_t> ppm_bytes(const float* hw, std::int64_t h, std::int64_t w) {
  if (h < 1 || w < 1) throw ShapeError("ppm: degenerate frame size");
  std::vector<std::uint8_t> out = header(h, w);
  out.reserve(out.size() + static_cast<std::size_t>(3 * h * w));
  for (std::int64_t i = 0; i < h * w; ++i) {
    const std::uint8_t v = ppm_quantize(hw[i]);
    out.push_back(v);
    out.push_back(v);
    out.push_back(v);
  }
  return out;
}

void write_ppm(const std::string& path, const float* hw, std::int64_t h, std::int64_t w) {
  write_bytes(path, ppm_bytes(hw, h, w));
}

void write_contact_sheet(const std::string& path, const float* frames, std::int64_t rows,
                         std::int64_t cols, std::int64_t h, std::int64_t w) {
  if (rows < 1 || cols < 1 || h < 1 || w < 1)
    throw ShapeError("contact sheet: degenerate layout");
  const std::int64_t sh = rows * h + (rows - 1);
  const std::int64_t sw = cols * w + (cols - 1);
  std::vector<std::uint8_t> out = header(sh, sw);
  const std::size_t base = out.size();
  out.resize(base + static_cast<std::size_t>(3 * sh * sw), 255);  // separators stay white
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      const float* cell = frames + ((r * cols + c) * h * w);
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const std::uint8_t v = ppm_quantize(cell[y * w + x]);
          const std::int64_t py = r * (h + 1) + y, px = c * (w + 1) + x;
          const std::size_t at = base + static_cast<std::size_t>(3 * (py * sw + px));
          out[at] = v;
          out[at + 1] = v;
          out[at + 2] = v;
        }
    }
  write_bytes(path, out);
}

}  // namespace sivs
