#ifndef SIVS_PPM_HPP
#define SIVS_PPM_HPP

#include <cstdint>
#include <string>
#include <vector>

// Binary PPM (P6, 8-bit) frame export. Model space [-1,1] maps to pixel
// value round(127.5*(x+1)), clamped; grayscale is replicated across RGB.
// Codec-free and byte-stable, so frames can be diffed across runs.

namespace sivs {

std::uint8_t ppm_quantize(float x);

// single H x W frame
std::vector<std::uint8_t> ppm_bytes(const float* hw, std::int64_t h, std::int64_t w);
void write_ppm(const std::string& path, const float* hw, std::int64_t h, std::int64_t w);

// Grid of rows x cols frames (frame (r,c) at frames[(r*cols + c)*h*w]) with a
// 1-pixel white separator between cells; used for per-clip contact sheets.
void write_contact_sheet(const std::string& path, const float* frames, std::int64_t rows,
                         std::int64_t cols, std::int64_t h, std::int64_t w);

}  // namespace sivs

#endif
