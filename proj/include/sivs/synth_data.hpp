#ifndef SIVS_SYNTH_DATA_HPP
#define SIVS_SYNTH_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

// Synthetic video clips with known dynamics, plus the .sivs container they
// are stored in (see docs/formats.md for the byte layout). Three generators:
//
//   drift    - band-limited periodic texture translating at a constant
//              per-clip velocity; direction is binned, magnitude ("speed")
//              varies per clip. Wraps around the frame edges.
//   endpoint - a Gaussian dot moving from a seeded start position to the
//              center of a labeled cell of a 10x10 target grid along a
//              smooth path; it arrives exactly at the last frame.
//   flicker  - a stationary Gaussian blob whose brightness oscillates; the
//              intensity-weighted centroid does not move.
//
// Every clip is fully determined by its DynSpec (labels + clip_seed), so a
// stored clip can be regenerated bit for bit from its label record.

namespace sivs {

enum class ClipKind : std::uint8_t { drift = 0, endpoint = 1, flicker = 2 };

enum class DataKind { drift, endpoint, flicker, mixed };

// Fixed-width per-clip label record (24 bytes on disk, little-endian).
struct DynSpec {
  std::uint8_t kind = 0;
  std::uint8_t direction_bin = 0;
  std::uint8_t endpoint_x = 0;
  std::uint8_t endpoint_y = 0;
  float speed = 0.f;  // pixels per frame (drift)
  float theta = 0.f;  // realized direction in radians (drift)
  float aux = 0.f;    // path wobble (endpoint) or flicker frequency
  std::uint64_t clip_seed = 0;
};

struct Dataset {
  std::uint32_t frames = 9;  // stored frames per clip, start frame included
  std::uint32_t channels = 1;
  std::uint32_t height = 16;
  std::uint32_t width = 16;
  std::uint32_t direction_bins = 8;
  std::vector<float> pixels;  // [clip][frame][c][h][w]
  std::vector<DynSpec> specs;

  std::int64_t clips() const { return static_cast<std::int64_t>(specs.size()); }
  std::int64_t frame_stride() const {
    return static_cast<std::int64_t>(channels) * height * width;
  }
  std::int64_t clip_stride() const { return frames * frame_stride(); }
  const float* clip(std::int64_t i) const { return pixels.data() + i * clip_stride(); }
  float* clip(std::int64_t i) { return pixels.data() + i * clip_stride(); }
  const float* frame(std::int64_t i, std::int64_t t) const {
    return clip(i) + t * frame_stride();
  }
};

struct BenchmarkSpec {
  DataKind kind = DataKind::drift;
  std::uint32_t n_train = 800;
  std::uint32_t n_val = 100;
  std::uint32_t n_test = 100;
  std::uint32_t frames = 9;
  std::uint32_t height = 16;
  std::uint32_t width = 16;
  std::uint32_t direction_bins = 8;
  std::uint64_t seed = 0;
};

// IEEE 802.3 CRC-32 (reflected, polynomial 0xEDB88320), init/final-xor
// 0xFFFFFFFF. `seed` chains partial computations: pass a previous result.
std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t crc = 0);

// Samples the label fields for a clip; all randomness derives from clip_seed.
DynSpec draw_spec(ClipKind kind, std::uint32_t direction_bins, std::uint64_t clip_seed);

// Renders a clip described by `spec` into out[frames * H * W] (channels==1).
void generate_clip(const DynSpec& spec, std::uint32_t frames, std::uint32_t height,
                   std::uint32_t width, float* out);

// One split; split_id feeds the per-clip seed derivation so splits never
// share clips.
Dataset generate_dataset(const BenchmarkSpec& spec, std::uint32_t count,
                         std::uint64_t split_id);

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// Writes train.sivs / val.sivs / test.sivs plus manifest.txt under dir.
void make_benchmark(const BenchmarkSpec& spec, const std::string& dir);

DataKind parse_data_kind(const std::string& s);
const char* data_kind_name(DataKind k);

}  // namespace sivs

#endif
