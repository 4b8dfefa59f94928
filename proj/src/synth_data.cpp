#include "sivs/synth_data.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "sivs/error.hpp"
#include "sivs/rng.hpp"

namespace sivs {

namespace {

constexpr double kPi = std::numbers::pi;

// Sub-stream tags for per-clip seed derivation; documented in docs/formats.md.
constexpr std::uint64_t kStreamSpec = 0;
constexpr std::uint64_t kStreamRender = 1;
constexpr std::uint64_t kStreamKind = 2;

static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");

}  // namespace

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t crc) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const std::uint8_t*>(data);
  crc = ~crc;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

DynSpec draw_spec(ClipKind kind, std::uint32_t direction_bins, std::uint64_t clip_seed) {
  Rng rng(Rng::mix(clip_seed, kStreamSpec));
  DynSpec s;
  s.kind = static_cast<std::uint8_t>(kind);
  s.clip_seed = clip_seed;
  switch (kind) {
    case ClipKind::drift: {
      s.direction_bin = static_cast<std::uint8_t>(rng.next_below(direction_bins));
      const double jitter = rng.uniform(-kPi / 16.0, kPi / 16.0);
      s.theta = static_cast<float>(2.0 * kPi * s.direction_bin / direction_bins + jitter);
      s.speed = static_cast<float>(rng.uniform(0.5, 1.5));
      break;
    }
    case ClipKind::endpoint: {
      s.endpoint_x = static_cast<std::uint8_t>(rng.next_below(10));
      s.endpoint_y = static_cast<std::uint8_t>(rng.next_below(10));
      s.aux = static_cast<float>(rng.uniform(0.0, 1.0));  // path wobble, px
      break;
    }
    case ClipKind::flicker: {
      s.aux = static_cast<float>(1 + rng.next_below(2));  // oscillations per clip
      break;
    }
  }
  return s;
}

namespace {

void render_drift(const DynSpec& spec, std::uint32_t frames, std::uint32_t H, std::uint32_t W,
                  float* out) {
  Rng rng(Rng::mix(spec.clip_seed, kStreamRender));
  // Band-limited periodic texture: a handful of integer-frequency plane
  // waves. Translating the closed form keeps every shift exact and the
  // texture wraps by construction.
  constexpr int kWaves = 6;
  double fx[kWaves], fy[kWaves], amp[kWaves], phase[kWaves];
  double norm = 0;
  for (int k = 0; k < kWaves; ++k) {
    do {
      fx[k] = static_cast<double>(rng.next_below(7)) - 3.0;
      fy[k] = static_cast<double>(rng.next_below(7)) - 3.0;
    } while (fx[k] == 0.0 && fy[k] == 0.0);
    amp[k] = rng.uniform(0.5, 1.0);
    phase[k] = rng.uniform(0.0, 2.0 * kPi);
    norm += amp[k];
  }
  const double scl = 0.9 / norm;
  const double dx = spec.speed * std::cos(spec.theta);
  const double dy = spec.speed * std::sin(spec.theta);
  for (std::uint32_t t = 0; t < frames; ++t)
    for (std::uint32_t y = 0; y < H; ++y)
      for (std::uint32_t x = 0; x < W; ++x) {
        const double u = static_cast<double>(x) - t * dx;
        const double v = static_cast<double>(y) - t * dy;
        double val = 0;
        for (int k = 0; k < kWaves; ++k)
          val += amp[k] * std::cos(2.0 * kPi * (fx[k] * u / W + fy[k] * v / H) + phase[k]);
        out[(static_cast<std::size_t>(t) * H + y) * W + x] = static_cast<float>(scl * val);
      }
}

void render_endpoint(const DynSpec& spec, std::uint32_t frames, std::uint32_t H,
                     std::uint32_t W, float* out) {
  Rng rng(Rng::mix(spec.clip_seed, kStreamRender));
  const double sx = rng.uniform(0.25, 0.75) * W;
  const double sy = rng.uniform(0.25, 0.75) * H;
  const double tx = (spec.endpoint_x + 0.5) * W / 10.0;
  const double ty = (spec.endpoint_y + 0.5) * H / 10.0;
  // unit perpendicular to the straight path, for a little seeded arc
  double px = -(ty - sy), py = tx - sx;
  const double plen = std::hypot(px, py);
  if (plen > 1e-9) {
    px /= plen;
    py /= plen;
  } else {
    px = 1;
    py = 0;
  }
  const double wob = spec.aux;
  const double sigma = 1.3;
  const std::uint32_t T = frames - 1;
  for (std::uint32_t t = 0; t < frames; ++t) {
    const double u = T > 0 ? static_cast<double>(t) / T : 0.0;
    const double s = u * u * (3.0 - 2.0 * u);  // smoothstep; endpoint hit exactly at u=1
    const double cx = sx + (tx - sx) * s + px * wob * std::sin(kPi * u);
    const double cy = sy + (ty - sy) * s + py * wob * std::sin(kPi * u);
    for (std::uint32_t y = 0; y < H; ++y)
      for (std::uint32_t x = 0; x < W; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double g = std::exp(-d2 / (2.0 * sigma * sigma));
        out[(static_cast<std::size_t>(t) * H + y) * W + x] = static_cast<float>(2.0 * g - 1.0);
      }
  }
}

void render_flicker(const DynSpec& spec, std::uint32_t frames, std::uint32_t H,
                    std::uint32_t W, float* out) {
  Rng rng(Rng::mix(spec.clip_seed, kStreamRender));
  const double cx = rng.uniform(0.3, 0.7) * W;
  const double cy = rng.uniform(0.3, 0.7) * H;
  const double sigma = rng.uniform(1.5, 2.5);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const std::uint32_t T = frames - 1;
  for (std::uint32_t t = 0; t < frames; ++t) {
    const double u = T > 0 ? static_cast<double>(t) / T : 0.0;
    const double b = 0.5 + 0.45 * std::sin(2.0 * kPi * spec.aux * u + phase);
    for (std::uint32_t y = 0; y < H; ++y)
      for (std::uint32_t x = 0; x < W; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double g = std::exp(-d2 / (2.0 * sigma * sigma));
        out[(static_cast<std::size_t>(t) * H + y) * W + x] =
            static_cast<float>(2.0 * b * g - 1.0);
      }
  }
}

}  // namespace

void generate_clip(const DynSpec& spec, std::uint32_t frames, std::uint32_t height,
                   std::uint32_t width, float* out) {
  switch (static_cast<ClipKind>(spec.kind)) {
    case ClipKind::drift:
      render_drift(spec, frames, height, width, out);
      return;
    case ClipKind::endpoint:
      render_endpoint(spec, frames, height, width, out);
      return;
    case ClipKind::flicker:
      render_flicker(spec, frames, height, width, out);
      return;
  }
  throw DataError("generate_clip: unknown clip kind " + std::to_string(spec.kind));
}

Dataset generate_dataset(const BenchmarkSpec& spec, std::uint32_t count,
                         std::uint64_t split_id) {
  Dataset ds;
  ds.frames = spec.frames;
  ds.channels = 1;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.direction_bins = spec.direction_bins;
  ds.specs.resize(count);
  ds.pixels.resize(static_cast<std::size_t>(count) * ds.clip_stride());
  const std::uint64_t split_seed = Rng::mix(spec.seed, split_id);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t clip_seed = Rng::mix(split_seed, i);
    ClipKind kind;
    if (spec.kind == DataKind::mixed) {
      Rng kr(Rng::mix(clip_seed, kStreamKind));
      kind = static_cast<ClipKind>(kr.next_below(3));
    } else {
      kind = static_cast<ClipKind>(static_cast<int>(spec.kind));
    }
    ds.specs[i] = draw_spec(kind, spec.direction_bins, clip_seed);
    generate_clip(ds.specs[i], ds.frames, ds.height, ds.width,
                  ds.pixels.data() + static_cast<std::size_t>(i) * ds.clip_stride());
  }
  return ds;
}

// ---- .sivs container ---------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'I', 'V', 'S'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kSpecBytes = 24;

void put_u16(std::string& b, std::uint16_t v) { b.append(reinterpret_cast<char*>(&v), 2); }
void put_u32(std::string& b, std::uint32_t v) { b.append(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::string& b, std::uint64_t v) { b.append(reinterpret_cast<char*>(&v), 8); }
void put_f32(std::string& b, float v) { b.append(reinterpret_cast<char*>(&v), 4); }

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw DataError("dataset file truncated");
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  std::string body;  // pixel payload + label block, covered by the CRC
  const std::size_t pix_bytes = ds.pixels.size() * sizeof(float);
  body.reserve(pix_bytes + ds.specs.size() * kSpecBytes);
  body.append(reinterpret_cast<const char*>(ds.pixels.data()), pix_bytes);
  for (const DynSpec& s : ds.specs) {
    body.push_back(static_cast<char>(s.kind));
    body.push_back(static_cast<char>(s.direction_bin));
    body.push_back(static_cast<char>(s.endpoint_x));
    body.push_back(static_cast<char>(s.endpoint_y));
    put_f32(body, s.speed);
    put_f32(body, s.theta);
    put_f32(body, s.aux);
    put_u64(body, s.clip_seed);
  }

  std::string head;
  head.append(kMagic, 4);
  put_u16(head, kVersion);
  put_u16(head, 0);  // reserved
  put_u32(head, static_cast<std::uint32_t>(ds.specs.size()));
  put_u32(head, ds.frames);
  put_u32(head, ds.channels);
  put_u32(head, ds.height);
  put_u32(head, ds.width);
  put_u32(head, ds.direction_bins);
  std::string tail;
  put_u32(tail, crc32(body.data(), body.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(head.data(), static_cast<std::streamsize>(head.size()));
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  f.write(tail.data(), static_cast<std::streamsize>(tail.size()));
  if (!f) throw DataError("short write: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open dataset: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(buf);
  r.need(4);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw DataError("not a dataset file (bad magic): " + path);
  r.pos = 4;
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion)
    throw DataError("unsupported dataset version " + std::to_string(version));
  r.get<std::uint16_t>();  // reserved
  const auto count = r.get<std::uint32_t>();
  Dataset ds;
  ds.frames = r.get<std::uint32_t>();
  ds.channels = r.get<std::uint32_t>();
  ds.height = r.get<std::uint32_t>();
  ds.width = r.get<std::uint32_t>();
  ds.direction_bins = r.get<std::uint32_t>();
  if (ds.frames == 0 || ds.channels == 0 || ds.height == 0 || ds.width == 0)
    throw DataError("dataset has degenerate dimensions: " + path);

  const std::size_t pix_count = static_cast<std::size_t>(count) * ds.frames * ds.channels *
                                ds.height * ds.width;
  const std::size_t body_bytes = pix_count * sizeof(float) + count * kSpecBytes;
  r.need(body_bytes + 4);
  const std::uint32_t want_crc = crc32(buf.data() + r.pos, body_bytes);
  ds.pixels.resize(pix_count);
  std::memcpy(ds.pixels.data(), buf.data() + r.pos, pix_count * sizeof(float));
  r.pos += pix_count * sizeof(float);
  ds.specs.resize(count);
  for (auto& s : ds.specs) {
    s.kind = static_cast<std::uint8_t>(r.get<char>());
    s.direction_bin = static_cast<std::uint8_t>(r.get<char>());
    s.endpoint_x = static_cast<std::uint8_t>(r.get<char>());
    s.endpoint_y = static_cast<std::uint8_t>(r.get<char>());
    s.speed = r.get<float>();
    s.theta = r.get<float>();
    s.aux = r.get<float>();
    s.clip_seed = r.get<std::uint64_t>();
  }
  const auto stored_crc = r.get<std::uint32_t>();
  if (stored_crc != want_crc)
    throw DataError("dataset CRC mismatch (file corrupt): " + path);
  if (r.pos != buf.size()) throw DataError("trailing bytes after dataset: " + path);
  return ds;
}

void make_benchmark(const BenchmarkSpec& spec, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::array<std::pair<const char*, std::uint32_t>, 3> splits{
      {{"train", spec.n_train}, {"val", spec.n_val}, {"test", spec.n_test}}};
  for (std::uint64_t i = 0; i < splits.size(); ++i) {
    Dataset ds = generate_dataset(spec, splits[i].second, i);
    write_dataset(ds, dir + "/" + splits[i].first + ".sivs");
  }
  std::ofstream m(dir + "/manifest.txt", std::ios::trunc);
  if (!m) throw DataError("cannot write manifest in " + dir);
  m << "format_version = 1\n"
    << "kind = " << data_kind_name(spec.kind) << "\n"
    << "seed = " << spec.seed << "\n"
    << "n_train = " << spec.n_train << "\n"
    << "n_val = " << spec.n_val << "\n"
    << "n_test = " << spec.n_test << "\n"
    << "frames = " << spec.frames << "\n"
    << "height = " << spec.height << "\n"
    << "width = " << spec.width << "\n"
    << "direction_bins = " << spec.direction_bins << "\n";
}

DataKind parse_data_kind(const std::string& s) {
  if (s == "drift") return DataKind::drift;
  if (s == "endpoint") return DataKind::endpoint;
  if (s == "flicker") return DataKind::flicker;
  if (s == "mixed") return DataKind::mixed;
  throw ConfigError("unknown data kind: " + s);
}

const char* data_kind_name(DataKind k) {
  switch (k) {
    case DataKind::drift: return "drift";
    case DataKind::endpoint: return "endpoint";
    case DataKind::flicker: return "flicker";
    case DataKind::mixed: return "mixed";
  }
  return "?";
}

}  // namespace sivs
