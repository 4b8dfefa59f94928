#ifndef SIVS_BATCHES_HPP
#define SIVS_BATCHES_HPP

#include <cstring>
#include <string>
#include <vector>

#include "sivs/synth_data.hpp"
#include "sivs/tensor.hpp"

// Converters between stored datasets and the tensors models consume, plus
// row gathering for minibatch assembly. Everything here produces constant
// tensors (no gradients flow into the data).

namespace sivs {

// Rows of x selected by idx, dim 0 treated as the row axis.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int64_t>& idx) {
  if (x.rank() < 1) throw ShapeError("gather_rows: rank-0 input");
  const std::int64_t rows = x.shape[0];
  const std::int64_t rs = rows > 0 ? x.size() / rows : 0;
  Shape s = x.shape;
  s[0] = static_cast<std::int64_t>(idx.size());
  Tensor<T> out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::int64_t r = idx[i];
    if (r < 0 || r >= rows)
      throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range [0," +
                       std::to_string(rows) + ")");
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * rs, x.data() + r * rs,
                static_cast<std::size_t>(rs) * sizeof(T));
  }
  return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& y,
                                      const std::vector<std::int64_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = y[static_cast<std::size_t>(idx[i])];
  return out;
}

// Frames [t0, t0+t_count) of every clip as [N, C, t_count, H, W].
inline Tensor<float> clips_tensor(const Dataset& ds, std::int64_t t0, std::int64_t t_count) {
  if (t0 < 0 || t_count < 1 || t0 + t_count > ds.frames)
    throw ShapeError("clips_tensor: frame window [" + std::to_string(t0) + "," +
                     std::to_string(t0 + t_count) + ") outside stored " +
                     std::to_string(ds.frames) + " frames");
  const std::int64_t n = ds.clips();
  const std::int64_t fs = ds.frame_stride();
  Tensor<float> out({n, ds.channels, t_count, ds.height, ds.width});
  // stored layout is [clip][frame][c][h][w]; c==1 so frame-major copy is exact
  if (ds.channels != 1) throw ShapeError("clips_tensor: only single-channel datasets");
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t t = 0; t < t_count; ++t)
      std::memcpy(out.data() + (i * t_count + t) * fs, ds.frame(i, t0 + t),
                  static_cast<std::size_t>(fs) * sizeof(float));
  return out;
}

// Frame 0 of every clip as [N, C, H, W].
inline Tensor<float> start_frames_tensor(const Dataset& ds) {
  const std::int64_t n = ds.clips();
  const std::int64_t fs = ds.frame_stride();
  Tensor<float> out({n, ds.channels, ds.height, ds.width});
  for (std::int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * fs, ds.frame(i, 0),
                static_cast<std::size_t>(fs) * sizeof(float));
  return out;
}

// Every stored frame as its own row: [N * frames, C, H, W], clip-major.
inline Tensor<float> all_frames_tensor(const Dataset& ds) {
  const std::int64_t n = ds.clips() * ds.frames;
  const std::int64_t fs = ds.frame_stride();
  Tensor<float> out({n, ds.channels, ds.height, ds.width});
  std::memcpy(out.data(), ds.pixels.data(), static_cast<std::size_t>(n * fs) * sizeof(float));
  return out;
}

inline std::vector<int> kind_labels(const Dataset& ds) {
  std::vector<int> y(ds.specs.size());
  for (std::size_t i = 0; i < ds.specs.size(); ++i) y[i] = static_cast<int>(ds.specs[i].kind);
  return y;
}

inline std::vector<int> direction_labels(const Dataset& ds) {
  std::vector<int> y(ds.specs.size());
  for (std::size_t i = 0; i < ds.specs.size(); ++i)
    y[i] = static_cast<int>(ds.specs[i].direction_bin);
  return y;
}

// kind label repeated for each stored frame, matching all_frames_tensor rows
inline std::vector<int> frame_kind_labels(const Dataset& ds) {
  std::vector<int> y;
  y.reserve(ds.specs.size() * ds.frames);
  for (const DynSpec& s : ds.specs)
    for (std::uint32_t t = 0; t < ds.frames; ++t) y.push_back(static_cast<int>(s.kind));
  return y;
}

}  // namespace sivs

#endif
