#ifndef SIVS_MOTION_HPP
#define SIVS_MOTION_HPP

#include <cstdint>
#include <vector>

// Classical motion measurements on rendered frames. These are independent of
// the learned models: the control and transfer commands use them to report
// the realized dynamics of synthesized clips, and the tests use them as
// oracles against generator ground truth.

namespace sivs {

struct Displacement {
  double dx = 0;  // +x is rightward (columns)
  double dy = 0;  // +y is downward (rows)
};

// Phase correlation between two frames (row-major, H x W): the translation d
// such that next ~= prev shifted by d, estimated with subpixel parabolic
// refinement around the correlation peak. Assumes |d| < min(H, W) / 2.
Displacement phase_correlate(const float* prev, const float* next, int height, int width);

struct MotionEstimate {
  double dx = 0, dy = 0;  // common per-frame displacement
  double speed = 0;       // hypot(dx, dy)
  double theta = 0;       // atan2(dy, dx)
  int direction_bin(int n_bins) const;
};

// Estimates the per-frame displacement of a clip (frames * H * W floats) by
// accumulating the normalized cross-power spectrum over all consecutive
// frame pairs and locating one sharp correlation peak. Assumes the clip
// translates with an approximately constant velocity.
MotionEstimate estimate_motion(const float* clip, int frames, int height, int width);

// Intensity-weighted centroid of one frame, with values mapped from [-1,1]
// to nonnegative weights.
struct Centroid {
  double x = 0, y = 0;
  int cell_x(int grid, int width) const;
  int cell_y(int grid, int height) const;
};
Centroid frame_centroid(const float* frame, int height, int width);

// Location of the brightest spot, refined parabolically (no wraparound).
// Robust against border truncation, unlike the centroid, so this is the
// right measurement for dot-like content.
Centroid frame_peak(const float* frame, int height, int width);

}  // namespace sivs

#endif
