#include "sivs/motion.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "sivs/error.hpp"

namespace sivs {

namespace {

using cplx = std::complex<double>;
constexpr double kPi = std::numbers::pi;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 transform; sign -1 forward, +1 inverse
// (inverse is normalized by the caller). Falls back to a naive DFT for
// non-power-of-two lengths, which only small test inputs hit.
void fft1d(cplx* a, int n, int sign) {
  if (!is_pow2(n)) {
    std::vector<cplx> out(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      cplx acc = 0;
      for (int j = 0; j < n; ++j)
        acc += a[j] * std::polar(1.0, sign * 2.0 * kPi * k * j / n);
      out[static_cast<std::size_t>(k)] = acc;
    }
    std::copy(out.begin(), out.end(), a);
    return;
  }
  for (int i = 1, j = 0; i < n; ++i) {  // bit reversal
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * kPi / len;
    const cplx wl = std::polar(1.0, ang);
    for (int i = 0; i < n; i += len) {
      cplx w = 1;
      for (int j = 0; j < len / 2; ++j) {
        const cplx u = a[i + j];
        const cplx v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

void fft2d(std::vector<cplx>& a, int h, int w, int sign) {
  for (int y = 0; y < h; ++y) fft1d(a.data() + static_cast<std::size_t>(y) * w, w, sign);
  std::vector<cplx> col(static_cast<std::size_t>(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col[y] = a[static_cast<std::size_t>(y) * w + x];
    fft1d(col.data(), h, sign);
    for (int y = 0; y < h; ++y) a[static_cast<std::size_t>(y) * w + x] = col[y];
  }
}

double wrap_half(double v, int n) {
  if (v >= n / 2.0) v -= n;
  return v;
}

// Parabolic peak refinement through (-1,l), (0,c), (1,r).
double parabolic(double l, double c, double r) {
  const double denom = l + r - 2.0 * c;
  if (std::abs(denom) < 1e-12) return 0.0;
  const double off = (l - r) / (2.0 * denom);
  return std::clamp(off, -0.5, 0.5);
}

}  // namespace

namespace {

// Raw cross-power spectrum of (next, prev), accumulated into `acc`. Kept
// unnormalized so the magnitude still says which frequencies carry signal;
// with band-limited content most bins are pure numerical noise and must not
// get unit weight.
void accumulate_cross_power(const float* prev, const float* next, int height, int width,
                            std::vector<cplx>& acc) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  std::vector<cplx> fa(n), fb(n);
  for (std::size_t i = 0; i < n; ++i) {
    fa[i] = prev[i];
    fb[i] = next[i];
  }
  fft2d(fa, height, width, -1);
  fft2d(fb, height, width, -1);
  for (std::size_t i = 0; i < n; ++i) acc[i] += fb[i] * std::conj(fa[i]);
}

int signed_freq(int idx, int n) { return idx <= n / 2 ? idx : idx - n; }

// Two-stage displacement estimate from an accumulated cross-power spectrum:
// an integer-pixel correlation peak (significant bins only, whitened), then
// a weighted least-squares fit of the residual phase slope for the subpixel
// part. The phase fit uses |k| <= N/4 so a residual of half a pixel cannot
// wrap the phase.
Displacement spectrum_displacement(const std::vector<cplx>& acc, int height, int width) {
  double wmax = 0;
  for (const cplx& c : acc) wmax = std::max(wmax, std::abs(c));
  if (wmax <= 0) return {};
  const double cutoff = 1e-6 * wmax;

  std::vector<cplx> r(acc.size(), cplx(0.0));
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double mag = std::abs(acc[i]);
    if (mag > cutoff) r[i] = acc[i] / mag;
  }
  fft2d(r, height, width, +1);
  int py = 0, px = 0;
  double best = -1e300;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = r[static_cast<std::size_t>(y) * width + x].real();
      if (v > best) {
        best = v;
        py = y;
        px = x;
      }
    }
  const double dx0 = wrap_half(px, width);
  const double dy0 = wrap_half(py, height);

  // residual phase fit: phase(acc_k) = -2pi (kx d_x / W + ky d_y / H)
  double saa = 0, sab = 0, sbb = 0, sap = 0, sbp = 0;
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u) {
      const cplx c = acc[static_cast<std::size_t>(v) * width + u];
      const double w = std::abs(c);
      if (w <= cutoff) continue;
      const int kx = signed_freq(u, width);
      const int ky = signed_freq(v, height);
      if (std::abs(kx) > width / 4 || std::abs(ky) > height / 4) continue;
      const double a = 2.0 * kPi * kx / width;
      const double b = 2.0 * kPi * ky / height;
      // remove the integer-shift carrier, keep only the residual phase
      const cplx res = c * std::polar(1.0, a * dx0 + b * dy0);
      const double phi = std::arg(res);
      saa += w * a * a;
      sab += w * a * b;
      sbb += w * b * b;
      sap += w * a * phi;
      sbp += w * b * phi;
    }
  double ddx = 0, ddy = 0;
  const double det = saa * sbb - sab * sab;
  if (std::abs(det) > 1e-12) {
    ddx = (-sap * sbb + sbp * sab) / det;
    ddy = (-sbp * saa + sap * sab) / det;
    ddx = std::clamp(ddx, -0.75, 0.75);
    ddy = std::clamp(ddy, -0.75, 0.75);
  }
  return {dx0 + ddx, dy0 + ddy};
}

}  // namespace

Displacement phase_correlate(const float* prev, const float* next, int height, int width) {
  std::vector<cplx> acc(static_cast<std::size_t>(height) * width, cplx(0.0));
  accumulate_cross_power(prev, next, height, width, acc);
  return spectrum_displacement(acc, height, width);
}

int MotionEstimate::direction_bin(int n_bins) const {
  const double step = 2.0 * kPi / n_bins;
  long b = std::lround(theta / step);
  return static_cast<int>(((b % n_bins) + n_bins) % n_bins);
}

MotionEstimate estimate_motion(const float* clip, int frames, int height, int width) {
  if (frames < 2) throw DataError("estimate_motion: need at least two frames");
  const std::int64_t fs = static_cast<std::int64_t>(height) * width;
  std::vector<cplx> acc(static_cast<std::size_t>(height) * width, cplx(0.0));
  for (int t = 0; t + 1 < frames; ++t)
    accumulate_cross_power(clip + t * fs, clip + (t + 1) * fs, height, width, acc);
  const Displacement d = spectrum_displacement(acc, height, width);
  MotionEstimate m;
  m.dx = d.dx;
  m.dy = d.dy;
  m.theta = std::atan2(m.dy, m.dx);
  m.speed = std::hypot(m.dx, m.dy);
  return m;
}

Centroid frame_centroid(const float* frame, int height, int width) {
  double wsum = 0, xs = 0, ys = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double w = std::max(0.0, (frame[static_cast<std::size_t>(y) * width + x] + 1.0) / 2.0);
      wsum += w;
      xs += w * x;
      ys += w * y;
    }
  Centroid c;
  if (wsum < 1e-9) {
    c.x = width / 2.0;
    c.y = height / 2.0;
  } else {
    c.x = xs / wsum;
    c.y = ys / wsum;
  }
  return c;
}

Centroid frame_peak(const float* frame, int height, int width) {
  int py = 0, px = 0;
  double best = -1e300;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = frame[static_cast<std::size_t>(y) * width + x];
      if (v > best) {
        best = v;
        py = y;
        px = x;
      }
    }
  auto at = [&](int y, int x) {
    return static_cast<double>(frame[static_cast<std::size_t>(y) * width + x]);
  };
  Centroid c;
  c.x = px;
  c.y = py;
  if (px > 0 && px + 1 < width)
    c.x += parabolic(at(py, px - 1), at(py, px), at(py, px + 1));
  if (py > 0 && py + 1 < height)
    c.y += parabolic(at(py - 1, px), at(py, px), at(py + 1, px));
  return c;
}

int Centroid::cell_x(int grid, int width) const {
  const int cx = static_cast<int>(x * grid / width);
  return std::clamp(cx, 0, grid - 1);
}

int Centroid::cell_y(int grid, int height) const {
  const int cy = static_cast<int>(y * grid / height);
  return std::clamp(cy, 0, grid - 1);
}

}  // namespace sivs
