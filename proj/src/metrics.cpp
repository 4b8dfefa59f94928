#include "sivs/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sivs/linalg.hpp"

namespace sivs {

GaussianStats fit_gaussian(const std::vector<double>& rows, std::int64_t n, std::int64_t f) {
  if (n < 2) throw DataError("fit_gaussian: need at least 2 rows, got " + std::to_string(n));
  if (f < 1 || rows.size() != static_cast<std::size_t>(n * f))
    throw ShapeError("fit_gaussian: rows buffer does not match n=" + std::to_string(n) +
                     " f=" + std::to_string(f));
  GaussianStats g;
  g.f = f;
  g.count = n;
  g.mean.assign(static_cast<std::size_t>(f), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < f; ++j) g.mean[j] += rows[i * f + j];
  for (std::int64_t j = 0; j < f; ++j) g.mean[j] /= static_cast<double>(n);
  g.cov.assign(static_cast<std::size_t>(f * f), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t a = 0; a < f; ++a) {
      const double da = rows[i * f + a] - g.mean[a];
      for (std::int64_t b = a; b < f; ++b)
        g.cov[a * f + b] += da * (rows[i * f + b] - g.mean[b]);
    }
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (std::int64_t a = 0; a < f; ++a)
    for (std::int64_t b = a; b < f; ++b) {
      g.cov[a * f + b] *= inv;
      g.cov[b * f + a] = g.cov[a * f + b];
    }
  for (double v : g.mean)
    if (!std::isfinite(v)) throw NumericError("fit_gaussian: non-finite mean");
  for (double v : g.cov)
    if (!std::isfinite(v)) throw NumericError("fit_gaussian: non-finite covariance");
  return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b, double ridge) {
  if (a.f != b.f)
    throw ShapeError("frechet_distance: feature widths differ, " + std::to_string(a.f) +
                     " vs " + std::to_string(b.f));
  const std::int64_t f = a.f;
  if (f < 1 || a.cov.size() != static_cast<std::size_t>(f * f) ||
      b.cov.size() != static_cast<std::size_t>(f * f))
    throw ShapeError("frechet_distance: malformed stats");

  double mu2 = 0.0;
  for (std::int64_t i = 0; i < f; ++i) {
    const double d = a.mean[i] - b.mean[i];
    mu2 += d * d;
  }

  std::vector<double> c1 = a.cov, c2 = b.cov;
  // Stabilize near-singular fits only; adding the ridge unconditionally would
  // bias well-conditioned analytic cases by O(ridge).
  {
    std::vector<double> w, v;
    jacobi_eigh(c1, f, w, v);
    double lo1 = w[0], hi1 = w[0];
    for (double x : w) {
      lo1 = std::min(lo1, x);
      hi1 = std::max(hi1, x);
    }
    jacobi_eigh(c2, f, w, v);
    double lo2 = w[0], hi2 = w[0];
    for (double x : w) {
      lo2 = std::min(lo2, x);
      hi2 = std::max(hi2, x);
    }
    const double hi = std::max({hi1, hi2, 1.0});
    if (std::min(lo1, lo2) < ridge * hi) {
      for (std::int64_t i = 0; i < f; ++i) {
        c1[i * f + i] += ridge;
        c2[i * f + i] += ridge;
      }
    }
  }

  const std::vector<double> s1 = sqrtm_psd(c1, f);
  const std::vector<double> inner = matmul_sq(matmul_sq(s1, c2, f), s1, f);
  const std::vector<double> cross = sqrtm_psd(inner, f);
  double tr = 0.0;
  for (std::int64_t i = 0; i < f; ++i)
    tr += c1[i * f + i] + c2[i * f + i] - 2.0 * cross[i * f + i];

  double d = mu2 + tr;
  if (!std::isfinite(d)) throw NumericError("frechet_distance: non-finite result");
  if (d < 0.0) {
    if (d < -1e-6)
      throw NumericError("frechet_distance: negative beyond roundoff tolerance: " +
                         std::to_string(d));
    d = 0.0;
  }
  return d;
}

DistanceKind parse_distance_kind(const std::string& s) {
  if (s == "euclidean") return DistanceKind::euclidean;
  if (s == "cosine") return DistanceKind::cosine;
  throw ConfigError("unknown distance kind: " + s + " (have: euclidean, cosine)");
}

namespace {

double pair_distance(const double* x, const double* y, std::int64_t f, DistanceKind kind) {
  if (kind == DistanceKind::euclidean) {
    double s = 0.0;
    for (std::int64_t i = 0; i < f; ++i) {
      const double d = x[i] - y[i];
      s += d * d;
    }
    return std::sqrt(s);
  }
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::int64_t i = 0; i < f; ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  return 1.0 - dot / std::max(std::sqrt(nx) * std::sqrt(ny), 1e-30);
}

}  // namespace

double diversity(const std::vector<std::vector<double>>& groups, std::int64_t f,
                 DistanceKind kind) {
  if (groups.empty()) throw DataError("diversity: no sample groups");
  if (f < 1) throw ShapeError("diversity: feature width must be positive");
  double total = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::vector<double>& rows = groups[g];
    if (rows.size() % static_cast<std::size_t>(f) != 0)
      throw ShapeError("diversity: group " + std::to_string(g) +
                       " is not a whole number of rows");
    const std::int64_t k = static_cast<std::int64_t>(rows.size()) / f;
    if (k < 2)
      throw DataError("diversity: group " + std::to_string(g) + " has " + std::to_string(k) +
                      " samples, need at least 2");
    double s = 0.0;
    std::int64_t pairs = 0;
    for (std::int64_t i = 0; i < k; ++i)
      for (std::int64_t j = i + 1; j < k; ++j) {
        s += pair_distance(rows.data() + i * f, rows.data() + j * f, f, kind);
        ++pairs;
      }
    total += s / static_cast<double>(pairs);
  }
  return total / static_cast<double>(groups.size());
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);  // round-trips any double
  return buf;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << "metric,split,value,n,seed\n";
  for (const MetricRow& r : rows) {
    if (r.metric.find(',') != std::string::npos || r.split.find(',') != std::string::npos)
      throw DataError("metrics csv: field contains a comma: " + r.metric + "/" + r.split);
    f << r.metric << ',' << r.split << ',' << fmt_double(r.value) << ',' << r.n << ','
      << r.seed << '\n';
  }
  if (!f) throw DataError("short write: " + path);
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open metrics csv: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "metric,split,value,n,seed")
    throw DataError("metrics csv: bad header in " + path);
  std::vector<MetricRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    MetricRow r;
    std::string v, n, s;
    if (!std::getline(ss, r.metric, ',') || !std::getline(ss, r.split, ',') ||
        !std::getline(ss, v, ',') || !std::getline(ss, n, ',') || !std::getline(ss, s))
      throw DataError("metrics csv: malformed row: " + line);
    r.value = std::stod(v);
    r.n = std::stoll(n);
    r.seed = std::stoull(s);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string format_metrics_table(const std::vector<MetricRow>& rows) {
  std::size_t wm = 6, ws = 5;
  for (const MetricRow& r : rows) {
    wm = std::max(wm, r.metric.size());
    ws = std::max(ws, r.split.size());
  }
  std::ostringstream out;
  out << std::string(wm - 6, ' ') << "metric  " << std::string(ws - 5, ' ')
      << "split  value            n  seed\n";
  for (const MetricRow& r : rows) {
    out << std::string(wm - r.metric.size(), ' ') << r.metric << "  "
        << std::string(ws - r.split.size(), ' ') << r.split << "  ";
    std::string v = fmt_double(r.value);
    out << v << std::string(v.size() < 15 ? 15 - v.size() : 1, ' ') << "  " << r.n << "  "
        << r.seed << "\n";
  }
  return out.str();
}

std::vector<double> feature_rows(const Tensor<float>& feats) {
  if (feats.rank() != 2) throw ShapeError("feature_rows: want [N,f], got " +
                                          shape_str(feats.shape));
  std::vector<double> out(static_cast<std::size_t>(feats.size()));
  for (std::int64_t i = 0; i < feats.size(); ++i) out[i] = feats.data()[i];
  return out;
}

}  // namespace sivs
