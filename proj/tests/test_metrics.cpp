#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "sivs/batches.hpp"
#include "sivs/linalg.hpp"
#include "sivs/metrics.hpp"
#include "sivs/rng.hpp"
#include "sivs/synth_data.hpp"

using namespace sivs;

namespace {

std::vector<double> random_psd(std::int64_t n, std::uint64_t seed, double diag = 0.0) {
  Rng rng(seed);
  std::vector<double> a(static_cast<std::size_t>(n * n));
  for (auto& v : a) v = rng.next_normal();
  std::vector<double> m(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t k = 0; k < n; ++k) s += a[k * n + i] * a[k * n + j];
      m[i * n + j] = s + (i == j ? diag : 0.0);
    }
  return m;
}

double frob(const std::vector<double>& m) {
  double s = 0.0;
  for (double v : m) s += v * v;
  return std::sqrt(s);
}

// rows ~ N(mu, B B^T), n x f, deterministic in seed
std::vector<double> gaussian_rows(std::int64_t n, std::int64_t f, const std::vector<double>& mu,
                                  const std::vector<double>& b, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> rows(static_cast<std::size_t>(n * f));
  std::vector<double> g(static_cast<std::size_t>(f));
  for (std::int64_t i = 0; i < n; ++i) {
    for (auto& v : g) v = rng.next_normal();
    for (std::int64_t r = 0; r < f; ++r) {
      double s = mu[r];
      for (std::int64_t c = 0; c < f; ++c) s += b[r * f + c] * g[c];
      rows[i * f + r] = s;
    }
  }
  return rows;
}

GaussianStats stats1d(double mean, double var) {
  GaussianStats g;
  g.f = 1;
  g.count = 1000;
  g.mean = {mean};
  g.cov = {var};
  return g;
}

// drift clips restricted to two opposite direction bins, relabeled 0/1
struct TwoClassSet {
  Tensor<float> x;
  std::vector<int> y;
};

TwoClassSet two_class_drift(std::uint32_t pool, std::uint64_t split, std::uint64_t seed) {
  BenchmarkSpec spec;
  spec.kind = DataKind::drift;
  spec.seed = seed;
  Dataset ds = generate_dataset(spec, pool, split);
  std::vector<std::int64_t> keep;
  std::vector<int> y;
  for (std::int64_t i = 0; i < ds.clips(); ++i) {
    const int bin = ds.specs[static_cast<std::size_t>(i)].direction_bin;
    if (bin == 0 || bin == 4) {
      keep.push_back(i);
      y.push_back(bin == 4);
    }
  }
  return {gather_rows(clips_tensor(ds, 1, 8), keep), y};
}

struct ProbeNet {
  Linear<float> fc;
  int n_classes = 2;
  Tensor<float> operator()(const Tensor<float>& x) const { return fc(x); }
};

}  // namespace

TEST_CASE("jacobi eigendecomposition on a known 2x2") {
  std::vector<double> w, v;
  jacobi_eigh({2, 1, 1, 2}, 2, w, v);
  std::vector<double> sorted = w;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sorted[1] == doctest::Approx(3.0).epsilon(1e-12));
  // A v_j = w_j v_j for each column
  for (int j = 0; j < 2; ++j) {
    const double v0 = v[0 * 2 + j], v1 = v[1 * 2 + j];
    CHECK(2 * v0 + 1 * v1 == doctest::Approx(w[j] * v0).epsilon(1e-10));
    CHECK(1 * v0 + 2 * v1 == doctest::Approx(w[j] * v1).epsilon(1e-10));
  }
  CHECK_THROWS_AS(jacobi_eigh({1, 2, 3, 4}, 2, w, v), NumericError);  // asymmetric
}

TEST_CASE("sqrtm: diagonal, hand eigen case, and the PSD clip") {
  std::vector<double> s = sqrtm_psd({4, 0, 0, 9}, 2);
  CHECK(s[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s[3] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(std::fabs(s[1]) < 1e-12);

  // sqrtm([[2,1],[1,2]]) has entries (sqrt(3)+1)/2 and (sqrt(3)-1)/2
  s = sqrtm_psd({2, 1, 1, 2}, 2);
  CHECK(s[0] == doctest::Approx(1.36603).epsilon(1e-4));
  CHECK(s[1] == doctest::Approx(0.36603).epsilon(1e-4));
  CHECK(s[2] == doctest::Approx(0.36603).epsilon(1e-4));
  CHECK(s[3] == doctest::Approx(1.36603).epsilon(1e-4));

  CHECK(sqrtm_psd({0.0}, 1)[0] == 0.0);
  CHECK(sqrtm_psd({-1e-9}, 1)[0] == 0.0);  // roundoff negative clips
  CHECK_THROWS_AS(sqrtm_psd({-1e-3}, 1), NumericError);
}

TEST_CASE("sqrtm residual stays tiny up to 64x64") {
  for (std::int64_t n : {2, 3, 8, 33, 64}) {
    std::vector<double> m = random_psd(n, 0xABC0 + static_cast<std::uint64_t>(n));
    std::vector<double> s = sqrtm_psd(m, n);
    std::vector<double> ss = matmul_sq(s, s, n);
    for (std::size_t i = 0; i < ss.size(); ++i) ss[i] -= m[i];
    CHECK(frob(ss) <= 1e-8 * std::max(1.0, frob(m)));
    // the root itself is symmetric
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = i + 1; j < n; ++j)
        CHECK(std::fabs(s[i * n + j] - s[j * n + i]) < 1e-10);
  }
}

TEST_CASE("fit_gaussian matches hand statistics and validates input") {
  // rows (1,2) and (3,6): mean (2,4), sample cov [[2,4],[4,8]]
  GaussianStats g = fit_gaussian({1, 2, 3, 6}, 2, 2);
  CHECK(g.mean[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(g.mean[1] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(g.cov[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(g.cov[1] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(g.cov[2] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(g.cov[3] == doctest::Approx(8.0).epsilon(1e-14));
  CHECK(g.count == 2);

  CHECK_THROWS_AS(fit_gaussian({1, 2}, 1, 2), DataError);           // one row
  CHECK_THROWS_AS(fit_gaussian({1, 2, 3}, 2, 2), ShapeError);       // bad buffer
  const double nan = std::nan("");
  CHECK_THROWS_AS(fit_gaussian({nan, 0, 1, 0}, 2, 2), NumericError);
}

TEST_CASE("frechet distance reproduces the 1-D analytic cases") {
  // identical fits
  CHECK(frechet_distance(stats1d(0, 1), stats1d(0, 1)) == doctest::Approx(0.0).epsilon(1e-9));
  // mean shift only: |0-1|^2 = 1
  CHECK(frechet_distance(stats1d(0, 1), stats1d(1, 1)) == doctest::Approx(1.0).epsilon(1e-9));
  // variance gap only: (sqrt(4)-sqrt(1))^2 = 1
  CHECK(frechet_distance(stats1d(0, 1), stats1d(0, 4)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("frechet distance: symmetry, non-negativity, validation") {
  const std::int64_t f = 5;
  GaussianStats a, b;
  a.f = b.f = f;
  a.count = b.count = 100;
  a.cov = random_psd(f, 11, 0.1);
  b.cov = random_psd(f, 22, 0.1);
  Rng rng(33);
  for (std::int64_t i = 0; i < f; ++i) {
    a.mean.push_back(rng.next_normal());
    b.mean.push_back(rng.next_normal());
  }
  const double dab = frechet_distance(a, b);
  const double dba = frechet_distance(b, a);
  CHECK(dab >= 0.0);
  CHECK(std::fabs(dab - dba) < 1e-8);
  CHECK(frechet_distance(a, a) == doctest::Approx(0.0).epsilon(1e-9));

  GaussianStats w = stats1d(0, 1);
  CHECK_THROWS_AS(frechet_distance(a, w), ShapeError);

  // rank-deficient covariance engages the ridge instead of failing
  GaussianStats low;
  low.f = 2;
  low.count = 10;
  low.mean = {0, 0};
  low.cov = {1, 1, 1, 1};  // rank 1
  CHECK(frechet_distance(low, low) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(frechet_distance(low, a.f == 2 ? a : low) >= 0.0);

  GaussianStats bad = stats1d(0, -1.0);  // not a covariance
  CHECK_THROWS_AS(frechet_distance(bad, stats1d(0, 1)), NumericError);
}

TEST_CASE("frechet monte-carlo consistency: same Gaussian, growing N") {
  const std::int64_t f = 4;
  std::vector<double> mu = {0.5, -1.0, 2.0, 0.0};
  std::vector<double> b(static_cast<std::size_t>(f * f));
  Rng rng(0xB00);
  for (auto& v : b) v = 0.4 * rng.next_normal();
  for (std::int64_t i = 0; i < f; ++i) b[i * f + i] += 1.0;

  double d_prev = -1.0;
  for (std::int64_t n : {100, 1000}) {
    GaussianStats g1 = fit_gaussian(gaussian_rows(n, f, mu, b, 0xA1), n, f);
    GaussianStats g2 = fit_gaussian(gaussian_rows(n, f, mu, b, 0xA2), n, f);
    const double d = frechet_distance(g1, g2);
    if (d_prev >= 0.0) CHECK(d < d_prev);
    d_prev = d;
  }
  CHECK(d_prev < 0.2);  // N=1000 fits of the same Gaussian are close
}

TEST_CASE("diversity: analytic fixtures") {
  // one group, rows (0,0) and (3,4): mean pairwise euclidean distance 5
  std::vector<std::vector<double>> g1 = {{0, 0, 3, 4}};
  CHECK(diversity(g1, 2, DistanceKind::euclidean) == doctest::Approx(5.0).epsilon(1e-14));

  // collinear rows (1,0) and (2,0): cosine 0 but euclidean 1
  std::vector<std::vector<double>> g2 = {{1, 0, 2, 0}};
  CHECK(diversity(g2, 2, DistanceKind::cosine) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(diversity(g2, 2, DistanceKind::euclidean) == doctest::Approx(1.0).epsilon(1e-14));

  // identical samples have zero diversity under both metrics
  std::vector<std::vector<double>> g3 = {{7, -2, 7, -2, 7, -2}};
  CHECK(diversity(g3, 2, DistanceKind::euclidean) == 0.0);
  CHECK(diversity(g3, 2, DistanceKind::cosine) == doctest::Approx(0.0).epsilon(1e-12));

  // groups average: means 5 and 1 -> 3
  std::vector<std::vector<double>> g4 = {{0, 0, 3, 4}, {0, 0, 1, 0}};
  CHECK(diversity(g4, 2, DistanceKind::euclidean) == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("diversity: invariances and validation") {
  Rng rng(99);
  std::vector<double> rows(5 * 3);
  for (auto& v : rows) v = rng.next_normal();
  const double base = diversity({rows}, 3, DistanceKind::euclidean);

  // permuting rows changes nothing
  std::vector<double> perm(rows.begin() + 3, rows.end());
  perm.insert(perm.end(), rows.begin(), rows.begin() + 3);
  CHECK(diversity({perm}, 3, DistanceKind::euclidean) == doctest::Approx(base).epsilon(1e-12));

  // translating every row changes nothing (euclidean)
  std::vector<double> shifted = rows;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 10.0;
  CHECK(diversity({shifted}, 3, DistanceKind::euclidean) ==
        doctest::Approx(base).epsilon(1e-12));

  CHECK_THROWS_AS(diversity({{1.0, 2.0, 3.0}}, 3, DistanceKind::euclidean),
                  DataError);  // single sample
  CHECK_THROWS_AS(diversity({}, 3, DistanceKind::euclidean), DataError);
  CHECK_THROWS_AS(diversity({{1.0, 2.0}}, 3, DistanceKind::euclidean), ShapeError);
  CHECK_THROWS_AS(parse_distance_kind("manhattan"), ConfigError);
  CHECK(parse_distance_kind("cosine") == DistanceKind::cosine);
}

TEST_CASE("metrics csv round trip and table") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "sivs_metrics_csv").string();
  fs::create_directories(dir);
  std::vector<MetricRow> rows = {
      {"desk-fvd", "test", 12.3456789012, 100, 42},
      {"diversity-euclidean", "val", 0.5, 25, 7},
  };
  write_metrics_csv(dir + "/m.csv", rows);
  std::vector<MetricRow> back = read_metrics_csv(dir + "/m.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].metric == "desk-fvd");
  CHECK(back[0].split == "test");
  CHECK(back[0].value == doctest::Approx(12.3456789012).epsilon(1e-12));
  CHECK(back[0].n == 100);
  CHECK(back[0].seed == 42);
  CHECK(back[1].metric == "diversity-euclidean");

  std::string table = format_metrics_table(rows);
  CHECK(table.find("desk-fvd") != std::string::npos);
  CHECK(table.find("metric") != std::string::npos);

  // header is enforced on read
  {
    std::ofstream f(dir + "/bad.csv");
    f << "name,value\nx,1\n";
  }
  CHECK_THROWS_AS(read_metrics_csv(dir + "/bad.csv"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("dataset to tensor converters") {
  BenchmarkSpec spec;
  spec.kind = DataKind::mixed;
  spec.seed = 5;
  Dataset ds = generate_dataset(spec, 6, 0);

  Tensor<float> clips = clips_tensor(ds, 1, 8);
  CHECK(clips.shape == Shape({6, 1, 8, 16, 16}));
  // frame t of the tensor is stored frame t+1
  CHECK(std::memcmp(clips.data() + (2 * 8 + 3) * 256, ds.frame(2, 4),
                    256 * sizeof(float)) == 0);

  Tensor<float> x0 = start_frames_tensor(ds);
  CHECK(x0.shape == Shape({6, 1, 16, 16}));
  CHECK(std::memcmp(x0.data() + 256, ds.frame(1, 0), 256 * sizeof(float)) == 0);

  Tensor<float> frames = all_frames_tensor(ds);
  CHECK(frames.shape == Shape({6 * 9, 1, 16, 16}));
  CHECK(frame_kind_labels(ds).size() == 54);
  CHECK(kind_labels(ds).size() == 6);
  CHECK(frame_kind_labels(ds)[9] == kind_labels(ds)[1]);

  CHECK_THROWS_AS(clips_tensor(ds, 2, 8), ShapeError);  // window past the end

  std::vector<std::int64_t> idx = {3, 3, 0};
  Tensor<float> picked = gather_rows(clips, idx);
  CHECK(picked.shape == Shape({3, 1, 8, 16, 16}));
  CHECK(std::memcmp(picked.data(), picked.data() + picked.size() / 3,
                    static_cast<std::size_t>(picked.size() / 3) * sizeof(float)) == 0);
  CHECK_THROWS_AS(gather_rows(clips, {99}), ShapeError);
}

TEST_CASE("frame backbone separates clip kinds") {
  BenchmarkSpec spec;
  spec.kind = DataKind::mixed;
  spec.seed = 17;
  Dataset train = generate_dataset(spec, 120, 0);
  Dataset val = generate_dataset(spec, 40, 1);

  Rng init(Rng::mix(21, 0));
  FrameNet<float> net(1, 16, 16, 3, init);
  ParamMap<float> pm;
  net.collect(pm, "frame_net");

  ClassifierCfg cfg;
  cfg.epochs = 6;
  cfg.batch = 64;
  cfg.lr = 2e-3f;
  cfg.seed = 21;
  const double acc = train_classifier(net, pm, all_frames_tensor(train),
                                      frame_kind_labels(train), all_frames_tensor(val),
                                      frame_kind_labels(val), cfg);
  CHECK(acc >= 0.9);

  // named feature layers expose the documented widths
  Tensor<float> probe = gather_rows(all_frames_tensor(val), {0, 1, 2});
  CHECK(net.features(probe, "conv2").shape == Shape({3, 32 * 4 * 4}));
  CHECK(net.features(probe, "feat").shape == Shape({3, 64}));
  CHECK_THROWS_AS(net.features(probe, "fc9"), ConfigError);
}

TEST_CASE("classifier training is deterministic in the seed") {
  BenchmarkSpec spec;
  spec.kind = DataKind::mixed;
  spec.seed = 3;
  Dataset train = generate_dataset(spec, 40, 0);
  Dataset val = generate_dataset(spec, 12, 1);

  auto run = [&](std::uint64_t seed) {
    Rng init(Rng::mix(seed, 0));
    auto net = std::make_shared<FrameNet<float>>(1, 16, 16, 3, init);
    ParamMap<float> pm;
    net->collect(pm, "frame_net");
    ClassifierCfg cfg;
    cfg.epochs = 2;
    cfg.batch = 32;
    cfg.seed = seed;
    train_classifier(*net, pm, all_frames_tensor(train), frame_kind_labels(train),
                     all_frames_tensor(val), frame_kind_labels(val), cfg);
    return net;
  };
  auto n1 = run(1234), n2 = run(1234), n3 = run(99);
  ParamMap<float> p1, p2, p3;
  n1->collect(p1, "m");
  n2->collect(p2, "m");
  n3->collect(p3, "m");
  bool all_equal = true, any_diff_seed = false;
  for (std::size_t i = 0; i < p1.items.size(); ++i) {
    const Tensor<float>*a = p1.items[i].second, *b = p2.items[i].second,
                      *c = p3.items[i].second;
    if (std::memcmp(a->data(), b->data(), static_cast<std::size_t>(a->size()) * sizeof(float)))
      all_equal = false;
    if (std::memcmp(a->data(), c->data(), static_cast<std::size_t>(a->size()) * sizeof(float)))
      any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("classifier rejects degenerate label sets") {
  BenchmarkSpec spec;
  spec.kind = DataKind::flicker;  // every label identical
  spec.seed = 8;
  Dataset ds = generate_dataset(spec, 10, 0);
  Rng init(1);
  FrameNet<float> net(1, 16, 16, 3, init);
  ParamMap<float> pm;
  net.collect(pm, "m");
  ClassifierCfg cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_classifier(net, pm, all_frames_tensor(ds), frame_kind_labels(ds),
                                   all_frames_tensor(ds), frame_kind_labels(ds), cfg),
                  DataError);

  // out-of-range label
  std::vector<int> bad = frame_kind_labels(ds);
  bad[0] = 7;
  CHECK_THROWS_AS(train_classifier(net, pm, all_frames_tensor(ds), bad, all_frames_tensor(ds),
                                   bad, cfg),
                  DataError);
}

TEST_CASE("clip backbone: two opposite drift directions separate almost perfectly") {
  TwoClassSet train = two_class_drift(2000, 0, 0xD1F);
  TwoClassSet val = two_class_drift(700, 1, 0xD1F);
  REQUIRE(train.y.size() >= 300);
  REQUIRE(val.y.size() >= 100);

  Rng init(Rng::mix(51, 0));
  ClipNet<float> net(1, 8, 16, 16, 2, init);
  ParamMap<float> pm;
  net.collect(pm, "clip_net");
  ClassifierCfg cfg;
  cfg.epochs = 10;
  cfg.batch = 32;
  cfg.lr = 2e-3f;
  cfg.seed = 51;
  const double acc = train_classifier(net, pm, train.x, train.y, val.x, val.y, cfg);
  CHECK(acc >= 0.99);

  // feature space: penultimate layer is 64 wide and linearly separable
  Tensor<float> ft = extract_features(net, "feat", train.x);
  Tensor<float> fv = extract_features(net, "feat", val.x);
  CHECK(ft.shape == Shape({static_cast<std::int64_t>(train.y.size()), 64}));
  CHECK_THROWS_AS(extract_features(net, "conv9", val.x), ConfigError);

  Rng pinit(7);
  ProbeNet probe{Linear<float>(64, 2, pinit), 2};
  ParamMap<float> ppm;
  probe.fc.collect(ppm, "probe");
  ClassifierCfg pcfg;
  pcfg.epochs = 40;
  pcfg.batch = 64;
  pcfg.lr = 5e-3f;
  pcfg.seed = 7;
  const double probe_acc = train_classifier(probe, ppm, ft, train.y, fv, val.y, pcfg);
  CHECK(probe_acc >= 0.95);

  // extract_features keeps one row per input, duplicates included
  std::vector<std::int64_t> dup = {0, 0};
  Tensor<float> fd = extract_features(net, "feat", gather_rows(val.x, dup));
  CHECK(fd.shape == Shape({2, 64}));
  CHECK(std::memcmp(fd.data(), fd.data() + 64, 64 * sizeof(float)) == 0);
}

TEST_CASE("clip backbone: eight drift directions, real vs shuffled labels") {
  BenchmarkSpec spec;
  spec.kind = DataKind::drift;
  spec.seed = 0xD8;
  Dataset train = generate_dataset(spec, 800, 0);
  Dataset val = generate_dataset(spec, 150, 1);
  Tensor<float> tx = clips_tensor(train, 1, 8);
  Tensor<float> vx = clips_tensor(val, 1, 8);
  std::vector<int> ty = direction_labels(train), vy = direction_labels(val);

  ClassifierCfg cfg;
  cfg.epochs = 22;
  cfg.batch = 32;
  cfg.lr = 2e-3f;
  cfg.seed = 61;

  Rng init(Rng::mix(61, 0));
  ClipNet<float> net(1, 8, 16, 16, 8, init);
  ParamMap<float> pm;
  net.collect(pm, "clip_net");
  const double acc = train_classifier(net, pm, tx, ty, vx, vy, cfg);
  CHECK(acc >= 0.9);

  // Shuffled labels carry no distributed signal, so held-out accuracy sits
  // at chance. Kept to few epochs: heavier fitting of shuffled labels leaks
  // a little real signal through the ~1/8 of them that stay correct.
  std::vector<int> shuffled = ty;
  Rng srng(0x5EED);
  for (std::size_t i = shuffled.size() - 1; i > 0; --i)
    std::swap(shuffled[i], shuffled[srng.next_below(i + 1)]);
  Dataset val_wide = generate_dataset(spec, 400, 2);
  Rng init2(Rng::mix(62, 0));
  ClipNet<float> net2(1, 8, 16, 16, 8, init2);
  ParamMap<float> pm2;
  net2.collect(pm2, "clip_net");
  ClassifierCfg cfg2 = cfg;
  cfg2.epochs = 3;
  cfg2.seed = 62;
  const double chance = train_classifier(net2, pm2, tx, shuffled, clips_tensor(val_wide, 1, 8),
                                         direction_labels(val_wide), cfg2);
  CHECK(chance >= 0.125 - 0.05);
  CHECK(chance <= 0.125 + 0.05);
}

TEST_CASE("clip backbone supports the 16-frame variant") {
  BenchmarkSpec spec;
  spec.kind = DataKind::drift;
  spec.seed = 4;
  spec.frames = 17;
  Dataset ds = generate_dataset(spec, 4, 0);
  Tensor<float> x = clips_tensor(ds, 1, 16);
  Rng init(2);
  ClipNet<float> net(1, 16, 16, 16, 8, init);
  CHECK(net(x).shape == Shape({4, 8}));
  CHECK(net.features(x, "feat").shape == Shape({4, 64}));
  CHECK_THROWS_AS(ClipNet<float>(1, 6, 16, 16, 8, init), ConfigError);  // length % 4
}

TEST_CASE("frame perceptual distance: zero at equality, gradient flows") {
  Rng rng(77);
  auto net = std::make_shared<FrameNet<double>>(1, 16, 16, 3, rng);
  auto phi = make_frame_perceptual<double>(net);

  Tensor<double> x({1, 1, 2, 16, 16});
  for (std::int64_t i = 0; i < x.size(); ++i)
    x.data()[i] = 0.9 * std::sin(0.3 * static_cast<double>(i));
  CHECK(phi(x, x).data()[0] == doctest::Approx(0.0).epsilon(1e-12));

  Tensor<double> x_hat = Tensor<double>::leaf_from(
      {1, 1, 2, 16, 16}, std::vector<double>(x.data(), x.data() + x.size()));
  for (std::int64_t i = 0; i < x_hat.size(); ++i) x_hat.data()[i] += 0.01 * ((i % 5) - 2);
  CHECK(phi(x, x_hat).data()[0] > 0.0);

  const double err =
      sivs::testing::max_grad_err([&] { return phi(x, x_hat); }, {&x_hat}, 1e-6);
  CHECK(err < 1e-4);
}
