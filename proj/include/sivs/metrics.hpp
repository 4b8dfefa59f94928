#ifndef SIVS_METRICS_HPP
#define SIVS_METRICS_HPP

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "sivs/batches.hpp"
#include "sivs/linalg.hpp"
#include "sivs/nn.hpp"
#include "sivs/ops_nd.hpp"

// Distribution-level evaluation: Gaussian fits over learned clip/frame
// features, the Frechet distance between two fits, sample diversity, the
// small classifier backbones that supply those features, and the CSV the
// numbers are reported in. Feature math is double precision; the backbones
// train in float like every other model here.

namespace sivs {

// ---------------------------------------------------------------------------
// Gaussian statistics and Frechet distance

struct GaussianStats {
  std::int64_t f = 0;        // feature width
  std::int64_t count = 0;    // rows behind the fit
  std::vector<double> mean;  // [f]
  std::vector<double> cov;   // [f, f] row-major, symmetric (sample covariance)
};

// Fit from `n` rows of width `f` stored row-major.
GaussianStats fit_gaussian(const std::vector<double>& rows, std::int64_t n, std::int64_t f);

// |mu1-mu2|^2 + Tr(C1 + C2 - 2 sqrtm(sqrtm(C1) C2 sqrtm(C1))). When either
// covariance is near-singular (smallest eigenvalue under `ridge` relative to
// the largest), `ridge` * I is added to both so the square roots stay stable;
// well-conditioned inputs are evaluated exactly. Tiny negative results from
// roundoff (> -1e-6) clip to zero, anything lower throws.
double frechet_distance(const GaussianStats& a, const GaussianStats& b, double ridge = 1e-6);

// ---------------------------------------------------------------------------
// Diversity across samples sharing a start frame

enum class DistanceKind { euclidean, cosine };

DistanceKind parse_distance_kind(const std::string& s);

// groups[g] holds k_g feature rows (flat, k_g * f doubles) synthesized from
// one start frame; returns the mean over groups of the mean pairwise
// distance inside each group. Every group needs at least two rows.
double diversity(const std::vector<std::vector<double>>& groups, std::int64_t f,
                 DistanceKind kind = DistanceKind::euclidean);

// ---------------------------------------------------------------------------
// Metric reporting

struct MetricRow {
  std::string metric;
  std::string split;
  double value = 0.0;
  std::int64_t n = 0;         // sample count behind the number
  std::uint64_t seed = 0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::string& path);
std::string format_metrics_table(const std::vector<MetricRow>& rows);

// feature matrix [N, f] -> flat double rows for fit_gaussian
std::vector<double> feature_rows(const Tensor<float>& feats);

// ---------------------------------------------------------------------------
// Frame backbone: 2-D conv classifier over single frames. Two named feature
// layers ("conv2": mid-level conv activations, "feat": penultimate fc) feed
// the reconstruction perceptual loss and frame-level statistics.

template <typename T>
struct FrameNet {
  std::int64_t channels = 1, height = 16, width = 16;
  int n_classes = 2;
  Conv2d<T> c1, c2, c3;
  Linear<T> fc1, fc2;

  FrameNet() = default;
  FrameNet(std::int64_t ch, std::int64_t h, std::int64_t w, int classes, Rng& rng)
      : channels(ch), height(h), width(w), n_classes(classes) {
    if (h % 8 != 0 || w % 8 != 0)
      throw ConfigError("FrameNet: frame extents must be multiples of 8, got " +
                        std::to_string(h) + "x" + std::to_string(w));
    if (classes < 2) throw ConfigError("FrameNet: need at least 2 classes");
    c1 = Conv2d<T>(ch, 16, 3, {2, 2}, {1, 1}, rng);
    c2 = Conv2d<T>(16, 32, 3, {2, 2}, {1, 1}, rng);
    c3 = Conv2d<T>(32, 32, 3, {2, 2}, {1, 1}, rng);
    fc1 = Linear<T>(32 * (h / 8) * (w / 8), 64, rng);
    fc2 = Linear<T>(64, classes, rng);
  }

  struct Acts {
    Tensor<T> conv2;  // [B, 32 * (H/4) * (W/4)]
    Tensor<T> feat;   // [B, 64]
    Tensor<T> logits;
  };

  Acts run(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.shape[1] != channels || x.shape[2] != height ||
        x.shape[3] != width)
      throw ShapeError("FrameNet: want [B," + std::to_string(channels) + "," +
                       std::to_string(height) + "," + std::to_string(width) + "], got " +
                       shape_str(x.shape));
    const T sl = T(0.2);
    Acts a;
    Tensor<T> h = leaky_relu(c1(x), sl);
    h = leaky_relu(c2(h), sl);
    a.conv2 = reshape(h, {h.shape[0], h.size() / h.shape[0]});
    h = leaky_relu(c3(h), sl);
    h = reshape(h, {h.shape[0], h.size() / h.shape[0]});
    a.feat = leaky_relu(fc1(h), sl);
    a.logits = fc2(a.feat);
    return a;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return run(x).logits; }

  Tensor<T> features(const Tensor<T>& x, const std::string& layer) const {
    Acts a = run(x);
    if (layer == "conv2") return a.conv2;
    if (layer == "feat") return a.feat;
    throw ConfigError("FrameNet: unknown feature layer '" + layer +
                      "' (have: conv2, feat)");
  }

  static std::vector<std::string> feature_layers() { return {"conv2", "feat"}; }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    c1.collect(pm, prefix + ".c1");
    c2.collect(pm, prefix + ".c2");
    c3.collect(pm, prefix + ".c3");
    fc1.collect(pm, prefix + ".fc1");
    fc2.collect(pm, prefix + ".fc2");
  }
};

// ---------------------------------------------------------------------------
// Clip backbone: 3-D conv classifier over whole clips. The penultimate
// "feat" layer (width 64) is the feature space the Frechet video metrics
// and the diversity score live in.

template <typename T>
struct ClipNet {
  std::int64_t channels = 1, frames = 8, height = 16, width = 16;
  int n_classes = 2;
  Conv3d<T> c1, c2, c3;
  Linear<T> fc1, fc2;

  ClipNet() = default;
  ClipNet(std::int64_t ch, std::int64_t t, std::int64_t h, std::int64_t w, int classes,
          Rng& rng)
      : channels(ch), frames(t), height(h), width(w), n_classes(classes) {
    if (t % 4 != 0) throw ConfigError("ClipNet: clip length must be a multiple of 4");
    if (h % 8 != 0 || w % 8 != 0)
      throw ConfigError("ClipNet: frame extents must be multiples of 8");
    if (classes < 2) throw ConfigError("ClipNet: need at least 2 classes");
    c1 = Conv3d<T>(ch, 16, 3, {1, 2, 2}, {1, 1, 1}, rng);
    c2 = Conv3d<T>(16, 32, 3, {2, 2, 2}, {1, 1, 1}, rng);
    c3 = Conv3d<T>(32, 64, 3, {2, 2, 2}, {1, 1, 1}, rng);
    fc1 = Linear<T>(64, 64, rng);
    fc2 = Linear<T>(64, classes, rng);
  }

  struct Acts {
    Tensor<T> feat;  // [B, 64]
    Tensor<T> logits;
  };

  Acts run(const Tensor<T>& x) const {
    if (x.rank() != 5 || x.shape[1] != channels || x.shape[2] != frames ||
        x.shape[3] != height || x.shape[4] != width)
      throw ShapeError("ClipNet: want [B," + std::to_string(channels) + "," +
                       std::to_string(frames) + "," + std::to_string(height) + "," +
                       std::to_string(width) + "], got " + shape_str(x.shape));
    const T sl = T(0.2);
    Acts a;
    Tensor<T> h = leaky_relu(c1(x), sl);
    h = leaky_relu(c2(h), sl);
    h = leaky_relu(c3(h), sl);
    h = global_avg_pool(h);  // [B, 64]
    a.feat = leaky_relu(fc1(h), sl);
    a.logits = fc2(a.feat);
    return a;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return run(x).logits; }

  Tensor<T> features(const Tensor<T>& x, const std::string& layer) const {
    if (layer != "feat")
      throw ConfigError("ClipNet: unknown feature layer '" + layer + "' (have: feat)");
    return run(x).feat;
  }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    c1.collect(pm, prefix + ".c1");
    c2.collect(pm, prefix + ".c2");
    c3.collect(pm, prefix + ".c3");
    fc1.collect(pm, prefix + ".fc1");
    fc2.collect(pm, prefix + ".fc2");
  }
};

// ---------------------------------------------------------------------------
// Classifier training shared by both backbones

struct ClassifierCfg {
  int epochs = 30;
  std::int64_t batch = 32;
  float lr = 1e-3f;
  std::uint64_t seed = 0;  // shuffling only; build the net from its own stream
};

// argmax over each row of [B, K] logits
inline std::vector<int> argmax_rows(const Tensor<float>& logits) {
  const std::int64_t b = logits.shape[0], k = logits.shape[1];
  std::vector<int> out(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    const float* row = logits.data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

inline double label_accuracy(const std::vector<int>& pred, const std::vector<int>& want) {
  if (pred.size() != want.size() || pred.empty())
    throw ShapeError("label_accuracy: size mismatch");
  std::int64_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == want[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

template <typename Net>
std::vector<int> predict_classes(const Net& net, const Tensor<float>& x,
                                 std::int64_t batch = 64) {
  NoGradGuard ng;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(x.shape[0]));
  for (std::int64_t at = 0; at < x.shape[0]; at += batch) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = at; i < std::min(at + batch, x.shape[0]); ++i) idx.push_back(i);
    std::vector<int> part = argmax_rows(net(gather_rows(x, idx)));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// Minibatch cross-entropy training; returns held-out accuracy. Throws on
// labels that span fewer than two classes (nothing to separate), out-of-range
// labels, or row/label count mismatches.
template <typename Net>
double train_classifier(Net& net, ParamMap<float>& params, const Tensor<float>& train_x,
                        const std::vector<int>& train_y, const Tensor<float>& val_x,
                        const std::vector<int>& val_y, const ClassifierCfg& cfg) {
  const std::int64_t n = train_x.shape[0];
  if (n != static_cast<std::int64_t>(train_y.size()) ||
      val_x.shape[0] != static_cast<std::int64_t>(val_y.size()))
    throw ShapeError("train_classifier: row/label count mismatch");
  if (n < 2) throw DataError("train_classifier: need at least 2 training rows");
  std::vector<int> seen;
  for (int y : train_y) {
    if (y < 0 || y >= net.n_classes)
      throw DataError("train_classifier: label " + std::to_string(y) + " outside [0," +
                      std::to_string(net.n_classes) + ")");
    if (std::find(seen.begin(), seen.end(), y) == seen.end()) seen.push_back(y);
  }
  if (seen.size() < 2)
    throw DataError("train_classifier: training labels span a single class");

  Adam<float> opt(cfg.lr, 0.9f, 0.999f);
  Rng shuffle_rng(Rng::mix(cfg.seed, 0xBA7C4));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates on the epoch order
    for (std::int64_t i = n - 1; i > 0; --i) {
      const std::int64_t j = static_cast<std::int64_t>(
          shuffle_rng.next_below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (std::int64_t at = 0; at < n; at += cfg.batch) {
      std::vector<std::int64_t> idx(order.begin() + at,
                                    order.begin() + std::min(at + cfg.batch, n));
      Tape<float> tape;
      Tape<float>::Scope scope(tape);
      Tensor<float> loss = cross_entropy(net(gather_rows(train_x, idx)),
                                         gather_labels(train_y, idx));
      params.zero_grad();
      tape.backward(loss);
      opt.step(params);
    }
  }
  return label_accuracy(predict_classes(net, val_x), val_y);
}

// Named-layer features for N inputs, chunked so memory stays flat: [N, f].
template <typename Net>
Tensor<float> extract_features(const Net& net, const std::string& layer,
                               const Tensor<float>& x, std::int64_t batch = 64) {
  NoGradGuard ng;
  Tensor<float> out;
  std::int64_t fdim = -1, row = 0;
  for (std::int64_t at = 0; at < x.shape[0]; at += batch) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = at; i < std::min(at + batch, x.shape[0]); ++i) idx.push_back(i);
    Tensor<float> part = net.features(gather_rows(x, idx), layer);
    if (fdim < 0) {
      fdim = part.shape[1];
      out = Tensor<float>({x.shape[0], fdim});
    }
    std::memcpy(out.data() + row * fdim, part.data(),
                static_cast<std::size_t>(part.size()) * sizeof(float));
    row += part.shape[0];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Perceptual reconstruction distance: mean L1 gap across the frame
// backbone's named feature layers, frames folded into the batch. The
// backbone is frozen by virtue of its parameters not being in the stage-1
// optimizer; gradients still flow into the reconstruction.

template <typename T>
std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&)> make_frame_perceptual(
    std::shared_ptr<FrameNet<T>> net) {
  return [net](const Tensor<T>& x, const Tensor<T>& x_hat) {
    typename FrameNet<T>::Acts ax = net->run(merge_time(detach(x)));
    typename FrameNet<T>::Acts ah = net->run(merge_time(x_hat));
    Tensor<T> d = add(mean(abs(sub(ax.conv2, ah.conv2))), mean(abs(sub(ax.feat, ah.feat))));
    return scale(d, T(0.5));
  };
}

}  // namespace sivs

#endif
