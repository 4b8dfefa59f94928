#ifndef SIVS_NN_HPP
#define SIVS_NN_HPP

#include <cmath>
#include <string>

#include "sivs/adam.hpp"
#include "sivs/ops.hpp"
#include "sivs/rng.hpp"

// Small layer structs the models are assembled from. Weights are normal
// samples scaled by 1/sqrt(fan_in); pass init_gain = 0 to get a zero layer
// (used for the final layer of modulation subnets so they start neutral).

namespace sivs {

template <typename T>
std::vector<T> normal_init(Rng& rng, std::int64_t n, T scl) {
  std::vector<T> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<T>(rng.next_normal()) * scl;
  return v;
}

template <typename T>
struct Linear {
  Tensor<T> w, b;

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng, T init_gain = T(1)) {
    const T scl = init_gain / static_cast<T>(std::sqrt(static_cast<double>(in)));
    w = Tensor<T>::leaf_from({out, in}, normal_init<T>(rng, out * in, scl));
    b = Tensor<T>::leaf({out});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    pm.add(prefix + ".w", w);
    pm.add(prefix + ".b", b);
  }
};

template <typename T>
struct Conv2d {
  Tensor<T> k, b;
  std::array<std::int64_t, 2> stride{1, 1}, pad{0, 0};

  Conv2d() = default;
  Conv2d(std::int64_t ic, std::int64_t oc, std::int64_t ksize, std::array<std::int64_t, 2> st,
         std::array<std::int64_t, 2> pd, Rng& rng, T init_gain = T(1))
      : stride(st), pad(pd) {
    const std::int64_t fan = ic * ksize * ksize;
    const T scl = init_gain / static_cast<T>(std::sqrt(static_cast<double>(fan)));
    k = Tensor<T>::leaf_from({oc, ic, ksize, ksize}, normal_init<T>(rng, oc * fan, scl));
    b = Tensor<T>::leaf({oc});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, k, b, stride, pad); }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    pm.add(prefix + ".k", k);
    pm.add(prefix + ".b", b);
  }
};

template <typename T>
struct Conv3d {
  Tensor<T> k, b;
  std::array<std::int64_t, 3> stride{1, 1, 1}, pad{0, 0, 0};

  Conv3d() = default;
  Conv3d(std::int64_t ic, std::int64_t oc, std::int64_t ksize, std::array<std::int64_t, 3> st,
         std::array<std::int64_t, 3> pd, Rng& rng, T init_gain = T(1))
      : stride(st), pad(pd) {
    const std::int64_t fan = ic * ksize * ksize * ksize;
    const T scl = init_gain / static_cast<T>(std::sqrt(static_cast<double>(fan)));
    k = Tensor<T>::leaf_from({oc, ic, ksize, ksize, ksize}, normal_init<T>(rng, oc * fan, scl));
    b = Tensor<T>::leaf({oc});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, k, b, stride, pad); }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    pm.add(prefix + ".k", k);
    pm.add(prefix + ".b", b);
  }
};

// 1x1x1 convolution, used for residual skip projections.
template <typename T>
struct Conv3d1x1 {
  Tensor<T> k, b;

  Conv3d1x1() = default;
  Conv3d1x1(std::int64_t ic, std::int64_t oc, Rng& rng) {
    const T scl = T(1) / static_cast<T>(std::sqrt(static_cast<double>(ic)));
    k = Tensor<T>::leaf_from({oc, ic, 1, 1, 1}, normal_init<T>(rng, oc * ic, scl));
    b = Tensor<T>::leaf({oc});
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv3d(x, k, b, {1, 1, 1}, {0, 0, 0});
  }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    pm.add(prefix + ".k", k);
    pm.add(prefix + ".b", b);
  }
};

// Group normalization with learned per-channel affine.
template <typename T>
struct GroupNorm {
  Tensor<T> gamma, beta;
  std::int64_t groups = 1;

  GroupNorm() = default;
  GroupNorm(std::int64_t channels, std::int64_t groups_) : groups(groups_) {
    gamma = Tensor<T>::leaf_from({channels}, std::vector<T>(channels, T(1)));
    beta = Tensor<T>::leaf({channels});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, groups, gamma, beta); }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    pm.add(prefix + ".gamma", gamma);
    pm.add(prefix + ".beta", beta);
  }
};

}  // namespace sivs

#endif
