#ifndef SIVS_FLOW_HPP
#define SIVS_FLOW_HPP

#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "sivs/nn.hpp"
#include "sivs/ops.hpp"
#include "sivs/rng.hpp"

// Conditional invertible network mapping a Gaussian residual nu to a video
// latent z given a conditioning vector. Built from repeated units of
// (actnorm, conditional affine coupling, fixed shuffle).
//
// Directions: forward runs nu -> z (sampling), inverse runs z -> nu
// (normalizing; this is the direction the likelihood is computed in). Both
// return the log-determinant of their own Jacobian summed over the batch,
// so forward and inverse log-dets of matching points are exact negatives.

namespace sivs {

template <typename T>
struct ActNorm {
  Tensor<T> log_scale, bias;  // [d]
  bool initialized = false;

  ActNorm() = default;
  explicit ActNorm(std::int64_t d) {
    log_scale = Tensor<T>::leaf({d});
    bias = Tensor<T>::leaf({d});
  }

  // y = exp(log_scale) * x + bias
  Tensor<T> forward(const Tensor<T>& x) const {
    return rowwise_affine(x, exp(log_scale), bias);
  }

  // x = (y - bias) * exp(-log_scale), written as one rowwise affine
  Tensor<T> inverse(const Tensor<T>& y) const {
    auto inv_scale = exp(neg(log_scale));
    return rowwise_affine(y, inv_scale, neg(mul(bias, inv_scale)));
  }

  // per-sample log-det of the forward direction
  Tensor<T> logdet() const { return sum(log_scale); }

  // Data-dependent init from the first normalizing-direction batch: set the
  // parameters so inverse(y) is standardized per dimension. A variance floor
  // guards degenerate dimensions (warned once, then proceeds).
  void initialize(const Tensor<T>& y) {
    const std::int64_t b = y.dim(0), d = y.dim(1);
    for (std::int64_t j = 0; j < d; ++j) {
      T m = 0;
      for (std::int64_t i = 0; i < b; ++i) m += y.data()[i * d + j];
      m /= static_cast<T>(b);
      T var = 0;
      for (std::int64_t i = 0; i < b; ++i) {
        const T c = y.data()[i * d + j] - m;
        var += c * c;
      }
      var /= static_cast<T>(b);
      if (var < T(1e-6)) {
        std::cerr << "actnorm init: variance floor hit on dim " << j << "\n";
        var = T(1e-6);
      }
      bias.data()[j] = m;
      log_scale.data()[j] = T(0.5) * std::log(var);
    }
    initialized = true;
  }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    pm.add(prefix + ".log_scale", log_scale);
    pm.add(prefix + ".bias", bias);
  }
};

// Affine coupling: the first half passes through and parameterizes, together
// with the conditioning vector, an elementwise affine map of the second
// half. The raw log-scale is soft-clamped to (-alpha, alpha) through a tanh.
template <typename T>
struct Coupling {
  Linear<T> fc1, fc2;
  std::int64_t d_half = 0;
  T clamp_alpha = T(5);

  Coupling() = default;
  Coupling(std::int64_t d, std::int64_t d_cond, std::int64_t hidden, Rng& rng)
      : d_half(d / 2) {
    fc1 = Linear<T>(d_half + d_cond, hidden, rng);
    // zero last layer: the coupling starts as the identity
    fc2 = Linear<T>(hidden, 2 * d_half, rng, T(0));
  }

  // (s_eff, t) from the passive half and the conditioning
  std::pair<Tensor<T>, Tensor<T>> subnet(const Tensor<T>& x1, const Tensor<T>& cond) const {
    auto h = leaky_relu(fc1(concat_cols(x1, cond)), T(0.2));
    auto st = fc2(h);
    auto [s_raw, t] = split_cols(st, d_half);
    auto s_eff = scale(sivs::tanh(scale(s_raw, T(1) / clamp_alpha)), clamp_alpha);
    return {s_eff, t};
  }

  // returns (y, batch-summed log-det)
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& x, const Tensor<T>& cond) const {
    auto [x1, x2] = split_cols(x, d_half);
    auto [s, t] = subnet(x1, cond);
    auto y2 = add(mul(x2, exp(s)), t);
    return {concat_cols(x1, y2), sum(s)};
  }

  std::pair<Tensor<T>, Tensor<T>> inverse(const Tensor<T>& y, const Tensor<T>& cond) const {
    auto [y1, y2] = split_cols(y, d_half);
    auto [s, t] = subnet(y1, cond);
    auto x2 = mul(sub(y2, t), exp(neg(s)));
    return {concat_cols(y1, x2), neg(sum(s))};
  }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    fc1.collect(pm, prefix + ".fc1");
    fc2.collect(pm, prefix + ".fc2");
  }
};

template <typename T>
struct FlowUnit {
  ActNorm<T> actnorm;
  Coupling<T> coupling;
  std::vector<int> perm, inv_perm;
};

template <typename T>
struct FlowStack {
  std::int64_t d = 0, d_cond = 0;
  std::vector<FlowUnit<T>> units;

  FlowStack() = default;
  FlowStack(std::int64_t d_, std::int64_t d_cond_, int n_blocks, int flows_per_block,
            std::int64_t hidden, Rng& rng)
      : d(d_), d_cond(d_cond_) {
    if (d % 2 != 0) throw ShapeError("FlowStack: latent dimension must be even");
    units.resize(static_cast<std::size_t>(n_blocks) * flows_per_block);
    for (auto& u : units) {
      u.actnorm = ActNorm<T>(d);
      u.coupling = Coupling<T>(d, d_cond, hidden, rng);
      u.perm.resize(static_cast<std::size_t>(d));
      for (std::int64_t i = 0; i < d; ++i) u.perm[i] = static_cast<int>(i);
      for (std::int64_t i = d - 1; i > 0; --i)
        std::swap(u.perm[i], u.perm[rng.next_below(static_cast<std::uint64_t>(i + 1))]);
      u.inv_perm.resize(u.perm.size());
      for (std::int64_t i = 0; i < d; ++i) u.inv_perm[u.perm[i]] = static_cast<int>(i);
    }
  }

  void check_inputs(const Tensor<T>& x, const Tensor<T>& cond) const {
    if (x.rank() != 2 || x.dim(1) != d)
      throw ShapeError("flow: expected [B," + std::to_string(d) + "], got " +
                       shape_str(x.shape));
    if (cond.rank() != 2 || cond.dim(0) != x.dim(0) || cond.dim(1) != d_cond)
      throw ShapeError("flow: conditioning shape " + shape_str(cond.shape) +
                       " does not match [B," + std::to_string(d_cond) + "]");
  }

  // nu -> z; returns (z, batch-summed log-det)
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& nu, const Tensor<T>& cond) const {
    check_inputs(nu, cond);
    Tensor<T> x = nu;
    Tensor<T> logdet = Tensor<T>::scalar(T(0));
    const T bsz = static_cast<T>(nu.dim(0));
    for (std::size_t i = 0; i < units.size(); ++i) {
      const auto& u = units[i];
      x = u.actnorm.forward(x);
      logdet = add(logdet, scale(u.actnorm.logdet(), bsz));
      auto [y, ld] = u.coupling.forward(x, cond);
      x = permute_cols(y, u.perm);
      logdet = add(logdet, ld);
      check_finite_values(x, "flow forward: unit " + std::to_string(i));
    }
    return {x, logdet};
  }

  // z -> nu; returns (nu, batch-summed log-det)
  std::pair<Tensor<T>, Tensor<T>> inverse(const Tensor<T>& z, const Tensor<T>& cond) const {
    check_inputs(z, cond);
    Tensor<T> x = z;
    Tensor<T> logdet = Tensor<T>::scalar(T(0));
    const T bsz = static_cast<T>(z.dim(0));
    for (std::size_t i = units.size(); i-- > 0;) {
      const auto& u = units[i];
      x = permute_cols(x, u.inv_perm);
      auto [y, ld] = u.coupling.inverse(x, cond);
      logdet = add(logdet, ld);
      x = u.actnorm.inverse(y);
      logdet = sub(logdet, scale(u.actnorm.logdet(), bsz));
      check_finite_values(x, "flow inverse: unit " + std::to_string(i));
    }
    return {x, logdet};
  }

  // Runs a normalizing pass, initializing every actnorm from the batch that
  // reaches it. Call once with a representative batch before training.
  void initialize_actnorm(const Tensor<T>& z, const Tensor<T>& cond) {
    NoGradGuard ng;
    check_inputs(z, cond);
    Tensor<T> x = z;
    for (auto it = units.rbegin(); it != units.rend(); ++it) {
      x = permute_cols(x, it->inv_perm);
      auto y = it->coupling.inverse(x, cond).first;
      it->actnorm.initialize(y);
      x = it->actnorm.inverse(y);
    }
  }

  bool actnorm_initialized() const {
    for (const auto& u : units)
      if (!u.actnorm.initialized) return false;
    return !units.empty();
  }

  void collect(ParamMap<T>& pm, const std::string& prefix) {
    for (std::size_t i = 0; i < units.size(); ++i) {
      const std::string p = prefix + ".unit" + std::to_string(i);
      units[i].actnorm.collect(pm, p + ".actnorm");
      units[i].coupling.collect(pm, p + ".coupling");
    }
  }
};

// Exact negative log-likelihood of z under the flow-transformed standard
// normal, averaged over the batch:
//   mean_b [ 0.5 |nu_b|^2 - log|det J_inv(z_b)| ] + (d/2) log(2 pi)
template <typename T>
Tensor<T> flow_nll(const FlowStack<T>& flow, const Tensor<T>& z, const Tensor<T>& cond) {
  auto [nu, logdet] = flow.inverse(z, cond);
  const T invb = T(1) / static_cast<T>(z.dim(0));
  auto fit = scale(sub(scale(sumsq(nu), T(0.5)), logdet), invb);
  const T c = static_cast<T>(flow.d) / T(2) * std::log(T(2) * static_cast<T>(std::numbers::pi));
  auto out = affine(fit, T(1), c);
  if (!std::isfinite(out.value()))
    throw NumericError("flow nll: non-finite loss (|nu|^2 or log-det overflowed)");
  return out;
}

// Draws nu ~ N(0, I) rows from `rng` and maps them through the flow.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> sample_latent(const FlowStack<T>& flow, const Tensor<T>& cond,
                                              Rng& rng) {
  const std::int64_t b = cond.dim(0);
  std::vector<T> nu(static_cast<std::size_t>(b * flow.d));
  for (auto& v : nu) v = static_cast<T>(rng.next_normal());
  Tensor<T> nut = Tensor<T>::from({b, flow.d}, std::move(nu));
  return {nut, flow.forward(nut, cond).first};
}

// Conditioning assembly: frame embedding, optionally extended with a control
// vector (one-hot attribute bins).
template <typename T>
Tensor<T> build_conditioning(const Tensor<T>& embed, const Tensor<T>& control) {
  if (!control.defined()) return embed;
  return concat_cols(embed, control);
}

}  // namespace sivs

#endif
