#ifndef SIVS_VIDEO_AE_HPP
#define SIVS_VIDEO_AE_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sivs/nn.hpp"
#include "sivs/ops.hpp"
#include "sivs/ops_nd.hpp"
#include "sivs/rng.hpp"

// Stage-1 model: conditional video VAE. A 3-D residual encoder produces a
// diagonal Gaussian posterior over z; the decoder grows a video back from z
// while two modulations inject the conditioning: SPADE (spatial maps from
// the start frame x0) and ADAIN (per-channel scale/shift from z). A small
// 2-D frame autoencoder is trained alongside; its embedding later serves as
// the flow's conditioning. Discriminators and the composite loss terms live
// here too; adversarial terms are optional and off by default.

namespace sivs {

template <typename T>
struct VideoBatch {
  Tensor<T> data;  // [B,C,Tf,H,W], values in [-1,1]
  Tensor<T> x0;    // [B,C,H,W], the frame preceding data's first frame
};

struct VaeDims {
  std::int64_t channels = 1, frames = 8, height = 16, width = 16;
  std::int64_t d_z = 16;
  std::int64_t base = 32;       // decoder starts at 2*base channels
  std::int64_t dec_blocks = 3;  // video residual blocks
  std::int64_t embed_dim = 32;  // frame-embedding width
  bool use_x0 = true;           // SPADE conditioning on x0
  bool use_adain = true;        // ADAIN conditioning on z

  void validate() const {
    if (channels < 1 || frames < 1) throw ConfigError("vae: channels/frames must be >= 1");
    if (height % 8 != 0 || width % 8 != 0 || height < 8 || width < 8)
      throw ConfigError("vae: height/width must be multiples of 8");
    if (base % 8 != 0 || base < 8) throw ConfigError("vae: base width must be a multiple of 8");
    if (d_z < 2) throw ConfigError("vae: d_z must be >= 2");
    if (dec_blocks < 1 || dec_blocks > 6) throw ConfigError("vae: dec_blocks must be 1..6");
  }
};

namespace vae_detail {

// [B,C,H,W] nearest-neighbor upsample via the 3-D op on a singleton time axis
template <typename T>
Tensor<T> upsample_nearest2d(const Tensor<T>& x, std::int64_t f) {
  auto v = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)});
  auto u = upsample_nearest3d(v, 1, f, f);
  return reshape(u, {x.dim(0), x.dim(1), x.dim(2) * f, x.dim(3) * f});
}

// per-block upsample factors growing (t0,h0,w0) to exactly (tn,hn,wn):
// double every extent still short of its target; the tail blocks degrade to
// identity once an extent is reached.
inline std::vector<std::array<std::int64_t, 3>> upsample_schedule(
    std::array<std::int64_t, 3> from, std::array<std::int64_t, 3> to, std::int64_t blocks) {
  std::vector<std::array<std::int64_t, 3>> sched;
  auto cur = from;
  for (std::int64_t b = 0; b < blocks; ++b) {
    std::array<std::int64_t, 3> f{1, 1, 1};
    for (int i = 0; i < 3; ++i)
      if (cur[i] < to[i]) {
        f[i] = 2;
        cur[i] *= 2;
      }
    sched.push_back(f);
  }
  for (int i = 0; i < 3; ++i)
    if (cur[i] != to[i])
      throw ConfigError("vae: target extents not reachable by doubling from the bottleneck (" +
                        std::to_string(to[i]) + " from " + std::to_string(from[i]) + " in " +
                        std::to_string(blocks) + " blocks)");
  return sched;
}

}  // namespace vae_detail

// ---------------------------------------------------------------------------
// frame autoencoder (conditioning-embedding auxiliary)
// ---------------------------------------------------------------------------

template <typename T>
struct FrameEncoder {
  Conv2d<T> c1, c2, c3;
  Linear<T> fc;
  std::int64_t flat = 0;

  FrameEncoder() = default;
  FrameEncoder(const VaeDims& d, Rng& rng) {
    c1 = Conv2d<T>(d.channels + 2, 16, 3, {2, 2}, {1, 1}, rng);
    c2 = Conv2d<T>(16 + 2, 32, 3, {2, 2}, {1, 1}, rng);
    c3 = Conv2d<T>(32 + 2, 32, 3, {2, 2}, {1, 1}, rng);
    flat = 32 * (d.height / 8) * (d.width / 8);
    fc = Linear<T>(flat, d.embed_dim, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x0) const {
    auto h = leaky_relu(c1(with_coords(x0)), T(0.2));
    h = leaky_relu(c2(with_coords(h)), T(0.2));
    h = leaky_relu(c3(with_coords(h)), T(0.2));
    return fc(reshape(h, {x0.dim(0), flat}));
  }

  void collect(ParamMap<T>& pm, const std::string& p) {
    c1.collect(pm, p + ".c1");
    c2.collect(pm, p + ".c2");
    c3.collect(pm, p + ".c3");
    fc.collect(pm, p + ".fc");
  }
};

template <typename T>
struct FrameDecoder {
  Linear<T> fc;
  Conv2d<T> c1, c2, c3;
  std::int64_t h0 = 0, w0 = 0;

  FrameDecoder() = default;
  FrameDecoder(const VaeDims& d, Rng& rng) : h0(d.height / 8), w0(d.width / 8) {
    fc = Linear<T>(d.embed_dim, 32 * h0 * w0, rng);
    c1 = Conv2d<T>(32 + 2, 16, 3, {1, 1}, {1, 1}, rng);
    c2 = Conv2d<T>(16 + 2, 16, 3, {1, 1}, {1, 1}, rng);
    c3 = Conv2d<T>(16 + 2, d.channels, 3, {1, 1}, {1, 1}, rng);
  }

  Tensor<T> operator()(const Tensor<T>& e) const {
    auto h = reshape(fc(e), {e.dim(0), 32, h0, w0});
    h = leaky_relu(c1(with_coords(vae_detail::upsample_nearest2d(h, 2))), T(0.2));
    h = leaky_relu(c2(with_coords(vae_detail::upsample_nearest2d(h, 2))), T(0.2));
    return sivs::tanh(c3(with_coords(vae_detail::upsample_nearest2d(h, 2))));
  }

  void collect(ParamMap<T>& pm, const std::string& p) {
    fc.collect(pm, p + ".fc");
    c1.collect(pm, p + ".c1");
    c2.collect(pm, p + ".c2");
    c3.collect(pm, p + ".c3");
  }
};

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

template <typename T>
struct EncBlock3d {
  GroupNorm<T> n1, n2;
  Conv3d<T> conv1, conv2, skip;

  EncBlock3d() = default;
  EncBlock3d(std::int64_t ic, std::int64_t oc, std::array<std::int64_t, 3> stride, Rng& rng) {
    n1 = GroupNorm<T>(ic, 4);
    conv1 = Conv3d<T>(ic + 3, oc, 3, stride, {1, 1, 1}, rng);
    n2 = GroupNorm<T>(oc, 4);
    conv2 = Conv3d<T>(oc + 3, oc, 3, {1, 1, 1}, {1, 1, 1}, rng);
    skip = Conv3d<T>(ic, oc, 1, stride, {0, 0, 0}, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto h = conv1(with_coords(leaky_relu(n1(x), T(0.2))));
    h = conv2(with_coords(leaky_relu(n2(h), T(0.2))));
    return add(h, skip(x));
  }

  void collect(ParamMap<T>& pm, const std::string& p) {
    n1.collect(pm, p + ".n1");
    conv1.collect(pm, p + ".conv1");
    n2.collect(pm, p + ".n2");
    conv2.collect(pm, p + ".conv2");
    skip.collect(pm, p + ".skip");
  }
};

template <typename T>
struct VideoEncoder {
  Conv3d<T> stem;
  std::vector<EncBlock3d<T>> blocks;
  GroupNorm<T> out_norm;
  Linear<T> fc_mu, fc_logvar;

  VideoEncoder() = default;
  VideoEncoder(const VaeDims& d, Rng& rng) {
    const std::int64_t c1 = d.base / 2, c2 = d.base, c3 = 2 * d.base;
    stem = Conv3d<T>(d.channels + 3, c1, 3, {1, 1, 1}, {1, 1, 1}, rng);
    std::array<std::int64_t, 3> ext{d.frames, d.height, d.width};
    const std::int64_t chans[4] = {c1, c2, c3, c3};
    for (int i = 0; i < 3; ++i) {
      std::array<std::int64_t, 3> st{1, 1, 1};
      for (int k = 0; k < 3; ++k)
        if (ext[k] > 1) {
          st[k] = 2;
          ext[k] = (ext[k] + 1) / 2;
        }
      blocks.emplace_back(chans[i], chans[i + 1], st, rng);
    }
    out_norm = GroupNorm<T>(c3, 4);
    fc_mu = Linear<T>(c3, d.d_z, rng);
    fc_logvar = Linear<T>(c3, d.d_z, rng);
  }

  // returns (mu, log_var), each [B,d_z]
  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& video) const {
    auto h = stem(with_coords(video));
    check_finite_values(h, "encoder stage 0 (stem)");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      h = blocks[i](h);
      check_finite_values(h, "encoder stage " + std::to_string(i + 1));
    }
    auto p = global_avg_pool(leaky_relu(out_norm(h), T(0.2)));
    return {fc_mu(p), fc_logvar(p)};
  }

  void collect(ParamMap<T>& pm, const std::string& p) {
    stem.collect(pm, p + ".stem");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(pm, p + ".block" + std::to_string(i));
    out_norm.collect(pm, p + ".out_norm");
    fc_mu.collect(pm, p + ".fc_mu");
    fc_logvar.collect(pm, p + ".fc_logvar");
  }
};

// ---------------------------------------------------------------------------
// decoder
// ---------------------------------------------------------------------------

// Residual block with two conditioning paths. SPADE: group-normalize (no
// affine), then scale/shift per position with maps predicted from the
// pooled start frame; the maps broadcast over time. ADAIN: instance-
// normalize, then scale/shift per channel with values predicted from z.
// Both prediction heads are zero-initialized, so a fresh block computes the
// plain norm -> lrelu -> conv path exactly. Each conv sees coordinate
// channels: the per-channel ADAIN scale on a time ramp yields velocity
// terms, which combine with spatial ramps to place content along a
// trajectory instead of at a resolution-limited average position.
template <typename T>
struct VideoResBlock {
  Conv2d<T> sp_shared, sp_gamma, sp_beta;
  Conv3d<T> conv1, conv2;
  Linear<T> ada_fc;
  Conv3d1x1<T> skip;
  std::int64_t oc = 0;
  bool use_x0 = true, use_adain = true;

  VideoResBlock() = default;
  VideoResBlock(std::int64_t ic, std::int64_t oc_, std::int64_t x0_channels, std::int64_t d_z,
                std::int64_t sp_hidden, bool with_x0, bool with_adain, Rng& rng)
      : oc(oc_), use_x0(with_x0), use_adain(with_adain) {
    if (use_x0) {
      sp_shared = Conv2d<T>(x0_channels + 2, sp_hidden, 3, {1, 1}, {1, 1}, rng);
      sp_gamma = Conv2d<T>(sp_hidden, ic, 3, {1, 1}, {1, 1}, rng, T(0));
      sp_beta = Conv2d<T>(sp_hidden, ic, 3, {1, 1}, {1, 1}, rng, T(0));
    }
    conv1 = Conv3d<T>(ic + 3, oc, 3, {1, 1, 1}, {1, 1, 1}, rng);
    if (use_adain) ada_fc = Linear<T>(d_z, 2 * oc, rng, T(0));
    conv2 = Conv3d<T>(oc + 3, oc, 3, {1, 1, 1}, {1, 1, 1}, rng);
    skip = Conv3d1x1<T>(ic, oc, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& x0, const Tensor<T>& z) const {
    auto h = group_norm(x, 4, Tensor<T>{}, Tensor<T>{});
    if (use_x0) {
      const std::int64_t kh = x0.dim(2) / x.dim(3), kw = x0.dim(3) / x.dim(4);
      if (kh != kw || kh * x.dim(3) != x0.dim(2))
        throw ShapeError("spade: start frame extent " + std::to_string(x0.dim(2)) +
                         " not an integer multiple of feature extent " + std::to_string(x.dim(3)));
      auto x0d = kh > 1 ? avg_pool2d(x0, kh) : x0;
      auto m = leaky_relu(sp_shared(with_coords(x0d)), T(0.2));
      auto gamma = affine(sp_gamma(m), T(1), T(1));  // 1 + predicted gamma
      h = spatial_affine(h, gamma, sp_beta(m));
    }
    h = conv1(with_coords(leaky_relu(h, T(0.2))));
    h = instance_norm(h);
    if (use_adain) {
      auto [s, t] = split_cols(ada_fc(z), oc);
      h = per_channel_affine(h, affine(s, T(1), T(1)), t);  // 1 + predicted scale
    }
    h = conv2(with_coords(leaky_relu(h, T(0.2))));
    return add(h, skip(x));
  }

  void collect(ParamMap<T>& pm, const std::string& p) {
    if (use_x0) {
      sp_shared.collect(pm, p + ".sp_shared");
      sp_gamma.collect(pm, p + ".sp_gamma");
      sp_beta.collect(pm, p + ".sp_beta");
    }
    conv1.collect(pm, p + ".conv1");
    if (use_adain) ada_fc.collect(pm, p + ".ada_fc");
    conv2.collect(pm, p + ".conv2");
    skip.collect(pm, p + ".skip");
  }
};

template <typename T>
struct VideoDecoder {
  Linear<T> fc_in;
  std::vector<VideoResBlock<T>> blocks;
  std::vector<std::array<std::int64_t, 3>> up;
  GroupNorm<T> out_norm;
  Conv3d<T> out_conv;
  std::int64_t c0 = 0;
  std::array<std::int64_t, 3> bottleneck{2, 2, 2};

  VideoDecoder() = default;
  VideoDecoder(const VaeDims& d, Rng& rng) {
    c0 = 2 * d.base;
    up = vae_detail::upsample_schedule(bottleneck, {d.frames, d.height, d.width}, d.dec_blocks);
    fc_in = Linear<T>(d.d_z, c0 * bottleneck[0] * bottleneck[1] * bottleneck[2], rng);
    std::int64_t ic = c0;
    const std::int64_t floor_c = d.base / 2;
    for (std::int64_t i = 0; i < d.dec_blocks; ++i) {
      const std::int64_t oc = std::max(floor_c, ic / 2);
      blocks.emplace_back(ic, oc, d.channels, d.d_z, d.base / 2, d.use_x0, d.use_adain, rng);
      ic = oc;
    }
    out_norm = GroupNorm<T>(ic, 4);
    out_conv = Conv3d<T>(ic + 3, d.channels, 3, {1, 1, 1}, {1, 1, 1}, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x0, const Tensor<T>& z) const {
    auto h = reshape(fc_in(z), {z.dim(0), c0, bottleneck[0], bottleneck[1], bottleneck[2]});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      h = blocks[i](h, x0, z);
      if (up[i][0] != 1 || up[i][1] != 1 || up[i][2] != 1)
        h = upsample_nearest3d(h, up[i][0], up[i][1], up[i][2]);
      check_finite_values(h, "decoder block " + std::to_string(i));
    }
    return sivs::tanh(out_conv(with_coords(leaky_relu(out_norm(h), T(0.2)))));
  }

  void collect(ParamMap<T>& pm, const std::string& p) {
    fc_in.collect(pm, p + ".fc_in");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(pm, p + ".block" + std::to_string(i));
    out_norm.collect(pm, p + ".out_norm");
    out_conv.collect(pm, p + ".out_conv");
  }
};

// the full stage-1 model set
template <typename T>
struct VideoVae {
  VaeDims dims;
  VideoEncoder<T> enc;
  VideoDecoder<T> dec;
  FrameEncoder<T> fenc;
  FrameDecoder<T> fdec;

  VideoVae() = default;
  VideoVae(const VaeDims& d, Rng& rng) : dims(d) {
    d.validate();
    enc = VideoEncoder<T>(d, rng);
    dec = VideoDecoder<T>(d, rng);
    fenc = FrameEncoder<T>(d, rng);
    fdec = FrameDecoder<T>(d, rng);
  }

  void collect(ParamMap<T>& pm, const std::string& p = "vae") {
    enc.collect(pm, p + ".enc");
    dec.collect(pm, p + ".dec");
    fenc.collect(pm, p + ".fenc");
    fdec.collect(pm, p + ".fdec");
  }
};

// ---------------------------------------------------------------------------
// discriminators
// ---------------------------------------------------------------------------

template <typename T>
struct DiscOut {
  Tensor<T> logits;                 // [N, P] patch scores or [N, 1]
  std::vector<Tensor<T>> features;  // intermediate maps for feature matching
};

// per-frame patch discriminator (no normalization layers)
template <typename T>
struct FrameDisc {
  Conv2d<T> c1, c2, c3;

  FrameDisc() = default;
  FrameDisc(std::int64_t channels, Rng& rng) {
    c1 = Conv2d<T>(channels, 16, 3, {2, 2}, {1, 1}, rng);
    c2 = Conv2d<T>(16, 32, 3, {2, 2}, {1, 1}, rng);
    c3 = Conv2d<T>(32, 1, 3, {1, 1}, {1, 1}, rng);
  }

  // consumes a video [B,C,Tf,H,W]; every frame is scored independently
  DiscOut<T> operator()(const Tensor<T>& video) const {
    auto frames = merge_time(video);
    auto f1 = leaky_relu(c1(frames), T(0.2));
    auto f2 = leaky_relu(c2(f1), T(0.2));
    auto p = c3(f2);
    return {reshape(p, {p.dim(0), p.dim(2) * p.dim(3)}), {f1, f2}};
  }

  void collect(ParamMap<T>& pm, const std::string& p) {
    c1.collect(pm, p + ".c1");
    c2.collect(pm, p + ".c2");
    c3.collect(pm, p + ".c3");
  }
};

// whole-clip discriminator (no normalization layers)
template <typename T>
struct ClipDisc {
  Conv3d<T> c1, c2, c3;
  Linear<T> fc;

  ClipDisc() = default;
  ClipDisc(std::int64_t channels, Rng& rng) {
    c1 = Conv3d<T>(channels, 16, 3, {1, 2, 2}, {1, 1, 1}, rng);
    c2 = Conv3d<T>(16, 32, 3, {2, 2, 2}, {1, 1, 1}, rng);
    c3 = Conv3d<T>(32, 64, 3, {2, 2, 2}, {1, 1, 1}, rng);
    fc = Linear<T>(64, 1, rng);
  }

  DiscOut<T> operator()(const Tensor<T>& video) const {
    auto f1 = leaky_relu(c1(video), T(0.2));
    auto f2 = leaky_relu(c2(f1), T(0.2));
    auto f3 = leaky_relu(c3(f2), T(0.2));
    return {fc(global_avg_pool(f3)), {f1, f2, f3}};
  }

  void collect(ParamMap<T>& pm, const std::string& p) {
    c1.collect(pm, p + ".c1");
    c2.collect(pm, p + ".c2");
    c3.collect(pm, p + ".c3");
    fc.collect(pm, p + ".fc");
  }
};

template <typename T>
struct DiscriminatorPair {
  FrameDisc<T> d_spatial;
  ClipDisc<T> d_temporal;

  DiscriminatorPair() = default;
  DiscriminatorPair(std::int64_t channels, Rng& rng)
      : d_spatial(channels, rng), d_temporal(channels, rng) {}

  void collect(ParamMap<T>& pm, const std::string& p = "disc") {
    d_spatial.collect(pm, p + ".d_spatial");
    d_temporal.collect(pm, p + ".d_temporal");
  }
};

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// z = mu + exp(log_var / 2) * eps with a fixed eps tensor
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& log_var, const Tensor<T>& eps) {
  return add(mu, mul(exp(scale(log_var, T(0.5))), eps));
}

template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& log_var, Rng& rng) {
  std::vector<T> e(static_cast<std::size_t>(mu.size()));
  for (auto& v : e) v = static_cast<T>(rng.next_normal());
  return reparameterize(mu, log_var, Tensor<T>::from(mu.shape, std::move(e)));
}

// KL(q || N(0,I)) averaged over the batch:
//   (1/2B) sum_b sum_d (mu^2 + exp(lv) - 1 - lv)
template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& mu, const Tensor<T>& log_var) {
  const T b = static_cast<T>(mu.dim(0)), d = static_cast<T>(mu.dim(1));
  auto s = sub(add(sumsq(mu), sum(exp(log_var))), sum(log_var));
  return affine(s, T(0.5) / b, -d / T(2));
}

template <typename T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b) {
  return mean(abs(sub(a, b)));
}

// hinge objectives; scores may be patch grids or scalars
template <typename T>
std::pair<Tensor<T>, Tensor<T>> hinge_losses(const Tensor<T>& real_scores,
                                             const Tensor<T>& fake_scores) {
  auto d_loss = add(mean(relu(affine(real_scores, T(-1), T(1)))),
                    mean(relu(affine(fake_scores, T(1), T(1)))));
  auto g_loss = neg(mean(fake_scores));
  return {d_loss, g_loss};
}

// mean over layers of the mean absolute feature difference
template <typename T>
Tensor<T> feature_matching(const std::vector<Tensor<T>>& real_feats,
                           const std::vector<Tensor<T>>& fake_feats) {
  if (real_feats.size() != fake_feats.size() || real_feats.empty())
    throw ShapeError("feature_matching: layer lists differ or are empty");
  Tensor<T> acc = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < real_feats.size(); ++i)
    acc = add(acc, l1_distance(real_feats[i], fake_feats[i]));
  return scale(acc, T(1) / static_cast<T>(real_feats.size()));
}

// Exact penalty value lambda_gp * mean_b |grad_x sum(D(x_b))|^2 computed by a
// backward pass with the input as a leaf. The result is a plain number (no
// gradient path to discriminator parameters); training uses the
// finite-difference surrogate below for that.
template <typename T, typename DiscFn>
T gradient_penalty_exact(DiscFn disc, const Tensor<T>& x_real, T lambda_gp) {
  auto x = Tensor<T>::leaf_from(x_real.shape, x_real.vec());
  Tape<T> tape;
  {
    typename Tape<T>::Scope scope(tape);
    auto score = sum(disc(x).logits);
    if (!score.tracked()) return T(0);  // score ignores x entirely
    tape.backward(score);
  }
  const std::int64_t b = x.dim(0), per = x.size() / x.dim(0);
  T acc = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    T s = 0;
    for (std::int64_t j = 0; j < per; ++j) {
      const T g = x.grad()[i * per + j];
      s += g * g;
    }
    acc += s;
  }
  return lambda_gp * acc / static_cast<T>(b);
}

// [N,P] patch scores -> [N,1] per-sample sums (identity for [N,1])
template <typename T>
Tensor<T> rowsum_scores(const Tensor<T>& logits) {
  if (logits.dim(1) == 1) return logits;
  std::vector<T> ones(static_cast<std::size_t>(logits.dim(1)), T(1));
  return matmul(logits, Tensor<T>::from({logits.dim(1), 1}, std::move(ones)));
}

// Differentiable penalty estimate: for a probe direction v ~ N(0,I),
// E_v[((sum D(x+hv) - sum D(x))/h)^2] per sample equals |grad_x|^2 + O(h).
// Both evaluations run on the live tape, so the parameter gradient of the
// squared directional derivative is available without double backward.
template <typename T, typename DiscFn>
Tensor<T> gradient_penalty_probe(DiscFn disc, const Tensor<T>& x_real, const Tensor<T>& probe,
                                 T lambda_gp, T h) {
  std::vector<T> step(probe.vec());
  for (auto& e : step) e *= h;
  auto shifted = add(x_real, Tensor<T>::from(probe.shape, std::move(step)));
  auto d0 = rowsum_scores(disc(x_real).logits);
  auto d1 = rowsum_scores(disc(shifted).logits);
  auto slope = scale(sub(d1, d0), T(1) / h);
  return scale(mean(mul(slope, slope)), lambda_gp);
}

// stage-1 composite objective; adversarial inputs are optional
template <typename T>
struct Stage1Parts {
  Tensor<T> total, l1, perceptual, kl, g_spatial, g_temporal, fm;
};

struct Stage1Weights {
  double lambda = 10.0, lambda_f = 10.0, beta = 1e-5;
  bool gan = false;
};

// perceptual distance callback: (X, X_hat) -> scalar tensor
template <typename T>
using PerceptualFn = std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&)>;

template <typename T>
Stage1Parts<T> stage1_loss(const Tensor<T>& x, const Tensor<T>& x_hat, const Tensor<T>& mu,
                           const Tensor<T>& log_var, const Stage1Weights& w,
                           const PerceptualFn<T>& perceptual = nullptr,
                           const DiscriminatorPair<T>* disc = nullptr) {
  Stage1Parts<T> parts;
  parts.l1 = l1_distance(x, x_hat);
  parts.perceptual = perceptual ? perceptual(x, x_hat) : Tensor<T>::scalar(T(0));
  parts.kl = kl_divergence(mu, log_var);
  parts.total = add(scale(add(parts.l1, parts.perceptual), static_cast<T>(w.lambda)),
                    scale(parts.kl, static_cast<T>(w.beta)));
  if (w.gan) {
    if (!disc) throw ConfigError("stage1_loss: adversarial terms enabled without discriminators");
    auto fake_s = disc->d_spatial(x_hat);
    auto fake_t = disc->d_temporal(x_hat);
    auto real_s = disc->d_spatial(x);
    auto real_t = disc->d_temporal(x);
    parts.g_spatial = neg(mean(fake_s.logits));
    parts.g_temporal = neg(mean(fake_t.logits));
    parts.fm = scale(add(feature_matching(real_s.features, fake_s.features),
                         feature_matching(real_t.features, fake_t.features)),
                     T(0.5));
    parts.total = add(parts.total, add(add(parts.g_spatial, parts.g_temporal),
                                       scale(parts.fm, static_cast<T>(w.lambda_f))));
  } else {
    parts.g_spatial = Tensor<T>::scalar(T(0));
    parts.g_temporal = Tensor<T>::scalar(T(0));
    parts.fm = Tensor<T>::scalar(T(0));
  }
  return parts;
}

}  // namespace sivs

#endif
