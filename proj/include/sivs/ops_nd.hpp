#ifndef SIVS_OPS_ND_HPP
#define SIVS_OPS_ND_HPP

// Convolution, normalization, pooling and the broadcasted affine ops used by
// the video networks. Included at the end of ops.hpp.

namespace sivs {

namespace conv_detail {

struct Ext2d {
  std::int64_t C, H, W, kh, kw, sh, sw, ph, pw, OH, OW;
  std::int64_t patch() const { return C * kh * kw; }
  std::int64_t cols() const { return OH * OW; }
};

struct Ext3d {
  std::int64_t C, D, H, W, kd, kh, kw, sd, sh, sw, pd, ph, pw, OD, OH, OW;
  std::int64_t patch() const { return C * kd * kh * kw; }
  std::int64_t cols() const { return OD * OH * OW; }
};

inline std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  const std::int64_t o = (in + 2 * p - k) / s + 1;
  if (o <= 0) throw ShapeError("conv: non-positive output extent");
  return o;
}

template <typename T>
void im2col(const T* x, const Ext2d& e, T* cols) {
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < e.C; ++c)
    for (std::int64_t i = 0; i < e.kh; ++i)
      for (std::int64_t j = 0; j < e.kw; ++j, ++r) {
        T* dst = cols + r * e.cols();
        for (std::int64_t oh = 0; oh < e.OH; ++oh) {
          const std::int64_t ih = oh * e.sh - e.ph + i;
          for (std::int64_t ow = 0; ow < e.OW; ++ow) {
            const std::int64_t iw = ow * e.sw - e.pw + j;
            dst[oh * e.OW + ow] =
                (ih >= 0 && ih < e.H && iw >= 0 && iw < e.W) ? x[(c * e.H + ih) * e.W + iw] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, const Ext2d& e, T* gx) {
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < e.C; ++c)
    for (std::int64_t i = 0; i < e.kh; ++i)
      for (std::int64_t j = 0; j < e.kw; ++j, ++r) {
        const T* src = cols + r * e.cols();
        for (std::int64_t oh = 0; oh < e.OH; ++oh) {
          const std::int64_t ih = oh * e.sh - e.ph + i;
          if (ih < 0 || ih >= e.H) continue;
          for (std::int64_t ow = 0; ow < e.OW; ++ow) {
            const std::int64_t iw = ow * e.sw - e.pw + j;
            if (iw >= 0 && iw < e.W) gx[(c * e.H + ih) * e.W + iw] += src[oh * e.OW + ow];
          }
        }
      }
}

template <typename T>
void im2col(const T* x, const Ext3d& e, T* cols) {
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < e.C; ++c)
    for (std::int64_t kd = 0; kd < e.kd; ++kd)
      for (std::int64_t i = 0; i < e.kh; ++i)
        for (std::int64_t j = 0; j < e.kw; ++j, ++r) {
          T* dst = cols + r * e.cols();
          for (std::int64_t od = 0; od < e.OD; ++od) {
            const std::int64_t id = od * e.sd - e.pd + kd;
            const bool dok = id >= 0 && id < e.D;
            for (std::int64_t oh = 0; oh < e.OH; ++oh) {
              const std::int64_t ih = oh * e.sh - e.ph + i;
              const bool hok = dok && ih >= 0 && ih < e.H;
              T* drow = dst + (od * e.OH + oh) * e.OW;
              for (std::int64_t ow = 0; ow < e.OW; ++ow) {
                const std::int64_t iw = ow * e.sw - e.pw + j;
                drow[ow] = (hok && iw >= 0 && iw < e.W)
                               ? x[((c * e.D + id) * e.H + ih) * e.W + iw]
                               : T(0);
              }
            }
          }
        }
}

template <typename T>
void col2im(const T* cols, const Ext3d& e, T* gx) {
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < e.C; ++c)
    for (std::int64_t kd = 0; kd < e.kd; ++kd)
      for (std::int64_t i = 0; i < e.kh; ++i)
        for (std::int64_t j = 0; j < e.kw; ++j, ++r) {
          const T* src = cols + r * e.cols();
          for (std::int64_t od = 0; od < e.OD; ++od) {
            const std::int64_t id = od * e.sd - e.pd + kd;
            if (id < 0 || id >= e.D) continue;
            for (std::int64_t oh = 0; oh < e.OH; ++oh) {
              const std::int64_t ih = oh * e.sh - e.ph + i;
              if (ih < 0 || ih >= e.H) continue;
              const T* srow = src + (od * e.OH + oh) * e.OW;
              for (std::int64_t ow = 0; ow < e.OW; ++ow) {
                const std::int64_t iw = ow * e.sw - e.pw + j;
                if (iw >= 0 && iw < e.W) gx[((c * e.D + id) * e.H + ih) * e.W + iw] += srow[ow];
              }
            }
          }
        }
}

template <typename T>
std::vector<T> transpose(const T* a, std::int64_t rows, std::int64_t cols) {
  std::vector<T> at(static_cast<std::size_t>(rows * cols));
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) at[j * rows + i] = a[i * cols + j];
  return at;
}

}  // namespace conv_detail

// x [B,C,H,W], kernel [OC,C,kh,kw], optional bias [OC]; zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                 std::array<std::int64_t, 2> stride, std::array<std::int64_t, 2> pad) {
  using namespace conv_detail;
  if (x.rank() != 4 || k.rank() != 4 || x.dim(1) != k.dim(1))
    throw ShapeError("conv2d: bad shapes " + shape_str(x.shape) + " k " + shape_str(k.shape));
  Ext2d e{x.dim(1), x.dim(2), x.dim(3), k.dim(2), k.dim(3),
          stride[0], stride[1], pad[0],  pad[1],  0, 0};
  e.OH = out_extent(e.H, e.kh, e.sh, e.ph);
  e.OW = out_extent(e.W, e.kw, e.sw, e.pw);
  const std::int64_t B = x.dim(0), OC = k.dim(0), P = e.patch(), M = e.cols();
  if (bias.defined() && bias.size() != OC) throw ShapeError("conv2d: bad bias");
  Tensor<T> out({B, OC, e.OH, e.OW});
  std::vector<T> cols(static_cast<std::size_t>(P * M));
  for (std::int64_t b = 0; b < B; ++b) {
    im2col(x.data() + b * e.C * e.H * e.W, e, cols.data());
    T* ob = out.data() + b * OC * M;
    kernels::matmul_accum(ob, k.data(), cols.data(), OC, P, M);
    if (bias.defined())
      for (std::int64_t oc = 0; oc < OC; ++oc)
        for (std::int64_t m = 0; m < M; ++m) ob[oc * M + m] += bias.data()[oc];
  }
  if (should_record<T>({&x, &k, &bias})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x), gk = grad_ref(k), gb = grad_ref(bias);
    auto dx = x.data_, dk = k.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [=](Tape<T>& t, const std::vector<T>& g) {
      std::vector<T> cols2(static_cast<std::size_t>(P * M));
      auto* sx = t.sink(gx);
      auto* sk = t.sink(gk);
      auto* sb = t.sink(gb);
      std::vector<T> kt;
      if (sx) kt = transpose(dk->data(), OC, P);
      std::vector<T> gcols;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* gb_ = g.data() + b * OC * M;
        if (sk || sx) im2col(dx->data() + b * e.C * e.H * e.W, e, cols2.data());
        if (sk) kernels::matmul_nt_accum(sk->data(), gb_, cols2.data(), OC, M, P);
        if (sx) {
          gcols.assign(static_cast<std::size_t>(P * M), T(0));
          kernels::matmul_accum(gcols.data(), kt.data(), gb_, P, OC, M);
          col2im(gcols.data(), e, sx->data() + b * e.C * e.H * e.W);
        }
        if (sb)
          for (std::int64_t oc = 0; oc < OC; ++oc)
            (*sb)[oc] += kernels::sum(gb_ + oc * M, M);
      }
    });
  }
  return out;
}

// x [B,C,D,H,W], kernel [OC,C,kd,kh,kw], optional bias [OC]; zero padding.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                 std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> pad) {
  using namespace conv_detail;
  if (x.rank() != 5 || k.rank() != 5 || x.dim(1) != k.dim(1))
    throw ShapeError("conv3d: bad shapes " + shape_str(x.shape) + " k " + shape_str(k.shape));
  Ext3d e{x.dim(1), x.dim(2), x.dim(3), x.dim(4), k.dim(2), k.dim(3), k.dim(4),
          stride[0], stride[1], stride[2], pad[0], pad[1], pad[2], 0, 0, 0};
  e.OD = out_extent(e.D, e.kd, e.sd, e.pd);
  e.OH = out_extent(e.H, e.kh, e.sh, e.ph);
  e.OW = out_extent(e.W, e.kw, e.sw, e.pw);
  const std::int64_t B = x.dim(0), OC = k.dim(0), P = e.patch(), M = e.cols();
  const std::int64_t xstride = e.C * e.D * e.H * e.W;
  if (bias.defined() && bias.size() != OC) throw ShapeError("conv3d: bad bias");
  Tensor<T> out({B, OC, e.OD, e.OH, e.OW});
  std::vector<T> cols(static_cast<std::size_t>(P * M));
  for (std::int64_t b = 0; b < B; ++b) {
    im2col(x.data() + b * xstride, e, cols.data());
    T* ob = out.data() + b * OC * M;
    kernels::matmul_accum(ob, k.data(), cols.data(), OC, P, M);
    if (bias.defined())
      for (std::int64_t oc = 0; oc < OC; ++oc)
        for (std::int64_t m = 0; m < M; ++m) ob[oc * M + m] += bias.data()[oc];
  }
  if (should_record<T>({&x, &k, &bias})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x), gk = grad_ref(k), gb = grad_ref(bias);
    auto dx = x.data_, dk = k.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [=](Tape<T>& t, const std::vector<T>& g) {
      std::vector<T> cols2(static_cast<std::size_t>(P * M));
      auto* sx = t.sink(gx);
      auto* sk = t.sink(gk);
      auto* sb = t.sink(gb);
      std::vector<T> kt;
      if (sx) kt = transpose(dk->data(), OC, P);
      std::vector<T> gcols;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* gb_ = g.data() + b * OC * M;
        if (sk || sx) im2col(dx->data() + b * xstride, e, cols2.data());
        if (sk) kernels::matmul_nt_accum(sk->data(), gb_, cols2.data(), OC, M, P);
        if (sx) {
          gcols.assign(static_cast<std::size_t>(P * M), T(0));
          kernels::matmul_accum(gcols.data(), kt.data(), gb_, P, OC, M);
          col2im(gcols.data(), e, sx->data() + b * xstride);
        }
        if (sb)
          for (std::int64_t oc = 0; oc < OC; ++oc)
            (*sb)[oc] += kernels::sum(gb_ + oc * M, M);
      }
    });
  }
  return out;
}

// ---- normalization -----------------------------------------------------------

// Group normalization over [B,C,*]: statistics per (sample, group), optional
// per-channel affine. gamma/beta may be undefined tensors for the plain
// normalizing variant. instance_norm below is the groups==C special case.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() < 3) throw ShapeError("group_norm: need [B,C,...], got " + shape_str(x.shape));
  const std::int64_t B = x.dim(0), C = x.dim(1);
  if (C % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  if (gamma.defined() && gamma.size() != C) throw ShapeError("group_norm: bad gamma");
  if (beta.defined() && beta.size() != C) throw ShapeError("group_norm: bad beta");
  const std::int64_t S = x.size() / (B * C);       // spatial elements per channel
  const std::int64_t gc = C / groups;              // channels per group
  const std::int64_t N = gc * S;                   // elements per group
  Tensor<T> out(x.shape);
  auto mean_v = std::make_shared<std::vector<T>>(B * groups);
  auto istd_v = std::make_shared<std::vector<T>>(B * groups);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* xp = x.data() + (b * C + g * gc) * S;
      const T mu = kernels::sum(xp, N) / static_cast<T>(N);
      T var = 0;
      for (std::int64_t i = 0; i < N; ++i) {
        const T d = xp[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(N);
      const T istd = T(1) / std::sqrt(var + eps);
      (*mean_v)[b * groups + g] = mu;
      (*istd_v)[b * groups + g] = istd;
      T* op = out.data() + (b * C + g * gc) * S;
      for (std::int64_t c = 0; c < gc; ++c) {
        const std::int64_t ch = g * gc + c;
        const T ga = gamma.defined() ? gamma.data()[ch] : T(1);
        const T be = beta.defined() ? beta.data()[ch] : T(0);
        kernels::scale_shift(op + c * S, xp + c * S, ga * istd, be - ga * istd * mu, S);
      }
    }
  if (should_record<T>({&x, &gamma, &beta})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x), gg = grad_ref(gamma), gb = grad_ref(beta);
    auto dx = x.data_;
    auto dgamma = gamma.defined() ? gamma.data_ : nullptr;
    out.tape = tp;
    out.node = tp->record(out.size(), [=](Tape<T>& t, const std::vector<T>& g) {
      auto* sx = t.sink(gx);
      auto* sg = t.sink(gg);
      auto* sb = t.sink(gb);
      std::vector<T> xhat(static_cast<std::size_t>(N)), dxh(static_cast<std::size_t>(N));
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t gi = 0; gi < groups; ++gi) {
          const std::int64_t base = (b * C + gi * gc) * S;
          const T mu = (*mean_v)[b * groups + gi];
          const T istd = (*istd_v)[b * groups + gi];
          const T* xp = dx->data() + base;
          const T* gp = g.data() + base;
          for (std::int64_t i = 0; i < N; ++i) xhat[i] = (xp[i] - mu) * istd;
          for (std::int64_t c = 0; c < gc; ++c) {
            const std::int64_t ch = gi * gc + c;
            const T ga = dgamma ? (*dgamma)[ch] : T(1);
            for (std::int64_t i = 0; i < S; ++i) dxh[c * S + i] = gp[c * S + i] * ga;
            if (sg)
              (*sg)[ch] += kernels::dot(gp + c * S, xhat.data() + c * S, S);
            if (sb) (*sb)[ch] += kernels::sum(gp + c * S, S);
          }
          if (sx) {
            const T s1 = kernels::sum(dxh.data(), N);
            const T s2 = kernels::dot(dxh.data(), xhat.data(), N);
            const T invn = T(1) / static_cast<T>(N);
            T* sxp = sx->data() + base;
            for (std::int64_t i = 0; i < N; ++i)
              sxp[i] += istd * (dxh[i] - invn * (s1 + xhat[i] * s2));
          }
        }
    });
  }
  return out;
}

// Per-(sample, channel) normalization without affine terms.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  return group_norm(x, x.dim(1), Tensor<T>{}, Tensor<T>{}, eps);
}

// ---- broadcasted affine modulation ---------------------------------------------

// x [B,D] modulated per column: y[b,i] = x[b,i]*s[i] + t[i]
template <typename T>
Tensor<T> rowwise_affine(const Tensor<T>& x, const Tensor<T>& s, const Tensor<T>& t) {
  if (x.rank() != 2 || s.size() != x.dim(1) || t.size() != x.dim(1))
    throw ShapeError("rowwise_affine: bad shapes");
  const std::int64_t B = x.dim(0), D = x.dim(1);
  Tensor<T> out(x.shape);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < D; ++i)
      out.data()[b * D + i] = x.data()[b * D + i] * s.data()[i] + t.data()[i];
  if (should_record<T>({&x, &s, &t})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x), gs = grad_ref(s), gt = grad_ref(t);
    auto dx = x.data_, ds = s.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [=](Tape<T>& tp2, const std::vector<T>& g) {
      auto* sx = tp2.sink(gx);
      auto* ss = tp2.sink(gs);
      auto* st = tp2.sink(gt);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < D; ++i) {
          const T gv = g[b * D + i];
          if (sx) (*sx)[b * D + i] += gv * (*ds)[i];
          if (ss) (*ss)[i] += gv * (*dx)[b * D + i];
          if (st) (*st)[i] += gv;
        }
    });
  }
  return out;
}

// x [B,C,*] modulated per (sample, channel): y = x * s[b,c] + t[b,c]
template <typename T>
Tensor<T> per_channel_affine(const Tensor<T>& x, const Tensor<T>& s, const Tensor<T>& t) {
  if (x.rank() < 3 || s.rank() != 2 || t.rank() != 2 || s.dim(0) != x.dim(0) ||
      s.dim(1) != x.dim(1) || t.shape != s.shape)
    throw ShapeError("per_channel_affine: bad shapes x " + shape_str(x.shape) + " s " +
                     shape_str(s.shape));
  const std::int64_t B = x.dim(0), C = x.dim(1), S = x.size() / (B * C);
  Tensor<T> out(x.shape);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      kernels::scale_shift(out.data() + (b * C + c) * S, x.data() + (b * C + c) * S,
                           s.data()[b * C + c], t.data()[b * C + c], S);
  if (should_record<T>({&x, &s, &t})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x), gs = grad_ref(s), gt = grad_ref(t);
    auto dx = x.data_, ds = s.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [=](Tape<T>& tp2, const std::vector<T>& g) {
      auto* sx = tp2.sink(gx);
      auto* ss = tp2.sink(gs);
      auto* st = tp2.sink(gt);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
          const std::int64_t base = (b * C + c) * S;
          if (sx) kernels::axpy(sx->data() + base, g.data() + base, (*ds)[b * C + c], S);
          if (ss) (*ss)[b * C + c] += kernels::dot(g.data() + base, dx->data() + base, S);
          if (st) (*st)[b * C + c] += kernels::sum(g.data() + base, S);
        }
    });
  }
  return out;
}

// x [B,C,T,H,W] modulated by per-location maps broadcast over time:
// y[b,c,t,h,w] = x[b,c,t,h,w] * sm[b,c,h,w] + tm[b,c,h,w]
template <typename T>
Tensor<T> spatial_affine(const Tensor<T>& x, const Tensor<T>& sm, const Tensor<T>& tm) {
  if (x.rank() != 5 || sm.rank() != 4 || tm.shape != sm.shape || sm.dim(0) != x.dim(0) ||
      sm.dim(1) != x.dim(1) || sm.dim(2) != x.dim(3) || sm.dim(3) != x.dim(4))
    throw ShapeError("spatial_affine: bad shapes x " + shape_str(x.shape) + " map " +
                     shape_str(sm.shape));
  const std::int64_t B = x.dim(0), C = x.dim(1), D = x.dim(2), HW = x.dim(3) * x.dim(4);
  Tensor<T> out(x.shape);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* smp = sm.data() + (b * C + c) * HW;
      const T* tmp_ = tm.data() + (b * C + c) * HW;
      for (std::int64_t d = 0; d < D; ++d) {
        const std::int64_t base = ((b * C + c) * D + d) * HW;
        const T* xp = x.data() + base;
        T* op = out.data() + base;
        for (std::int64_t i = 0; i < HW; ++i) op[i] = xp[i] * smp[i] + tmp_[i];
      }
    }
  if (should_record<T>({&x, &sm, &tm})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x), gs = grad_ref(sm), gt = grad_ref(tm);
    auto dx = x.data_, ds = sm.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [=](Tape<T>& tp2, const std::vector<T>& g) {
      auto* sx = tp2.sink(gx);
      auto* ss = tp2.sink(gs);
      auto* st = tp2.sink(gt);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
          const std::int64_t mbase = (b * C + c) * HW;
          for (std::int64_t d = 0; d < D; ++d) {
            const std::int64_t base = ((b * C + c) * D + d) * HW;
            for (std::int64_t i = 0; i < HW; ++i) {
              const T gv = g[base + i];
              if (sx) (*sx)[base + i] += gv * (*ds)[mbase + i];
              if (ss) (*ss)[mbase + i] += gv * (*dx)[base + i];
              if (st) (*st)[mbase + i] += gv;
            }
          }
        }
    });
  }
  return out;
}

// ---- pooling / resampling ------------------------------------------------------

// Mean over all trailing spatial dims: [B,C,*] -> [B,C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() < 3) throw ShapeError("global_avg_pool: need [B,C,...]");
  const std::int64_t B = x.dim(0), C = x.dim(1), S = x.size() / (B * C);
  Tensor<T> out({B, C});
  for (std::int64_t i = 0; i < B * C; ++i)
    out.data()[i] = kernels::sum(x.data() + i * S, S) / static_cast<T>(S);
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, B, C, S](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx)) {
        const T inv = T(1) / static_cast<T>(S);
        for (std::int64_t i = 0; i < B * C; ++i) {
          const T gv = g[i] * inv;
          for (std::int64_t j = 0; j < S; ++j) (*s)[i * S + j] += gv;
        }
      }
    });
  }
  return out;
}

// Factor-k mean pooling on [B,C,H,W]; H and W must be divisible by k.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::int64_t kfac) {
  if (x.rank() != 4 || x.dim(2) % kfac != 0 || x.dim(3) % kfac != 0)
    throw ShapeError("avg_pool2d: bad shape " + shape_str(x.shape));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = H / kfac, OW = W / kfac;
  Tensor<T> out({B, C, OH, OW});
  const T inv = T(1) / static_cast<T>(kfac * kfac);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* xp = x.data() + bc * H * W;
    T* op = out.data() + bc * OH * OW;
    for (std::int64_t oh = 0; oh < OH; ++oh)
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        T acc = 0;
        for (std::int64_t i = 0; i < kfac; ++i)
          for (std::int64_t j = 0; j < kfac; ++j)
            acc += xp[(oh * kfac + i) * W + ow * kfac + j];
        op[oh * OW + ow] = acc * inv;
      }
  }
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, B, C, H, W, OH, OW, kfac,
                                       inv](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          const T* gp = g.data() + bc * OH * OW;
          T* sp = s->data() + bc * H * W;
          for (std::int64_t oh = 0; oh < OH; ++oh)
            for (std::int64_t ow = 0; ow < OW; ++ow) {
              const T gv = gp[oh * OW + ow] * inv;
              for (std::int64_t i = 0; i < kfac; ++i)
                for (std::int64_t j = 0; j < kfac; ++j)
                  sp[(oh * kfac + i) * W + ow * kfac + j] += gv;
            }
        }
    });
  }
  return out;
}

// Nearest-neighbor upsampling of [B,C,D,H,W] by integer factors.
template <typename T>
Tensor<T> upsample_nearest3d(const Tensor<T>& x, std::int64_t fd, std::int64_t fh,
                             std::int64_t fw) {
  if (x.rank() != 5) throw ShapeError("upsample_nearest3d: need [B,C,D,H,W]");
  const std::int64_t B = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::int64_t OD = D * fd, OH = H * fh, OW = W * fw;
  Tensor<T> out({B, C, OD, OH, OW});
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* xp = x.data() + bc * D * H * W;
    T* op = out.data() + bc * OD * OH * OW;
    for (std::int64_t od = 0; od < OD; ++od)
      for (std::int64_t oh = 0; oh < OH; ++oh) {
        const T* xrow = xp + ((od / fd) * H + oh / fh) * W;
        T* orow = op + (od * OH + oh) * OW;
        for (std::int64_t ow = 0; ow < OW; ++ow) orow[ow] = xrow[ow / fw];
      }
  }
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, B, C, D, H, W, fd, fh, fw, OD, OH,
                                       OW](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          const T* gp = g.data() + bc * OD * OH * OW;
          T* sp = s->data() + bc * D * H * W;
          for (std::int64_t od = 0; od < OD; ++od)
            for (std::int64_t oh = 0; oh < OH; ++oh) {
              const T* grow = gp + (od * OH + oh) * OW;
              T* srow = sp + ((od / fd) * H + oh / fh) * W;
              for (std::int64_t ow = 0; ow < OW; ++ow) srow[ow / fw] += grow[ow];
            }
        }
    });
  }
  return out;
}

// [B,C,T,H,W] -> [B*T,C,H,W]: folds time into the batch so 2-D nets can score
// individual frames.
template <typename T>
Tensor<T> merge_time(const Tensor<T>& x) {
  if (x.rank() != 5) throw ShapeError("merge_time: need [B,C,T,H,W]");
  const std::int64_t B = x.dim(0), C = x.dim(1), D = x.dim(2), HW = x.dim(3) * x.dim(4);
  Tensor<T> out({B * D, C, x.dim(3), x.dim(4)});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t d = 0; d < D; ++d)
        std::copy_n(x.data() + ((b * C + c) * D + d) * HW, HW,
                    out.data() + ((b * D + d) * C + c) * HW);
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, B, C, D, HW](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t d = 0; d < D; ++d)
              kernels::axpy(s->data() + ((b * C + c) * D + d) * HW,
                            g.data() + ((b * D + d) * C + c) * HW, T(1), HW);
    });
  }
  return out;
}

// ---- coordinate channels ---------------------------------------------------

namespace coords_detail {
template <typename T>
inline T ramp(std::int64_t i, std::int64_t n) {
  return n > 1 ? static_cast<T>(2 * i) / static_cast<T>(n - 1) - T(1) : T(0);
}
}  // namespace coords_detail

// Appends constant coordinate ramps in [-1,1] as extra channels: x,y for
// [B,C,H,W]; x,y,t for [B,C,T,H,W]. Gives convolutions an absolute position
// reference so features can encode *where* content sits, not just what it is.
// The appended channels are constants: gradient flows only to the input slice.
template <typename T>
Tensor<T> with_coords(const Tensor<T>& x) {
  if (x.rank() != 4 && x.rank() != 5)
    throw ShapeError("with_coords: need [B,C,H,W] or [B,C,T,H,W], got " + shape_str(x.shape));
  const bool vid = x.rank() == 5;
  const std::int64_t B = x.dim(0), C = x.dim(1), D = vid ? x.dim(2) : 1;
  const std::int64_t H = x.dim(vid ? 3 : 2), W = x.dim(vid ? 4 : 3);
  const std::int64_t E = vid ? 3 : 2, DHW = D * H * W;
  Tensor<T> out(vid ? std::vector<std::int64_t>{B, C + E, D, H, W}
                    : std::vector<std::int64_t>{B, C + E, H, W});
  for (std::int64_t b = 0; b < B; ++b) {
    T* op = out.data() + b * (C + E) * DHW;
    std::copy_n(x.data() + b * C * DHW, C * DHW, op);
    T* cx = op + C * DHW;
    T* cy = cx + DHW;
    T* ct = cy + DHW;
    for (std::int64_t d = 0; d < D; ++d)
      for (std::int64_t h = 0; h < H; ++h) {
        T* rx = cx + (d * H + h) * W;
        for (std::int64_t w = 0; w < W; ++w) rx[w] = coords_detail::ramp<T>(w, W);
        std::fill_n(cy + (d * H + h) * W, W, coords_detail::ramp<T>(h, H));
        if (vid) std::fill_n(ct + (d * H + h) * W, W, coords_detail::ramp<T>(d, D));
      }
  }
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, B, C, E, DHW](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::int64_t b = 0; b < B; ++b)
          kernels::axpy(s->data() + b * C * DHW, g.data() + b * (C + E) * DHW, T(1), C * DHW);
    });
  }
  return out;
}

// ---- classification loss -------------------------------------------------------

// Mean softmax cross-entropy of logits [B,K] against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || static_cast<std::int64_t>(labels.size()) != logits.dim(0))
    throw ShapeError("cross_entropy: bad shapes");
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  auto lse_v = std::make_shared<std::vector<T>>(B);
  T loss = 0;
  for (std::int64_t b = 0; b < B; ++b) {
    const T* row = logits.data() + b * K;
    const T m = *std::max_element(row, row + K);
    T acc = 0;
    for (std::int64_t k = 0; k < K; ++k) acc += std::exp(row[k] - m);
    const T lse = m + std::log(acc);
    (*lse_v)[b] = lse;
    loss += lse - row[labels[b]];
  }
  Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(B));
  if (should_record<T>({&logits})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(logits);
    auto dl = logits.data_;
    out.tape = tp;
    out.node = tp->record(1, [gx, dl, lse_v, labels, B, K](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx)) {
        const T gv = g[0] / static_cast<T>(B);
        for (std::int64_t b = 0; b < B; ++b) {
          const T* row = dl->data() + b * K;
          for (std::int64_t k = 0; k < K; ++k)
            (*s)[b * K + k] += gv * (std::exp(row[k] - (*lse_v)[b]) -
                                     (k == labels[b] ? T(1) : T(0)));
        }
      }
    });
  }
  return out;
}

}  // namespace sivs

#endif
