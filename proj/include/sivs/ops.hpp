#ifndef SIVS_OPS_HPP
#define SIVS_OPS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "sivs/kernels.hpp"
#include "sivs/tensor.hpp"

// Differentiable ops. Every op computes its output eagerly and, when a tape
// is active and an input is tracked, records a closure that scatters the
// output gradient back to the inputs. Ops never mutate their inputs.
//
// Broadcasting is deliberately explicit: instead of generic rules there are
// dedicated ops for the few patterns the models need (row-wise affine,
// per-channel affine, per-location affine broadcast over time).

namespace sivs {

namespace ops_detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
}

template <typename T>
void accum(Tape<T>& t, const GradRef<T>& ref, const T* g, std::int64_t n) {
  if (auto* s = t.sink(ref)) kernels::axpy(s->data(), g, T(1), static_cast<std::size_t>(n));
}

}  // namespace ops_detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  ops_detail::check_same_shape(a, b, "add");
  Tensor<T> out(a.shape);
  kernels::add(out.data(), a.data(), b.data(), out.size());
  if (should_record<T>({&a, &b})) {
    auto* tp = Tape<T>::current();
    auto ga = grad_ref(a), gb = grad_ref(b);
    out.tape = tp;
    out.node = tp->record(out.size(), [ga, gb](Tape<T>& t, const std::vector<T>& g) {
      ops_detail::accum(t, ga, g.data(), static_cast<std::int64_t>(g.size()));
      ops_detail::accum(t, gb, g.data(), static_cast<std::int64_t>(g.size()));
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  ops_detail::check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape);
  kernels::sub(out.data(), a.data(), b.data(), out.size());
  if (should_record<T>({&a, &b})) {
    auto* tp = Tape<T>::current();
    auto ga = grad_ref(a), gb = grad_ref(b);
    out.tape = tp;
    out.node = tp->record(out.size(), [ga, gb](Tape<T>& t, const std::vector<T>& g) {
      ops_detail::accum(t, ga, g.data(), static_cast<std::int64_t>(g.size()));
      if (auto* s = t.sink(gb))
        kernels::axpy(s->data(), g.data(), T(-1), g.size());
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  ops_detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape);
  kernels::mul(out.data(), a.data(), b.data(), out.size());
  if (should_record<T>({&a, &b})) {
    auto* tp = Tape<T>::current();
    auto ga = grad_ref(a), gb = grad_ref(b);
    auto da = a.data_, db = b.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [ga, gb, da, db](Tape<T>& t, const std::vector<T>& g) {
      const std::size_t n = g.size();
      if (auto* s = t.sink(ga))
        for (std::size_t i = 0; i < n; ++i) (*s)[i] += g[i] * (*db)[i];
      if (auto* s = t.sink(gb))
        for (std::size_t i = 0; i < n; ++i) (*s)[i] += g[i] * (*da)[i];
    });
  }
  return out;
}

// y = a * x + b with scalar a, b
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
  Tensor<T> out(x.shape);
  kernels::scale_shift(out.data(), x.data(), a, b, out.size());
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, a](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx)) kernels::axpy(s->data(), g.data(), a, g.size());
    });
  }
  return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) { return affine(x, T(-1), T(0)); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T a) { return affine(x, a, T(0)); }

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  const T* xd = x.data();
  T* od = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) od[i] = xd[i] > T(0) ? xd[i] : T(0);
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    auto dx = x.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, dx](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::size_t i = 0; i < g.size(); ++i)
          if ((*dx)[i] > T(0)) (*s)[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> out(x.shape);
  const T* xd = x.data();
  T* od = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) od[i] = xd[i] > T(0) ? xd[i] : slope * xd[i];
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    auto dx = x.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, dx, slope](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::size_t i = 0; i < g.size(); ++i)
          (*s)[i] += g[i] * ((*dx)[i] > T(0) ? T(1) : slope);
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  const T* xd = x.data();
  T* od = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) od[i] = std::tanh(xd[i]);
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    auto dy = out.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, dy](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::size_t i = 0; i < g.size(); ++i)
          (*s)[i] += g[i] * (T(1) - (*dy)[i] * (*dy)[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  const T* xd = x.data();
  T* od = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) od[i] = std::exp(xd[i]);
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    auto dy = out.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, dy](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * (*dy)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  const T* xd = x.data();
  T* od = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) od[i] = std::log(xd[i]);
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    auto dx = x.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, dx](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] / (*dx)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  const T* xd = x.data();
  T* od = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) od[i] = std::abs(xd[i]);
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    auto dx = x.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, dx](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T x_i = (*dx)[i];
          (*s)[i] += x_i > T(0) ? g[i] : (x_i < T(0) ? -g[i] : T(0));
        }
    });
  }
  return out;
}

// Value copy that drops autodiff tracking (stop-gradient).
template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  Tensor<T> out;
  out.shape = x.shape;
  out.data_ = x.data_;
  return out;
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(kernels::sum(x.data(), x.size()));
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    const std::int64_t n = x.size();
    out.tape = tp;
    out.node = tp->record(1, [gx, n](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::int64_t i = 0; i < n; ++i) (*s)[i] += g[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.size());
  Tensor<T> out = Tensor<T>::scalar(kernels::sum(x.data(), x.size()) * inv);
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    const std::int64_t n = x.size();
    out.tape = tp;
    out.node = tp->record(1, [gx, n, inv](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx)) {
        const T gv = g[0] * inv;
        for (std::int64_t i = 0; i < n; ++i) (*s)[i] += gv;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sumsq(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(kernels::sumsq(x.data(), x.size()));
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    auto dx = x.data_;
    out.tape = tp;
    out.node = tp->record(1, [gx, dx](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        kernels::axpy(s->data(), dx->data(), T(2) * g[0], dx->size());
    });
  }
  return out;
}

// ---- matmul / linear ---------------------------------------------------------

// [M,K] x [K,N] -> [M,N]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                     shape_str(b.shape));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  kernels::matmul_accum(out.data(), a.data(), b.data(), m, k, n);
  if (should_record<T>({&a, &b})) {
    auto* tp = Tape<T>::current();
    auto ga = grad_ref(a), gb = grad_ref(b);
    auto da = a.data_, db = b.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [=](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(ga))  // gA += g * B^T
        kernels::matmul_nt_accum(s->data(), g.data(), db->data(), m, n, k);
      if (auto* s = t.sink(gb))  // gB += A^T * g: row p of gB gets sum_i A[i,p]*g[i,:]
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t p = 0; p < k; ++p) {
            const T a_ip = (*da)[i * k + p];
            if (a_ip != T(0)) kernels::axpy(s->data() + p * n, g.data() + i * n, a_ip, n);
          }
    });
  }
  return out;
}

// x [B,In] with weights [Out,In], bias [Out] -> [B,Out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw ShapeError("linear: incompatible shapes " + shape_str(x.shape) + " with weights " +
                     shape_str(w.shape));
  const std::int64_t bs = x.dim(0), in = x.dim(1), outn = w.dim(0);
  if (b.defined() && b.size() != outn) throw ShapeError("linear: bad bias size");
  Tensor<T> out({bs, outn});
  kernels::matmul_nt_accum(out.data(), x.data(), w.data(), bs, in, outn);
  if (b.defined()) {
    T* od = out.data();
    const T* bd = b.data();
    for (std::int64_t i = 0; i < bs; ++i)
      kernels::axpy(od + i * outn, bd, T(1), outn);
  }
  if (should_record<T>({&x, &w, &b})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x), gw = grad_ref(w), gb = grad_ref(b);
    auto dx = x.data_, dw = w.data_;
    out.tape = tp;
    out.node = tp->record(out.size(), [=](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))  // gx += g * W
        kernels::matmul_accum(s->data(), g.data(), dw->data(), bs, outn, in);
      if (auto* s = t.sink(gw))  // gW[o,:] += sum_b g[b,o] * x[b,:]
        for (std::int64_t i = 0; i < bs; ++i)
          for (std::int64_t o = 0; o < outn; ++o) {
            const T go = g[i * outn + o];
            if (go != T(0)) kernels::axpy(s->data() + o * in, dx->data() + i * in, go, in);
          }
      if (auto* s = t.sink(gb))
        for (std::int64_t i = 0; i < bs; ++i)
          kernels::axpy(s->data(), g.data() + i * outn, T(1), outn);
    });
  }
  return out;
}

// ---- column ops on [B,D] matrices -------------------------------------------

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  const std::int64_t bs = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor<T> out({bs, da + db});
  for (std::int64_t i = 0; i < bs; ++i) {
    std::copy_n(a.data() + i * da, da, out.data() + i * (da + db));
    std::copy_n(b.data() + i * db, db, out.data() + i * (da + db) + da);
  }
  if (should_record<T>({&a, &b})) {
    auto* tp = Tape<T>::current();
    auto ga = grad_ref(a), gb = grad_ref(b);
    out.tape = tp;
    out.node = tp->record(out.size(), [=](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(ga))
        for (std::int64_t i = 0; i < bs; ++i)
          kernels::axpy(s->data() + i * da, g.data() + i * (da + db), T(1), da);
      if (auto* s = t.sink(gb))
        for (std::int64_t i = 0; i < bs; ++i)
          kernels::axpy(s->data() + i * db, g.data() + i * (da + db) + da, T(1), db);
    });
  }
  return out;
}

// Splits [B,D] into ([B,d], [B,D-d]).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_cols(const Tensor<T>& x, std::int64_t d) {
  if (x.rank() != 2 || d <= 0 || d >= x.dim(1))
    throw ShapeError("split_cols: bad split of " + shape_str(x.shape));
  const std::int64_t bs = x.dim(0), dd = x.dim(1), d2 = dd - d;
  Tensor<T> a({bs, d}), b({bs, d2});
  for (std::int64_t i = 0; i < bs; ++i) {
    std::copy_n(x.data() + i * dd, d, a.data() + i * d);
    std::copy_n(x.data() + i * dd + d, d2, b.data() + i * d2);
  }
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    a.tape = tp;
    a.node = tp->record(a.size(), [gx, bs, d, dd](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::int64_t i = 0; i < bs; ++i)
          kernels::axpy(s->data() + i * dd, g.data() + i * d, T(1), d);
    });
    b.tape = tp;
    b.node = tp->record(b.size(), [gx, bs, d, dd, d2](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::int64_t i = 0; i < bs; ++i)
          kernels::axpy(s->data() + i * dd + d, g.data() + i * d2, T(1), d2);
    });
  }
  return {a, b};
}

// y[:, j] = x[:, perm[j]]
template <typename T>
Tensor<T> permute_cols(const Tensor<T>& x, const std::vector<int>& perm) {
  if (x.rank() != 2 || static_cast<std::int64_t>(perm.size()) != x.dim(1))
    throw ShapeError("permute_cols: bad permutation for " + shape_str(x.shape));
  const std::int64_t bs = x.dim(0), d = x.dim(1);
  Tensor<T> out({bs, d});
  for (std::int64_t i = 0; i < bs; ++i)
    for (std::int64_t j = 0; j < d; ++j)
      out.data()[i * d + j] = x.data()[i * d + perm[j]];
  if (should_record<T>({&x})) {
    auto* tp = Tape<T>::current();
    auto gx = grad_ref(x);
    out.tape = tp;
    out.node = tp->record(out.size(), [gx, bs, d, perm](Tape<T>& t, const std::vector<T>& g) {
      if (auto* s = t.sink(gx))
        for (std::int64_t i = 0; i < bs; ++i)
          for (std::int64_t j = 0; j < d; ++j)
            (*s)[i * d + perm[j]] += g[i * d + j];
    });
  }
  return out;
}

// Same data, new shape (sizes must match). Shares buffers and the tape node.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
  if (shape_size(s) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape) + " -> " + shape_str(s));
  Tensor<T> out;
  out.shape = std::move(s);
  out.data_ = x.data_;
  out.grad_ = x.grad_;
  out.tape = x.tape;
  out.node = x.node;
  return out;
}

}  // namespace sivs

#include "sivs/ops_nd.hpp"

#endif
