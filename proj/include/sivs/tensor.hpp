#ifndef SIVS_TENSOR_HPP
#define SIVS_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sivs/error.hpp"

// Minimal define-by-run reverse-mode autodiff. A Tensor owns a flat buffer
// plus shape; ops (see ops.hpp) compute a fresh output and, when a Tape is
// active and an input is tracked, push a backward closure onto the tape.
// The tape is rebuilt every forward pass and cleared between steps.
//
// Gradients live in two places:
//   - leaves (parameters / inputs created with Tensor::leaf) own a grad
//     buffer that *accumulates* across backward calls until zero_grad();
//   - interior nodes get scratch buffers on the tape, reset per backward.

namespace sivs {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

template <typename T>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;  // only leaves carry this
  Tape<T>* tape = nullptr;                // producing tape, if any
  int node = -1;                          // node id on that tape

  Tensor() = default;

  explicit Tensor(Shape s)
      : shape(std::move(s)),
        data_(std::make_shared<std::vector<T>>(shape_size(shape), T(0))) {}

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    for (auto& x : *t.data_) x = v;
    return t;
  }

  static Tensor from(Shape s, std::vector<T> values) {
    if (shape_size(s) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("Tensor::from: " + shape_str(s) + " does not match " +
                       std::to_string(values.size()) + " values");
    Tensor t;
    t.shape = std::move(s);
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  // A leaf participates in autodiff: its grad buffer accumulates.
  static Tensor leaf(Shape s) {
    Tensor t(std::move(s));
    t.grad_ = std::make_shared<std::vector<T>>(t.size(), T(0));
    return t;
  }

  static Tensor leaf_from(Shape s, std::vector<T> values) {
    Tensor t = from(std::move(s), std::move(values));
    t.grad_ = std::make_shared<std::vector<T>>(t.size(), T(0));
    return t;
  }

  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape.at(i); }
  bool defined() const { return static_cast<bool>(data_); }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  std::vector<T>& vec() { return *data_; }
  const std::vector<T>& vec() const { return *data_; }

  bool has_grad() const { return static_cast<bool>(grad_); }
  T* grad() { return grad_->data(); }
  const T* grad() const { return grad_->data(); }
  std::vector<T>& grad_vec() { return *grad_; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  bool tracked() const { return grad_ != nullptr || node >= 0; }

  T value() const {
    if (size() != 1) throw ShapeError("Tensor::value: not a scalar, shape " + shape_str(shape));
    return (*data_)[0];
  }

  T& at(std::initializer_list<std::int64_t> idx) {
    return (*data_)[flat_index(idx)];
  }
  T at(std::initializer_list<std::int64_t> idx) const {
    return (*data_)[flat_index(idx)];
  }

  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw ShapeError("index rank mismatch for shape " + shape_str(shape));
    std::int64_t flat = 0;
    int i = 0;
    for (auto v : idx) {
      flat = flat * shape[i] + v;
      ++i;
    }
    return flat;
  }
};

// Scan a tensor for NaN/inf and report where it happened.
template <typename T>
void check_finite_values(const Tensor<T>& t, const std::string& ctx) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t.data()[i]))
      throw NumericError(ctx + ": non-finite value at element " + std::to_string(i));
}

// Where an input's gradient should be delivered.
template <typename T>
struct GradRef {
  std::shared_ptr<std::vector<T>> leaf;
  Tape<T>* tape = nullptr;
  int node = -1;
  bool tracked() const { return leaf != nullptr || node >= 0; }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev; }
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const std::vector<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return cur_; }

  // RAII activation; tapes may nest (inner tape wins).
  struct Scope {
    Tape* prev;
    explicit Scope(Tape& t) : prev(cur_) { cur_ = &t; }
    ~Scope() { cur_ = prev; }
  };

  int record(std::int64_t out_size, BackFn back) {
    nodes_.push_back(Node{out_size, std::move(back), {}, 0});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    pass_ = 0;
  }

  // Scratch gradient buffer for a node, zeroed once per backward pass.
  std::vector<T>& grad_buf(int node) {
    Node& nd = nodes_.at(node);
    if (nd.pass != pass_) {
      nd.grad.assign(nd.size, T(0));
      nd.pass = pass_;
    }
    return nd.grad;
  }

  // Buffer to accumulate into for a tracked input; null if untracked.
  std::vector<T>* sink(const GradRef<T>& ref) {
    if (ref.leaf) return ref.leaf.get();
    if (ref.node >= 0) return &grad_buf(ref.node);
    return nullptr;
  }

  // Runs the reverse sweep from a scalar loss. Leaf gradients accumulate;
  // call Tensor::zero_grad between steps if that is not wanted.
  void backward(const Tensor<T>& loss) {
    if (loss.node < 0 || loss.tape != this)
      throw Error("backward: loss tensor is not attached to this tape");
    if (loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape));
    ++pass_;
    grad_buf(loss.node)[0] = T(1);
    for (int i = loss.node; i >= 0; --i) {
      Node& nd = nodes_[static_cast<std::size_t>(i)];
      if (nd.pass == pass_ && nd.back) nd.back(*this, nd.grad);
    }
  }

 private:
  struct Node {
    std::int64_t size;
    BackFn back;
    std::vector<T> grad;
    std::uint64_t pass;
  };
  std::vector<Node> nodes_;
  std::uint64_t pass_ = 0;
  static thread_local Tape* cur_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::cur_ = nullptr;

template <typename T>
GradRef<T> grad_ref(const Tensor<T>& t) {
  GradRef<T> r;
  r.leaf = t.grad_;
  if (t.node >= 0 && t.tape == Tape<T>::current()) {
    r.tape = t.tape;
    r.node = t.node;
  }
  return r;
}

// True when an op applied to these inputs must be recorded.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::current() || !grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t->grad_ || (t->node >= 0 && t->tape == Tape<T>::current())) return true;
  }
  return false;
}

}  // namespace sivs

#endif
