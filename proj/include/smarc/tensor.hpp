#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace smarc {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <class S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <class S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapMat = Eigen::Map<MatrixRM<S>>;
template <class S>
using MapConstMat = Eigen::Map<const MatrixRM<S>>;
template <class S>
using MapVec = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <class S>
using MapConstVec = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

/// Runtime toggle for the more expensive input validations (finite checks,
/// exact-binary mask checks). On by default; training loops may disable it.
inline bool& checked_mode() {
  static bool enabled = true;
  return enabled;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

/// Deterministic RNG: splitmix64 core with explicit uniform/normal draws so
/// results do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive integer range.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  bool bernoulli(double p = 0.5) { return uniform() < p; }

  /// Standard normal via Box-Muller (pair cached).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  /// Derived independent stream; deterministic in (current state, key).
  Rng fork(std::uint64_t key) const {
    Rng r(state_ ^ (0x632be59bd9b4e019ULL * (key + 0x9e3779b97f4a7c15ULL)));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

namespace detail {

template <class S>
struct TensorImpl {
  Shape shape;
  ArrayX<S> values;
  ArrayX<S> grad;  // zero-sized until first touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  Index numel() const { return values.size(); }

  ArrayX<S>& ensure_grad() {
    if (grad.size() != values.size()) grad = ArrayX<S>::Zero(values.size());
    return grad;
  }
};

}  // namespace detail

/// Dense n-dimensional array with optional reverse-mode gradient tracking.
/// Copies are shallow (shared storage); clone() makes a deep detached copy.
template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t = uninitialized(std::move(shape), requires_grad);
    t.impl_->values.setZero();
    return t;
  }

  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), S(1), requires_grad);
  }

  static Tensor full(Shape shape, S value, bool requires_grad = false) {
    Tensor t = uninitialized(std::move(shape), requires_grad);
    t.impl_->values.setConstant(value);
    return t;
  }

  static Tensor from(Shape shape, const std::vector<S>& values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<Index>(values.size()))
      fail("Tensor::from: shape " + shape_str(shape) + " does not hold " +
           std::to_string(values.size()) + " values");
    Tensor t = uninitialized(std::move(shape), requires_grad);
    for (Index i = 0; i < t.size(); ++i) t.impl_->values[i] = values[static_cast<std::size_t>(i)];
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  static Tensor uniform(Shape shape, S lo, S hi, Rng& rng, bool requires_grad = false) {
    Tensor t = uninitialized(std::move(shape), requires_grad);
    for (Index i = 0; i < t.size(); ++i)
      t.impl_->values[i] = static_cast<S>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
  }

  static Tensor normal(Shape shape, S mean, S stddev, Rng& rng, bool requires_grad = false) {
    Tensor t = uninitialized(std::move(shape), requires_grad);
    for (Index i = 0; i < t.size(); ++i)
      t.impl_->values[i] = static_cast<S>(mean + stddev * static_cast<S>(rng.normal()));
    return t;
  }

  /// He-uniform initialization: uniform in +-sqrt(6 / fan_in).
  static Tensor he_uniform(Shape shape, Index fan_in, Rng& rng, bool requires_grad = false) {
    const S limit = static_cast<S>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    return uniform(std::move(shape), -limit, limit, rng, requires_grad);
  }

  static Tensor uninitialized(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl<S>>();
    t.impl_->shape = std::move(shape);
    t.impl_->values.resize(shape_numel(t.impl_->shape));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index dim(Index i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  Index size() const { return impl_ ? impl_->numel() : 0; }

  S* data() { return impl_->values.data(); }
  const S* data() const { return impl_->values.data(); }
  S operator[](Index i) const { return impl_->values[i]; }

  ArrayX<S>& array() { return impl_->values; }
  const ArrayX<S>& array() const { return impl_->values; }

  S value() const {
    if (size() != 1) fail("Tensor::value: tensor " + shape_str(shape()) + " is not scalar");
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return impl_->grad.size() == impl_->values.size(); }

  /// Gradient accumulator; allocated (zero) on first access.
  ArrayX<S>& grad() { return impl_->ensure_grad(); }
  const ArrayX<S>& grad() const { return const_cast<detail::TensorImpl<S>*>(impl_.get())->ensure_grad(); }

  void zero_grad() {
    if (impl_->grad.size() > 0) impl_->grad.setZero();
  }

  /// Deep copy of values; detached from any graph.
  Tensor clone() const {
    Tensor t = uninitialized(shape(), false);
    t.impl_->values = impl_->values;
    return t;
  }

  /// Shares storage but drops graph edges and gradient tracking.
  Tensor detached() const {
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl<S>>();
    t.impl_->shape = impl_->shape;
    t.impl_->values = impl_->values;  // copy; detached view is not aliased
    t.impl_->requires_grad = false;
    return t;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> t = Tensor<T>::uninitialized(shape(), false);
    for (Index i = 0; i < size(); ++i) t.array()[i] = static_cast<T>(impl_->values[i]);
    return t;
  }

  bool all_finite() const { return impl_->values.isFinite().all(); }

  /// Reverse-mode sweep from a scalar tensor. Accumulates into the grad of
  /// every reachable tensor that requires grad; leaves others untouched.
  void backward() const {
    if (!requires_grad()) fail("backward: tensor does not require grad");
    if (size() != 1) fail("backward: tensor " + shape_str(shape()) + " is not scalar");
    auto* root = impl_.get();

    // Reverse post-order of a DFS over parent edges is a topological order
    // with every consumer before its producers.
    std::vector<detail::TensorImpl<S>*> order;
    std::unordered_set<detail::TensorImpl<S>*> visited;
    std::vector<std::pair<detail::TensorImpl<S>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        auto* p = node->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    for (auto* n : order) n->ensure_grad();
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

  std::shared_ptr<detail::TensorImpl<S>> impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<S>> impl_;
};

/// A named model tensor. Kernels are weight-decay eligible, biases are not.
template <class S>
struct Parameter {
  Tensor<S> tensor;
  std::string name;
  bool weight_decay_eligible = false;
};

namespace detail {

/// Shared plumbing for op implementations: allocates the result and wires
/// graph edges when any parent requires grad.
template <class S>
Tensor<S> make_result(Shape shape, std::initializer_list<Tensor<S>> parents,
                      std::function<void(TensorImpl<S>&)> backward_fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  Tensor<S> out = Tensor<S>::uninitialized(std::move(shape), rg);
  if (rg) {
    auto impl = out.impl();
    for (const auto& p : parents)
      if (p.requires_grad()) impl->parents.push_back(p.impl());
    impl->backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace detail

}  // namespace smarc
