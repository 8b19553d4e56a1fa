#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ivsp {

// Error surface. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
public:
  using Error::Error;
};
class DataError : public Error {
public:
  using Error::Error;
};
class NumericError : public Error {
public:
  using Error::Error;
};
class UnsupportedError : public DataError {
public:
  using DataError::DataError;
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const void* producer = nullptr;  // tape that recorded the producing op
  double precise = 0.0;            // float64 value of scalar reductions
  bool has_precise = false;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  void accumulate(std::span<const float> g) {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

// Dense float32 tensor, row-major, NCHW for images. Value semantics via a
// shared payload; data is treated as immutable once an op has consumed it
// (grad buffers and in-place optimizer updates are the exceptions).
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) {
    int64_t n = shape_numel(shape);
    if (n < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->data.assign(static_cast<size_t>(n), fill);
  }

  Tensor(Shape shape, std::vector<float> values) {
    int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size()))
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }
  static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0f); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), 1.0f); }
  static Tensor full(Shape s, float v) { return Tensor(std::move(s), v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  size_t rank() const { return node_->shape.size(); }

  std::span<float> data() { return node_->data; }
  std::span<const float> data() const { return node_->data; }
  float* raw() { return node_->data.data(); }
  const float* raw() const { return node_->data.data(); }

  float item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  // Scalar value before the float32 store; reductions keep their float64
  // accumulator here so numeric oracles are not limited by float32 ulps.
  double item64() const {
    if (numel() != 1) throw ShapeError("item64() on tensor of shape " + shape_str(shape()));
    return node_->has_precise ? node_->precise : static_cast<double>(node_->data[0]);
  }

  void set_precise(double v) {
    node_->precise = v;
    node_->has_precise = true;
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<float> grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0f);
    return node_->grad;
  }
  std::span<const float> grad() const {
    if (node_->grad.empty()) throw Error("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  bool all_finite() const {
    for (float v : node_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }
  void check_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string("non-finite values in ") + what);
  }

  Tensor clone() const {
    Tensor t(node_->shape, node_->data);
    return t;
  }

  NodePtr node() const { return node_; }

private:
  NodePtr node_;
};

// Define-by-run gradient tape. One tape may be active per thread; ops record
// themselves while a tape is active and any input requires grad. backward()
// walks the recorded ops exactly once, in reverse.
class Tape {
public:
  Tape() {
    if (active_) throw Error("a tape is already active on this thread");
    active_ = this;
  }
  ~Tape() { active_ = nullptr; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(NodePtr out, std::function<void()> backward) {
    out->producer = this;
    out->requires_grad = true;
    steps_.push_back(Step{std::move(out), std::move(backward)});
  }

  size_t size() const { return steps_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Gradients of
  // op outputs recorded here are reset first; leaf gradients accumulate
  // across calls.
  void backward(const Tensor& loss) {
    if (steps_.empty()) throw Error("backward on an empty tape");
    if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss");
    if (loss.node()->producer != this)
      throw Error("loss was not produced under this tape");
    for (auto& s : steps_) s.out->grad.clear();
    loss.node()->grad.assign(1, 1.0f);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      if (it->out->grad.empty()) continue;  // nothing flowed into this op
      it->backward();
    }
  }

private:
  struct Step {
    NodePtr out;
    std::function<void()> backward;
  };
  std::vector<Step> steps_;
  static thread_local Tape* active_;
};

inline thread_local Tape* Tape::active_ = nullptr;

namespace detail {

inline bool grad_wanted(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline void record_if_needed(std::initializer_list<const Tensor*> ins, const Tensor& out,
                             std::function<void()> backward) {
  if (grad_wanted(ins)) Tape::active()->record(out.node(), std::move(backward));
}

}  // namespace detail

// Deterministic RNG. mt19937_64 has a standard-fixed sequence; distributions
// are hand-rolled because the std ones are implementation-defined.
struct Rng {
  std::mt19937_64 gen;

  explicit Rng(uint64_t seed = 0) : gen(seed) {}

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    // Box-Muller; fresh pair each call keeps replay simple
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
  }

  int64_t index(int64_t n) { return static_cast<int64_t>(gen() % static_cast<uint64_t>(n)); }
  bool chance(double p) { return uniform() < p; }

  Tensor uniform_tensor(Shape s, float lo = 0.0f, float hi = 1.0f) {
    Tensor t(std::move(s));
    for (float& v : t.data()) v = static_cast<float>(uniform(lo, hi));
    return t;
  }
  Tensor normal_tensor(Shape s, float stddev = 1.0f) {
    Tensor t(std::move(s));
    for (float& v : t.data()) v = static_cast<float>(normal() * stddev);
    return t;
  }
};

}  // namespace ivsp
