// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace nrt {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Rejected-input errors: shape mismatches, bad arguments.
struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// Diagnostic errors: a primitive produced NaN/Inf, or autodiff was misused.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class DType { f64, f32 };

// One node of the recorded computation graph. Values are always held as
// doubles; f32 tensors round every stored value through float, emulating
// 32-bit storage with 64-bit accumulation.
struct Node {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // empty until backward touches it; persists on params
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  bool requires_grad = false;
  bool is_param = false;
  DType dtype = DType::f64;
  const char* op = "leaf";
  std::string name;  // set for parameters
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double v);
  static Tensor from_data(const Shape& shape, std::vector<double> data);
  static Tensor scalar(double v) { return full({1}, v); }
  // Learnable leaf: requires_grad, persistent gradient buffer.
  static Tensor param(const Shape& shape, std::vector<double> data, std::string name);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[i < 0 ? i + rank() : i]; }
  int64_t numel() const { return static_cast<int64_t>(node_->val.size()); }
  DType dtype() const { return node_->dtype; }

  const std::vector<double>& values() const { return node_->val; }
  double value() const;  // single-element tensors
  // Mutable storage access, for leaves only (edits to graph outputs would
  // desynchronize recorded backprop closures).
  std::vector<double>& leaf_data();
  const std::vector<double>& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  Tensor detach() const;    // same values, no graph
  Tensor astype(DType) const;

  std::shared_ptr<Node> node() const { return node_; }
  Node* operator->() const { return node_.get(); }

 private:
  std::shared_ptr<Node> node_;
};

// ---- graph mode -----------------------------------------------------------

bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Toggle the post-op NaN/Inf scan (on by default).
void set_finite_checks(bool on);

// Thread-local multiply-accumulate counter fed by every matmul-backed
// primitive; used to cross-check the analytical cost model.
struct MacCounter {
  static void reset();
  static uint64_t count();
  static void add(uint64_t macs);
};

// ---- primitives ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);   // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor badd(const Tensor& a, const Tensor& b);  // b's shape is a suffix of a's
Tensor adds(const Tensor& a, double s);
Tensor muls(const Tensor& a, double s);
Tensor neg(const Tensor& a);

// a: [*, M, K]; b: [K, N] (shared) or [*, K, N] with matching batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sin_of(const Tensor& a);
Tensor cos_of(const Tensor& a);

Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]

Tensor reshape(const Tensor& a, const Shape& shape);
// Tiles a into `copies` identical slices along a new leading axis; the
// backward pass sums the per-copy gradients.
Tensor expand0(const Tensor& a, int copies);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);

// Softmax over the last axis, with the max-subtraction guard.
Tensor softmax(const Tensor& a);
// keep[i]==0 rows out entries exactly (weight 0); a fully-masked row yields
// an all-zero row rather than NaN. keep must match a's shape element-wise.
Tensor softmax_masked(const Tensor& a, const std::shared_ptr<std::vector<uint8_t>>& keep);

// Normalizes the last axis to zero mean / unit variance, then scales and
// shifts by the learned gamma/beta (both shaped [C]).
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x @ w + b

// ---- attention -------------------------------------------------------------

struct AttnMask {
  // keep: 1 = attend, 0 = exclude. Shape is either [B, Lk] (same keys
  // masked for every query) or [B, Lq, Lk].
  std::vector<uint8_t> keep;
  Shape shape;
};

struct AttnResult {
  Tensor out;      // [B, Lq, C]
  Tensor weights;  // [B, heads, Lq, Lk], rows softmax-normalized
};

// Scaled dot-product attention over pre-projected q/k/v: heads are split
// from C, softmax(q kT / sqrt(dh)) v per head, heads re-concatenated. The
// learned projections live in nn::MultiHeadAttention.
AttnResult attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                     const AttnMask* mask = nullptr);

// ---- convolution & sampling -------------------------------------------------

// x: [H, W, Cin], w: [KH, KW, Cin, Cout], b: [Cout]; reflect padding of
// (K-1)/2 on each side, so Ho = ceil(H / stride) for odd K.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);

Tensor upsample2x(const Tensor& x);  // nearest, [H,W,C] -> [2H,2W,C]

// Bilinear lookup of fmap [H, W, C] at S continuous (y, x) locations,
// clamp-to-edge; rows with valid[s]==0 come back all-zero and propagate no
// gradient. Result: [S, C].
Tensor bilinear_sample(const Tensor& fmap, const std::vector<double>& ys,
                       const std::vector<double>& xs, const std::vector<uint8_t>& valid);

// ---- autodiff ---------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
// into every reachable parameter; zero them between steps.
void backward(const Tensor& loss);

}  // namespace nrt
