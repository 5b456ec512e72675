// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace nrt {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;
bool g_finite_checks = true;
thread_local uint64_t g_mac_count = 0;

void validate_shape(const Shape& s) {
  if (s.empty()) throw TensorError("empty shape");
  for (int d : s)
    if (d <= 0) throw TensorError("non-positive extent in shape " + shape_str(s));
}

std::shared_ptr<Node> make_node(Shape shape, const char* op) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val.resize(shape_numel(n->shape));
  n->op = op;
  return n;
}

void round_f32(std::vector<double>& v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

void check_finite(const Node& n) {
  if (!g_finite_checks) return;
  for (size_t i = 0; i < n.val.size(); ++i) {
    if (!std::isfinite(n.val[i])) {
      throw NumericError(std::string("non-finite value from op '") + n.op + "' at flat index " +
                         std::to_string(i));
    }
  }
}

DType promote(const Tensor& a, const Tensor& b) {
  return (a.dtype() == DType::f32 && b.dtype() == DType::f32) ? DType::f32 : DType::f64;
}

// Finalize a freshly computed node: dtype rounding, finite scan, and graph
// wiring (dropped entirely under NoGradGuard or when no input needs grads).
Tensor finish(std::shared_ptr<Node> n, DType dtype, std::vector<Tensor> parents,
              std::function<void(Node&)> backprop) {
  n->dtype = dtype;
  if (dtype == DType::f32) round_f32(n->val);
  check_finite(*n);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (g_grad_enabled && needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

void ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
}

// C[M,N] += A[M,K] * B[K,N], all row-major. Accumulation order over k is
// fixed per output element, so row results never depend on M or N blocking.
void gemm_acc(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (int64_t k = 0; k < K; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      const double* brow = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * brow[j];
    }
  }
}

void transpose_copy(const double* src, double* dst, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw TensorError(msg);
}

}  // namespace

// ---- Tensor basics ----------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape) {
  validate_shape(shape);
  return Tensor(make_node(shape, "zeros"));
}

Tensor Tensor::full(const Shape& shape, double v) {
  validate_shape(shape);
  auto n = make_node(shape, "full");
  std::fill(n->val.begin(), n->val.end(), v);
  check_finite(*n);
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data) {
  validate_shape(shape);
  require(static_cast<int64_t>(data.size()) == shape_numel(shape),
          "from_data: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  auto n = make_node(shape, "leaf");
  n->val = std::move(data);
  check_finite(*n);
  return Tensor(std::move(n));
}

Tensor Tensor::param(const Shape& shape, std::vector<double> data, std::string name) {
  Tensor t = from_data(shape, std::move(data));
  t.node()->requires_grad = true;
  t.node()->is_param = true;
  t.node()->op = "param";
  t.node()->name = std::move(name);
  t.node()->grad.assign(t.numel(), 0.0);
  return t;
}

double Tensor::value() const {
  require(numel() == 1, "value(): tensor has " + std::to_string(numel()) + " elements");
  return node_->val[0];
}

std::vector<double>& Tensor::leaf_data() {
  if (node_->backprop) throw NumericError("leaf_data(): tensor is a recorded graph output");
  return node_->val;
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) throw NumericError("grad(): no gradient accumulated");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->val.size(), 0.0); }

Tensor Tensor::detach() const {
  auto n = make_node(node_->shape, "detach");
  n->val = node_->val;
  n->dtype = node_->dtype;
  return Tensor(std::move(n));
}

Tensor Tensor::astype(DType dt) const {
  Tensor a = *this;
  auto n = make_node(node_->shape, "astype");
  n->val = node_->val;
  return finish(std::move(n), dt, {a}, [a](Node& self) {
    ensure_grad(*a.node());
    auto& g = a.node()->grad;
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void set_finite_checks(bool on) { g_finite_checks = on; }

void MacCounter::reset() { g_mac_count = 0; }
uint64_t MacCounter::count() { return g_mac_count; }
void MacCounter::add(uint64_t macs) { g_mac_count += macs; }

// ---- elementwise ------------------------------------------------------------

namespace {

template <class Fwd>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* op, Fwd fwd,
                         std::function<void(Node&, Node&, Node&)> bwd) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  auto n = make_node(a.shape(), op);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = fwd(av[i], bv[i]);
  auto an = a.node(), bn = b.node();
  return finish(std::move(n), promote(a, b), {a, b},
                [an, bn, bwd](Node& self) { bwd(self, *an, *bn); });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "add", [](double x, double y) { return x + y; },
      [](Node& self, Node& pa, Node& pb) {
        if (pa.requires_grad) {
          ensure_grad(pa);
          for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
          ensure_grad(pb);
          for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](Node& self, Node& pa, Node& pb) {
        if (pa.requires_grad) {
          ensure_grad(pa);
          for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
          ensure_grad(pb);
          for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](Node& self, Node& pa, Node& pb) {
        if (pa.requires_grad) {
          ensure_grad(pa);
          for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.val[i];
        }
        if (pb.requires_grad) {
          ensure_grad(pb);
          for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.val[i];
        }
      });
}

Tensor badd(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  require(bs.size() <= as.size(), "badd: rhs rank exceeds lhs");
  for (size_t i = 0; i < bs.size(); ++i)
    require(bs[bs.size() - 1 - i] == as[as.size() - 1 - i],
            "badd: " + shape_str(bs) + " is not a suffix of " + shape_str(as));
  const int64_t inner = shape_numel(bs);
  const int64_t outer = a.numel() / inner;
  auto n = make_node(as, "badd");
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) n->val[o * inner + i] = av[o * inner + i] + bv[i];
  auto an = a.node(), bn = b.node();
  return finish(std::move(n), promote(a, b), {a, b}, [an, bn, outer, inner](Node& self) {
    if (an->requires_grad) {
      ensure_grad(*an);
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) bn->grad[i] += self.grad[o * inner + i];
    }
  });
}

namespace {

template <class F, class DF>
Tensor unary(const Tensor& a, const char* op, F f, DF df) {
  auto n = make_node(a.shape(), op);
  const auto& av = a.values();
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = f(av[i]);
  auto an = a.node();
  return finish(std::move(n), a.dtype(), {a}, [an, df](Node& self) {
    ensure_grad(*an);
    for (size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * df(an->val[i], self.val[i]);
  });
}

}  // namespace

Tensor adds(const Tensor& a, double s) {
  return unary(
      a, "adds", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor muls(const Tensor& a, double s) {
  return unary(
      a, "muls", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return muls(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sin_of(const Tensor& a) {
  return unary(
      a, "sin", [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Tensor cos_of(const Tensor& a) {
  return unary(
      a, "cos", [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

// ---- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  require(as.size() >= 2 && bs.size() >= 2, "matmul: operands must have rank >= 2");
  const int64_t M = as[as.size() - 2];
  const int64_t K = as[as.size() - 1];
  const bool shared_b = bs.size() == 2;
  if (shared_b) {
    require(bs[0] == K, "matmul: inner dims " + shape_str(as) + " @ " + shape_str(bs));
  } else {
    require(bs.size() == as.size(), "matmul: batched rank mismatch");
    for (size_t i = 0; i + 2 < as.size(); ++i)
      require(as[i] == bs[i], "matmul: batch dims differ");
    require(bs[bs.size() - 2] == K, "matmul: inner dims " + shape_str(as) + " @ " + shape_str(bs));
  }
  const int64_t N = bs[bs.size() - 1];
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(static_cast<int>(N));
  auto n = make_node(out_shape, "matmul");

  const double* A = a.values().data();
  const double* B = b.values().data();
  double* C = n->val.data();
  for (int64_t t = 0; t < batch; ++t)
    gemm_acc(A + t * M * K, shared_b ? B : B + t * K * N, C + t * M * N, M, K, N);
  MacCounter::add(static_cast<uint64_t>(batch) * M * K * N);

  auto an = a.node(), bn = b.node();
  return finish(std::move(n), promote(a, b), {a, b}, [an, bn, batch, M, K, N,
                                                      shared_b](Node& self) {
    const double* G = self.grad.data();
    if (an->requires_grad) {
      ensure_grad(*an);
      std::vector<double> bt(static_cast<size_t>(K) * N);
      for (int64_t t = 0; t < batch; ++t) {
        const double* Bt_src = shared_b ? bn->val.data() : bn->val.data() + t * K * N;
        if (t == 0 || !shared_b) transpose_copy(Bt_src, bt.data(), K, N);  // bt: [N,K]
        gemm_acc(G + t * M * N, bt.data(), an->grad.data() + t * M * K, M, N, K);
      }
      MacCounter::add(static_cast<uint64_t>(batch) * M * K * N);
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      std::vector<double> at(static_cast<size_t>(M) * K);
      for (int64_t t = 0; t < batch; ++t) {
        transpose_copy(an->val.data() + t * M * K, at.data(), M, K);  // at: [K,M]
        gemm_acc(at.data(), G + t * M * N, bn->grad.data() + (shared_b ? 0 : t * K * N), K, M, N);
      }
      MacCounter::add(static_cast<uint64_t>(batch) * M * K * N);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return badd(matmul(x, w), b);
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
  auto n = make_node({1}, "sum");
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  n->val[0] = acc;
  auto an = a.node();
  return finish(std::move(n), a.dtype(), {a}, [an](Node& self) {
    ensure_grad(*an);
    const double g = self.grad[0];
    for (double& x : an->grad) x += g;
  });
}

Tensor mean(const Tensor& a) { return muls(sum(a), 1.0 / static_cast<double>(a.numel())); }

// ---- data movement ----------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
  validate_shape(shape);
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto n = make_node(shape, "reshape");
  n->val = a.values();
  auto an = a.node();
  return finish(std::move(n), a.dtype(), {a}, [an](Node& self) {
    ensure_grad(*an);
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor expand0(const Tensor& a, int copies) {
  require(copies >= 1, "expand0: need at least one copy");
  Shape out_shape;
  out_shape.push_back(copies);
  for (int d : a.shape()) out_shape.push_back(d);
  auto n = make_node(out_shape, "expand0");
  const int64_t sz = a.numel();
  for (int t = 0; t < copies; ++t)
    std::memcpy(n->val.data() + t * sz, a.values().data(), sz * sizeof(double));
  auto an = a.node();
  return finish(std::move(n), a.dtype(), {a}, [an, copies, sz](Node& self) {
    ensure_grad(*an);
    for (int t = 0; t < copies; ++t) {
      const double* g = self.grad.data() + t * sz;
      for (int64_t i = 0; i < sz; ++i) an->grad[i] += g[i];
    }
  });
}

namespace {

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// out[i] = src index for output flat position i under the given permutation
std::shared_ptr<std::vector<int64_t>> permute_map(const Shape& in_shape,
                                                  const std::vector<int>& perm) {
  const size_t r = in_shape.size();
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  auto in_strides = row_major_strides(in_shape);
  auto map = std::make_shared<std::vector<int64_t>>(shape_numel(out_shape));
  std::vector<int64_t> idx(r, 0);
  int64_t src = 0;
  // walk output positions in order, maintaining the source flat index
  for (int64_t o = 0; o < static_cast<int64_t>(map->size()); ++o) {
    (*map)[o] = src;
    for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
      idx[ax]++;
      src += in_strides[perm[ax]];
      if (idx[ax] < out_shape[ax]) break;
      src -= idx[ax] * in_strides[perm[ax]];
      idx[ax] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const size_t r = a.shape().size();
  require(perm.size() == r, "permute: axis list rank mismatch");
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    require(p >= 0 && p < static_cast<int>(r) && !seen[p], "permute: invalid axis list");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[perm[i]];
  auto map = permute_map(a.shape(), perm);
  auto n = make_node(out_shape, "permute");
  const auto& av = a.values();
  for (size_t o = 0; o < n->val.size(); ++o) n->val[o] = av[(*map)[o]];
  auto an = a.node();
  return finish(std::move(n), a.dtype(), {a}, [an, map](Node& self) {
    ensure_grad(*an);
    for (size_t o = 0; o < self.grad.size(); ++o) an->grad[(*map)[o]] += self.grad[o];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const int r = static_cast<int>(s0.size());
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "concat: bad axis");
  int total = 0;
  for (const auto& p : parts) {
    require(p.rank() == r, "concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      require(i == axis || p.shape()[i] == s0[i], "concat: extent mismatch off-axis");
    total += p.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  auto n = make_node(out_shape, "concat");

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (int i = axis + 1; i < r; ++i) inner *= s0[i];
  const int64_t out_row = static_cast<int64_t>(total) * inner;

  std::vector<int64_t> offsets(parts.size());
  int64_t off = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    offsets[p] = off;
    const int64_t seg = static_cast<int64_t>(parts[p].shape()[axis]) * inner;
    const auto& pv = parts[p].values();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(n->val.data() + o * out_row + off, pv.data() + o * seg, seg * sizeof(double));
    off += seg;
  }
  DType dt = DType::f32;
  for (const auto& p : parts)
    if (p.dtype() == DType::f64) dt = DType::f64;
  std::vector<std::shared_ptr<Node>> pnodes;
  for (const auto& p : parts) pnodes.push_back(p.node());
  return finish(std::move(n), dt, parts, [pnodes, offsets, outer, inner, out_row](Node& self) {
    for (size_t p = 0; p < pnodes.size(); ++p) {
      Node& pn = *pnodes[p];
      if (!pn.requires_grad) continue;
      ensure_grad(pn);
      const int64_t seg = static_cast<int64_t>(pn.val.size()) / outer;
      for (int64_t o = 0; o < outer; ++o) {
        const double* g = self.grad.data() + o * out_row + offsets[p];
        double* dst = pn.grad.data() + o * seg;
        for (int64_t i = 0; i < seg; ++i) dst[i] += g[i];
      }
    }
  });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  const Shape& s = a.shape();
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "slice: bad axis");
  require(start >= 0 && len > 0 && start + len <= s[axis], "slice: out of range");
  Shape out_shape = s;
  out_shape[axis] = len;
  auto n = make_node(out_shape, "slice");

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < r; ++i) inner *= s[i];
  const int64_t in_row = static_cast<int64_t>(s[axis]) * inner;
  const int64_t out_row = static_cast<int64_t>(len) * inner;
  const int64_t off = static_cast<int64_t>(start) * inner;

  const auto& av = a.values();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(n->val.data() + o * out_row, av.data() + o * in_row + off,
                out_row * sizeof(double));
  auto an = a.node();
  return finish(std::move(n), a.dtype(), {a}, [an, outer, in_row, out_row, off](Node& self) {
    ensure_grad(*an);
    for (int64_t o = 0; o < outer; ++o) {
      const double* g = self.grad.data() + o * out_row;
      double* dst = an->grad.data() + o * in_row + off;
      for (int64_t i = 0; i < out_row; ++i) dst[i] += g[i];
    }
  });
}

// ---- softmax / layernorm ------------------------------------------------------

namespace {

Tensor softmax_impl(const Tensor& a, std::shared_ptr<std::vector<uint8_t>> keep) {
  if (keep)
    require(static_cast<int64_t>(keep->size()) == a.numel(), "softmax_masked: mask size mismatch");
  const int64_t C = a.shape().back();
  const int64_t rows = a.numel() / C;
  auto n = make_node(a.shape(), keep ? "softmax_masked" : "softmax");
  const auto& av = a.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * C;
    const uint8_t* m = keep ? keep->data() + r * C : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < C; ++c)
      if ((!m || m[c]) && x[c] > mx) mx = x[c];
    double* y = n->val.data() + r * C;
    if (mx == -std::numeric_limits<double>::infinity()) {
      std::fill(y, y + C, 0.0);  // fully masked row
      continue;
    }
    double denom = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      y[c] = (!m || m[c]) ? std::exp(x[c] - mx) : 0.0;
      denom += y[c];
    }
    const double inv = 1.0 / denom;
    for (int64_t c = 0; c < C; ++c) y[c] *= inv;
  }
  auto an = a.node();
  return finish(std::move(n), a.dtype(), {a}, [an, rows, C](Node& self) {
    ensure_grad(*an);
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.val.data() + r * C;
      const double* g = self.grad.data() + r * C;
      double dot = 0.0;
      for (int64_t c = 0; c < C; ++c) dot += y[c] * g[c];
      double* dx = an->grad.data() + r * C;
      for (int64_t c = 0; c < C; ++c) dx[c] += y[c] * (g[c] - dot);
    }
  });
}

}  // namespace

Tensor softmax(const Tensor& a) { return softmax_impl(a, nullptr); }

Tensor softmax_masked(const Tensor& a, const std::shared_ptr<std::vector<uint8_t>>& keep) {
  require(keep != nullptr, "softmax_masked: null mask");
  return softmax_impl(a, keep);
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int64_t C = x.shape().back();
  require(gamma.rank() == 1 && gamma.dim(0) == C, "layernorm: gamma shape");
  require(beta.rank() == 1 && beta.dim(0) == C, "layernorm: beta shape");
  const int64_t rows = x.numel() / C;
  auto n = make_node(x.shape(), "layernorm");
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  auto invstd = std::make_shared<std::vector<double>>(rows);
  auto mu = std::make_shared<std::vector<double>>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * C;
    double m = 0.0;
    for (int64_t c = 0; c < C; ++c) m += xr[c];
    m /= static_cast<double>(C);
    double var = 0.0;
    for (int64_t c = 0; c < C; ++c) var += (xr[c] - m) * (xr[c] - m);
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + eps);
    (*mu)[r] = m;
    (*invstd)[r] = is;
    double* y = n->val.data() + r * C;
    for (int64_t c = 0; c < C; ++c) y[c] = (xr[c] - m) * is * gv[c] + bv[c];
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return finish(std::move(n), x.dtype(), {x, gamma, beta},
                [xn, gn, bn, mu, invstd, rows, C](Node& self) {
                  std::vector<double> xhat(C), ggam(C);
                  for (int64_t r = 0; r < rows; ++r) {
                    const double* xr = xn->val.data() + r * C;
                    const double* g = self.grad.data() + r * C;
                    const double is = (*invstd)[r];
                    const double m = (*mu)[r];
                    double mean_gg = 0.0, mean_ggx = 0.0;
                    for (int64_t c = 0; c < C; ++c) {
                      xhat[c] = (xr[c] - m) * is;
                      ggam[c] = g[c] * gn->val[c];
                      mean_gg += ggam[c];
                      mean_ggx += ggam[c] * xhat[c];
                    }
                    mean_gg /= static_cast<double>(C);
                    mean_ggx /= static_cast<double>(C);
                    if (gn->requires_grad) {
                      ensure_grad(*gn);
                      for (int64_t c = 0; c < C; ++c) gn->grad[c] += g[c] * xhat[c];
                    }
                    if (bn->requires_grad) {
                      ensure_grad(*bn);
                      for (int64_t c = 0; c < C; ++c) bn->grad[c] += g[c];
                    }
                    if (xn->requires_grad) {
                      ensure_grad(*xn);
                      double* dx = xn->grad.data() + r * C;
                      for (int64_t c = 0; c < C; ++c)
                        dx[c] += is * (ggam[c] - mean_gg - xhat[c] * mean_ggx);
                    }
                  }
                });
}

// ---- attention ---------------------------------------------------------------

AttnResult attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                     const AttnMask* mask) {
  require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3,
          "attention: q/k/v must be [B, L, C]");
  const int B = q.dim(0), Lq = q.dim(1), C = q.dim(2);
  const int Lk = k.dim(1);
  require(k.dim(0) == B && v.dim(0) == B, "attention: batch mismatch");
  require(k.dim(2) == C && v.dim(2) == C, "attention: width mismatch");
  require(v.dim(1) == Lk, "attention: key/value length mismatch");
  require(heads >= 1 && C % heads == 0, "attention: C must be divisible by heads");
  const int dh = C / heads;

  // [B, L, C] -> [B, h, L, dh]
  auto split = [&](const Tensor& t, int L) {
    return permute(reshape(t, {B, L, heads, dh}), {0, 2, 1, 3});
  };
  Tensor qh = split(q, Lq);
  Tensor kh = split(k, Lk);
  Tensor vh = split(v, Lk);
  Tensor kt = permute(kh, {0, 1, 3, 2});  // [B, h, dh, Lk]
  Tensor scores = muls(matmul(qh, kt), 1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor weights;
  if (mask) {
    const bool per_query = mask->shape.size() == 3;
    require(per_query ? (mask->shape == Shape{B, Lq, Lk}) : (mask->shape == Shape{B, Lk}),
            "attention: mask must be [B,Lk] or [B,Lq,Lk]");
    auto keep = std::make_shared<std::vector<uint8_t>>(
        static_cast<size_t>(B) * heads * Lq * Lk);
    size_t o = 0;
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < Lq; ++i) {
          const uint8_t* src =
              mask->keep.data() + (per_query ? (static_cast<size_t>(b) * Lq + i) * Lk
                                             : static_cast<size_t>(b) * Lk);
          std::memcpy(keep->data() + o, src, Lk);
          o += Lk;
        }
    weights = softmax_masked(scores, keep);
  } else {
    weights = softmax(scores);
  }

  Tensor ctx = matmul(weights, vh);                       // [B, h, Lq, dh]
  Tensor out = reshape(permute(ctx, {0, 2, 1, 3}), {B, Lq, C});
  return {out, weights};
}

// ---- conv / upsample / bilinear -----------------------------------------------

namespace {

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  require(x.rank() == 3, "conv2d: x must be [H,W,Cin]");
  require(w.rank() == 4, "conv2d: w must be [KH,KW,Cin,Cout]");
  const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int KH = w.dim(0), KW = w.dim(1), Cout = w.dim(3);
  require(w.dim(2) == Cin, "conv2d: channel mismatch");
  require(b.rank() == 1 && b.dim(0) == Cout, "conv2d: bias shape");
  require(stride >= 1, "conv2d: bad stride");
  const int pad_h = (KH - 1) / 2, pad_w = (KW - 1) / 2;
  const int Ho = (H + 2 * pad_h - KH) / stride + 1;
  const int Wo = (W + 2 * pad_w - KW) / stride + 1;
  const int cells = Ho * Wo, kk = KH * KW;

  // source pixel index for every (output cell, kernel tap); reflect padding
  auto map = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(cells) * kk);
  {
    size_t m = 0;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox)
        for (int ky = 0; ky < KH; ++ky)
          for (int kx = 0; kx < KW; ++kx) {
            const int sy = reflect_index(oy * stride - pad_h + ky, H);
            const int sx = reflect_index(ox * stride - pad_w + kx, W);
            (*map)[m++] = sy * W + sx;
          }
  }

  const int64_t cols_w = static_cast<int64_t>(kk) * Cin;
  std::vector<double> cols(static_cast<size_t>(cells) * cols_w);
  const double* xv = x.values().data();
  for (int64_t o = 0; o < cells; ++o)
    for (int t = 0; t < kk; ++t)
      std::memcpy(cols.data() + o * cols_w + static_cast<int64_t>(t) * Cin,
                  xv + static_cast<int64_t>((*map)[o * kk + t]) * Cin, Cin * sizeof(double));

  auto n = make_node({Ho, Wo, Cout}, "conv2d");
  gemm_acc(cols.data(), w.values().data(), n->val.data(), cells, cols_w, Cout);
  MacCounter::add(static_cast<uint64_t>(cells) * cols_w * Cout);
  const auto& bv = b.values();
  for (int64_t o = 0; o < cells; ++o)
    for (int c = 0; c < Cout; ++c) n->val[o * Cout + c] += bv[c];

  auto xn = x.node(), wn = w.node(), bn = b.node();
  return finish(
      std::move(n), promote(x, w), {x, w, b},
      [xn, wn, bn, map, cells, kk, Cin, Cout, cols_w](Node& self) {
        const double* G = self.grad.data();
        if (bn->requires_grad) {
          ensure_grad(*bn);
          for (int64_t o = 0; o < cells; ++o)
            for (int c = 0; c < Cout; ++c) bn->grad[c] += G[o * Cout + c];
        }
        if (wn->requires_grad) {
          ensure_grad(*wn);
          // dW = colsT @ G, cols rebuilt from the saved index map
          std::vector<double> col(cols_w);
          for (int64_t o = 0; o < cells; ++o) {
            for (int t = 0; t < kk; ++t)
              std::memcpy(col.data() + static_cast<int64_t>(t) * Cin,
                          xn->val.data() + static_cast<int64_t>((*map)[o * kk + t]) * Cin,
                          Cin * sizeof(double));
            const double* g = G + o * Cout;
            for (int64_t i = 0; i < cols_w; ++i) {
              const double ci = col[i];
              if (ci == 0.0) continue;
              double* dw = wn->grad.data() + i * Cout;
              for (int c = 0; c < Cout; ++c) dw[c] += ci * g[c];
            }
          }
          MacCounter::add(static_cast<uint64_t>(cells) * cols_w * Cout);
        }
        if (xn->requires_grad) {
          ensure_grad(*xn);
          std::vector<double> wt(static_cast<size_t>(Cout) * cols_w);
          transpose_copy(wn->val.data(), wt.data(), cols_w, Cout);
          std::vector<double> dcol(cols_w);
          for (int64_t o = 0; o < cells; ++o) {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            gemm_acc(G + o * Cout, wt.data(), dcol.data(), 1, Cout, cols_w);
            for (int t = 0; t < kk; ++t) {
              double* dst = xn->grad.data() + static_cast<int64_t>((*map)[o * kk + t]) * Cin;
              const double* src = dcol.data() + static_cast<int64_t>(t) * Cin;
              for (int c = 0; c < Cin; ++c) dst[c] += src[c];
            }
          }
          MacCounter::add(static_cast<uint64_t>(cells) * cols_w * Cout);
        }
      });
}

Tensor upsample2x(const Tensor& x) {
  require(x.rank() == 3, "upsample2x: x must be [H,W,C]");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  auto n = make_node({2 * H, 2 * W, C}, "upsample2x");
  const double* xv = x.values().data();
  for (int y = 0; y < 2 * H; ++y)
    for (int xcol = 0; xcol < 2 * W; ++xcol)
      std::memcpy(n->val.data() + (static_cast<int64_t>(y) * 2 * W + xcol) * C,
                  xv + (static_cast<int64_t>(y / 2) * W + xcol / 2) * C, C * sizeof(double));
  auto xn = x.node();
  return finish(std::move(n), x.dtype(), {x}, [xn, H, W, C](Node& self) {
    ensure_grad(*xn);
    for (int y = 0; y < 2 * H; ++y)
      for (int xcol = 0; xcol < 2 * W; ++xcol) {
        const double* g = self.grad.data() + (static_cast<int64_t>(y) * 2 * W + xcol) * C;
        double* dst = xn->grad.data() + (static_cast<int64_t>(y / 2) * W + xcol / 2) * C;
        for (int c = 0; c < C; ++c) dst[c] += g[c];
      }
  });
}

Tensor bilinear_sample(const Tensor& fmap, const std::vector<double>& ys,
                       const std::vector<double>& xs, const std::vector<uint8_t>& valid) {
  require(fmap.rank() == 3, "bilinear_sample: fmap must be [H,W,C]");
  const int H = fmap.dim(0), W = fmap.dim(1), C = fmap.dim(2);
  const size_t S = ys.size();
  require(xs.size() == S && valid.size() == S, "bilinear_sample: point array sizes differ");

  struct Tap {
    int32_t idx[4];
    double w[4];
  };
  auto taps = std::make_shared<std::vector<Tap>>(S);
  for (size_t s = 0; s < S; ++s) {
    Tap& t = (*taps)[s];
    if (!valid[s]) {
      t = {{0, 0, 0, 0}, {0, 0, 0, 0}};
      continue;
    }
    double y = std::clamp(ys[s], 0.0, static_cast<double>(H - 1));
    double x = std::clamp(xs[s], 0.0, static_cast<double>(W - 1));
    int y0 = std::min(static_cast<int>(y), H - 2 >= 0 ? H - 2 : 0);
    int x0 = std::min(static_cast<int>(x), W - 2 >= 0 ? W - 2 : 0);
    const double fy = y - y0, fx = x - x0;
    const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    t.idx[0] = y0 * W + x0;
    t.idx[1] = y0 * W + x1;
    t.idx[2] = y1 * W + x0;
    t.idx[3] = y1 * W + x1;
    t.w[0] = (1 - fy) * (1 - fx);
    t.w[1] = (1 - fy) * fx;
    t.w[2] = fy * (1 - fx);
    t.w[3] = fy * fx;
  }

  auto n = make_node({static_cast<int>(S), C}, "bilinear_sample");
  const double* fv = fmap.values().data();
  for (size_t s = 0; s < S; ++s) {
    double* out = n->val.data() + s * C;
    if (!valid[s]) continue;  // stays zero
    const Tap& t = (*taps)[s];
    for (int tap = 0; tap < 4; ++tap) {
      const double w = t.w[tap];
      if (w == 0.0) continue;
      const double* src = fv + static_cast<int64_t>(t.idx[tap]) * C;
      for (int c = 0; c < C; ++c) out[c] += w * src[c];
    }
  }
  auto fn = fmap.node();
  auto vmask = std::make_shared<std::vector<uint8_t>>(valid);
  return finish(std::move(n), fmap.dtype(), {fmap}, [fn, taps, vmask, C](Node& self) {
    ensure_grad(*fn);
    for (size_t s = 0; s < taps->size(); ++s) {
      if (!(*vmask)[s]) continue;
      const Tap& t = (*taps)[s];
      const double* g = self.grad.data() + s * C;
      for (int tap = 0; tap < 4; ++tap) {
        const double w = t.w[tap];
        if (w == 0.0) continue;
        double* dst = fn->grad.data() + static_cast<int64_t>(t.idx[tap]) * C;
        for (int c = 0; c < C; ++c) dst[c] += w * g[c];
      }
    }
  });
}

// ---- backward -----------------------------------------------------------------

void backward(const Tensor& loss) {
  require(loss.defined(), "backward: undefined tensor");
  require(loss.numel() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  Node* root = loss.node().get();
  if (!root->requires_grad)
    throw NumericError("backward: tensor is not attached to a recorded graph");

  // iterative post-order DFS -> topological order
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  ensure_grad(*root);
  root->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

}  // namespace nrt
