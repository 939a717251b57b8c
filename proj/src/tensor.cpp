#include "lupi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lupi {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_l2_zero_norm_count = 0;

enum OpKind : int {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatmul,
  kRelu,
  kAbs,
  kExp,
  kLog,
  kSqrt,
  kMeanAll,
  kSumAll,
  kSumLast,
  kSoftmax,
  kLogSoftmax,
  kL2Norm,
  kMaxScalar,
  kPairwiseSqE,
  kRows,
  kAddRowVec,
  kConv,
  kInstNorm,
  kAvgPool2,
  kGap,
};

bool is_scalar_like(const Shape& s) { return numel(s) == 1; }

void check_finite(const Tensor& x, const char* op) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) fail(std::string(op) + ": non-finite input rejected");
  }
}

// Elementwise shape rule: equal shapes, or one single-element operand.
enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast elementwise_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (is_scalar_like(a.shape())) return Broadcast::kLeftScalar;
  if (is_scalar_like(b.shape())) return Broadcast::kRightScalar;
  fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
       shape_str(b.shape()));
}

std::size_t last_dim(const Shape& s, const char* op) {
  if (s.empty()) fail(std::string(op) + ": rank-0 tensor has no axis");
  return s.back();
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor() : data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

Tensor Tensor::scalar(double value) {
  Tensor t;
  (*t.data_)[0] = value;
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  Tensor t;
  t.data_ = std::make_shared<std::vector<double>>(numel(shape), 0.0);
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data_->begin(), t.data_->end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (numel(shape) != data.size())
    fail("Tensor: shape " + shape_str(shape) + " does not match " +
         std::to_string(data.size()) + " values");
  Tensor t;
  t.data_ = std::make_shared<std::vector<double>>(std::move(data));
  t.shape_ = std::move(shape);
  return t;
}

double Tensor::item() const {
  if (data_->size() != 1)
    fail("item: tensor " + shape_str(shape_) + " is not a single value");
  return (*data_)[0];
}

// ---- Tape ---------------------------------------------------------------

struct Tape::Node {
  int kind;
  std::vector<std::int64_t> inputs;
  std::vector<Tensor> saved;  // value snapshots (buffers shared, not copied)
  Shape out_shape;
  double scalar = 0.0;
  std::vector<std::size_t> indices;
  std::string leaf_name;
};

Tape::Tape() {
  if (g_active_tape != nullptr) fail("Tape: another tape is already active on this thread");
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = nullptr; }

Tape* Tape::active() { return g_active_tape; }

std::size_t Tape::num_nodes() const { return nodes_.size(); }

Tensor Tape::watch(const std::string& name, const Tensor& values) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) {
    const Node& node = nodes_[static_cast<std::size_t>(it->second)];
    if (node.saved[0].buffer() != values.buffer())
      fail("watch: leaf '" + name + "' is already bound to different storage");
    Tensor view = values;
    view.node_ = it->second;
    return view;
  }
  Node node;
  node.kind = kLeaf;
  node.out_shape = values.shape();
  node.saved.push_back(values);
  node.leaf_name = name;
  nodes_.push_back(std::move(node));
  const std::int64_t id = static_cast<std::int64_t>(nodes_.size()) - 1;
  leaves_.emplace(name, id);
  Tensor view = values;
  view.node_ = id;
  return view;
}

Tensor record_op(int kind, const std::vector<Tensor>& inputs, Tensor out,
                 std::vector<Tensor> saved, double scalar,
                 std::vector<std::size_t> indices) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  bool tracked = false;
  for (const Tensor& t : inputs) tracked = tracked || t.requires_grad();
  if (!tracked) return out;
  Tape::Node node;
  node.kind = kind;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node.inputs.push_back(t.node());
  node.saved = std::move(saved);
  node.out_shape = out.shape();
  node.scalar = scalar;
  node.indices = std::move(indices);
  tape->nodes_.push_back(std::move(node));
  out.node_ = static_cast<std::int64_t>(tape->nodes_.size()) - 1;
  return out;
}

// ---- forward kernels ------------------------------------------------------

namespace {

Tensor binary_op(int kind, const Tensor& a, const Tensor& b, const char* name) {
  const Broadcast mode = elementwise_mode(a, b, name);
  const Tensor& big = (mode == Broadcast::kLeftScalar) ? b : a;
  Tensor out = Tensor::zeros(big.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.mutable_data();
  const std::size_t n = ov.size();
  const double as = av[0];
  const double bs = bv[0];
  switch (kind) {
    case kAdd:
      if (mode == Broadcast::kNone)
        for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
      else if (mode == Broadcast::kRightScalar)
        for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bs;
      else
        for (std::size_t i = 0; i < n; ++i) ov[i] = as + bv[i];
      break;
    case kSub:
      if (mode == Broadcast::kNone)
        for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
      else if (mode == Broadcast::kRightScalar)
        for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] - bs;
      else
        for (std::size_t i = 0; i < n; ++i) ov[i] = as - bv[i];
      break;
    case kMul:
      if (mode == Broadcast::kNone)
        for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
      else if (mode == Broadcast::kRightScalar)
        for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bs;
      else
        for (std::size_t i = 0; i < n; ++i) ov[i] = as * bv[i];
      break;
  }
  return record_op(kind, {a, b}, std::move(out), {a, b}, 0.0, {});
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(kAdd, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(kSub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(kMul, a, b, "mul"); }
Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    fail("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &ov[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return record_op(kMatmul, {a, b}, std::move(out), {a, b}, 0.0, {});
}

namespace {

Tensor unary_op(int kind, const Tensor& x, const char* name) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.data();
  auto ov = out.mutable_data();
  const std::size_t n = xv.size();
  switch (kind) {
    case kRelu:
      for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      break;
    case kAbs:
      for (std::size_t i = 0; i < n; ++i) ov[i] = std::fabs(xv[i]);
      break;
    case kExp:
      for (std::size_t i = 0; i < n; ++i) {
        if (!(xv[i] <= 709.0)) fail("exp: input would overflow");
        ov[i] = std::exp(xv[i]);
      }
      break;
    case kLog:
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(xv[i]) || xv[i] <= 0.0)
          fail("log: non-positive or non-finite input rejected");
        ov[i] = std::log(xv[i]);
      }
      break;
    case kSqrt:
      for (std::size_t i = 0; i < n; ++i) {
        if (xv[i] < 0.0) fail("sqrt: negative input rejected");
        ov[i] = std::sqrt(xv[i]);
      }
      break;
  }
  // exp and sqrt save the output (their derivative reuses it); others the input.
  Tensor snapshot = (kind == kExp || kind == kSqrt) ? out : x;
  return record_op(kind, {x}, std::move(out), {std::move(snapshot)}, 0.0, {});
}

}  // namespace

Tensor relu(const Tensor& x) { return unary_op(kRelu, x, "relu"); }
Tensor abs(const Tensor& x) { return unary_op(kAbs, x, "abs"); }
Tensor exp(const Tensor& x) { return unary_op(kExp, x, "exp"); }
Tensor log(const Tensor& x) { return unary_op(kLog, x, "log"); }
Tensor sqrt(const Tensor& x) { return unary_op(kSqrt, x, "sqrt"); }

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc / static_cast<double>(x.size()));
  return record_op(kMeanAll, {x}, std::move(out), {x}, 0.0, {});
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  return record_op(kSumAll, {x}, std::move(out), {x}, 0.0, {});
}

Tensor sum_last_axis(const Tensor& x) {
  const std::size_t last = last_dim(x.shape(), "sum_last_axis");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out = Tensor::zeros(out_shape);
  auto xv = x.data();
  auto ov = out.mutable_data();
  const std::size_t rows_n = out.size();
  for (std::size_t r = 0; r < rows_n; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < last; ++j) acc += xv[r * last + j];
    ov[r] = acc;
  }
  return record_op(kSumLast, {x}, std::move(out), {x}, 0.0, {});
}

namespace {

Tensor softmax_impl(const Tensor& x, bool log_form) {
  const char* name = log_form ? "log_softmax" : "softmax";
  check_finite(x, name);
  const std::size_t last = last_dim(x.shape(), name);
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.data();
  auto ov = out.mutable_data();
  const std::size_t rows_n = x.size() / last;
  for (std::size_t r = 0; r < rows_n; ++r) {
    const double* row = &xv[r * last];
    double* orow = &ov[r * last];
    double hi = row[0];
    for (std::size_t j = 1; j < last; ++j) hi = std::max(hi, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < last; ++j) denom += std::exp(row[j] - hi);
    if (log_form) {
      const double log_denom = std::log(denom);
      for (std::size_t j = 0; j < last; ++j) orow[j] = row[j] - hi - log_denom;
    } else {
      for (std::size_t j = 0; j < last; ++j) orow[j] = std::exp(row[j] - hi) / denom;
    }
  }
  return record_op(log_form ? kLogSoftmax : kSoftmax, {x}, out, {out}, 0.0, {});
}

}  // namespace

Tensor softmax(const Tensor& x) { return softmax_impl(x, false); }
Tensor log_softmax(const Tensor& x) { return softmax_impl(x, true); }

Tensor l2_normalize(const Tensor& x) {
  const std::size_t last = last_dim(x.shape(), "l2_normalize");
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t rows_n = x.size() / last;
  Tensor norms = Tensor::zeros({rows_n});
  auto xv = x.data();
  auto ov = out.mutable_data();
  auto nv = norms.mutable_data();
  for (std::size_t r = 0; r < rows_n; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < last; ++j) sq += xv[r * last + j] * xv[r * last + j];
    const double norm = std::sqrt(sq);
    nv[r] = norm;
    if (norm == 0.0) {
      ++g_l2_zero_norm_count;
      for (std::size_t j = 0; j < last; ++j) ov[r * last + j] = xv[r * last + j];
    } else {
      for (std::size_t j = 0; j < last; ++j) ov[r * last + j] = xv[r * last + j] / norm;
    }
  }
  return record_op(kL2Norm, {x}, out, {x, out, std::move(norms)}, 0.0, {});
}

std::uint64_t l2_zero_norm_count() { return g_l2_zero_norm_count; }
void reset_l2_zero_norm_count() { g_l2_zero_norm_count = 0; }

Tensor max_scalar(const Tensor& x, double s) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > s ? xv[i] : s;
  return record_op(kMaxScalar, {x}, std::move(out), {x}, s, {});
}

Tensor pairwise_sq_euclidean(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
    fail("pairwise_sq_euclidean: shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  const std::size_t m = a.shape()[0], n = b.shape()[0], d = a.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = av[i * d + p] - bv[j * d + p];
        acc += diff * diff;
      }
      ov[i * n + j] = acc;
    }
  }
  return record_op(kPairwiseSqE, {a, b}, std::move(out), {a, b}, 0.0, {});
}

Tensor rows(const Tensor& x, const std::vector<std::size_t>& indices) {
  if (x.shape().size() != 2) fail("rows: expected a matrix, got " + shape_str(x.shape()));
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  for (std::size_t idx : indices)
    if (idx >= m) fail("rows: index " + std::to_string(idx) + " out of range for " +
                       shape_str(x.shape()));
  Tensor out = Tensor::zeros({indices.size(), d});
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(&xv[indices[r] * d], d, &ov[r * d]);
  return record_op(kRows, {x}, std::move(out), {x}, 0.0, indices);
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.shape().size() != 2 || v.shape().size() != 1 || x.shape()[1] != v.shape()[0])
    fail("add_rowvec: shape mismatch " + shape_str(x.shape()) + " vs " +
         shape_str(v.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.data();
  auto vv = v.data();
  auto ov = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] + vv[j];
  return record_op(kAddRowVec, {x, v}, std::move(out), {x, v}, 0.0, {});
}

Tensor conv2d3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[2] != 3 || ws[3] != 3 || xs[1] != ws[1] ||
      b.shape().size() != 1 || b.shape()[0] != ws[0])
    fail("conv2d3x3: shape mismatch " + shape_str(xs) + " vs " + shape_str(ws));
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], O = ws[0];
  Tensor out = Tensor::zeros({N, O, H, W});
  auto xv = x.data();
  auto wv = w.data();
  auto bv = b.data();
  auto ov = out.mutable_data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      double* oplane = &ov[(n * O + o) * H * W];
      std::fill_n(oplane, H * W, bv[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const double* xplane = &xv[(n * C + c) * H * W];
        const double* k = &wv[(o * C + c) * 9];
        for (std::size_t y = 0; y < H; ++y) {
          const std::size_t ky0 = (y == 0) ? 1 : 0;
          const std::size_t ky1 = (y == H - 1) ? 2 : 3;
          for (std::size_t xcol = 0; xcol < W; ++xcol) {
            const std::size_t kx0 = (xcol == 0) ? 1 : 0;
            const std::size_t kx1 = (xcol == W - 1) ? 2 : 3;
            double acc = 0.0;
            for (std::size_t ky = ky0; ky < ky1; ++ky) {
              const double* xrow = &xplane[(y + ky - 1) * W + xcol - 1];
              const double* krow = &k[ky * 3];
              for (std::size_t kx = kx0; kx < kx1; ++kx) acc += xrow[kx] * krow[kx];
            }
            oplane[y * W + xcol] += acc;
          }
        }
      }
    }
  }
  return record_op(kConv, {x, w, b}, std::move(out), {x, w, b}, 0.0, {});
}

Tensor instance_norm2d(const Tensor& x, double eps) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) fail("instance_norm2d: expected (n,c,h,w), got " + shape_str(xs));
  if (!(eps > 0.0)) fail("instance_norm2d: eps must be positive");
  const std::size_t NC = xs[0] * xs[1], HW = xs[2] * xs[3];
  Tensor out = Tensor::zeros(xs);
  Tensor sigmas = Tensor::zeros({NC});
  auto xv = x.data();
  auto ov = out.mutable_data();
  auto sv = sigmas.mutable_data();
  for (std::size_t nc = 0; nc < NC; ++nc) {
    const double* xp = &xv[nc * HW];
    double mean = 0.0;
    for (std::size_t i = 0; i < HW; ++i) mean += xp[i];
    mean /= static_cast<double>(HW);
    double var = 0.0;
    for (std::size_t i = 0; i < HW; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    var /= static_cast<double>(HW);
    const double sigma = std::sqrt(var + eps);
    sv[nc] = sigma;
    for (std::size_t i = 0; i < HW; ++i) ov[nc * HW + i] = (xp[i] - mean) / sigma;
  }
  return record_op(kInstNorm, {x}, out, {out, std::move(sigmas)}, eps, {});
}

Tensor avg_pool2(const Tensor& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) fail("avg_pool2: expected (n,c,h,w), got " + shape_str(xs));
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t HO = H / 2, WO = W / 2;
  if (HO == 0 || WO == 0) fail("avg_pool2: extents too small in " + shape_str(xs));
  Tensor out = Tensor::zeros({N, C, HO, WO});
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* xp = &xv[nc * H * W];
    double* op = &ov[nc * HO * WO];
    for (std::size_t y = 0; y < HO; ++y)
      for (std::size_t xc = 0; xc < WO; ++xc)
        op[y * WO + xc] = 0.25 * (xp[(2 * y) * W + 2 * xc] + xp[(2 * y) * W + 2 * xc + 1] +
                                  xp[(2 * y + 1) * W + 2 * xc] +
                                  xp[(2 * y + 1) * W + 2 * xc + 1]);
  }
  return record_op(kAvgPool2, {x}, std::move(out), {x}, 0.0, {});
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) fail("global_avg_pool: expected (n,c,h,w), got " + shape_str(xs));
  const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor out = Tensor::zeros({N, C});
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < HW; ++i) acc += xv[nc * HW + i];
    ov[nc] = acc / static_cast<double>(HW);
  }
  return record_op(kGap, {x}, std::move(out), {x}, 0.0, {});
}

// ---- backward -------------------------------------------------------------

namespace {

struct GradBuffers {
  std::vector<std::vector<double>> grads;

  std::vector<double>& at(std::int64_t node, std::size_t n) {
    auto& g = grads[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(n, 0.0);
    return g;
  }
  bool reached(std::int64_t node) const {
    return !grads[static_cast<std::size_t>(node)].empty();
  }
};

// Accumulates the upstream gradient into an elementwise operand, reducing to
// a single cell when that operand was a broadcast scalar.
void accumulate_elementwise(GradBuffers& bufs, std::int64_t node, const Tensor& operand,
                            const std::vector<double>& contrib) {
  if (node < 0) return;
  auto& g = bufs.at(node, operand.size());
  if (operand.size() == contrib.size()) {
    for (std::size_t i = 0; i < contrib.size(); ++i) g[i] += contrib[i];
  } else {
    double acc = 0.0;
    for (double v : contrib) acc += v;
    g[0] += acc;
  }
}

}  // namespace

GradMap Tape::backward(const Tensor& loss) {
  if (loss.node() < 0) fail("backward: loss is not attached to the active tape");
  if (loss.size() != 1)
    fail("backward: loss must be scalar, got " + shape_str(loss.shape()));

  GradBuffers bufs;
  bufs.grads.resize(nodes_.size());
  bufs.at(loss.node(), 1)[0] = 1.0;

  GradMap result;
  for (std::int64_t id = loss.node(); id >= 0; --id) {
    if (!bufs.reached(id)) continue;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    const std::vector<double> g = std::move(bufs.grads[static_cast<std::size_t>(id)]);
    bufs.grads[static_cast<std::size_t>(id)].clear();

    switch (node.kind) {
      case kLeaf:
        result[node.leaf_name] = Tensor::from_data(node.out_shape, g);
        break;
      case kAdd: {
        accumulate_elementwise(bufs, node.inputs[0], node.saved[0], g);
        accumulate_elementwise(bufs, node.inputs[1], node.saved[1], g);
        break;
      }
      case kSub: {
        accumulate_elementwise(bufs, node.inputs[0], node.saved[0], g);
        std::vector<double> neg(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
        accumulate_elementwise(bufs, node.inputs[1], node.saved[1], neg);
        break;
      }
      case kMul: {
        const Tensor& a = node.saved[0];
        const Tensor& b = node.saved[1];
        auto av = a.data();
        auto bv = b.data();
        std::vector<double> ca(g.size()), cb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          ca[i] = g[i] * (b.size() == 1 ? bv[0] : bv[i]);
          cb[i] = g[i] * (a.size() == 1 ? av[0] : av[i]);
        }
        accumulate_elementwise(bufs, node.inputs[0], a, ca);
        accumulate_elementwise(bufs, node.inputs[1], b, cb);
        break;
      }
      case kMatmul: {
        const Tensor& a = node.saved[0];
        const Tensor& b = node.saved[1];
        const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
        auto av = a.data();
        auto bv = b.data();
        if (node.inputs[0] >= 0) {
          auto& ga = bufs.at(node.inputs[0], a.size());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = g[i * n + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[p * n + j];
            }
        }
        if (node.inputs[1] >= 0) {
          auto& gb = bufs.at(node.inputs[1], b.size());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av[i * k + p];
              if (aip == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
            }
        }
        break;
      }
      case kRelu: {
        auto xv = node.saved[0].data();
        auto& gx = bufs.at(node.inputs[0], xv.size());
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] > 0.0) gx[i] += g[i];
        break;
      }
      case kAbs: {
        auto xv = node.saved[0].data();
        auto& gx = bufs.at(node.inputs[0], xv.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (xv[i] > 0.0) gx[i] += g[i];
          else if (xv[i] < 0.0) gx[i] -= g[i];
        }
        break;
      }
      case kExp: {
        auto yv = node.saved[0].data();
        auto& gx = bufs.at(node.inputs[0], yv.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i];
        break;
      }
      case kLog: {
        auto xv = node.saved[0].data();
        auto& gx = bufs.at(node.inputs[0], xv.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xv[i];
        break;
      }
      case kSqrt: {
        auto yv = node.saved[0].data();
        auto& gx = bufs.at(node.inputs[0], yv.size());
        for (std::size_t i = 0; i < g.size(); ++i)
          if (yv[i] > 0.0) gx[i] += g[i] * 0.5 / yv[i];
        break;
      }
      case kMeanAll: {
        const Tensor& x = node.saved[0];
        auto& gx = bufs.at(node.inputs[0], x.size());
        const double s = g[0] / static_cast<double>(x.size());
        for (auto& v : gx) v += s;
        break;
      }
      case kSumAll: {
        const Tensor& x = node.saved[0];
        auto& gx = bufs.at(node.inputs[0], x.size());
        for (auto& v : gx) v += g[0];
        break;
      }
      case kSumLast: {
        const Tensor& x = node.saved[0];
        const std::size_t last = x.shape().back();
        auto& gx = bufs.at(node.inputs[0], x.size());
        for (std::size_t r = 0; r < g.size(); ++r)
          for (std::size_t j = 0; j < last; ++j) gx[r * last + j] += g[r];
        break;
      }
      case kSoftmax: {
        const Tensor& y = node.saved[0];
        const std::size_t last = y.shape().back();
        auto yv = y.data();
        auto& gx = bufs.at(node.inputs[0], y.size());
        const std::size_t rows_n = y.size() / last;
        for (std::size_t r = 0; r < rows_n; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < last; ++j) dot += g[r * last + j] * yv[r * last + j];
          for (std::size_t j = 0; j < last; ++j)
            gx[r * last + j] += yv[r * last + j] * (g[r * last + j] - dot);
        }
        break;
      }
      case kLogSoftmax: {
        const Tensor& y = node.saved[0];
        const std::size_t last = y.shape().back();
        auto yv = y.data();
        auto& gx = bufs.at(node.inputs[0], y.size());
        const std::size_t rows_n = y.size() / last;
        for (std::size_t r = 0; r < rows_n; ++r) {
          double gsum = 0.0;
          for (std::size_t j = 0; j < last; ++j) gsum += g[r * last + j];
          for (std::size_t j = 0; j < last; ++j)
            gx[r * last + j] += g[r * last + j] - std::exp(yv[r * last + j]) * gsum;
        }
        break;
      }
      case kL2Norm: {
        const Tensor& x = node.saved[0];
        const Tensor& y = node.saved[1];
        const Tensor& norms = node.saved[2];
        const std::size_t last = x.shape().back();
        auto xv = x.data();
        auto yv = y.data();
        auto nv = norms.data();
        auto& gx = bufs.at(node.inputs[0], x.size());
        for (std::size_t r = 0; r < nv.size(); ++r) {
          const double norm = nv[r];
          if (norm == 0.0) {
            for (std::size_t j = 0; j < last; ++j) gx[r * last + j] += g[r * last + j];
            continue;
          }
          double dot = 0.0;
          for (std::size_t j = 0; j < last; ++j) dot += g[r * last + j] * yv[r * last + j];
          for (std::size_t j = 0; j < last; ++j)
            gx[r * last + j] += (g[r * last + j] - yv[r * last + j] * dot) / norm;
        }
        break;
      }
      case kMaxScalar: {
        auto xv = node.saved[0].data();
        auto& gx = bufs.at(node.inputs[0], xv.size());
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] > node.scalar) gx[i] += g[i];
        break;
      }
      case kPairwiseSqE: {
        const Tensor& a = node.saved[0];
        const Tensor& b = node.saved[1];
        const std::size_t m = a.shape()[0], n = b.shape()[0], d = a.shape()[1];
        auto av = a.data();
        auto bv = b.data();
        std::vector<double>* ga =
            node.inputs[0] >= 0 ? &bufs.at(node.inputs[0], a.size()) : nullptr;
        std::vector<double>* gb =
            node.inputs[1] >= 0 ? &bufs.at(node.inputs[1], b.size()) : nullptr;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            if (gij == 0.0) continue;
            for (std::size_t p = 0; p < d; ++p) {
              const double diff = av[i * d + p] - bv[j * d + p];
              if (ga) (*ga)[i * d + p] += 2.0 * gij * diff;
              if (gb) (*gb)[j * d + p] -= 2.0 * gij * diff;
            }
          }
        break;
      }
      case kRows: {
        const Tensor& x = node.saved[0];
        const std::size_t d = x.shape()[1];
        auto& gx = bufs.at(node.inputs[0], x.size());
        for (std::size_t r = 0; r < node.indices.size(); ++r)
          for (std::size_t j = 0; j < d; ++j) gx[node.indices[r] * d + j] += g[r * d + j];
        break;
      }
      case kAddRowVec: {
        const Tensor& x = node.saved[0];
        const Tensor& v = node.saved[1];
        const std::size_t n = v.shape()[0];
        if (node.inputs[0] >= 0) {
          auto& gx = bufs.at(node.inputs[0], x.size());
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (node.inputs[1] >= 0) {
          auto& gv = bufs.at(node.inputs[1], v.size());
          for (std::size_t i = 0; i < g.size(); ++i) gv[i % n] += g[i];
        }
        break;
      }
      case kConv: {
        const Tensor& x = node.saved[0];
        const Tensor& w = node.saved[1];
        const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                          W = x.shape()[3], O = w.shape()[0];
        auto xv = x.data();
        auto wv = w.data();
        std::vector<double>* gx =
            node.inputs[0] >= 0 ? &bufs.at(node.inputs[0], x.size()) : nullptr;
        std::vector<double>* gw =
            node.inputs[1] >= 0 ? &bufs.at(node.inputs[1], w.size()) : nullptr;
        std::vector<double>* gb =
            node.inputs[2] >= 0 ? &bufs.at(node.inputs[2], O) : nullptr;
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t o = 0; o < O; ++o) {
            const double* gplane = &g[(n * O + o) * H * W];
            if (gb) {
              double acc = 0.0;
              for (std::size_t i = 0; i < H * W; ++i) acc += gplane[i];
              (*gb)[o] += acc;
            }
            for (std::size_t c = 0; c < C; ++c) {
              const double* xplane = &xv[(n * C + c) * H * W];
              const double* k = &wv[(o * C + c) * 9];
              double* gxplane = gx ? &(*gx)[(n * C + c) * H * W] : nullptr;
              double* gk = gw ? &(*gw)[(o * C + c) * 9] : nullptr;
              for (std::size_t y = 0; y < H; ++y) {
                const std::size_t ky0 = (y == 0) ? 1 : 0;
                const std::size_t ky1 = (y == H - 1) ? 2 : 3;
                for (std::size_t xcol = 0; xcol < W; ++xcol) {
                  const double gyx = gplane[y * W + xcol];
                  if (gyx == 0.0) continue;
                  const std::size_t kx0 = (xcol == 0) ? 1 : 0;
                  const std::size_t kx1 = (xcol == W - 1) ? 2 : 3;
                  for (std::size_t ky = ky0; ky < ky1; ++ky) {
                    const std::size_t xoff = (y + ky - 1) * W + xcol - 1;
                    for (std::size_t kx = kx0; kx < kx1; ++kx) {
                      if (gxplane) gxplane[xoff + kx] += gyx * k[ky * 3 + kx];
                      if (gk) gk[ky * 3 + kx] += gyx * xplane[xoff + kx];
                    }
                  }
                }
              }
            }
          }
        }
        break;
      }
      case kInstNorm: {
        // dx = (g - mean(g) - xhat * mean(g .* xhat)) / sigma, per (n, c).
        const Tensor& xhat = node.saved[0];
        const Tensor& sigmas = node.saved[1];
        const std::size_t HW = xhat.shape()[2] * xhat.shape()[3];
        auto hv = xhat.data();
        auto sv = sigmas.data();
        auto& gx = bufs.at(node.inputs[0], xhat.size());
        for (std::size_t nc = 0; nc < sv.size(); ++nc) {
          const double* hp = &hv[nc * HW];
          const double* gp = &g[nc * HW];
          double gmean = 0.0, ghmean = 0.0;
          for (std::size_t i = 0; i < HW; ++i) {
            gmean += gp[i];
            ghmean += gp[i] * hp[i];
          }
          gmean /= static_cast<double>(HW);
          ghmean /= static_cast<double>(HW);
          for (std::size_t i = 0; i < HW; ++i)
            gx[nc * HW + i] += (gp[i] - gmean - hp[i] * ghmean) / sv[nc];
        }
        break;
      }
      case kAvgPool2: {
        const Tensor& x = node.saved[0];
        const std::size_t H = x.shape()[2], W = x.shape()[3];
        const std::size_t HO = H / 2, WO = W / 2;
        auto& gx = bufs.at(node.inputs[0], x.size());
        const std::size_t planes = x.shape()[0] * x.shape()[1];
        for (std::size_t nc = 0; nc < planes; ++nc) {
          const double* gp = &g[nc * HO * WO];
          double* gxp = &gx[nc * H * W];
          for (std::size_t y = 0; y < HO; ++y)
            for (std::size_t xc = 0; xc < WO; ++xc) {
              const double s = 0.25 * gp[y * WO + xc];
              gxp[(2 * y) * W + 2 * xc] += s;
              gxp[(2 * y) * W + 2 * xc + 1] += s;
              gxp[(2 * y + 1) * W + 2 * xc] += s;
              gxp[(2 * y + 1) * W + 2 * xc + 1] += s;
            }
        }
        break;
      }
      case kGap: {
        const Tensor& x = node.saved[0];
        const std::size_t HW = x.shape()[2] * x.shape()[3];
        auto& gx = bufs.at(node.inputs[0], x.size());
        const double inv = 1.0 / static_cast<double>(HW);
        for (std::size_t nc = 0; nc < g.size(); ++nc)
          for (std::size_t i = 0; i < HW; ++i) gx[nc * HW + i] += g[nc] * inv;
        break;
      }
      default:
        fail("backward: unhandled op kind");
    }
  }

  for (const auto& [name, id] : leaves_) {
    if (result.find(name) == result.end())
      result[name] = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].out_shape);
  }
  return result;
}

// ---- optimizer -------------------------------------------------------------

void sgd_step(ParamMap& params, const GradMap& grads, const SgdConfig& cfg,
              SgdState& state) {
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) fail("sgd_step: missing gradient for parameter '" + name + "'");
    const Tensor& grad = git->second;
    if (grad.shape() != p.shape())
      fail("sgd_step: gradient shape " + shape_str(grad.shape()) + " vs parameter " +
           shape_str(p.shape()) + " for '" + name + "'");
    auto& vel = state.velocity[name];
    if (vel.empty()) vel.assign(p.size(), 0.0);
    auto pv = p.mutable_data();
    auto gv = grad.data();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double g = gv[i] + cfg.weight_decay * pv[i];
      vel[i] = cfg.momentum * vel[i] + g;
      pv[i] -= cfg.lr * vel[i];
    }
  }
}

}  // namespace lupi
