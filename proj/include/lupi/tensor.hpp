#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lupi/common.hpp"

namespace lupi {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Dense row-major tensor of 64-bit reals, optionally tracked on the active
// gradient tape. Copies share the underlying buffer; every op allocates a
// fresh output, so sharing is only observable through explicit mutation
// (parameter updates), which is exactly what shared model storage needs.
class Tensor {
 public:
  Tensor();  // rank-0 scalar holding 0.0

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_->size(); }
  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  std::span<double> mutable_data() { return {data_->data(), data_->size()}; }
  const std::shared_ptr<std::vector<double>>& buffer() const { return data_; }

  bool requires_grad() const { return node_ >= 0; }
  std::int64_t node() const { return node_; }

  double item() const;  // value of a single-element tensor

 private:
  friend class Tape;
  friend Tensor record_op(int kind, const std::vector<Tensor>& inputs, Tensor out,
                          std::vector<Tensor> saved, double scalar,
                          std::vector<std::size_t> indices);
  std::shared_ptr<std::vector<double>> data_;
  Shape shape_;
  std::int64_t node_ = -1;  // handle into the active tape; -1 = untracked
};

using GradMap = std::map<std::string, Tensor>;
using ParamMap = std::map<std::string, Tensor>;

// Append-only record of the forward computation. Insertion order is
// topological by construction (an op's inputs are recorded before the op),
// and backward() visits nodes exactly once in reverse insertion order.
//
// Exactly one tape may be active per thread; ops consult the active tape and
// record a node whenever any input is tracked. Untracked forward evaluation
// never touches the tape.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers (or re-fetches) a named leaf. Watching the same name twice
  // returns the same node, so parameters shared across streams accumulate
  // gradients from every use.
  Tensor watch(const std::string& name, const Tensor& values);

  // Reverse pass from a scalar loss. Every watched leaf gets a gradient of
  // its own shape; leaves unreachable from the loss get zeros.
  GradMap backward(const Tensor& loss);

  std::size_t num_nodes() const;

  static Tape* active();

 private:
  friend Tensor record_op(int kind, const std::vector<Tensor>& inputs, Tensor out,
                          std::vector<Tensor> saved, double scalar,
                          std::vector<std::size_t> indices);
  struct Node;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::int64_t> leaves_;
};

// ---- forward ops ------------------------------------------------------
// Elementwise ops accept equal shapes, or one scalar (single-element)
// operand; no other broadcasting exists. Shape mismatches are rejected with
// both offending shapes in the message.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k) x (k,n)
Tensor relu(const Tensor& x);                     // subgradient at 0 is 0
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);   // rejects inputs that would overflow
Tensor log(const Tensor& x);   // rejects non-finite or non-positive input
Tensor sqrt(const Tensor& x);  // backward guards the root at 0

Tensor mean(const Tensor& x);           // over all elements, rank-0 result
Tensor sum(const Tensor& x);            // over all elements, rank-0 result
Tensor sum_last_axis(const Tensor& x);  // drops the last axis

Tensor softmax(const Tensor& x);      // last axis; rejects non-finite input
Tensor log_softmax(const Tensor& x);  // last axis; stable log of softmax
// Rows of zero norm pass through unchanged and bump a warning counter
// instead of dividing by zero.
Tensor l2_normalize(const Tensor& x);  // last axis

Tensor max_scalar(const Tensor& x, double s);  // elementwise max(x, s)

// (m,d) x (n,d) -> (m,n) matrix of squared Euclidean distances, accumulated
// directly as sums of squares so entries are never negative.
Tensor pairwise_sq_euclidean(const Tensor& a, const Tensor& b);

Tensor rows(const Tensor& x, const std::vector<std::size_t>& indices);  // gather rows of a matrix
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // (m,n) + (n,) per row

// 3x3 convolution, stride 1, zero padding 1. x: (n,c,h,w), w: (o,c,3,3),
// b: (o,). Plain loops; no acceleration.
Tensor conv2d3x3(const Tensor& x, const Tensor& w, const Tensor& b);

// Per-sample, per-channel normalization over the spatial extent:
// (x - mean) / sqrt(var + eps). Batch-independent, so evaluation of one
// image never depends on its neighbors.
Tensor instance_norm2d(const Tensor& x, double eps = 1e-5);
Tensor avg_pool2(const Tensor& x);        // 2x2 window, stride 2 (floor)
Tensor global_avg_pool(const Tensor& x);  // (n,c,h,w) -> (n,c)

// Count of zero-norm rows seen by l2_normalize on this thread.
std::uint64_t l2_zero_norm_count();
void reset_l2_zero_norm_count();

// ---- optimizer --------------------------------------------------------

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Per-parameter velocity, keyed like the parameter map.
struct SgdState {
  std::map<std::string, std::vector<double>> velocity;
};

// Momentum SGD, applied in place:
//   g <- grad + weight_decay * p;  v <- momentum * v + g;  p <- p - lr * v
// Rejects a params key with no matching gradient.
void sgd_step(ParamMap& params, const GradMap& grads, const SgdConfig& cfg,
              SgdState& state);

}  // namespace lupi
