#pragma once

// Minimal define-by-run reverse-mode autodiff over dense float64 tensors.
//
// A Tensor is a shared handle to a graph node. Every primitive op computes its
// forward value eagerly and, when any input requires gradients (and grad mode
// is on), records a backward closure plus its parents. backward() topologically
// orders the reachable nodes (the tape) and replays it in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pfr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty means "absent"
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  // Zero-initialised gradient buffer, allocated on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor vector(std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Direct writes are only meaningful on leaves (initialisation, optimizers).
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t i) const { return node_->data.at(i); }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  void clear_grad() { node_->grad.clear(); }

  // New leaf sharing no history with this tensor; never receives gradients.
  Tensor detach() const;

  const char* op_name() const { return node_->op; }
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Process-wide (per thread) switch for graph recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse topological record of every node reachable from a root that takes
/// part in differentiation. Each node appears exactly once.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  // Nodes in the order backward visits them (root first).
  const std::vector<detail::Node*>& order() const { return order_; }

  // Seeds d(root)/d(root) = 1 and runs every backward closure once. The graph
  // is released afterwards, so a tape can only be replayed once.
  void replay_backward();

 private:
  std::vector<detail::Node*> order_;
  std::shared_ptr<detail::Node> root_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
/// Throws ContractError when loss is not a scalar or not connected to the tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Primitive ops. Shape errors throw DimensionError naming the op and shapes.
// Unless stated, tensors are rank 2 (rows x cols) for matrix ops.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise. `b` may equal a's shape or be a rank-1 vector broadcast over
// the rows of `a` (its length must equal a's last dimension).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Contiguous range along one axis of a rank-1 or rank-2 tensor.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& a, Shape shape);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor softmax(const Tensor& a);  // over the last dimension

inline constexpr double kNormEpsilon = 1e-12;

// Normalises each row (last dimension). gamma/beta may be undefined.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kNormEpsilon);
// Rows scaled to unit L2 norm; norms computed as sqrt(sum x^2 + eps).
Tensor l2_normalize(const Tensor& x);
// Per-row L2 norms, shape [rows].
Tensor row_norms(const Tensor& x);

// u.v / (|u| |v|) over all elements; two zero vectors give 0.
Tensor cosine(const Tensor& u, const Tensor& v);

// Multi-head scaled dot-product self-attention over a batch flattened to
// [batch * seq_len, width]: q, k and v rows are split into `heads` equal
// column blocks, and keys at t >= lengths[b] get zero probability. When
// `probs` is non-null it receives one detached [seq_len, seq_len] matrix per
// (sequence, head).
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                        std::size_t seq_len, std::span<const std::size_t> lengths,
                        std::vector<Tensor>* probs = nullptr);

// Mean negative log-likelihood of `labels` under row-wise softmax of logits.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// log(1 + sum_{p,n} exp(gamma (n - p + margin))) over rank-1 similarity
// vectors, stabilised via log-sum-exp. Empty pos or neg gives exactly 0.
Tensor circle_loss(const Tensor& pos, const Tensor& neg, double gamma, double margin);

// ---------------------------------------------------------------------------

/// Central finite-difference check. Probes at most `max_probes` coordinates
/// (spread evenly across all params) and returns the max over probes of
/// |analytic - numeric| / max(1, |analytic|).
struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_probes = 64;
};

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  GradCheckOptions options = {});

}  // namespace pfr
