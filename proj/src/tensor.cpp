#include "pfr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "pfr/error.hpp"

namespace pfr {

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::vector(std::vector<double> data, bool requires_grad) {
  const auto n = data.size();
  return from({n}, std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("dim: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
  }
  return shape()[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return node_->data.at(row * shape().back() + col);
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

// --- grad mode --------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// --- tape -------------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
  Tape tape;
  tape.root_ = root.node_ptr();
  if (!root.defined() || !root.requires_grad()) return tape;

  // Iterative post-order DFS; reversing the post-order yields a topological
  // order with the root first.
  std::vector<detail::Node*> post;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      post.push_back(node);
      stack.pop_back();
    }
  }
  tape.order_.assign(post.rbegin(), post.rend());
  return tape;
}

void Tape::replay_backward() {
  if (order_.empty()) return;
  auto& seed = order_.front()->grad_buffer();
  for (double& g : seed) g += 1.0;
  for (detail::Node* node : order_) {
    if (node->backward) node->backward(*node);
  }
  // Release interior history; leaves keep their accumulated gradients. Walk
  // from the leaves up: a node's parents are already done by the time its
  // own references are dropped, and the node itself is still held by its
  // (not yet cleared) consumers.
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->parents.empty()) {
      node->backward = nullptr;
      node->parents.clear();
    }
  }
  order_.clear();
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to any parameter");
  }
  Tape::record(loss).replay_backward();
}

// --- gradient check ---------------------------------------------------------

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  GradCheckOptions options) {
  if (!(options.step >= 1e-7 && options.step <= 1e-3)) {
    throw ContractError("grad_check: step must lie in [1e-7, 1e-3]");
  }
  for (auto& p : params) p.clear_grad();
  Tensor loss = f();
  if (loss.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss");
  if (loss.requires_grad()) backward(loss);

  std::size_t total = 0;
  for (const auto& p : params) total += p.numel();
  std::vector<std::size_t> probes;
  if (total <= options.max_probes) {
    probes.resize(total);
    std::iota(probes.begin(), probes.end(), std::size_t{0});
  } else {
    for (std::size_t k = 0; k < options.max_probes; ++k) {
      probes.push_back(k * total / options.max_probes);
    }
  }

  auto evaluate = [&]() {
    NoGradGuard guard;
    const double v = f().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite perturbed loss");
    return v;
  };

  double worst = 0.0;
  for (std::size_t flat : probes) {
    std::size_t which = 0;
    while (flat >= params[which].numel()) flat -= params[which++].numel();
    Tensor& p = params[which];
    const double analytic = p.has_grad() ? p.grad()[flat] : 0.0;
    const double original = p.data()[flat];
    p.mutable_data()[flat] = original + options.step;
    const double up = evaluate();
    p.mutable_data()[flat] = original - options.step;
    const double down = evaluate();
    p.mutable_data()[flat] = original;
    const double numeric = (up - down) / (2.0 * options.step);
    if (!std::isfinite(analytic)) throw NumericError("grad_check: non-finite gradient");
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  for (auto& p : params) p.clear_grad();
  return worst;
}

}  // namespace pfr
