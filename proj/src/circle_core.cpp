#include "pfr/circle_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace pfr {
namespace {

// log(sum exp(scale * x_k)); fills weights with the softmax of scale * x.
double log_sum_exp(std::span<const double> xs, double scale, std::vector<double>& weights) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double x : xs) peak = std::max(peak, scale * x);
  weights.resize(xs.size());
  double total = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    weights[k] = std::exp(scale * xs[k] - peak);
    total += weights[k];
  }
  for (double& w : weights) w /= total;
  return peak + std::log(total);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double circle_objective(std::span<const double> pos, std::span<const double> neg,
                        double gamma, double margin, std::span<double> grad_pos,
                        std::span<double> grad_neg) {
  std::fill(grad_pos.begin(), grad_pos.end(), 0.0);
  std::fill(grad_neg.begin(), grad_neg.end(), 0.0);
  if (pos.empty() || neg.empty()) return 0.0;

  std::vector<double> w_neg;
  std::vector<double> w_pos;
  const double lse = log_sum_exp(neg, gamma, w_neg) + log_sum_exp(pos, -gamma, w_pos) +
                     gamma * margin;
  const double loss = softplus(lse);

  if (!grad_pos.empty() || !grad_neg.empty()) {
    const double outer = sigmoid(lse) * gamma;
    for (std::size_t j = 0; j < grad_neg.size(); ++j) grad_neg[j] = outer * w_neg[j];
    for (std::size_t i = 0; i < grad_pos.size(); ++i) grad_pos[i] = -outer * w_pos[i];
  }
  return loss;
}

}  // namespace pfr
