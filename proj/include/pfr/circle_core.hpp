#pragma once

#include <span>

namespace pfr {

/// Shared numeric core of the pairwise circle objective
///   log(1 + sum_i sum_j exp(gamma * (neg_j - pos_i + margin))).
/// The double sum factorises into LSE_j(gamma neg_j) + LSE_i(-gamma pos_i),
/// so the cost is O(|pos| + |neg|) and no exponent is ever taken of a value
/// above zero. Returns 0 when either side is empty. When the gradient spans
/// are non-empty they receive dL/dpos and dL/dneg (overwritten).
double circle_objective(std::span<const double> pos, std::span<const double> neg,
                        double gamma, double margin,
                        std::span<double> grad_pos = {},
                        std::span<double> grad_neg = {});

}  // namespace pfr
