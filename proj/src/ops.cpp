#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pfr/circle_core.hpp"
#include "pfr/error.hpp"
#include "pfr/tensor.hpp"

namespace pfr {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using BackwardFn = std::function<void(detail::Node&)>;

Tensor make_op(const char* name, Shape shape, std::vector<double> data,
               const std::vector<const Tensor*>& inputs, BackwardFn fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  detail::Node* node = out.node();
  node->op = name;
  if (!grad_enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor* t) { return t->requires_grad(); });
  if (!any) return out;
  node->requires_grad = true;
  for (const Tensor* t : inputs) node->parents.push_back(t->node_ptr());
  node->backward = std::move(fn);
  return out;
}

// Parent gradient buffer, or nullptr when that parent is not differentiated.
std::vector<double>* grad_of(detail::Node& out, std::size_t i) {
  detail::Node& p = *out.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const std::vector<double>& data_of(detail::Node& out, std::size_t i) {
  return out.parents[i]->data;
}

[[noreturn]] void dim_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

[[noreturn]] void dim_error(const char* op, const Tensor& a, const std::string& why) {
  throw DimensionError(std::string(op) + ": " + why + " (shape " + shape_str(a.shape()) + ")");
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) dim_error(op, a, "expected a rank-2 tensor");
}

std::size_t last_dim(const Tensor& a) { return a.rank() == 0 ? 1 : a.shape().back(); }

// Row broadcasting for elementwise binary ops.
bool broadcasts(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return false;
  if (b.rank() == 1 && a.rank() >= 1 && b.numel() == a.shape().back()) return true;
  dim_error(op, a, b);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) dim_error("matmul", a, b);
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  return make_op("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& o) {
    ConstMapMat g(o.grad.data(), m, n);
    if (auto* ga = grad_of(o, 0)) {
      MapMat(ga->data(), m, k).noalias() += g * ConstMapMat(data_of(o, 1).data(), k, n).transpose();
    }
    if (auto* gb = grad_of(o, 1)) {
      MapMat(gb->data(), k, n).noalias() += ConstMapMat(data_of(o, 0).data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const auto r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  MapMat(out.data(), c, r) = ConstMapMat(a.data().data(), r, c).transpose();
  return make_op("transpose", {c, r}, std::move(out), {&a}, [r, c](detail::Node& o) {
    if (auto* ga = grad_of(o, 0)) {
      MapMat(ga->data(), r, c) += ConstMapMat(o.grad.data(), c, r).transpose();
    }
  });
}

namespace {

template <typename Forward, typename GradA, typename GradB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Forward fwd, GradA ga_fn,
                 GradB gb_fn) {
  const bool bcast = broadcasts(name, a, b);
  const auto n = a.numel();
  const auto width = bcast ? b.numel() : n;
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[bcast ? i % width : i]);
  return make_op(name, a.shape(), std::move(out), {&a, &b}, [=](detail::Node& o) {
    const auto& x = data_of(o, 0);
    const auto& y = data_of(o, 1);
    auto* gx = grad_of(o, 0);
    auto* gy = grad_of(o, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = bcast ? i % width : i;
      if (gx) (*gx)[i] += ga_fn(o.grad[i], x[i], y[j]);
      if (gy) (*gy)[j] += gb_fn(o.grad[i], x[i], y[j]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_op("scale", a.shape(), std::move(out), {&a}, [factor](detail::Node& o) {
    if (auto* ga = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += factor * o.grad[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  const bool flat = std::all_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.rank() <= 1; });

  if (flat) {
    if (axis != 0) dim_error("concat", parts[0], "rank-1 inputs only concatenate on axis 0");
    std::vector<double> out;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
      out.insert(out.end(), p.data().begin(), p.data().end());
      sizes.push_back(p.numel());
    }
    const auto n = out.size();
    return make_op("concat", {n}, std::move(out), inputs, [sizes](detail::Node& o) {
      std::size_t offset = 0;
      for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (auto* g = grad_of(o, i)) {
          for (std::size_t k = 0; k < sizes[i]; ++k) (*g)[k] += o.grad[offset + k];
        }
        offset += sizes[i];
      }
    });
  }

  for (const auto& p : parts) require_rank2("concat", p);
  if (axis > 1) dim_error("concat", parts[0], "axis must be 0 or 1");
  const std::size_t fixed = parts[0].dim(1 - axis);
  std::size_t along = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.dim(1 - axis) != fixed) dim_error("concat", parts[0], p);
    sizes.push_back(p.dim(axis));
    along += p.dim(axis);
  }
  const std::size_t rows = axis == 0 ? along : fixed;
  const std::size_t cols = axis == 0 ? fixed : along;
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto src = parts[i].data();
    if (axis == 0) {
      std::copy(src.begin(), src.end(), out.begin() + offset * cols);
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(src.begin() + r * sizes[i], sizes[i], out.begin() + r * cols + offset);
      }
    }
    offset += sizes[i];
  }
  return make_op("concat", {rows, cols}, std::move(out), inputs,
                 [sizes, axis, rows, cols](detail::Node& o) {
                   std::size_t offset = 0;
                   for (std::size_t i = 0; i < sizes.size(); ++i) {
                     if (auto* g = grad_of(o, i)) {
                       if (axis == 0) {
                         for (std::size_t k = 0; k < sizes[i] * cols; ++k) {
                           (*g)[k] += o.grad[offset * cols + k];
                         }
                       } else {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < sizes[i]; ++c) {
                             (*g)[r * sizes[i] + c] += o.grad[r * cols + offset + c];
                           }
                         }
                       }
                     }
                     offset += sizes[i];
                   }
                 });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (a.rank() == 1) {
    if (axis != 0 || start + length > a.numel()) dim_error("slice", a, "range out of bounds");
    std::vector<double> out(a.data().begin() + start, a.data().begin() + start + length);
    return make_op("slice", {length}, std::move(out), {&a}, [start, length](detail::Node& o) {
      if (auto* g = grad_of(o, 0)) {
        for (std::size_t k = 0; k < length; ++k) (*g)[start + k] += o.grad[k];
      }
    });
  }
  require_rank2("slice", a);
  if (axis > 1 || start + length > a.dim(axis)) dim_error("slice", a, "range out of bounds");
  const std::size_t cols = a.dim(1);
  const std::size_t r0 = axis == 0 ? start : 0;
  const std::size_t nr = axis == 0 ? length : a.dim(0);
  const std::size_t c0 = axis == 1 ? start : 0;
  const std::size_t nc = axis == 1 ? length : cols;
  std::vector<double> out(nr * nc);
  const auto src = a.data();
  for (std::size_t r = 0; r < nr; ++r) {
    std::copy_n(src.begin() + (r0 + r) * cols + c0, nc, out.begin() + r * nc);
  }
  return make_op("slice", {nr, nc}, std::move(out), {&a}, [=](detail::Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t r = 0; r < nr; ++r) {
        for (std::size_t c = 0; c < nc; ++c) (*g)[(r0 + r) * cols + c0 + c] += o.grad[r * nc + c];
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op("reshape", std::move(shape), std::move(out), {&a}, [](detail::Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_rank2("gather_rows", table);
  const std::size_t n = table.dim(0), width = table.dim(1);
  std::vector<std::size_t> index(rows.begin(), rows.end());
  std::vector<double> out(index.size() * width);
  const auto src = table.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) {
      dim_error("gather_rows", table, "row " + std::to_string(index[i]) + " out of range");
    }
    std::copy_n(src.begin() + index[i] * width, width, out.begin() + i * width);
  }
  const std::size_t count = index.size();
  return make_op("gather_rows", {count, width}, std::move(out), {&table},
                 [index = std::move(index), width](detail::Node& o) {
                   if (auto* g = grad_of(o, 0)) {
                     for (std::size_t i = 0; i < index.size(); ++i) {
                       for (std::size_t c = 0; c < width; ++c) {
                         (*g)[index[i] * width + c] += o.grad[i * width + c];
                       }
                     }
                   }
                 });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_op("sum", {}, {total}, {&a}, [](detail::Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (double& v : *g) v += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) dim_error("mean", a, "empty tensor");
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double n = static_cast<double>(a.numel());
  return make_op("mean", {}, {total / n}, {&a}, [n](detail::Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (double& v : *g) v += o.grad[0] / n;
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_op("relu", a.shape(), std::move(out), {&a}, [](detail::Node& o) {
    if (auto* g = grad_of(o, 0)) {
      const auto& x = data_of(o, 0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) (*g)[i] += o.grad[i];
      }
    }
  });
}

Tensor gelu(const Tensor& a) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
  }
  return make_op("gelu", a.shape(), std::move(out), {&a}, [inv_sqrt2](detail::Node& o) {
    if (auto* g = grad_of(o, 0)) {
      const auto& x = data_of(o, 0);
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
        (*g)[i] += o.grad[i] * (cdf + x[i] * pdf);
      }
    }
  });
}

Tensor softmax(const Tensor& a) {
  const std::size_t width = last_dim(a);
  const std::size_t rows = width == 0 ? 0 : a.numel() / width;
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * width;
    double* y = out.data() + r * width;
    const double peak = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t c = 0; c < width; ++c) total += (y[c] = std::exp(in[c] - peak));
    for (std::size_t c = 0; c < width; ++c) y[c] /= total;
  }
  return make_op("softmax", a.shape(), std::move(out), {&a}, [rows, width](detail::Node& o) {
    if (auto* g = grad_of(o, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = o.data.data() + r * width;
        const double* dy = o.grad.data() + r * width;
        double dot = 0.0;
        for (std::size_t c = 0; c < width; ++c) dot += y[c] * dy[c];
        for (std::size_t c = 0; c < width; ++c) (*g)[r * width + c] += y[c] * (dy[c] - dot);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t width = last_dim(x);
  if (width == 0) dim_error("layer_norm", x, "empty rows");
  if (gamma.defined() && gamma.numel() != width) dim_error("layer_norm", x, gamma);
  if (beta.defined() && beta.numel() != width) dim_error("layer_norm", x, beta);
  const std::size_t rows = x.numel() / width;
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * width;
    double mu = 0.0;
    for (std::size_t c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      xhat[i] = (row[c] - mu) * inv_std[r];
      out[i] = xhat[i] * (gamma.defined() ? gamma.data()[c] : 1.0) +
               (beta.defined() ? beta.data()[c] : 0.0);
    }
  }
  std::vector<const Tensor*> inputs{&x};
  const bool has_gamma = gamma.defined();
  const bool has_beta = beta.defined();
  if (has_gamma) inputs.push_back(&gamma);
  if (has_beta) inputs.push_back(&beta);
  return make_op(
      "layer_norm", x.shape(), std::move(out), inputs,
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& o) {
        const std::vector<double>* gvals = has_gamma ? &data_of(o, 1) : nullptr;
        auto* gx = grad_of(o, 0);
        auto* ggamma = has_gamma ? grad_of(o, 1) : nullptr;
        auto* gbeta = has_beta ? grad_of(o, has_gamma ? 2 : 1) : nullptr;
        std::vector<double> gxhat(width);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t c = 0; c < width; ++c) {
            const std::size_t i = r * width + c;
            gxhat[c] = o.grad[i] * (gvals ? (*gvals)[c] : 1.0);
            mean_g += gxhat[c];
            mean_gx += gxhat[c] * xhat[i];
            if (ggamma) (*ggamma)[c] += o.grad[i] * xhat[i];
            if (gbeta) (*gbeta)[c] += o.grad[i];
          }
          if (!gx) continue;
          mean_g /= static_cast<double>(width);
          mean_gx /= static_cast<double>(width);
          for (std::size_t c = 0; c < width; ++c) {
            const std::size_t i = r * width + c;
            (*gx)[i] += inv_std[r] * (gxhat[c] - mean_g - xhat[i] * mean_gx);
          }
        }
      });
}

Tensor l2_normalize(const Tensor& x) {
  const std::size_t width = last_dim(x);
  const std::size_t rows = width == 0 ? 0 : x.numel() / width;
  std::vector<double> norms(rows);
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < width; ++c) ss += in[r * width + c] * in[r * width + c];
    norms[r] = std::sqrt(ss + kNormEpsilon);
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = in[r * width + c] / norms[r];
  }
  return make_op("l2_normalize", x.shape(), std::move(out), {&x},
                 [rows, width, norms = std::move(norms)](detail::Node& o) {
                   auto* g = grad_of(o, 0);
                   if (!g) return;
                   const auto& x = data_of(o, 0);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double xg = 0.0;
                     for (std::size_t c = 0; c < width; ++c) {
                       xg += x[r * width + c] * o.grad[r * width + c];
                     }
                     const double n = norms[r];
                     for (std::size_t c = 0; c < width; ++c) {
                       const std::size_t i = r * width + c;
                       (*g)[i] += (o.grad[i] - x[i] * xg / (n * n)) / n;
                     }
                   }
                 });
}

Tensor row_norms(const Tensor& x) {
  const std::size_t width = last_dim(x);
  const std::size_t rows = width == 0 ? 0 : x.numel() / width;
  std::vector<double> out(rows);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < width; ++c) ss += in[r * width + c] * in[r * width + c];
    out[r] = std::sqrt(ss + kNormEpsilon);
  }
  return make_op("row_norms", {rows}, std::move(out), {&x}, [rows, width](detail::Node& o) {
    if (auto* g = grad_of(o, 0)) {
      const auto& x = data_of(o, 0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
          (*g)[r * width + c] += o.grad[r] * x[r * width + c] / o.data[r];
        }
      }
    }
  });
}

Tensor cosine(const Tensor& u, const Tensor& v) {
  if (u.numel() != v.numel()) dim_error("cosine", u, v);
  const auto a = u.data();
  const auto b = v.data();
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    uu += a[i] * a[i];
    vv += b[i] * b[i];
  }
  const double nu = std::sqrt(uu + kNormEpsilon);
  const double nv = std::sqrt(vv + kNormEpsilon);
  const double c = dot / (nu * nv);
  return make_op("cosine", {}, {c}, {&u, &v}, [nu, nv, c](detail::Node& o) {
    const double g = o.grad[0];
    const auto& a = data_of(o, 0);
    const auto& b = data_of(o, 1);
    if (auto* ga = grad_of(o, 0)) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        (*ga)[i] += g * (b[i] / (nu * nv) - c * a[i] / (nu * nu));
      }
    }
    if (auto* gb = grad_of(o, 1)) {
      for (std::size_t i = 0; i < b.size(); ++i) {
        (*gb)[i] += g * (a[i] / (nu * nv) - c * b[i] / (nv * nv));
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank2("cross_entropy", logits);
  const std::size_t n = logits.dim(0), width = logits.dim(1);
  if (labels.size() != n || n == 0) {
    dim_error("cross_entropy", logits, std::to_string(labels.size()) + " labels for the rows");
  }
  std::vector<double> probs(n * width);
  std::vector<std::size_t> target(labels.begin(), labels.end());
  const auto x = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (target[r] >= width) dim_error("cross_entropy", logits, "label out of range");
    const double* row = x.data() + r * width;
    const double peak = *std::max_element(row, row + width);
    double z = 0.0;
    for (std::size_t c = 0; c < width; ++c) z += (probs[r * width + c] = std::exp(row[c] - peak));
    for (std::size_t c = 0; c < width; ++c) probs[r * width + c] /= z;
    total += -(row[target[r]] - peak - std::log(z));
  }
  const double count = static_cast<double>(n);
  return make_op("cross_entropy", {}, {total / count}, {&logits},
                 [=, probs = std::move(probs), target = std::move(target)](detail::Node& o) {
                   auto* g = grad_of(o, 0);
                   if (!g) return;
                   const double scale_by = o.grad[0] / count;
                   for (std::size_t r = 0; r < n; ++r) {
                     for (std::size_t c = 0; c < width; ++c) {
                       const double onehot = c == target[r] ? 1.0 : 0.0;
                       (*g)[r * width + c] += scale_by * (probs[r * width + c] - onehot);
                     }
                   }
                 });
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                        std::size_t seq_len, std::span<const std::size_t> lengths,
                        std::vector<Tensor>* probs) {
  require_rank2("masked_attention", q);
  if (k.shape() != q.shape() || v.shape() != q.shape()) dim_error("masked_attention", q, k.shape() != q.shape() ? k : v);
  const std::size_t batch = lengths.size();
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0) dim_error("masked_attention", q, "width not divisible by heads");
  if (q.dim(0) != batch * seq_len) dim_error("masked_attention", q, "rows != sequences * seq_len");
  for (auto len : lengths) {
    if (len == 0 || len > seq_len) dim_error("masked_attention", q, "sequence length out of range");
  }
  const std::size_t hd = d / heads;
  const double scale_by = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto Q = q.data(), K = k.data(), V = v.data();

  // Probabilities for every (sequence, head), full [T, T] blocks.
  std::vector<double> p(batch * heads * seq_len * seq_len, 0.0);
  std::vector<double> out(q.numel(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = lengths[b];
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = p.data() + (b * heads + h) * seq_len * seq_len;
      for (std::size_t r = 0; r < seq_len; ++r) {
        const double* qr = Q.data() + (b * seq_len + r) * d + h * hd;
        double* pr = P + r * seq_len;
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < len; ++c) {
          const double* kc = K.data() + (b * seq_len + c) * d + h * hd;
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += qr[e] * kc[e];
          pr[c] = s * scale_by;
          top = std::max(top, pr[c]);
        }
        double total = 0.0;
        for (std::size_t c = 0; c < len; ++c) {
          pr[c] = std::exp(pr[c] - top);
          total += pr[c];
        }
        double* o = out.data() + (b * seq_len + r) * d + h * hd;
        for (std::size_t c = 0; c < len; ++c) {
          pr[c] /= total;
          const double* vc = V.data() + (b * seq_len + c) * d + h * hd;
          for (std::size_t e = 0; e < hd; ++e) o[e] += pr[c] * vc[e];
        }
      }
      if (probs) probs->push_back(Tensor::from({seq_len, seq_len}, std::vector<double>(P, P + seq_len * seq_len)));
    }
  }
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  return make_op("masked_attention", q.shape(), std::move(out), {&q, &k, &v},
                 [p = std::move(p), lens = std::move(lens), heads, seq_len, d, hd, scale_by](detail::Node& o) {
    const auto& Q = data_of(o, 0);
    const auto& K = data_of(o, 1);
    const auto& V = data_of(o, 2);
    auto* gq = grad_of(o, 0);
    auto* gk = grad_of(o, 1);
    auto* gv = grad_of(o, 2);
    std::vector<double> ds(seq_len);
    for (std::size_t b = 0; b < lens.size(); ++b) {
      const std::size_t len = lens[b];
      for (std::size_t h = 0; h < heads; ++h) {
        const double* P = p.data() + (b * heads + h) * seq_len * seq_len;
        for (std::size_t r = 0; r < seq_len; ++r) {
          const double* pr = P + r * seq_len;
          const double* go = o.grad.data() + (b * seq_len + r) * d + h * hd;
          double dot = 0.0;
          for (std::size_t c = 0; c < len; ++c) {
            const std::size_t row = (b * seq_len + c) * d + h * hd;
            double dp = 0.0;
            for (std::size_t e = 0; e < hd; ++e) dp += go[e] * V[row + e];
            ds[c] = dp;
            dot += pr[c] * dp;
            if (gv) {
              for (std::size_t e = 0; e < hd; ++e) (*gv)[row + e] += pr[c] * go[e];
            }
          }
          const std::size_t qrow = (b * seq_len + r) * d + h * hd;
          for (std::size_t c = 0; c < len; ++c) {
            const double g = pr[c] * (ds[c] - dot) * scale_by;
            const std::size_t row = (b * seq_len + c) * d + h * hd;
            if (gq) {
              for (std::size_t e = 0; e < hd; ++e) (*gq)[qrow + e] += g * K[row + e];
            }
            if (gk) {
              for (std::size_t e = 0; e < hd; ++e) (*gk)[row + e] += g * Q[qrow + e];
            }
          }
        }
      }
    }
  });
}

Tensor circle_loss(const Tensor& pos, const Tensor& neg, double gamma, double margin) {
  std::vector<double> gpos(pos.numel()), gneg(neg.numel());
  const double value = circle_objective(pos.data(), neg.data(), gamma, margin, gpos, gneg);
  return make_op("circle_loss", {}, {value}, {&pos, &neg},
                 [gpos = std::move(gpos), gneg = std::move(gneg)](detail::Node& o) {
                   if (auto* gp = grad_of(o, 0)) {
                     for (std::size_t i = 0; i < gpos.size(); ++i) (*gp)[i] += o.grad[0] * gpos[i];
                   }
                   if (auto* gn = grad_of(o, 1)) {
                     for (std::size_t i = 0; i < gneg.size(); ++i) (*gn)[i] += o.grad[0] * gneg[i];
                   }
                 });
}

}  // namespace pfr
