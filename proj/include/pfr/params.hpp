#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pfr/random.hpp"
#include "pfr/tensor.hpp"

namespace pfr {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Ordered collection of named trainable leaves. Handles returned by add()
/// alias the stored tensors, so in-place loads are visible to every holder.
class ParamStore {
 public:
  Tensor add(std::string name, Tensor value);
  Tensor normal(std::string name, Shape shape, double stddev, Rng& rng);
  Tensor zeros(std::string name, Shape shape);
  Tensor ones(std::string name, Shape shape);

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  const NamedTensors& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t numel() const;

  void clear_grads();
  void set_requires_grad(bool flag);

 private:
  NamedTensors entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace pfr
