#include "pfr/params.hpp"

#include "pfr/error.hpp"

namespace pfr {

Tensor ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ContractError("param store: duplicate name " + name);
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), value);
  return value;
}

Tensor ParamStore::normal(std::string name, Shape shape, double stddev, Rng& rng) {
  const auto n = shape_numel(shape);
  std::vector<double> values(n);
  for (double& v : values) v = rng.normal(0.0, stddev);
  return add(std::move(name), Tensor::from(std::move(shape), std::move(values)));
}

Tensor ParamStore::zeros(std::string name, Shape shape) {
  return add(std::move(name), Tensor::zeros(std::move(shape)));
}

Tensor ParamStore::ones(std::string name, Shape shape) {
  return add(std::move(name), Tensor::full(std::move(shape), 1.0));
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

const Tensor& ParamStore::get(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("param store: no parameter named " + std::string(name));
  return entries_[it->second].second;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::clear_grads() {
  for (auto& [name, t] : entries_) t.clear_grad();
}

void ParamStore::set_requires_grad(bool flag) {
  for (auto& [name, t] : entries_) t.set_requires_grad(flag);
}

}  // namespace pfr
