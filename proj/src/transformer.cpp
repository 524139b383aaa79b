#include "pfr/transformer.hpp"

#include <cmath>

#include "pfr/error.hpp"

namespace pfr {
TransformerStack::TransformerStack(ParamStore& store, const std::string& prefix,
                                   TransformerShape shape, double init_std, Rng& rng)
    : shape_(shape) {
  if (shape.heads == 0 || shape.width % shape.heads != 0) {
    throw ContractError("transformer: width " + std::to_string(shape.width) +
                        " is not divisible by " + std::to_string(shape.heads) + " heads");
  }
  const std::size_t d = shape.width;
  const std::size_t ff = shape.feedforward;
  for (std::size_t i = 0; i < shape.layers; ++i) {
    const std::string p = prefix + ".layers." + std::to_string(i) + ".";
    Layer layer;
    layer.ln1_gamma = store.ones(p + "ln1.gamma", {d});
    layer.ln1_beta = store.zeros(p + "ln1.beta", {d});
    layer.wq = store.normal(p + "attn.wq", {d, d}, init_std, rng);
    layer.bq = store.zeros(p + "attn.bq", {d});
    layer.wk = store.normal(p + "attn.wk", {d, d}, init_std, rng);
    layer.bk = store.zeros(p + "attn.bk", {d});
    layer.wv = store.normal(p + "attn.wv", {d, d}, init_std, rng);
    layer.bv = store.zeros(p + "attn.bv", {d});
    layer.wo = store.normal(p + "attn.wo", {d, d}, init_std, rng);
    layer.bo = store.zeros(p + "attn.bo", {d});
    layer.ln2_gamma = store.ones(p + "ln2.gamma", {d});
    layer.ln2_beta = store.zeros(p + "ln2.beta", {d});
    layer.w1 = store.normal(p + "ff.w1", {d, ff}, init_std, rng);
    layer.b1 = store.zeros(p + "ff.b1", {ff});
    layer.w2 = store.normal(p + "ff.w2", {ff, d}, init_std, rng);
    layer.b2 = store.zeros(p + "ff.b2", {d});
    layers_.push_back(std::move(layer));
  }
}

Tensor TransformerStack::attend(const Layer& layer, const Tensor& x, std::size_t seq_len,
                                std::span<const std::size_t> lengths,
                                std::vector<Tensor>* attention) const {
  const Tensor q = add(matmul(x, layer.wq), layer.bq);
  const Tensor k = add(matmul(x, layer.wk), layer.bk);
  const Tensor v = add(matmul(x, layer.wv), layer.bv);
  const Tensor mixed = masked_attention(q, k, v, shape_.heads, seq_len, lengths, attention);
  return add(matmul(mixed, layer.wo), layer.bo);
}

Tensor TransformerStack::forward(const Tensor& x, std::size_t seq_len,
                                 std::span<const std::size_t> lengths,
                                 std::vector<Tensor>* attention) const {
  if (x.rank() != 2 || x.dim(1) != shape_.width || x.dim(0) != seq_len * lengths.size()) {
    throw DimensionError("transformer: input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(lengths.size()) + " sequences of length " +
                         std::to_string(seq_len) + " x " + std::to_string(shape_.width));
  }
  Tensor h = x;
  for (const Layer& layer : layers_) {
    h = add(h, attend(layer, layer_norm(h, layer.ln1_gamma, layer.ln1_beta), seq_len, lengths,
                      attention));
    const Tensor inner = gelu(add(matmul(layer_norm(h, layer.ln2_gamma, layer.ln2_beta), layer.w1),
                                  layer.b1));
    h = add(h, add(matmul(inner, layer.w2), layer.b2));
  }
  return h;
}

}  // namespace pfr
