#pragma once

#include <span>
#include <string>
#include <vector>

#include "pfr/params.hpp"

namespace pfr {

struct TransformerShape {
  std::size_t layers = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t feedforward = 256;
};

/// Pre-LN transformer encoder layers (self-attention + GELU feedforward).
///
/// Input is a batch flattened to [batch * seq_len, width]. Row b * seq_len + t
/// is token t of sequence b; tokens at t >= lengths[b] are padding and are
/// excluded as attention keys. Padding rows still produce (ignored) outputs.
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(ParamStore& store, const std::string& prefix, TransformerShape shape,
                   double init_std, Rng& rng);

  // When `attention` is non-null it receives one [seq_len, seq_len]
  // probability matrix per (layer, sequence, head), in that nesting order.
  Tensor forward(const Tensor& x, std::size_t seq_len, std::span<const std::size_t> lengths,
                 std::vector<Tensor>* attention = nullptr) const;

  const TransformerShape& shape() const { return shape_; }

 private:
  struct Layer {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor w1, b1, w2, b2;
  };

  Tensor attend(const Layer& layer, const Tensor& x, std::size_t seq_len,
                std::span<const std::size_t> lengths, std::vector<Tensor>* attention) const;

  TransformerShape shape_;
  std::vector<Layer> layers_;
};

}  // namespace pfr
