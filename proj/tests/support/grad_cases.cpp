#include "grad_cases.hpp"

#include <cmath>

#include "helpers.hpp"
#include "pfr/encoder.hpp"
#include "pfr/finetune.hpp"
#include "pfr/rerank.hpp"

namespace testing_support {

using namespace pfr;

namespace {

// sum(op(x) * w) for a constant random w of the output's shape.
std::function<Tensor()> weighted(Rng& rng, std::function<Tensor()> op) {
  Tensor probe;
  {
    NoGradGuard guard;
    probe = op();
  }
  const Tensor w = random_tensor(rng, probe.shape(), false);
  return [op = std::move(op), w] {
    const Tensor y = op();
    return y.rank() == 0 ? sum(mul(reshape(y, {1}), reshape(w, {1}))) : sum(mul(y, w));
  };
}

// Keeps every entry at least 0.1 away from the kink at zero.
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (auto& x : t.mutable_data()) x = x < 0 ? x - 0.1 : x + 0.1;
  return t;
}

}  // namespace

std::vector<GradCase> primitive_grad_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, std::vector<Tensor> params, std::function<Tensor()> op) {
    cases.push_back(GradCase{std::move(name), weighted(rng, std::move(op)), std::move(params), nullptr});
  };

  {
    Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 5});
    add_case("matmul", {a, b}, [=] { return matmul(a, b); });
  }
  {
    Tensor a = random_tensor(rng, {3, 5});
    add_case("transpose", {a}, [=] { return transpose(a); });
  }
  {
    Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4}), v = random_tensor(rng, {4});
    add_case("add", {a, b}, [=] { return add(a, b); });
    add_case("add_broadcast", {a, v}, [=] { return add(a, v); });
    add_case("sub", {a, b}, [=] { return sub(a, b); });
    add_case("sub_broadcast", {a, v}, [=] { return sub(a, v); });
    add_case("mul", {a, b}, [=] { return mul(a, b); });
    add_case("mul_broadcast", {a, v}, [=] { return mul(a, v); });
    add_case("scale", {a}, [=] { return scale(a, -1.7); });
  }
  {
    Tensor a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {4, 3}), c = random_tensor(rng, {2, 2});
    add_case("concat_rows", {a, b}, [=] { return concat({a, b}, 0); });
    add_case("concat_cols", {a, c}, [=] { return concat({a, c}, 1); });
    add_case("slice_rows", {b}, [=] { return slice(b, 0, 1, 2); });
    add_case("slice_cols", {b}, [=] { return slice(b, 1, 1, 2); });
    add_case("reshape", {b}, [=] { return reshape(b, {2, 6}); });
  }
  {
    Tensor table = random_tensor(rng, {5, 3});
    const std::vector<std::size_t> rows = {4, 0, 4, 2};
    add_case("gather_rows", {table}, [=] { return gather_rows(table, rows); });
  }
  {
    Tensor a = random_tensor(rng, {3, 4});
    add_case("sum", {a}, [=] { return sum(a); });
    add_case("mean", {a}, [=] { return mean(a); });
    add_case("gelu", {a}, [=] { return gelu(a); });
    add_case("softmax", {a}, [=] { return softmax(a); });
    add_case("l2_normalize", {a}, [=] { return l2_normalize(a); });
    add_case("row_norms", {a}, [=] { return row_norms(a); });
  }
  {
    Tensor a = away_from_zero(rng, {3, 4});
    add_case("relu", {a}, [=] { return relu(a); });
  }
  {
    Tensor x = random_tensor(rng, {3, 6}), g = random_tensor(rng, {6}), b = random_tensor(rng, {6});
    add_case("layer_norm", {x, g, b}, [=] { return layer_norm(x, g, b); });
  }
  {
    Tensor u = random_tensor(rng, {7}), v = random_tensor(rng, {7});
    add_case("cosine", {u, v}, [=] { return cosine(u, v); });
  }
  {
    // Two sequences of length 4, the second padded after 3 tokens.
    Tensor q = random_tensor(rng, {8, 4}), k = random_tensor(rng, {8, 4}), v = random_tensor(rng, {8, 4});
    const std::vector<std::size_t> lengths = {4, 3};
    add_case("masked_attention", {q, k, v}, [=] { return masked_attention(q, k, v, 2, 4, lengths); });
  }
  {
    Tensor logits = random_tensor(rng, {4, 5});
    const std::vector<std::size_t> labels = {0, 3, 4, 3};
    add_case("cross_entropy", {logits}, [=] { return cross_entropy(logits, labels); });
  }
  {
    // Similarities stay inside [-1, 1] as they would for cosines.
    Tensor pos = Tensor::vector({0.3, -0.2, 0.6}, true), neg = Tensor::vector({0.1, 0.25}, true);
    add_case("circle_loss", {pos, neg}, [=] { return circle_loss(pos, neg, 20.0, 0.0); });
    Tensor pos2 = Tensor::vector({0.8}, true), neg2 = Tensor::vector({0.75, -0.3, 0.7}, true);
    add_case("circle_loss_margin", {pos2, neg2}, [=] { return circle_loss(pos2, neg2, 20.0, 0.25); });
  }
  return cases;
}

std::vector<GradCase> composite_grad_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCase> cases;

  {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.hidden = 16;
    cfg.vocab_size = 20;
    cfg.init_std = 0.3;  // larger than the training default so every path carries signal
    auto model = std::make_shared<DualEncoderModel>(cfg, seed + 1);
    const TokenSequence q = {5, 9, 7};
    const std::vector<TokenSequence> pos = {{6, 9, 12, 8}, {5, 7}};
    const std::vector<TokenSequence> neg = {{14, 15, 16}, {11, 19, 5, 10, 18}};
    auto loss = [model, q, pos, neg] {
      auto sims = [&](const std::vector<TokenSequence>& answers) {
        std::vector<Tensor> parts;
        for (const auto& a : answers) parts.push_back(reshape(qa_similarity(*model, q, a), {1}));
        return concat(parts, 0);
      };
      return circle_loss(sims(pos), sims(neg), CircleParams{});
    };
    // The position table is mostly rows past these short inputs; leaving it
    // out keeps the evenly spread probes on parameters that matter.
    std::vector<Tensor> params;
    for (const auto& [name, t] : model->params().entries()) {
      if (name.find("pos_emb") == std::string::npos) params.push_back(t);
    }
    cases.push_back(GradCase{"circle_loss_through_encoder", loss, params, model});
  }

  auto make_reranker = [&](std::uint64_t s) {
    RerankConfig cfg;
    cfg.candidates = 4;
    cfg.anchors = 2;
    cfg.projected = 3;
    cfg.heads = 1;
    cfg.init_std = 0.3;
    return std::make_shared<RerankerModel>(cfg, s);
  };
  // Random unit embeddings for K=4 candidates, d=5.
  Tensor h = l2_normalize(random_tensor(rng, {4, 5}, false));
  const Tensor affinity = compute_affinity(h, 2, true);
  RerankLabels labels;
  labels.positives = {2};
  labels.negatives = {1, 3};

  {
    auto model = make_reranker(seed + 2);
    auto loss = [model, affinity, labels] { return contrastive_loss(model->refine(affinity), labels); };
    cases.push_back(GradCase{"contrastive_loss_through_reranker", loss, model->params().tensors(), model});
  }
  {
    auto model = make_reranker(seed + 3);
    auto loss = [model, affinity, labels] { return list_loss(*model, affinity, labels); };
    cases.push_back(GradCase{"joint_loss_through_reranker", loss, model->params().tensors(), model});
  }
  return cases;
}

}  // namespace testing_support
