#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "../support/helpers.hpp"
#include "pfr/checkpoint.hpp"
#include "pfr/encoder.hpp"
#include "pfr/error.hpp"

using namespace pfr;

namespace {

EncoderConfig small_config(std::size_t hidden = 16, std::size_t layers = 2) {
  EncoderConfig cfg;
  cfg.layers = layers;
  cfg.heads = 4;
  cfg.hidden = hidden;
  cfg.vocab_size = 40;
  return cfg;
}

TokenSequence random_tokens(Rng& rng, std::size_t n) {
  TokenSequence t(n);
  for (auto& x : t) x = static_cast<TokenId>(special::kCount + rng.below(35));
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

TEST(Encoder, FramingAndShapes) {
  const DualEncoderModel model(small_config(), 1);
  const TokenSequence t = {7, 8, 9};
  EXPECT_EQ(frame(t), (TokenSequence{special::kCls, 7, 8, 9, special::kSep}));
  const Tensor e = encode(model, t);
  EXPECT_EQ(e.shape(), (Shape{5, 16}));
  const Tensor cls = cls_embedding(e);
  EXPECT_EQ(cls.shape(), (Shape{16}));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(cls.at(i), e.at(0, i));
}

TEST(Encoder, TruncatesOverLongInput) {
  const DualEncoderModel model(small_config(8, 1), 1);
  Rng rng(2);
  const TokenSequence long_input = random_tokens(rng, 200);
  EXPECT_EQ(encode(model, long_input).dim(0), kMaxSpanLength + 2);
  const TokenSequence head(long_input.begin(), long_input.begin() + kMaxSpanLength);
  EXPECT_EQ(max_abs_diff(encode(model, long_input), encode(model, head)), 0.0);
}

TEST(Encoder, DeterministicAndNonDegenerate) {
  const DualEncoderModel a(small_config(), 3), b(small_config(), 3);
  const TokenSequence x = {6, 7, 8}, y = {20, 30};
  EXPECT_EQ(testing_support::to_vec(encode(a, x)), testing_support::to_vec(encode(b, x)));
  EXPECT_GT(max_abs_diff(cls_embedding(encode(a, x)), cls_embedding(encode(a, y))), 1e-6);
}

TEST(Encoder, PaddingInvariance) {
  const DualEncoderModel model(small_config(), 4);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenSequence shorter = random_tokens(rng, 1 + rng.below(10));
    const TokenSequence longer = random_tokens(rng, shorter.size() + 1 + rng.below(20));
    const TokenSequence batch[] = {shorter, longer};
    const EncodedBatch padded = model.encode_batch(batch);
    EXPECT_LT(max_abs_diff(padded.sequence(0), encode(model, shorter)), 1e-9);
  }
}

TEST(Encoder, BatchIndependence) {
  const DualEncoderModel model(small_config(), 6);
  Rng rng(7);
  std::vector<TokenSequence> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(random_tokens(rng, 2 + rng.below(12)));
  const EncodedBatch all = model.encode_batch(batch);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    EXPECT_LT(max_abs_diff(all.sequence(b), encode(model, batch[b])), 1e-9);
  }
}

TEST(Encoder, AttentionRowsSumToOneOverRealTokens) {
  const DualEncoderModel model(small_config(), 8);
  const std::vector<TokenSequence> batch = {{6, 7}, {8, 9, 10, 11, 12}};
  std::vector<Tensor> attention;
  const EncodedBatch out = model.encode_batch(batch, Side::Question, &attention);
  ASSERT_EQ(attention.size(), 2u * 2u * 4u);  // layers x sequences x heads
  for (std::size_t i = 0; i < attention.size(); ++i) {
    const std::size_t len = out.lengths[(i / 4) % 2];
    for (std::size_t r = 0; r < len; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < len; ++c) total += attention[i].at(r, c);
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Encoder, QaSimilarity) {
  const DualEncoderModel model(small_config(), 9);
  const TokenSequence q = {6, 7, 8}, a = {9, 10, 11, 12};
  EXPECT_NEAR(qa_similarity(model, q, q).item(), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(qa_similarity(model, q, a).item(), qa_similarity(model, a, q).item());
  const Tensor cq = cls_embedding(encode(model, q)), ca = cls_embedding(encode(model, a));
  double dot = 0, nq = 0, na = 0;
  for (std::size_t i = 0; i < cq.numel(); ++i) {
    dot += cq.at(i) * ca.at(i);
    nq += cq.at(i) * cq.at(i);
    na += ca.at(i) * ca.at(i);
  }
  EXPECT_NEAR(qa_similarity(model, q, a).item(), dot / std::sqrt(nq * na), 1e-12);
}

TEST(Encoder, GradientThroughSimilarity) {
  EncoderConfig cfg = small_config(16, 2);
  cfg.init_std = 0.3;
  DualEncoderModel model(cfg, 10);
  std::vector<Tensor> params;
  for (const auto& [name, t] : model.params().entries()) {
    if (name.find("pos_emb") == std::string::npos) params.push_back(t);
  }
  const TokenSequence q = {6, 7, 8}, a = {9, 7, 11, 12};
  EXPECT_LT(grad_check([&] { return qa_similarity(model, q, a); }, params), 1e-4);
}

TEST(Encoder, UntiedTrunksDiffer) {
  EncoderConfig cfg = small_config();
  cfg.tied = false;
  const DualEncoderModel model(cfg, 11);
  EXPECT_TRUE(model.params().contains("answer_encoder.tok_emb"));
  const TokenSequence t = {6, 7};
  EXPECT_LT(qa_similarity(model, t, t).item(), 1.0 - 1e-9);
}

TEST(Encoder, EmbedAllMatchesSingleEncodes) {
  const DualEncoderModel model(small_config(), 12);
  Rng rng(13);
  std::vector<TokenSequence> seqs;
  for (int i = 0; i < 7; ++i) seqs.push_back(random_tokens(rng, 1 + rng.below(9)));
  const Tensor all = embed_all(model, seqs, Side::Question, 3);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const Tensor cls = cls_embedding(encode(model, seqs[i]));
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(all.at(i, c), cls.at(c), 1e-9);
  }
}

TEST(Encoder, RejectsBadConfig) {
  EncoderConfig cfg = small_config();
  cfg.vocab_size = 3;
  EXPECT_THROW(DualEncoderModel(cfg, 1), ContractError);
}

// --- checkpoints ----------------------------------------------------------

TEST(Checkpoint, RoundTripIsExact) {
  const DualEncoderModel a(small_config(), 20);
  DualEncoderModel b(small_config(), 21);
  const auto dir = testing_support::scratch_dir("ckpt");
  save_checkpoint(dir / "m.pfrl", a.params().entries());
  load_into(b.params(), dir / "m.pfrl");
  const TokenSequence t = {6, 9, 12};
  EXPECT_EQ(testing_support::to_vec(encode(a, t)), testing_support::to_vec(encode(b, t)));

  const NamedTensors records = read_checkpoint(dir / "m.pfrl");
  ASSERT_EQ(records.size(), a.params().entries().size());
  for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].first, a.params().entries()[i].first);
}

TEST(Checkpoint, ValidatesNamesShapesAndBytes) {
  const DualEncoderModel a(small_config(16), 22);
  const auto dir = testing_support::scratch_dir("ckpt_bad");
  save_checkpoint(dir / "m.pfrl", a.params().entries());

  DualEncoderModel wider(small_config(32), 23);
  EXPECT_THROW(load_into(wider.params(), dir / "m.pfrl"), IngestionError);

  NamedTensors partial(a.params().entries().begin() + 1, a.params().entries().end());
  save_checkpoint(dir / "partial.pfrl", partial);
  DualEncoderModel b(small_config(16), 24);
  EXPECT_THROW(load_into(b.params(), dir / "partial.pfrl"), IngestionError);

  std::ofstream(dir / "junk.pfrl") << "NOPE";
  EXPECT_THROW(read_checkpoint(dir / "junk.pfrl"), IngestionError);
  EXPECT_THROW(read_checkpoint(dir / "absent.pfrl"), IngestionError);

  // Truncate a valid file mid-record.
  std::ifstream in(dir / "m.pfrl", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "cut.pfrl", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(read_checkpoint(dir / "cut.pfrl"), IngestionError);
}

TEST(Checkpoint, LayoutIsLittleEndianWithMagic) {
  ParamStore store;
  store.add("w", Tensor::from({1, 2}, {1.0, -2.0}));
  const auto dir = testing_support::scratch_dir("ckpt_layout");
  save_checkpoint(dir / "w.pfrl", store.entries());
  std::ifstream in(dir / "w.pfrl", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  // magic + version + name len + name + rank + 2 dims + 2 values
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 1 + 4 + 16 + 16);
  EXPECT_EQ(bytes.substr(0, 4), "PFRL");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(bytes[12], 'w');
  double first;
  std::memcpy(&first, bytes.data() + bytes.size() - 16, 8);
  EXPECT_EQ(first, 1.0);
}
