#include "lorb/encoder.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gtest/gtest.h"
#include "lorb/checkpoint.hpp"
#include "lorb/gradcheck.hpp"

namespace lorb {
namespace {

EncoderConfig small_config(std::uint64_t seed = 1) {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.max_seq_len = 16;
  cfg.vocab_size = 23;
  cfg.seed = seed;
  return cfg;
}

TEST(Encoder, ShapeContract) {
  ScoringModel m = ScoringModel::init(small_config());
  Tape tape(false);
  const std::vector<int> ids = {2, 5, 6, 3};
  EncodeOutput out = m.encode(tape, ids);
  EXPECT_EQ(out.hidden.shape(), (Shape{4, 16}));
  EXPECT_EQ(out.cls.shape(), (Shape{16}));
}

TEST(Encoder, PaddingWithMaskLeavesClsUnchanged) {
  ScoringModel m = ScoringModel::init(small_config());
  Tape t1(false), t2(false);
  const std::vector<int> ids = {2, 5, 6, 7, 3};
  Tensor cls = m.encode(t1, ids).cls;

  std::vector<int> padded = ids;
  padded.insert(padded.end(), {0, 0, 0});
  std::vector<std::uint8_t> mask(padded.size(), 1);
  mask[5] = mask[6] = mask[7] = 0;
  Tensor cls_padded = m.encode(t2, padded, mask).cls;

  for (std::size_t i = 0; i < cls.size(); ++i) {
    EXPECT_NEAR(cls.data()[i], cls_padded.data()[i], 1e-10);
  }
}

TEST(Encoder, PerturbingPadEmbeddingHasNoInfluence) {
  ScoringModel m = ScoringModel::init(small_config());
  const std::vector<int> ids = {2, 5, 6, 3, 0, 0};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 0, 0};
  Tape t1(false);
  Tensor before = m.encode(t1, ids, mask).cls;

  Tensor emb = m.parameter("embedding");
  const std::size_t d = 16;
  for (std::size_t j = 0; j < d; ++j) emb.data()[0 * d + j] += 3.5;
  Tape t2(false);
  Tensor after = m.encode(t2, ids, mask).cls;
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_NEAR(before.data()[i], after.data()[i], 1e-10);
  }
}

TEST(Encoder, DifferentSeedsDiffer) {
  ScoringModel a = ScoringModel::init(small_config(1));
  ScoringModel b = ScoringModel::init(small_config(2));
  Tape t1(false), t2(false);
  const std::vector<int> ids = {2, 4, 3};
  EXPECT_NE(a.encode(t1, ids).cls.values(), b.encode(t2, ids).cls.values());
}

TEST(Encoder, OverLengthRejected) {
  ScoringModel m = ScoringModel::init(small_config());
  Tape tape(false);
  std::vector<int> ids(17, 4);
  EXPECT_THROW(m.encode(tape, ids), DimensionError);
}

TEST(ScoreHead, ZeroWeightsGiveZeroScore) {
  ScoringModel m = ScoringModel::init(small_config());
  for (const char* n : {"head.w1", "head.b1", "head.w2", "head.b2"}) {
    Tensor t = m.parameter(n);
    std::fill(t.values().begin(), t.values().end(), 0.0);
  }
  Tape tape(false);
  RngStream rng(3);
  Tensor cls = Tensor::randn({16}, rng);
  EXPECT_DOUBLE_EQ(m.score_head(tape, cls).item(), 0.0);
}

TEST(ScoreHead, GradientMatchesFiniteDifferences) {
  ScoringModel m = ScoringModel::init(small_config());
  RngStream rng(5);
  Tensor cls = Tensor::randn({16}, rng);
  std::vector<Tensor> head = {m.parameter("head.w1"), m.parameter("head.b1"),
                              m.parameter("head.w2"), m.parameter("head.b2")};
  const double err = check_gradients(
      [&m, cls](Tape& t, const std::vector<Tensor>&) {
        return m.score_head(t, cls);
      },
      head);
  EXPECT_LT(err, 1e-5);
}

TEST(ScoreHead, Deterministic) {
  ScoringModel m = ScoringModel::init(small_config());
  const std::vector<int> ids = {2, 9, 11, 3};
  EXPECT_EQ(m.score_value(ids), m.score_value(ids));
}

TEST(Encoder, EndToEndGradientCheck) {
  ScoringModel m = ScoringModel::init(small_config(7));
  const std::vector<int> ids = {2, 5, 9, 14, 3};
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : m.parameters()) inputs.push_back(t);
  const double err = check_gradients(
      [&m, &ids](Tape& t, const std::vector<Tensor>&) {
        return m.score(t, ids).first;
      },
      inputs);
  EXPECT_LT(err, 1e-4);
}

TEST(Encoder, ParameterCountFormula) {
  EncoderConfig cfg;
  cfg.layers = 4;
  cfg.model_dim = 64;
  cfg.heads = 4;
  cfg.ffn_dim = 128;
  cfg.max_seq_len = 32;
  cfg.vocab_size = 211;
  ScoringModel m = ScoringModel::init(cfg);
  const std::size_t d = 64, f = 128, v = 211, l = 4;
  const std::size_t per_layer = 4 * d * d          // attention matrices
                                + 4 * d            // attention biases
                                + 2 * d * f        // ffn matrices
                                + f + d            // ffn biases
                                + 2 * 2 * d;       // two layer norms
  const std::size_t head = (d / 2) * d + d / 2 + (d / 2) + 1;
  EXPECT_EQ(m.parameter_count(), v * d + l * per_layer + head);
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig cfg = small_config();
  cfg.heads = 3;  // 16 % 3 != 0
  EXPECT_THROW(ScoringModel::init(cfg), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ScoringModel m = ScoringModel::init(small_config(11));
  m.parameter("embedding").set_requires_grad(false);
  Vocabulary vocab = Vocabulary::build(
      {split_words("alpha beta gamma delta epsilon")}, 23);
  const std::string path =
      (std::filesystem::temp_directory_path() / "ck_roundtrip.bin").string();
  save_checkpoint(path, m, vocab);
  Checkpoint ck = load_checkpoint(path);

  EXPECT_EQ(ck.model.config(), m.config());
  EXPECT_EQ(ck.vocab.size(), vocab.size());
  EXPECT_EQ(ck.vocab.id("gamma"), vocab.id("gamma"));
  ASSERT_EQ(ck.model.parameters().size(), m.parameters().size());
  for (const auto& [name, t] : m.parameters()) {
    Tensor u = ck.model.parameter(name);
    EXPECT_EQ(u.shape(), t.shape());
    EXPECT_EQ(u.values(), t.values()) << name;
    EXPECT_EQ(u.requires_grad(), t.requires_grad()) << name;
  }
  // Serialize-again equality covers every byte, including JSON metadata.
  EXPECT_EQ(serialize_checkpoint(ck.model, ck.vocab),
            serialize_checkpoint(m, vocab));
  std::remove(path.c_str());
}

TEST(Checkpoint, CorruptFileRejected) {
  EXPECT_THROW(deserialize_checkpoint("BLOB"), ParseError);
  EXPECT_THROW(deserialize_checkpoint("LORB\x01"), ParseError);
}

}  // namespace
}  // namespace lorb
