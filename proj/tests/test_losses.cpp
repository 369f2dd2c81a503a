#include "lorb/losses.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "lorb/encoder.hpp"
#include "lorb/gradcheck.hpp"
#include "lorb/peft.hpp"

namespace lorb {
namespace {

MwerBatch one_utterance(Tape&, const std::vector<double>& scores,
                        const std::vector<int>& errors) {
  MwerBatch batch;
  MwerUtterance u;
  for (double s : scores) u.scores.push_back(Tensor::scalar(s));
  u.word_errors = errors;
  batch.utterances.push_back(std::move(u));
  return batch;
}

// Direct expanded-form evaluation: sum P_i eps_i - eps_bar * sum P_i, with
// its own softmax; shares nothing with the library loss.
double brute_force_mwer(const std::vector<double>& scores,
                        const std::vector<int>& errors) {
  const std::size_t n = scores.size();
  std::vector<double> p(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(-scores[i]);
  for (std::size_t i = 0; i < n; ++i) p[i] = std::exp(-scores[i]) / z;
  double eps_bar = 0.0;
  for (int e : errors) eps_bar += e;
  eps_bar /= static_cast<double>(n);
  double weighted = 0.0, mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    weighted += p[i] * errors[i];
    mass += p[i];
  }
  return weighted - eps_bar * mass;
}

TEST(MwerLoss, SymmetricCancellation) {
  Tape tape;
  MwerBatch b = one_utterance(tape, {0.0, 0.0}, {1, 3});
  EXPECT_NEAR(mwer_loss(tape, b).item(), 0.0, 1e-15);
}

TEST(MwerLoss, ClosedFormEvaluation) {
  // s=[0, ln 3] -> P=[.75,.25]; eps=[0,4], eps_bar=2 -> .75*(-2)+.25*2 = -1.
  Tape tape;
  MwerBatch b = one_utterance(tape, {0.0, std::log(3.0)}, {0, 4});
  EXPECT_NEAR(mwer_loss(tape, b).item(), -1.0, 1e-12);
}

TEST(MwerLoss, EqualErrorsGiveZero) {
  RngStream rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    std::vector<double> scores;
    for (int i = 0; i < 5; ++i) scores.push_back(rng.normal(0.0, 2.0));
    MwerBatch b = one_utterance(tape, scores, {2, 2, 2, 2, 2});
    EXPECT_NEAR(mwer_loss(tape, b).item(), 0.0, 1e-14);
  }
}

TEST(MwerLoss, ShiftInvariance) {
  RngStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores;
    std::vector<int> errors;
    const int n = 2 + static_cast<int>(rng.next_below(5));
    for (int i = 0; i < n; ++i) {
      scores.push_back(rng.normal(0.0, 2.0));
      errors.push_back(static_cast<int>(rng.next_below(10)));
    }
    Tape t1;
    const double l1 = mwer_loss(t1, one_utterance(t1, scores, errors)).item();
    const double c = rng.normal(0.0, 5.0);
    std::vector<double> shifted = scores;
    for (double& s : shifted) s += c;
    Tape t2;
    const double l2 = mwer_loss(t2, one_utterance(t2, shifted, errors)).item();
    EXPECT_NEAR(l1, l2, 1e-10);
  }
}

TEST(MwerLoss, BoundedByMaxError) {
  RngStream rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores;
    std::vector<int> errors;
    int max_eps = 0;
    const int n = 1 + static_cast<int>(rng.next_below(6));
    for (int i = 0; i < n; ++i) {
      scores.push_back(rng.normal(0.0, 3.0));
      errors.push_back(static_cast<int>(rng.next_below(11)));
      max_eps = std::max(max_eps, errors.back());
    }
    Tape tape;
    const double loss = mwer_loss(tape, one_utterance(tape, scores, errors)).item();
    EXPECT_LE(std::fabs(loss), static_cast<double>(max_eps) + 1e-12);
  }
}

TEST(MwerLoss, LoweringBestHypothesisScoreNeverIncreasesLoss) {
  const std::vector<double> base_scores = {1.0, 0.3, -0.2, 0.8};
  const std::vector<int> errors = {0, 2, 3, 5};  // hyp 0 has min error
  double prev = 1e100;
  for (double delta = 0.0; delta <= 4.0; delta += 0.25) {
    std::vector<double> scores = base_scores;
    scores[0] -= delta;  // more probability mass on the best hypothesis
    Tape tape;
    const double loss = mwer_loss(tape, one_utterance(tape, scores, errors)).item();
    EXPECT_LE(loss, prev + 1e-12) << "delta " << delta;
    prev = loss;
  }
}

TEST(MwerLoss, BruteForceOracleEquivalence) {
  RngStream rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> scores;
    std::vector<int> errors;
    const int n = 1 + static_cast<int>(rng.next_below(5));  // up to 5-best
    for (int i = 0; i < n; ++i) {
      scores.push_back(rng.normal(0.0, 2.0));
      errors.push_back(static_cast<int>(rng.next_below(11)));
    }
    Tape tape;
    const double loss = mwer_loss(tape, one_utterance(tape, scores, errors)).item();
    EXPECT_NEAR(loss, brute_force_mwer(scores, errors), 1e-12);
  }
}

TEST(MwerLoss, BatchMeanOverUtterances) {
  Tape tape;
  MwerBatch batch;
  MwerUtterance u1, u2;
  u1.scores = {Tensor::scalar(0.0), Tensor::scalar(std::log(3.0))};
  u1.word_errors = {0, 4};  // loss -1
  u2.scores = {Tensor::scalar(0.0), Tensor::scalar(0.0)};
  u2.word_errors = {1, 3};  // loss 0
  batch.utterances = {u1, u2};
  EXPECT_NEAR(mwer_loss(tape, batch).item(), -0.5, 1e-12);
}

TEST(MwerLoss, NanScoreRejected) {
  Tape tape;
  MwerBatch b = one_utterance(tape, {0.0, std::nan("")}, {1, 2});
  EXPECT_THROW(mwer_loss(tape, b), NumericError);
}

TEST(MwerLoss, GradientMatchesFiniteDifferences) {
  RngStream rng(13);
  std::vector<Tensor> scores;
  for (int i = 0; i < 4; ++i) {
    scores.push_back(Tensor::scalar(rng.normal(0.0, 1.0), true));
  }
  const double err = check_gradients(
      [](Tape& t, const std::vector<Tensor>& in) {
        MwerBatch b;
        MwerUtterance u;
        u.scores = in;
        u.word_errors = {0, 3, 1, 7};
        b.utterances.push_back(u);
        return mwer_loss(t, b);
      },
      scores);
  EXPECT_LT(err, 1e-5);
}

TEST(CorrelationLoss, PerfectlyCorrelatedPairGivesSqrt2) {
  Tape tape;
  // Two identical columns, unit-ish variance.
  Tensor x = Tensor::from_values({4, 2}, {1, 1, 2, 2, -1, -1, -2, -2});
  const double loss = correlation_loss(tape, x, RegularizerConfig{}).item();
  EXPECT_NEAR(loss, std::sqrt(2.0), 1e-6);
}

TEST(CorrelationLoss, DecorrelatedFixtureIsNearZero) {
  Tape tape;
  Tensor x = Tensor::from_values({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  EXPECT_LT(correlation_loss(tape, x, RegularizerConfig{}).item(), 1e-6);
}

TEST(CorrelationLoss, ConstantColumnGuardedByFloor) {
  Tape tape;
  Tensor x = Tensor::from_values({3, 2}, {5, 1, 5, -1, 5, 0});
  const double loss = correlation_loss(tape, x, RegularizerConfig{}).item();
  EXPECT_TRUE(std::isfinite(loss));
  // The constant column's self-correlation is ~0, so || Sigma - I ||_F ~ 1
  // from its diagonal entry alone.
  EXPECT_NEAR(loss, 1.0, 1e-3);
}

TEST(CorrelationLoss, NonNegativeAndZeroOnlyWhenDecorrelated) {
  RngStream rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Tensor x = Tensor::randn({6, 3}, rng);
    const double loss = correlation_loss(tape, x, RegularizerConfig{}).item();
    EXPECT_GE(loss, 0.0);
  }
}

TEST(CorrelationLoss, AffineRescalingInvariance) {
  RngStream rng(19);
  Tensor x = Tensor::randn({8, 3}, rng);
  Tape t1;
  const double base = correlation_loss(t1, x, RegularizerConfig{}).item();
  // Positive per-column scale and arbitrary shift preserve Pearson.
  const double scales[3] = {0.7, 1.9, 1.0};
  const double shifts[3] = {3.0, -1.0, 0.25};
  Tensor y = x.clone();
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      y.data()[i * 3 + j] = y.data()[i * 3 + j] * scales[j] + shifts[j];
    }
  }
  Tape t2;
  const double rescaled = correlation_loss(t2, y, RegularizerConfig{}).item();
  EXPECT_NEAR(base, rescaled, 1e-8);
}

TEST(CorrelationLoss, SingletonBatchRejected) {
  Tape tape;
  Tensor x = Tensor::zeros({1, 4});
  EXPECT_THROW(correlation_loss(tape, x, RegularizerConfig{}), DimensionError);
}

TEST(CombinedLoss, LambdaZeroIsExactlyMwer) {
  RngStream rng(23);
  Tape t1, t2;
  MwerBatch b1 = one_utterance(t1, {0.4, -0.3, 1.2}, {2, 0, 5});
  MwerBatch b2 = one_utterance(t2, {0.4, -0.3, 1.2}, {2, 0, 5});
  Tensor cls = Tensor::randn({3, 4}, rng);
  RegularizerConfig cfg;
  cfg.lambda = 0.0;
  const double combined = combined_loss(t1, b1, cls, cfg).item();
  const double plain = mwer_loss(t2, b2).item();
  EXPECT_EQ(combined, plain);  // bit-for-bit
}

TEST(CombinedLoss, DecorrelatedClsAddsNothing) {
  Tape t1, t2;
  MwerBatch b1 = one_utterance(t1, {0.0, 1.0}, {1, 4});
  MwerBatch b2 = one_utterance(t2, {0.0, 1.0}, {1, 4});
  Tensor cls = Tensor::from_values({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  RegularizerConfig cfg;
  cfg.lambda = 1.0;
  EXPECT_NEAR(combined_loss(t1, b1, cls, cfg).item(),
              mwer_loss(t2, b2).item(), 1e-6);
}

// Gradient of the combined loss through a small encoder, regularizer
// included (lambda = 0.1): scores and [CLS] rows share the encoder subgraph.
TEST(CombinedLoss, GradientThroughEncoder) {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.max_seq_len = 16;
  cfg.vocab_size = 23;
  cfg.seed = 29;
  ScoringModel m = ScoringModel::init(cfg);
  const std::vector<std::vector<int>> hyp_ids = {
      {2, 5, 9, 3}, {2, 5, 7, 3}, {2, 8, 9, 4, 3}, {2, 5, 3}};
  const std::vector<int> errors = {0, 1, 3, 2};
  const std::vector<double> first_pass = {0.1, 0.4, 1.3, 0.9};

  std::vector<Tensor> inputs;
  for (const auto& [name, t] : m.parameters()) inputs.push_back(t);
  const double err = check_gradients(
      [&](Tape& t, const std::vector<Tensor>&) {
        MwerBatch batch;
        MwerUtterance u;
        std::vector<Tensor> cls_rows;
        for (std::size_t i = 0; i < hyp_ids.size(); ++i) {
          auto [score, cls] = m.score(t, hyp_ids[i]);
          u.scores.push_back(
              t.shift(score, first_pass[i]));  // s_a + 1.0 * s_l
          cls_rows.push_back(cls);
        }
        u.word_errors = errors;
        batch.utterances.push_back(std::move(u));
        RegularizerConfig rc;
        rc.lambda = 0.1;
        return combined_loss(t, batch, t.stack_rows(cls_rows), rc);
      },
      inputs);
  EXPECT_LT(err, 1e-4);
}

}  // namespace
}  // namespace lorb
