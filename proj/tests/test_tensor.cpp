#include "lorb/tensor.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "lorb/gradcheck.hpp"
#include "lorb/rng.hpp"

namespace lorb {
namespace {

Tensor b_row(RngStream& rng) { return Tensor::randn({4}, rng, 1.0, true); }

Tensor positive(RngStream& rng) {
  Tensor t = Tensor::randn({3, 4}, rng, 1.0, true);
  for (double& v : t.values()) v = std::fabs(v) + 0.5;
  return t;
}

TEST(Tensor, ShapeInvariant) {
  Tensor t = Tensor::zeros({3, 4});
  EXPECT_EQ(t.size(), 12u);
  EXPECT_THROW(Tensor::from_values({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST(Matmul, Identity) {
  Tape tape;
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Tensor c = tape.matmul(eye, a);
  EXPECT_EQ(c.values(), a.values());
}

TEST(Matmul, HandComputed1x2By2x1) {
  Tape tape;
  Tensor a = Tensor::from_values({1, 2}, {1, 2});
  Tensor b = Tensor::from_values({2, 1}, {3, 4});
  Tensor c = tape.matmul(a, b);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_DOUBLE_EQ(c.item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5, 2});
  try {
    tape.matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[3,4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[5,2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
  RngStream rng(7);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
  const double err = check_gradients(
      [](Tape& t, const std::vector<Tensor>& in) {
        return t.sum(t.matmul(in[0], in[1]));
      },
      {a, b});
  EXPECT_LT(err, 1e-6);
}

TEST(Elementwise, DropoutRateZeroIsIdentity) {
  Tape tape;
  RngStream rng(1);
  Tensor x = Tensor::randn({4, 4}, rng);
  Tensor y = tape.dropout(x, 0.0, rng);
  EXPECT_TRUE(y.same_storage(x));
}

TEST(Elementwise, GeluFixedPointAtZero) {
  Tape tape;
  Tensor x = Tensor::scalar(0.0);
  EXPECT_DOUBLE_EQ(tape.gelu(x).item(), 0.0);
}

TEST(Elementwise, DropoutReplaysIdenticalMaskForSameSeed) {
  RngStream rng(123);
  Tensor x = Tensor::full({64}, 1.0);
  Tape t1, t2;
  RngStream r1(42), r2(42);
  Tensor y1 = t1.dropout(x, 0.5, r1);
  Tensor y2 = t2.dropout(x, 0.5, r2);
  EXPECT_EQ(y1.values(), y2.values());
  // And a different seed gives a different mask.
  RngStream r3(43);
  Tape t3;
  Tensor y3 = t3.dropout(x, 0.5, r3);
  EXPECT_NE(y1.values(), y3.values());
}

TEST(Elementwise, ShapeMismatchRejected) {
  Tape tape;
  Tensor a = Tensor::zeros({2, 2});
  Tensor b = Tensor::zeros({3});
  EXPECT_THROW(tape.add(a, b), DimensionError);
}

TEST(SoftmaxNeg, EqualScoresGiveUniform) {
  for (double c : {-3.0, 0.0, 17.5}) {
    Tape tape;
    Tensor s = Tensor::full({4}, c);
    Tensor p = tape.softmax_neg(s);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p.data()[i], 0.25);
  }
}

TEST(SoftmaxNeg, ClosedForm) {
  // P_i = e^{-s_i} / sum e^{-s_j}: s = [0, ln 3] -> [1, 1/3]/(4/3) = [.75, .25]
  Tape tape;
  Tensor s = Tensor::from_values({2}, {0.0, std::log(3.0)});
  Tensor p = tape.softmax_neg(s);
  EXPECT_NEAR(p.data()[0], 0.75, 1e-15);
  EXPECT_NEAR(p.data()[1], 0.25, 1e-15);
}

TEST(SoftmaxNeg, SingletonNormalizes) {
  Tape tape;
  Tensor p = tape.softmax_neg(Tensor::from_values({1}, {-5.2}));
  EXPECT_DOUBLE_EQ(p.item(), 1.0);
}

TEST(SoftmaxNeg, SumsToOneAndShiftInvariant) {
  RngStream rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor s = Tensor::randn({6}, rng, 3.0);
    Tape t1;
    Tensor p = t1.softmax_neg(s);
    double sum = 0.0;
    for (std::size_t i = 0; i < 6; ++i) sum += p.data()[i];
    EXPECT_NEAR(sum, 1.0, 1e-12);

    Tensor shifted = s.clone();
    const double c = rng.normal(0.0, 10.0);
    for (double& v : shifted.values()) v += c;
    Tape t2;
    Tensor q = t2.softmax_neg(shifted);
    for (std::size_t i = 0; i < 6; ++i)
      EXPECT_NEAR(p.data()[i], q.data()[i], 1e-12);
  }
}

TEST(SoftmaxNeg, NonFiniteInputRejected) {
  Tape tape;
  Tensor bad = Tensor::from_values({2}, {0.0, std::nan("")});
  EXPECT_THROW(tape.softmax_neg(bad), NumericError);
  Tensor inf = Tensor::from_values({2}, {0.0, INFINITY});
  EXPECT_THROW(tape.softmax_neg(inf), NumericError);
}

TEST(LayerNorm, ConstantRowAbsorbedByEps) {
  Tape tape;
  Tensor x = Tensor::full({1, 4}, 3.7);
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  Tensor y = tape.layer_norm(x, gain, bias);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.data()[i], 0.0);
}

TEST(LayerNorm, HandNormalizedPair) {
  Tape tape;
  Tensor x = Tensor::from_values({1, 2}, {1.0, 3.0});
  Tensor gain = Tensor::full({2}, 1.0);
  Tensor bias = Tensor::zeros({2});
  Tensor y = tape.layer_norm(x, gain, bias);
  EXPECT_NEAR(y.data()[0], -1.0, 1e-4);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-4);
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  RngStream rng(5);
  Tensor x = Tensor::randn({3, 8}, rng, 1.0, true);
  Tensor gain = Tensor::randn({8}, rng, 1.0, true);
  Tensor bias = Tensor::randn({8}, rng, 1.0, true);
  const double err = check_gradients(
      [](Tape& t, const std::vector<Tensor>& in) {
        // Squared sum keeps the loss sensitive to sign.
        Tensor y = t.layer_norm(in[0], in[1], in[2]);
        return t.sum(t.mul(y, y));
      },
      {x, gain, bias});
  EXPECT_LT(err, 1e-6);
}

TEST(CheckGradients, SumIsExact) {
  RngStream rng(11);
  Tensor x = Tensor::randn({5}, rng, 1.0, true);
  const double err = check_gradients(
      [](Tape& t, const std::vector<Tensor>& in) { return t.sum(in[0]); },
      {x});
  EXPECT_LT(err, 1e-10);
}

TEST(Tape, GradAbsentWithoutRequiresGrad) {
  Tape tape;
  RngStream rng(3);
  Tensor x = Tensor::randn({3}, rng, 1.0, false);
  Tensor w = Tensor::randn({3}, rng, 1.0, true);
  Tensor y = tape.sum(tape.mul(x, w));
  tape.backward(y);
  EXPECT_FALSE(x.has_grad());
  EXPECT_TRUE(w.has_grad());
}

TEST(Tape, DoubleBackwardRejected) {
  Tape tape;
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = tape.mul(x, x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_THROW(tape.backward(y), std::logic_error);
}

TEST(Tape, ForwardReplayIsBitIdentical) {
  auto run = [](std::uint64_t seed) {
    RngStream rng(seed);
    Tape tape;
    Tensor a = Tensor::randn({4, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({4, 4}, rng, 1.0, true);
    RngStream drop = rng.split(1);
    Tensor y = tape.dropout(tape.gelu(tape.matmul(a, b)), 0.3, drop);
    return y.values();
  };
  EXPECT_EQ(run(2024), run(2024));
  EXPECT_NE(run(2024), run(2025));
}

// Finite-difference property check over the whole differentiable op suite,
// 100 random trials per op with N(0,1) inputs.
TEST(GradcheckProperty, AllOpsMatchFiniteDifferences) {
  const int kTrials = 100;
  RngStream rng(2718);
  auto check = [&](const char* name, const ScalarFn& f,
                   std::vector<Tensor> inputs) {
    const double err = check_gradients(f, std::move(inputs));
    EXPECT_LT(err, 1e-5) << "op: " << name;
  };

  for (int trial = 0; trial < kTrials; ++trial) {
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor m = Tensor::randn({4, 2}, rng, 1.0, true);
    Tensor v = Tensor::randn({4}, rng, 1.0, true);
    Tensor sq = Tensor::randn({3, 3}, rng, 1.0, true);

    check("add", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.add(in[0], in[1]));
    }, {a, b});
    check("sub_mul", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.mul(t.sub(in[0], in[1]), in[0]));
    }, {a, b});
    check("scale_shift", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.shift(t.scale(in[0], -1.7), 0.3));
    }, {a});
    check("scalar_broadcast", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.mul(in[0], in[1]));
    }, {a, Tensor::scalar(rng.normal(), true)});
    check("gelu", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.gelu(in[0]));
    }, {a});
    check("tanh", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.tanh(in[0]));
    }, {a});
    check("matmul", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.matmul(in[0], in[1]));
    }, {a, m});
    check("matmul_nt", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.matmul_nt(in[0], in[1]));
    }, {a, b});
    check("transpose", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor y = t.transpose(in[0]);
      return t.sum(t.mul(y, y));
    }, {a});
    check("softmax_neg", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor p = t.softmax_neg(in[0]);
      return t.sum(t.mul(p, p));
    }, {v});
    check("softmax_rows", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor p = t.softmax_rows(in[0]);
      return t.sum(t.mul(p, p));
    }, {a});
    check("mean_rows", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor mu = t.mean_rows(in[0]);
      return t.sum(t.mul(mu, mu));
    }, {a});
    check("add_row_broadcast", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor y = t.add_row_broadcast(in[0], in[1]);
      return t.sum(t.mul(y, y));
    }, {a, b_row(rng)});
    check("slice_concat_cols", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor left = t.slice_cols(in[0], 0, 2);
      Tensor right = t.slice_cols(in[0], 2, 2);
      Tensor y = t.concat_cols({right, left});
      return t.sum(t.mul(y, y));
    }, {a});
    check("select_stack_rows", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor r0 = t.select_row(in[0], 0);
      Tensor r2 = t.select_row(in[0], 2);
      Tensor y = t.stack_rows({r2, r0});
      return t.sum(t.mul(y, y));
    }, {a});
    check("concat", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor y = t.concat({in[0], in[1]});
      return t.sum(t.mul(y, y));
    }, {v, Tensor::randn({4}, rng, 1.0, true)});
    check("diag_outer", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor d = t.diag(in[0]);
      Tensor o = t.outer(d, d);
      return t.sum(o);
    }, {sq});
    check("rsqrt", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.rsqrt(in[0]));
    }, {positive(rng)});
    check("sqrt", [](Tape& t, const std::vector<Tensor>& in) {
      return t.sum(t.sqrt(in[0]));
    }, {positive(rng)});
    check("layer_norm", [](Tape& t, const std::vector<Tensor>& in) {
      Tensor y = t.layer_norm(in[0], in[1], in[2]);
      return t.sum(t.mul(y, y));
    }, {a, b_row(rng), b_row(rng)});
    const std::uint64_t drop_seed = rng.next_u64();
    check("dropout", [drop_seed](Tape& t, const std::vector<Tensor>& in) {
      RngStream r(drop_seed);
      return t.sum(t.dropout(in[0], 0.4, r));
    }, {a});
    check("embed", [](Tape& t, const std::vector<Tensor>& in) {
      const std::vector<int> ids = {2, 0, 2, 1};
      Tensor y = t.embed(in[0], ids);
      return t.sum(t.mul(y, y));
    }, {sq});
  }
}

}  // namespace
}  // namespace lorb
