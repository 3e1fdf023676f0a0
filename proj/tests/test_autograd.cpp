#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "slyk/layers.hpp"

using namespace slyk::nn;
using slyk::testing::gradcheck;
using slyk::testing::random_tensor;
using V = Var<double>;

namespace {
// Outputs are O(10) weighted sums, so finite differences carry ~1e-9 absolute
// noise; gradients smaller than kFloor are compared on an absolute scale.
constexpr double kTol = 1e-5;
constexpr double kFloor = 1e-3;

// Weighted sum with fixed random weights so every output element matters.
V weighted_sum(const V& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = constant(random_tensor(y.shape(), rng));
  return scale(mean_all(make_result<double>(
      [&] {
        Tensor<double> t = y.value();
        for (std::size_t i = 0; i < t.size(); ++i) t[i] *= w.value()[i];
        return t;
      }(),
      {y}, [w](Node<double>& self) {
        if (auto* g = detail::grad_of(self, 0))
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += w.value()[i] * self.grad[i];
      })), static_cast<double>(y.size()));
}
}  // namespace

TEST(Autograd, AddScaleReluTanh) {
  std::mt19937_64 rng(1);
  V a = parameter(random_tensor({3, 4}, rng)), b = parameter(random_tensor({3, 4}, rng));
  auto r = gradcheck({a, b}, [&] { return weighted_sum(tanh(relu(add(scale(a, 1.7), b)))); }, 1e-6, kFloor);
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  V a = parameter(Tensor<double>({1}, 3.0));
  auto y = add(a, a);
  y.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 2.0);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  V a = parameter(Tensor<double>({2}, 1.0));
  {
    NoGradGuard guard;
    auto y = scale(a, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(scale(a, 2.0).requires_grad());
}

TEST(Autograd, Linear) {
  std::mt19937_64 rng(2);
  V x = parameter(random_tensor({5, 3}, rng)), w = parameter(random_tensor({4, 3}, rng)),
    b = parameter(random_tensor({4}, rng));
  auto r = gradcheck({x, w, b}, [&] { return weighted_sum(linear(x, w, &b)); }, 1e-6, kFloor);
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Autograd, ConcatAndSlice) {
  std::mt19937_64 rng(3);
  V a = parameter(random_tensor({2, 3}, rng)), b = parameter(random_tensor({2, 5}, rng));
  auto r = gradcheck({a, b}, [&] { return weighted_sum(slice_cols(concat_cols<double>({a, b, a}), 2, 9)); }, 1e-6, kFloor);
  EXPECT_LT(r.max_rel_error, kTol);
  auto c = concat_cols<double>({a, b});
  EXPECT_EQ(c.shape(), (Shape{2, 8}));
  EXPECT_EQ(slice_cols(c, 3, 8).value().storage(), b.value().storage());
}

class ConvGrad : public ::testing::TestWithParam<std::tuple<int, int, int>> {};

TEST_P(ConvGrad, MatchesFiniteDifferences) {
  const auto [k, stride, pad] = GetParam();
  std::mt19937_64 rng(4);
  V x = parameter(random_tensor({2, 3, 7, 6}, rng)), w = parameter(random_tensor({4, 3, k, k}, rng)),
    b = parameter(random_tensor({4}, rng));
  auto r = gradcheck({x, w, b}, [&] { return weighted_sum(conv2d(x, w, &b, stride, pad)); }, 1e-6, kFloor);
  EXPECT_LT(r.max_rel_error, kTol);
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvGrad,
                         ::testing::Values(std::tuple{3, 1, 1}, std::tuple{3, 2, 1}, std::tuple{1, 1, 0},
                                           std::tuple{3, 2, 0}));

TEST(Autograd, ConvMatchesDirectLoop) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng);
  auto y = conv2d(constant(x), constant(w), static_cast<const V*>(nullptr), 2, 1).value();
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 3; ++ox) {
        double s = 0;
        for (int c = 0; c < 2; ++c)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
              const int iy = oy * 2 - 1 + i, ix = ox * 2 - 1 + j;
              if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
              s += x[(c * 5 + iy) * 5 + ix] * w[((o * 2 + c) * 3 + i) * 3 + j];
            }
        EXPECT_NEAR(y[(o * 3 + oy) * 3 + ox], s, 1e-12);
      }
}

TEST(Autograd, BatchNormTrainingAndEval) {
  std::mt19937_64 rng(6);
  for (bool training : {true, false}) {
    for (Shape s : {Shape{6, 3}, Shape{3, 2, 4, 3}}) {
      V x = parameter(random_tensor(s, rng)), g = parameter(random_tensor({s[1]}, rng, 0.5, 1.5)),
        b = parameter(random_tensor({s[1]}, rng));
      Tensor<double> rm({s[1]}, 0.1), rv({s[1]}, 1.3);
      auto r = gradcheck({x, g, b}, [&] {
        return weighted_sum(batch_norm(x, g, b, BatchNormBuffers<double>{&rm, &rv}, training));
      }, 1e-6, kFloor);
      EXPECT_LT(r.max_rel_error, kTol) << "training=" << training << " shape=" << to_string(s);
    }
  }
}

TEST(Autograd, BatchNormNormalizesAndTracksRunningStats) {
  BatchNorm<double> bn(1, 0.5);
  V x = constant(Tensor<double>({4, 1}, std::vector<double>{1, 2, 3, 4}));
  auto y = bn.forward(x, {true, nullptr});
  double mean = 0, sq = 0;
  for (double v : y.value().values()) mean += v / 4;
  for (double v : y.value().values()) sq += (v - mean) * (v - mean) / 4;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(sq, 1.0, 1e-4);
  auto state = state_tensors<double>(bn);
  EXPECT_NEAR((*state[2].tensor)[0], 0.5 * 2.5, 1e-12);                  // running mean
  EXPECT_NEAR((*state[3].tensor)[0], 0.5 * 1.0 + 0.5 * (5.0 / 3.0), 1e-12);  // unbiased running var
}

TEST(Autograd, TokensPoolingAttention) {
  std::mt19937_64 rng(7);
  V x = parameter(random_tensor({2, 4, 3, 2}, rng));
  auto r1 = gradcheck({x}, [&] { return weighted_sum(token_mean(to_tokens(x), 2)); }, 1e-6, kFloor);
  EXPECT_LT(r1.max_rel_error, kTol);
  auto r2 = gradcheck({x}, [&] { return weighted_sum(global_avg_pool(x)); }, 1e-6, kFloor);
  EXPECT_LT(r2.max_rel_error, kTol);
  // token_mean(to_tokens(x)) and global_avg_pool agree
  auto a = token_mean(to_tokens(x), 2).value(), b = global_avg_pool(x).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);

  V q = parameter(random_tensor({2 * 5, 8}, rng)), k = parameter(random_tensor({2 * 5, 8}, rng)),
    v = parameter(random_tensor({2 * 5, 8}, rng));
  auto r3 = gradcheck({q, k, v}, [&] { return weighted_sum(attention(q, k, v, 2, 4)); }, 1e-6, kFloor);
  EXPECT_LT(r3.max_rel_error, kTol);
}

TEST(Autograd, AttentionSingleHeadMatchesNaive) {
  std::mt19937_64 rng(8);
  auto q = random_tensor({3, 2}, rng), k = random_tensor({3, 2}, rng), v = random_tensor({3, 2}, rng);
  auto out = attention(constant(q), constant(k), constant(v), 1, 1).value();
  for (int i = 0; i < 3; ++i) {
    double w[3], z = 0;
    for (int j = 0; j < 3; ++j) {
      w[j] = std::exp((q[i * 2] * k[j * 2] + q[i * 2 + 1] * k[j * 2 + 1]) / std::sqrt(2.0));
      z += w[j];
    }
    for (int c = 0; c < 2; ++c) {
      double s = 0;
      for (int j = 0; j < 3; ++j) s += w[j] / z * v[j * 2 + c];
      EXPECT_NEAR(out[i * 2 + c], s, 1e-12);
    }
  }
}

TEST(Autograd, AttentionPoolModule) {
  std::mt19937_64 rng(9);
  AttentionPool<double> pool(8, 4, rng);
  V x = parameter(random_tensor({2, 8, 2, 3}, rng));
  std::vector<V> leaves{x};
  for (auto& p : pool.parameters()) leaves.push_back(p.var);
  auto r = gradcheck(leaves, [&] { return weighted_sum(pool.forward(x)); }, 1e-6, kFloor);
  EXPECT_LT(r.max_rel_error, kTol);
  EXPECT_EQ(pool.forward(x).shape(), (Shape{2, 8}));
}

TEST(Autograd, LossOps) {
  std::mt19937_64 rng(10);
  V q = parameter(random_tensor({3, 4}, rng)), q2 = parameter(random_tensor({3, 4}, rng)),
    z = parameter(random_tensor({3, 4}, rng)), z2 = parameter(random_tensor({3, 4}, rng));
  auto t = random_tensor({3, 4}, rng), t2 = random_tensor({3, 4}, rng);
  auto r = gradcheck({q, q2, z, z2}, [&] { return ssl_loss(q, q2, z, z2, t, t2, slyk::losses::SslTerms::kFour); }, 1e-6, kFloor);
  EXPECT_LT(r.max_rel_error, kTol);

  V pred = parameter(random_tensor({6, 2}, rng));
  auto target = random_tensor({6, 2}, rng);
  slyk::losses::EvConfig cfg;
  cfg.omega_in_graph = true;
  auto r2 = gradcheck({pred}, [&] { return sup_loss(pred, target, cfg); }, 1e-6, kFloor);
  EXPECT_LT(r2.max_rel_error, kTol);
  auto r3 = gradcheck({pred}, [&] { return mae_loss(pred, target); }, 1e-6, kFloor);
  EXPECT_LT(r3.max_rel_error, kTol);

  V logits = parameter(random_tensor({4, 3}, rng));
  const std::vector<int> labels{0, 2, 1, 1};
  const std::vector<double> w{1.0, 2.0, 0.5};
  auto r4 = gradcheck({logits}, [&] { return weighted_cross_entropy<double>(logits, labels, w); }, 1e-6, kFloor);
  EXPECT_LT(r4.max_rel_error, kTol);
}

TEST(Autograd, DropoutScalesKeptUnits) {
  std::mt19937_64 rng(11);
  V x = parameter(Tensor<double>({1000}, 1.0));
  auto y = dropout(x, 0.25, true, rng);
  double kept = 0;
  for (double v : y.value().values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
    kept += v != 0.0;
  }
  EXPECT_NEAR(kept / 1000.0, 0.75, 0.05);
  EXPECT_EQ(dropout(x, 0.25, false, rng).value(), x.value());
}
