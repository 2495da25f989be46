#include <gtest/gtest.h>

#include <cmath>

#include "mapkit/optim.hpp"
#include "mapkit/tensor.hpp"
#include "test_util.hpp"

namespace mapkit {
namespace {

using testing::random_parameter;
using testing::random_values;

constexpr double kTol = 1e-4;

// Contracts an op output against fixed random weights so every output
// coordinate contributes to the scalar.
Tensor contract(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor w = Tensor::constant(y.shape(), random_values(rng, y.numel()));
  return ops::sum(ops::mul(y, w));
}

struct Case {
  const char* name;
  std::function<Tensor(const std::vector<Tensor>&)> op;
  std::vector<Shape> shapes;
};

std::vector<Case> op_cases() {
  using namespace ops;
  return {
      {"matmul", [](const auto& x) { return matmul(x[0], x[1]); }, {{9, 12}, {12, 10}}},
      {"matmul_nt", [](const auto& x) { return matmul_nt(x[0], x[1]); }, {{9, 12}, {10, 12}}},
      {"transpose", [](const auto& x) { return transpose(x[0]); }, {{11, 13}}},
      {"reshape", [](const auto& x) { return reshape(x[0], {13, 11}); }, {{11, 13}}},
      {"add", [](const auto& x) { return add(x[0], x[1]); }, {{10, 12}, {10, 12}}},
      {"sub", [](const auto& x) { return sub(x[0], x[1]); }, {{10, 12}, {10, 12}}},
      {"mul", [](const auto& x) { return mul(x[0], x[1]); }, {{10, 12}, {10, 12}}},
      {"scale", [](const auto& x) { return scale(x[0], -1.7); }, {{10, 12}}},
      {"add_bias", [](const auto& x) { return add_bias(x[0], x[1]); }, {{10, 12}, {12}}},
      {"linear", [](const auto& x) { return linear(x[0], x[1], x[2]); }, {{9, 12}, {12, 11}, {11}}},
      {"relu", [](const auto& x) { return relu(x[0]); }, {{10, 12}}},
      {"gelu", [](const auto& x) { return gelu(x[0]); }, {{10, 12}}},
      {"sigmoid", [](const auto& x) { return sigmoid(x[0]); }, {{10, 12}}},
      {"softmax_rows", [](const auto& x) { return softmax(x[0], 1); }, {{10, 12}}},
      {"softmax_cols", [](const auto& x) { return softmax(x[0], 0); }, {{10, 12}}},
      {"layer_norm", [](const auto& x) { return layer_norm(x[0], x[1], x[2]); }, {{10, 12}, {12}, {12}}},
      {"slice_cols", [](const auto& x) { return slice_cols(x[0], 3, 7); }, {{10, 12}}},
      {"slice_rows", [](const auto& x) { return slice_rows(x[0], 2, 5); }, {{10, 12}}},
      {"concat_cols", [](const auto& x) { return concat_cols({x[0], x[1]}); }, {{10, 6}, {10, 7}}},
      {"concat_rows", [](const auto& x) { return concat_rows({x[0], x[1]}); }, {{6, 12}, {7, 12}}},
      {"gather_rows",
       [](const auto& x) {
         const std::vector<std::size_t> rows{3, 0, 3, 9, 1};
         return gather_rows(x[0], rows);
       },
       {{10, 12}}},
      {"repeat_row", [](const auto& x) { return repeat_row(x[0], 9); }, {{1, 120}}},
      {"replace_rows",
       [](const auto& x) {
         const std::vector<std::size_t> rows{1, 4};
         return replace_rows(x[0], rows, x[1]);
       },
       {{10, 12}, {1, 12}}},
      {"pairwise_add", [](const auto& x) { return pairwise_add(x[0], x[1]); }, {{6, 12}, {5, 12}}},
      {"sum", [](const auto& x) { return sum(x[0]); }, {{10, 12}}},
      {"mean", [](const auto& x) { return mean(x[0]); }, {{10, 12}}},
  };
}

TEST(TensorGrad, EveryOpPassesFiniteDifferences) {
  Rng rng(1234);
  std::uint64_t seed = 0;
  for (const auto& c : op_cases()) {
    std::vector<Tensor> inputs;
    std::size_t total = 0;
    for (const auto& s : c.shapes) {
      inputs.push_back(random_parameter(rng, s));
      total += shape_numel(s);
    }
    ASSERT_GE(total, 100u) << c.name;
    const std::uint64_t contract_seed = ++seed;
    const auto res = grad_check([&] { return contract(c.op(inputs), contract_seed); }, inputs, 1e-5, 200, seed);
    EXPECT_LT(res.max_relative_error, kTol) << c.name;
    EXPECT_GE(res.coordinates, 100u) << c.name;
  }
}

TEST(TensorGrad, LossesPassFiniteDifferences) {
  Rng rng(77);
  const Tensor x = random_parameter(rng, {10, 12}, -2.0, 2.0);
  const auto target = random_values(rng, 120);
  std::vector<double> bits(120);
  for (auto& b : bits) b = rng.bernoulli(0.4) ? 1.0 : 0.0;

  EXPECT_LT(grad_check([&] { return ops::mse_loss(x, target); }, {x}, 1e-5, 120).max_relative_error, kTol);
  EXPECT_LT(grad_check([&] { return ops::l1_loss(x, target); }, {x}, 1e-5, 120).max_relative_error, kTol);
  EXPECT_LT(grad_check([&] { return ops::bce_with_logits(x, bits); }, {x}, 1e-5, 120).max_relative_error, kTol);
}

TEST(TensorGrad, SoftmaxCrossEntropyComposite) {
  Rng rng(5);
  const Tensor logits = random_parameter(rng, {12, 9}, -3, 3);
  std::vector<double> onehot(12 * 9, 0.0);
  for (std::size_t r = 0; r < 12; ++r) onehot[r * 9 + rng.uniform_int(0, 8)] = 1.0;
  const Tensor mask = Tensor::constant({12, 9}, onehot);
  auto f = [&] {
    const Tensor p = ops::softmax(logits, 1);
    const Tensor logp = ops::unary_map(p, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
    return ops::scale(ops::sum(ops::mul(logp, mask)), -1.0 / 12.0);
  };
  EXPECT_LT(grad_check(f, {logits}, 1e-5, 200).max_relative_error, kTol);
}

TEST(TensorGrad, CorruptedBackwardIsCaught) {
  Rng rng(8);
  const Tensor x = random_parameter(rng, {10, 12});
  // Derivative of sin reported as sin itself.
  auto f = [&] {
    return contract(ops::unary_map(x, [](double v) { return std::sin(v); }, [](double v) { return std::sin(v); }), 3);
  };
  EXPECT_GT(grad_check(f, {x}, 1e-5, 120).max_relative_error, 1e-2);
}

TEST(Backward, SumGivesOnes) {
  const Tensor x = Tensor::parameter({3, 4}, std::vector<double>(12, 0.5));
  backward(ops::sum(x));
  EXPECT_EQ(x.grad(), std::vector<double>(12, 1.0));
  EXPECT_EQ(Tape::current().size(), 0u);
}

TEST(Backward, SquareGivesTwiceX) {
  const Tensor x = Tensor::parameter({1}, {3.0});
  backward(ops::mul(x, x));
  EXPECT_EQ(x.grad(), std::vector<double>{6.0});
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  backward(ops::sum(x));
  backward(ops::sum(ops::scale(x, 2.0)));
  EXPECT_EQ(x.grad(), (std::vector<double>{3.0, 3.0}));
  x.zero_grad();
  EXPECT_EQ(x.grad(), (std::vector<double>{0.0, 0.0}));
}

TEST(Backward, RejectsNonScalarAndUntracked) {
  const Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  EXPECT_THROW(backward(ops::scale(x, 2.0)), std::invalid_argument);
  Tape::current().clear();
  EXPECT_THROW(backward(Tensor::scalar(1.0)), std::invalid_argument);
}

TEST(NoGrad, SuppressesRecording) {
  const Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  Tape::current().clear();
  {
    NoGradGuard guard;
    const Tensor y = ops::sum(ops::mul(x, x));
    EXPECT_FALSE(y.requires_grad());
    EXPECT_EQ(Tape::current().size(), 0u);
  }
  const Tensor z = ops::sum(x);
  EXPECT_TRUE(z.requires_grad());
  Tape::current().clear();
}

TEST(Linear, IdentityAndZeroInput) {
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  const Tensor w = Tensor::constant({4, 4}, eye);
  const Tensor b0 = Tensor::zeros({4});
  Rng rng(1);
  const Tensor x = Tensor::constant({3, 4}, random_values(rng, 12));
  const Tensor same = ops::linear(x, w, b0);
  EXPECT_EQ(std::vector<double>(same.values().begin(), same.values().end()),
            std::vector<double>(x.values().begin(), x.values().end()));
  const Tensor b = Tensor::constant({4}, {1, 2, 3, 4});
  const Tensor y = ops::linear(Tensor::zeros({3, 4}), w, b);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y.at(r, c), c + 1.0);
  }
}

TEST(Linear, MatchesTripleLoop) {
  Rng rng(2);
  const std::size_t n = 7, k = 9, m = 5;
  const Tensor x = Tensor::constant({n, k}, random_values(rng, n * k));
  const Tensor w = Tensor::constant({k, m}, random_values(rng, k * m));
  const Tensor b = Tensor::constant({m}, random_values(rng, m));
  const Tensor y = ops::linear(x, w, b);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = b.values()[j];
      for (std::size_t t = 0; t < k; ++t) acc += x.at(i, t) * w.at(t, j);
      EXPECT_NEAR(y.at(i, j), acc, 1e-12);
    }
  }
}

TEST(LayerNorm, ConstantRowAndMean) {
  const Tensor gain = Tensor::full({5}, 1.0);
  const Tensor zero = Tensor::zeros({5});
  const Tensor c = ops::layer_norm(Tensor::full({2, 5}, 3.0), gain, zero);
  for (double v : c.values()) EXPECT_EQ(v, 0.0);
  Rng rng(4);
  const Tensor bias = Tensor::constant({5}, random_values(rng, 5));
  const Tensor y = ops::layer_norm(Tensor::constant({1, 5}, random_values(rng, 5)), gain, bias);
  double ym = 0.0, bm = 0.0;
  for (int i = 0; i < 5; ++i) {
    ym += y.values()[i] / 5;
    bm += bias.values()[i] / 5;
  }
  EXPECT_NEAR(ym, bm, 1e-9);
}

TEST(Softmax, UniformAndShiftInvariance) {
  const Tensor u = ops::softmax(Tensor::zeros({2, 4}), 1);
  for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  Rng rng(6);
  const auto vals = random_values(rng, 8, -5, 5);
  auto shifted = vals;
  for (std::size_t i = 0; i < 4; ++i) shifted[i] += 100.0;
  const Tensor a = ops::softmax(Tensor::constant({2, 4}, vals), 1);
  const Tensor b = ops::softmax(Tensor::constant({2, 4}, shifted), 1);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-12);
}

TEST(Shapes, MismatchesThrow) {
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);
  EXPECT_THROW(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), std::invalid_argument);
  EXPECT_THROW(ops::reshape(Tensor::zeros({2, 3}), {4, 2}), std::invalid_argument);
}

}  // namespace
}  // namespace mapkit
