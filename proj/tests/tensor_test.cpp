#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "m3dvg/core/gradcheck.hpp"
#include "m3dvg/core/ops.hpp"
#include "m3dvg/core/random.hpp"

namespace m3dvg {
namespace {

TEST(Tensor, RejectsShapeDataMismatch) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({0, 3}, {}), ShapeError);
}

TEST(Tensor, RejectsNonFinite) {
  EXPECT_THROW(Tensor::row({1.0, NAN}), NumericError);
  EXPECT_THROW(Tensor::row({INFINITY}), NumericError);
}

TEST(Matmul, IdentityTimesIdentity) {
  Tensor i2 = Tensor::identity(2);
  EXPECT_EQ(matmul(i2, i2), i2);
}

TEST(Matmul, HandEvaluated) {
  Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor b = Tensor::matrix({{0}, {1}});
  EXPECT_EQ(matmul(a, b), Tensor::matrix({{2}, {4}}));
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  try {
    matmul(a, a);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, AssociativeOnRandomChains) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = random_uniform({4, 4}, -1, 1, rng);
    Tensor b = random_uniform({4, 4}, -1, 1, rng);
    Tensor c = random_uniform({4, 4}, -1, 1, rng);
    EXPECT_LT(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-9);
  }
}

TEST(Softmax, ClosedFormRows) {
  Tensor s = softmax_rows(Tensor::matrix({{0, 0}, {0, std::log(3.0)}}));
  EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s(0, 1), 0.5);
  EXPECT_NEAR(s(1, 0), 0.25, 1e-15);
  EXPECT_NEAR(s(1, 1), 0.75, 1e-15);
  Tensor u = softmax_rows(Tensor::row({5, 5, 5}));
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_uniform({3, 7}, -20, 20, rng);
    Tensor shifted = x;
    double c = rng.uniform(-50, 50);
    for (std::size_t j = 0; j < 7; ++j) shifted(1, j) += c;
    Tensor s = softmax_rows(x);
    Tensor t = softmax_rows(shifted);
    for (std::size_t i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(s(i, j), 0.0);
        sum += s(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    EXPECT_LT(max_abs_diff(s, t), 1e-12);
  }
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  Gradients g = backward(mul(x, x));
  EXPECT_DOUBLE_EQ(g[x].item(), 6.0);
}

TEST(Backward, ConstantOutputGivesZeroGrads) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({1, 2, 3}));
  Var c = tape.constant(Tensor::scalar(4.0));
  Gradients g = backward(scale(c, 2.0));
  EXPECT_EQ(g[x], Tensor::zeros({1, 3}));
}

TEST(Backward, UnusedBranchHasZeroGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({1, 2}));
  Var y = tape.leaf(Tensor::row({3, 4}));
  Var unused = exp(y);
  (void)unused;
  Gradients g = backward(sum(mul(x, x)));
  EXPECT_EQ(g[y], Tensor::zeros({1, 2}));
  EXPECT_EQ(g[x], Tensor::row({2, 4}));
}

TEST(Backward, RejectsNonScalarOutput) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({1, 2}));
  EXPECT_THROW(backward(x), ContractError);
}

TEST(Backward, NonFiniteIsSurfacedWithOpName) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({-1.0}));
  try {
    log(x);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
}

TEST(Backward, SharedNodeAccumulates) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(2.0));
  Var y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x
  EXPECT_DOUBLE_EQ(backward(y)[x].item(), 7.0);
}

TEST(GradCheck, QuadraticFormIsExact) {
  Tensor a = Tensor::matrix({{2, 0.5, 0}, {0.5, 3, -1}, {0, -1, 4}});
  auto f = [&](Tape& t, Var x) {
    return matmul(matmul(x, t.constant(a)), transpose(x));
  };
  GradCheckResult r = grad_check(f, Tensor::row({0.3, -1.2, 0.7}));
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, SoftmaxScalar) {
  Tensor w = Tensor::matrix({{0.2, -1.0, 0.4}, {1.5, 0.3, -0.7}});
  auto f = [&](Tape& t, Var x) { return sum(mul(softmax_rows(x), t.constant(w))); };
  GradCheckResult r = grad_check(f, Tensor::matrix({{0.1, 0.5, -0.3}, {1.0, -2.0, 0.2}}));
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, ZeroStepIsRejected) {
  auto f = [](Tape&, Var x) { return sum(x); };
  EXPECT_THROW(grad_check(f, Tensor::row({1.0}), 0.0), ContractError);
}

TEST(GradCheck, EveryElementwiseOp) {
  Rng rng(5);
  Tensor x = random_uniform({3, 4}, 0.5, 2.0, rng);
  Tensor other = random_uniform({3, 4}, 0.5, 2.0, rng);
  Tensor row = random_uniform({1, 4}, 0.5, 2.0, rng);
  Tensor col = random_uniform({3, 1}, 0.5, 2.0, rng);
  std::vector<std::pair<const char*, TapeFunction>> cases = {
      {"exp", [](Tape&, Var v) { return sum(exp(v)); }},
      {"log", [](Tape&, Var v) { return sum(log(v)); }},
      {"sqrt", [](Tape&, Var v) { return sum(sqrt(v)); }},
      {"pow", [](Tape&, Var v) { return sum(pow_scalar(v, 2.5)); }},
      {"div_col", [&](Tape& t, Var v) { return sum(div(v, t.constant(col))); }},
      {"div_by", [&](Tape& t, Var v) { return sum(div(t.constant(other), v)); }},
      {"mul_row", [&](Tape& t, Var v) { return sum(mul(v, t.constant(row))); }},
      {"log_softmax", [&](Tape& t, Var v) {
         return sum(mul(log_softmax_rows(v), t.constant(other)));
       }},
      {"mean_rows", [&](Tape& t, Var v) {
         return sum(mul(mean_rows(v), t.constant(row)));
       }},
      {"sum_cols", [&](Tape& t, Var v) { return sum(mul(sum_cols(v), t.constant(col))); }},
      {"slices", [&](Tape&, Var v) {
         return sum(mul(slice_cols(v, 1, 2), slice_rows(slice_cols(v, 0, 2), 0, 3)));
       }},
      {"concat", [&](Tape&, Var v) {
         std::vector<Var> parts{v, exp(v)};
         Var c = concat_cols(parts);
         std::vector<Var> rows{c, c};
         return sum(mul(concat_rows(rows), concat_rows(rows)));
       }},
      {"gather", [&](Tape&, Var v) {
         std::vector<std::size_t> idx{0, 3, 1};
         return sum(log(gather_cols(v, idx)));
       }},
      {"minmax", [&](Tape& t, Var v) {
         Var o = t.constant(other);
         return sum(add(mul(minimum(v, o), v), maximum(v, o)));
       }},
      {"reshape", [&](Tape&, Var v) {
         Var r = reshape(v, {4, 3});
         return sum(matmul(r, transpose(r)));
       }},
  };
  for (const auto& [name, f] : cases) {
    GradCheckResult r = grad_check(f, x);
    EXPECT_LT(r.max_rel_error, 1e-6) << name;
  }
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) {
    double va = a.uniform();
    EXPECT_EQ(va, b.uniform());
    EXPECT_NE(va, c.uniform());
  }
}

}  // namespace
}  // namespace m3dvg
