#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "m3dvg/core/gradcheck.hpp"
#include "m3dvg/losses.hpp"

namespace m3dvg {
namespace {

constexpr double kPi = std::numbers::pi;

double focal_value(const Tensor& probs, std::vector<std::size_t> target, FocalParams fp = {}) {
  Tape t;
  return focal_loss(t.constant(probs), target, fp).value().item();
}

TEST(Focal, ClosedForms) {
  EXPECT_EQ(focal_value(Tensor::row({0, 1, 0}), {1}), 0.0);
  EXPECT_NEAR(focal_value(Tensor::row({0.5, 0.5}), {0}), 0.25 * 0.25 * std::log(2.0), 1e-9);
  EXPECT_NEAR(focal_value(Tensor::row({0.5, 0.5}), {0}), 0.043322, 1e-6);
}

TEST(Focal, GammaZeroAlphaOneIsCrossEntropy) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    Tensor p = softmax_rows(random_uniform({4, kNumClasses}, -3, 3, rng));
    std::vector<std::size_t> y(4);
    for (auto& v : y) v = rng.index(kNumClasses);
    Tape tape;
    double ce = cross_entropy(tape.constant(p), y).value().item();
    EXPECT_NEAR(focal_value(p, y, {1.0, 0.0}), ce, 1e-12);
  }
}

TEST(Focal, ClampsZeroProbabilityWithWarning) {
  std::vector<std::string> seen;
  auto old = set_warning_sink([&](std::string_view m) { seen.emplace_back(m); });
  double v = focal_value(Tensor::row({0.0, 1.0}), {0}, {1.0, 0.0});
  set_warning_sink(old);
  EXPECT_NEAR(v, -std::log(1e-12), 1e-9);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_NE(seen[0].find("clamped"), std::string::npos);
}

TEST(Focal, RejectsInvalidInputs) {
  EXPECT_THROW(focal_value(Tensor::row({0.5, 0.6}), {0}), ContractError);
  EXPECT_THROW(focal_value(Tensor::row({0.5, 0.5}), {2}), ContractError);
  EXPECT_THROW(focal_value(Tensor::row({0.5, 0.5}), {0, 1}), ShapeError);
}

TEST(Regression, L1AndGiouExamples) {
  Tape t;
  Var a = t.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  EXPECT_EQ(l1_loss(a, a).value().item(), 0.0);
  Var b = t.constant(Tensor::matrix({{2, 1, 4}, {3, 6, 5}}));
  EXPECT_DOUBLE_EQ(l1_loss(a, b).value().item(), 1.0);
  Var box = t.constant(Tensor::row({0, 0, 1, 1}));
  EXPECT_NEAR(giou_loss(box, box).value().item(), 0.0, 1e-15);
  Var far = t.constant(Tensor::row({2, 0, 3, 1}));
  EXPECT_NEAR(giou_loss(box, far).value().item(), 4.0 / 3.0, 1e-15);
  EXPECT_THROW(giou_loss(box, t.constant(Tensor::row({1, 0, 0, 1}))), ValidationError);
}

TEST(Regression, GiouMatchesGeometry) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    auto make = [&] {
      double l = rng.uniform(-5, 5), tp = rng.uniform(-5, 5);
      return Box2D(l, tp, l + rng.uniform(0.1, 4), tp + rng.uniform(0.1, 4));
    };
    Box2D a = make(), b = make();
    Tape t;
    Var va = t.constant(Tensor::row({a.left, a.top, a.right, a.bottom}));
    Var vb = t.constant(Tensor::row({b.left, b.top, b.right, b.bottom}));
    EXPECT_NEAR(giou_loss(va, vb).value().item(), 1.0 - giou_2d(a, b), 1e-12);
  }
}

TEST(Regression, BoxFromLrtb) {
  Tape t;
  Var box = box_from_lrtb(t.constant(Tensor::row({100, 50})),
                          t.constant(Tensor::row({10, 5, 20, 15})));
  EXPECT_EQ(box.value(), Tensor::row({90, 45, 120, 65}));
}

TEST(MultiBin, BinLayout) {
  OrientationBins bins;
  EXPECT_EQ(bins.assign(0.0).bin, 6u);
  EXPECT_NEAR(bins.assign(0.0).residual, 0.0, 1e-15);
  EXPECT_EQ(bins.assign(kPi).bin, 0u);
  EXPECT_EQ(bins.assign(-kPi).bin, 0u);
  EXPECT_NEAR(bins.center(0), -kPi, 1e-15);
  Rng rng(3);
  double half = kPi / 12;
  for (int i = 0; i < 5000; ++i) {
    double a = rng.uniform(-10, 10);
    auto as = bins.assign(a);
    EXPECT_LT(as.bin, 12u);
    EXPECT_GT(as.residual, -half - 1e-12);
    EXPECT_LE(as.residual, half + 1e-12);
    EXPECT_NEAR(std::cos(bins.decode(as.bin, as.residual)), std::cos(a), 1e-9);
    EXPECT_NEAR(std::sin(bins.decode(as.bin, as.residual)), std::sin(a), 1e-9);
  }
  // The upper edge of a bin belongs to it; the lower edge does not.
  EXPECT_EQ(bins.assign(bins.center(3) + half).bin, 3u);
}

TEST(MultiBin, ClosedForms) {
  Tape t;
  std::vector<double> zero_angle{0.0};
  Var uniform = t.constant(Tensor::zeros({1, 12}));
  EXPECT_NEAR(multibin_loss(uniform, uniform, zero_angle).value().item(), std::log(12.0), 1e-9);

  std::vector<double> center_angle{OrientationBins{}.center(4)};
  Tensor logits = Tensor::zeros({1, 12});
  logits(0, 4) = 20.0;
  EXPECT_LT(multibin_loss(t.constant(logits), t.constant(Tensor::zeros({1, 12})), center_angle)
                .value()
                .item(),
            1e-3);
  EXPECT_THROW(multibin_loss(uniform, uniform, std::vector<double>{0.0, 1.0}), ShapeError);
}

TEST(Laplacian, ClosedFormsAndStationarity) {
  auto value = [](double d, double s, double target) {
    Tape t;
    return laplacian_depth_loss(t.constant(Tensor::scalar(d)), t.constant(Tensor::scalar(s)),
                                t.constant(Tensor::scalar(target)))
        .value()
        .item();
  };
  EXPECT_EQ(value(5, 1, 5), 0.0);
  EXPECT_NEAR(value(6, 1, 5), std::numbers::sqrt2, 1e-15);
  EXPECT_LT(value(5, 0.5, 5), 0.0);  // log sigma may go negative
  EXPECT_THROW(value(5, 0, 5), ContractError);

  for (double e : {0.3, 1.0, std::numbers::e, 7.5}) {
    double star = std::numbers::sqrt2 * e;
    Tape t;
    Var s = t.leaf(Tensor::scalar(star));
    Var loss = laplacian_depth_loss(t.constant(Tensor::scalar(10 + e)), s,
                                    t.constant(Tensor::scalar(10)));
    EXPECT_LT(std::abs(backward(loss)[s].item()), 1e-6) << e;
    EXPECT_NEAR(loss.value().item(), 1.0 + std::log(star), 1e-12);
  }
}

TEST(Size3d, ClosedForms) {
  auto value = [](Tensor p, Tensor q) {
    Tape t;
    return size3d_iou_loss(t.constant(p), t.constant(q)).value().item();
  };
  EXPECT_EQ(value(Tensor::row({2, 1, 1}), Tensor::row({2, 1, 1})), 0.0);
  EXPECT_NEAR(value(Tensor::row({2, 1, 1}), Tensor::row({1, 1, 1})), 0.5, 1e-15);
  EXPECT_NEAR(value(Tensor::row({1.2, 3.1, 0.7}), Tensor::row({2.0, 1.5, 0.9})),
              value(Tensor::row({2.4, 6.2, 1.4}), Tensor::row({4.0, 3.0, 1.8})), 1e-15);
  EXPECT_THROW(value(Tensor::row({0, 1, 1}), Tensor::row({1, 1, 1})), ValidationError);
  // Matches the oriented IoU of two co-centered boxes.
  Box3D a({0, 0, 10}, 1.2, 3.1, 0.7, 0.4), b({0, 0, 10}, 2.0, 1.5, 0.9, 0.4);
  EXPECT_NEAR(value(Tensor::row({1.2, 3.1, 0.7}), Tensor::row({2.0, 1.5, 0.9})),
              1.0 - iou_3d(a, b), 1e-12);
}

TEST(DepthMap, ClosedForms) {
  Tape t;
  std::vector<std::size_t> y{2, 0};
  Tensor onehot = Tensor::zeros({2, 80});
  onehot(0, 2) = onehot(1, 0) = 1.0;
  EXPECT_EQ(depth_map_focal_loss(t.constant(onehot), y).value().item(), 0.0);
  std::vector<std::size_t> one{0};
  EXPECT_NEAR(depth_map_focal_loss(t.constant(Tensor::row({0.5, 0.5})), one).value().item(),
              0.25 * 0.25 * std::log(2.0), 1e-12);
  Tensor uniform = Tensor::filled({3, 4}, 0.25);
  std::vector<std::size_t> y3{0, 1, 3};
  EXPECT_NEAR(depth_map_focal_loss(t.constant(uniform), y3).value().item(),
              -0.25 * 0.75 * 0.75 * std::log(0.25), 1e-12);
}

TEST(DepthMap, BinsIncreaseWithDepth) {
  DepthBins bins;
  EXPECT_EQ(bins.bin_of(1e-3), 0u);
  EXPECT_EQ(bins.bin_of(1000.0), 79u);
  EXPECT_NEAR(bins.lower_edge(80), 60.0, 1e-9);
  std::size_t prev = 0;
  for (double d = 0.01; d < 70; d += 0.01) {
    std::size_t b = bins.bin_of(d);
    EXPECT_GE(b, prev);
    prev = b;
    if (d < 59.9) {
      EXPECT_LE(bins.lower_edge(b), d + 1e-9);
      EXPECT_GT(bins.lower_edge(b + 1), d - 1e-9);
    }
  }
  EXPECT_GT(bins.lower_edge(2) - bins.lower_edge(1), bins.lower_edge(1) - bins.lower_edge(0));
}

TEST(Aggregate, Totals) {
  LossTerms<double> ones{1, 1, 1, 1, 1, 1, 1, 1};
  LossBreakdown b = aggregate(ones);
  EXPECT_EQ(b.l2d, 19.0);
  EXPECT_EQ(b.l3d, 3.0);
  EXPECT_EQ(b.overall, 23.0);
  EXPECT_EQ(aggregate(LossTerms<double>{}).overall, 0.0);

  Rng rng(4);
  double v[8];
  for (double& x : v) x = rng.uniform(0, 3);
  LossTerms<double> r{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
  LossBreakdown rb = aggregate(r);
  double l2d = 2 * v[0] + 5 * v[1] + 2 * v[2] + 10 * v[3];
  EXPECT_EQ(rb.l2d, l2d);
  EXPECT_EQ(rb.overall, l2d + (v[4] + v[5] + v[6]) + v[7]);

  Tape t;
  auto c = [&](double x) { return t.constant(Tensor::scalar(x)); };
  LossTerms<Var> tv{c(v[0]), c(v[1]), c(v[2]), c(v[3]), c(v[4]), c(v[5]), c(v[6]), c(v[7])};
  EXPECT_EQ(aggregate(tv).value().item(), rb.overall);

  r.giou = NAN;
  try {
    aggregate(r);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("giou"), std::string::npos);
  }
}

// Each loss differentiated with respect to all of its continuous inputs.
// Test points keep |.| arguments and min/max ties away from their kinks.
TEST(LossGradCheck, EveryLoss) {
  Rng rng(5);
  std::vector<std::size_t> cls{3, 0, 8};
  auto check = [](const char* name, const TapeFunction& f, const Tensor& x) {
    GradCheckResult r = grad_check(f, x);
    EXPECT_LT(r.max_rel_error, 1e-5)
        << name << " at " << r.worst_index << ": " << r.analytic << " vs " << r.numeric;
  };

  check("focal", [&](Tape&, Var x) { return focal_loss(softmax_rows(x), cls); },
        random_uniform({3, kNumClasses}, -2, 2, rng));

  Tensor target = random_uniform({3, 4}, -2, 2, rng);
  check("l1", [&](Tape& t, Var x) { return l1_loss(x, t.constant(target)); },
        [&] {
          Tensor x = target;
          for (double& v : x.data()) v += rng.uniform(0.1, 0.5) * (rng.uniform() < 0.5 ? -1 : 1);
          return x;
        }());

  Tensor gt_box = Tensor::matrix({{0, 0, 2, 1}, {1, 1, 3, 4}});
  check("giou", [&](Tape& t, Var x) { return giou_loss(x, t.constant(gt_box)); },
        Tensor::matrix({{0.3, -0.2, 2.6, 1.4}, {4, 0.5, 5, 1.5}}));

  Tensor lrtb_gt = Tensor::matrix({{12, 7, 15, 9}});
  check("lrtb_giou",
        [&](Tape& t, Var x) {
          Var center = slice_cols(x, 0, 2), lrtb = slice_cols(x, 2, 4);
          Var gt = box_from_lrtb(t.constant(Tensor::row({100, 50})), t.constant(lrtb_gt));
          return giou_loss(box_from_lrtb(center, lrtb), gt);
        },
        Tensor::row({103, 48, 10, 8, 14, 12.5}));

  std::vector<double> angles{0.4, -2.9, 3.0};
  check("multibin",
        [&](Tape&, Var x) {
          return multibin_loss(slice_cols(x, 0, 12), slice_cols(x, 12, 12), angles);
        },
        random_uniform({3, 24}, 0.3, 0.5, rng));

  check("laplacian",
        [&](Tape& t, Var x) {
          return laplacian_depth_loss(slice_cols(x, 0, 1), slice_cols(x, 1, 1),
                                      t.constant(Tensor::scalar(20.0)));
        },
        Tensor::row({23.5, 1.7}));

  Tensor dims_gt = Tensor::matrix({{3.9, 1.6, 1.5}, {0.8, 0.6, 1.7}});
  check("size3d", [&](Tape& t, Var x) { return size3d_iou_loss(x, t.constant(dims_gt)); },
        Tensor::matrix({{3.5, 1.8, 1.45}, {1.0, 0.5, 1.6}}));

  std::vector<std::size_t> bins{10, 41};
  check("dmap", [&](Tape&, Var x) { return depth_map_focal_loss(softmax_rows(x), bins); },
        random_uniform({2, 80}, -1, 1, rng));

  check("aggregate",
        [&](Tape&, Var x) {
          auto s = [&](std::size_t i) { return pow_scalar(slice_cols(x, i, 1), 2.0); };
          return aggregate(LossTerms<Var>{s(0), s(1), s(2), s(3), s(4), s(5), s(6), s(7)});
        },
        random_uniform({1, 8}, 0.5, 1.5, rng));
}

}  // namespace
}  // namespace m3dvg
