#include <gtest/gtest.h>

#include <cmath>

#include "tacforge/m2m.hpp"

using namespace tacforge;

namespace {

std::vector<Vec2> scattered(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec2> p;
  for (int i = 0; i < n; ++i) p.emplace_back(rng.uniform(50, 590), rng.uniform(40, 440));
  return p;
}

Eigen::MatrixXd smooth_values(const std::vector<Vec2>& p) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(p.size()), 3);
  for (std::size_t i = 0; i < p.size(); ++i) {
    v(i, 0) = 3.0 * std::sin(p[i].x() / 90.0);
    v(i, 1) = -2.0 * std::cos(p[i].y() / 70.0);
    v(i, 2) = 0.1 * std::sin((p[i].x() + p[i].y()) / 200.0);
  }
  return v;
}

double fit_residual(const DisplacementField& f, const std::vector<Vec2>& p, const Eigen::MatrixXd& v) {
  double r = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec3 e = f.eval(p[i]);
    r = std::max({r, std::abs(e.x() - v(i, 0)), std::abs(e.y() - v(i, 1)), std::abs(std::log(e.z()) - v(i, 2))});
  }
  return r;
}

BinaryImage pattern_image(PatternFamily f, const Vec2& shift_mm = Vec2::Zero()) {
  auto p = make_pattern(f);
  for (auto& m : p.markers) m.center += shift_mm;
  return rasterize(p.markers, CameraMap{});
}

}  // namespace

TEST(Tps, InterpolatesWithoutSmoothing) {
  const auto p = scattered(30, 1);
  const auto v = smooth_values(p);
  EXPECT_LT(fit_residual(fit_displacement_field(p, v, 0.0), p, v), 1e-6);
  EXPECT_LT(fit_residual(fit_displacement_field(p, v, 1e-9), p, v), 1e-5);
}

TEST(Tps, ReproducesAffineFieldExactly) {
  const auto p = scattered(12, 2);
  Eigen::MatrixXd v(12, 3);
  for (int i = 0; i < 12; ++i) {
    v(i, 0) = 1.5 + 0.01 * p[i].x() - 0.02 * p[i].y();
    v(i, 1) = -0.5;
    v(i, 2) = 0.0;
  }
  const auto f = fit_displacement_field(p, v, 0.3);
  for (const Vec2 q : {Vec2(0, 0), Vec2(320, 240), Vec2(600, 10)}) {
    const Vec3 e = f.eval(q);
    EXPECT_NEAR(e.x(), 1.5 + 0.01 * q.x() - 0.02 * q.y(), 1e-9);
    EXPECT_NEAR(e.y(), -0.5, 1e-9);
    EXPECT_NEAR(e.z(), 1.0, 1e-9);
  }
  EXPECT_LT(f.weights.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Tps, SideConditionsHold) {
  const auto p = scattered(25, 3);
  const auto f = fit_displacement_field(p, smooth_values(p), 1e-2);
  for (int c = 0; c < 3; ++c) {
    double s = 0, sx = 0, sy = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double w = f.weights(static_cast<Eigen::Index>(i), c);
      s += w;
      sx += w * p[i].x();
      sy += w * p[i].y();
    }
    EXPECT_NEAR(s, 0.0, 1e-8);
    EXPECT_NEAR(sx, 0.0, 1e-5);
    EXPECT_NEAR(sy, 0.0, 1e-5);
  }
}

TEST(Tps, SmoothingReducesBendingAndRaisesResidual) {
  const auto p = scattered(40, 4);
  Eigen::MatrixXd v = smooth_values(p);
  Rng rng(9);
  for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, 0) += 0.5 * rng.normal();
  double prev_res = -1.0, prev_bend = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 1e-3, 1e-2, 1e-1, 1.0}) {
    const auto f = fit_displacement_field(p, v, lambda);
    const double res = fit_residual(f, p, v);
    const double bend = f.weights.col(0).norm();
    EXPECT_GE(res, prev_res - 1e-9) << lambda;
    EXPECT_LE(bend, prev_bend + 1e-9) << lambda;
    prev_res = res;
    prev_bend = bend;
  }
}

TEST(Tps, ScaleInvariantLambda) {
  const auto p = scattered(20, 5);
  const auto v = smooth_values(p);
  std::vector<Vec2> q;
  for (const auto& x : p) q.push_back(x * 3.0 + Vec2(7, -4));
  const auto a = fit_displacement_field(p, v, 0.05);
  const auto b = fit_displacement_field(q, v, 0.05);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_LT((a.eval(p[i]) - b.eval(q[i])).norm(), 1e-8);
}

TEST(Tps, RejectsDegenerateInput) {
  EXPECT_THROW(fit_displacement_field({Vec2(0, 0), Vec2(1, 1)}, Eigen::MatrixXd::Zero(2, 3)), ValidationError);
  EXPECT_THROW(fit_displacement_field({Vec2(0, 0), Vec2(1, 1), Vec2(2, 2), Vec2(5, 5)},
                                      Eigen::MatrixXd::Zero(4, 3)),
               ValidationError);
  EXPECT_THROW(fit_displacement_field(scattered(5, 1), Eigen::MatrixXd::Zero(5, 3), -1.0), ValidationError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(5, 3);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(fit_displacement_field(scattered(5, 1), bad), ValidationError);
}

TEST(Translate, IdentityIsBitExact) {
  const auto src = pattern_image(PatternFamily::Array2);
  const auto tgt = pattern_image(PatternFamily::Diamond3);
  EXPECT_EQ(translate_image(src, src, tgt), tgt);
}

TEST(Translate, RigidShiftMovesTargetPattern) {
  const Vec2 shift(0.25, 0.0);  // 6 px
  const auto src_ref = pattern_image(PatternFamily::Array2);
  const auto src = pattern_image(PatternFamily::Array2, shift);
  const auto tgt_ref = pattern_image(PatternFamily::Circle2);
  const auto truth = pattern_image(PatternFamily::Circle2, shift);
  const auto out = translate_image(src, src_ref, tgt_ref);
  const auto err = marker_position_error(out, truth);
  ASSERT_TRUE(err.defined);
  EXPECT_LT(err.mean, 1.0);
  EXPECT_GT(pixel_iou(out, truth), pixel_iou(tgt_ref, truth));
}

TEST(Translate, SameFamilyReproducesInput) {
  const auto ref = pattern_image(PatternFamily::Array3);
  const auto src = pattern_image(PatternFamily::Array3, Vec2(0.1, -0.15));
  const auto out = translate_image(src, ref, ref);
  EXPECT_LT(marker_position_error(out, src).mean, 0.5);
  EXPECT_GT(pixel_iou(out, src), 0.8);
}

TEST(Translate, FaceSizeRatioScalesDisplacement) {
  const auto src_ref = pattern_image(PatternFamily::Array2);
  const auto src = pattern_image(PatternFamily::Array2, Vec2(0.25, 0.0));
  const auto tgt_ref = pattern_image(PatternFamily::Array2);
  DepthAlignment align;
  align.target_area = 10.0;
  const auto out = segment_markers(translate_image(src, src_ref, tgt_ref, align));
  const auto ref = segment_markers(tgt_ref);
  const auto tr = track_markers(ref, out, 30.0);
  ASSERT_GT(tr.pairs.size(), 10u);
  double sum = 0.0;
  for (const auto& p : tr.pairs) sum += p.displacement.x();
  EXPECT_NEAR(sum / static_cast<double>(tr.pairs.size()), 3.0, 0.5);
}

TEST(Translate, LostTrackingRaises) {
  const auto ref = pattern_image(PatternFamily::Array2);
  const BinaryImage blank(640, 480);
  EXPECT_THROW(translate_image(blank, ref, ref), TrackingError);
  EXPECT_THROW(translate_image(ref, blank, ref), ValidationError);
  DepthAlignment bad;
  bad.source_zmax = 0;
  EXPECT_THROW(translate_image(ref, ref, ref, bad), ValidationError);
}

TEST(Metrics, IouMatchesBruteForce) {
  Rng rng(6);
  BinaryImage a(37, 11), b(37, 11);
  int inter = 0, uni = 0;
  for (int y = 0; y < 11; ++y) {
    for (int x = 0; x < 37; ++x) {
      const bool pa = rng.uniform() < 0.3, pb = rng.uniform() < 0.4;
      a.set(x, y, pa);
      b.set(x, y, pb);
      inter += pa && pb;
      uni += pa || pb;
    }
  }
  EXPECT_DOUBLE_EQ(pixel_iou(a, b), static_cast<double>(inter) / uni);
  EXPECT_DOUBLE_EQ(pixel_iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(pixel_iou(BinaryImage(8, 8), BinaryImage(8, 8)), 1.0);
  EXPECT_THROW(pixel_iou(a, BinaryImage(8, 8)), ValidationError);
}

TEST(Metrics, PositionErrorOfShift) {
  MarkerSet truth, gen;
  for (int i = 0; i < 5; ++i) {
    truth.markers.push_back({Vec2(40.0 * i, 10), 4.0, 50.0});
    gen.markers.push_back({Vec2(40.0 * i + 2.0, 10), 4.0, 50.0});
  }
  const auto e = marker_position_error(gen, truth);
  ASSERT_TRUE(e.defined);
  EXPECT_NEAR(e.mean, 2.0, 1e-12);
  EXPECT_NEAR(e.max, 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(e.matched_fraction, 1.0);
  const auto none = marker_position_error(MarkerSet{}, truth);
  EXPECT_FALSE(none.defined);
  EXPECT_TRUE(std::isnan(none.mean));
}
