#include "tacforge/m2m.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace tacforge {

namespace {

double tps_kernel(double r2) { return r2 <= 0.0 ? 0.0 : 0.5 * r2 * std::log(r2); }

}  // namespace

Vec3 DisplacementField::eval(const Vec2& px) const {
  const Vec2 u = (px - center) / scale;
  Eigen::RowVector3d out = affine.row(0) + u.x() * affine.row(1) + u.y() * affine.row(2);
  for (std::size_t i = 0; i < control_points.size(); ++i) {
    const Vec2 ci = (control_points[i] - center) / scale;
    out += tps_kernel((u - ci).squaredNorm()) * weights.row(static_cast<Eigen::Index>(i));
  }
  return {out(0), out(1), std::exp(out(2))};
}

DisplacementField fit_displacement_field(const std::vector<Vec2>& points,
                                         const Eigen::MatrixXd& values, double lambda) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n < 3) throw ValidationError("tps: need at least 3 matched markers");
  if (values.rows() != n || values.cols() != 3) throw ValidationError("tps: values must be n x 3");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("tps: lambda must be >= 0");
  if (!values.allFinite()) throw ValidationError("tps: non-finite control values");

  DisplacementField field;
  field.control_points = points;
  field.lambda = lambda;
  Vec2 c = Vec2::Zero();
  for (const auto& p : points) c += p;
  c /= static_cast<double>(n);
  double ms = 0.0;
  for (const auto& p : points) ms += (p - c).squaredNorm();
  field.center = c;
  field.scale = std::sqrt(ms / static_cast<double>(n));
  if (!(field.scale > 0.0)) throw ValidationError("tps: control points coincide");

  Eigen::MatrixXd P(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 u = (points[i] - c) / field.scale;
    P.row(i) << 1.0, u.x(), u.y();
  }
  // Collinear points leave the affine part undetermined.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(P);
  if (svd.singularValues()(2) < 1e-9 * svd.singularValues()(0)) {
    throw ValidationError("tps: control points are collinear");
  }

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + 3, n + 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      A(i, j) = tps_kernel((P.row(i).tail<2>() - P.row(j).tail<2>()).squaredNorm());
    }
    A(i, i) += lambda;
  }
  A.block(0, n, n, 3) = P;
  A.block(n, 0, 3, n) = P.transpose();
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 3);
  rhs.topRows(n) = values;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) {
    throw NumericalError("tps: singular system (duplicate control points?); use lambda > 0");
  }
  const Eigen::MatrixXd sol = lu.solve(rhs);
  if (!sol.allFinite()) throw NumericalError("tps: non-finite solution; use lambda > 0");
  field.weights = sol.topRows(n);
  field.affine = sol.bottomRows(3);
  return field;
}

DisplacementField fit_displacement_field(const TrackedMarkers& tracked, double lambda) {
  std::vector<Vec2> pts;
  Eigen::MatrixXd values(static_cast<Eigen::Index>(tracked.pairs.size()), 3);
  for (std::size_t i = 0; i < tracked.pairs.size(); ++i) {
    const auto& p = tracked.pairs[i];
    pts.push_back(p.ref_position);
    values.row(static_cast<Eigen::Index>(i)) << p.displacement.x(), p.displacement.y(),
        std::log(p.radius_ratio);
  }
  return fit_displacement_field(pts, values, lambda);
}

void DepthAlignment::validate() const {
  if (!(source_zmax > 0.0) || !(target_zmax > 0.0) || !(source_area > 0.0) ||
      !(target_area > 0.0)) {
    throw ValidationError("depth alignment: all fields must be positive");
  }
}

TranslationContext make_translation_context(const BinaryImage& source_ref,
                                            const BinaryImage& target_ref,
                                            const DepthAlignment& align,
                                            const TranslationOptions& options) {
  align.validate();
  TranslationContext ctx;
  ctx.source_ref_image = source_ref;
  ctx.target_ref_image = target_ref;
  ctx.source_ref = segment_markers(source_ref);
  ctx.target_ref = segment_markers(target_ref);
  ctx.align = align;
  ctx.options = options;
  if (ctx.source_ref.markers.size() < 3 || ctx.target_ref.markers.size() < 3) {
    throw ValidationError("translate: reference images need at least 3 markers");
  }
  return ctx;
}

TranslationResult translate(const TranslationContext& ctx, const BinaryImage& source) {
  if (source.width() != ctx.source_ref_image.width() ||
      source.height() != ctx.source_ref_image.height()) {
    throw ValidationError("translate: source image size differs from its reference");
  }
  TranslationResult out;
  if (source == ctx.source_ref_image) {
    out.image = ctx.target_ref_image;
    out.matched_fraction = 1.0;
    out.marker_count = ctx.target_ref.markers.size();
    return out;
  }
  const auto cur = segment_markers(source);
  const double radius = ctx.options.track_distance.value_or(safe_track_distance(ctx.source_ref));
  const auto tracked = track_markers(ctx.source_ref, cur, radius);
  out.matched_fraction = tracked.matched_fraction();
  if (out.matched_fraction < ctx.options.min_matched_fraction) {
    throw TrackingError("translate: only " + std::to_string(tracked.pairs.size()) + " of " +
                            std::to_string(tracked.ref_count) + " source markers tracked",
                        out.matched_fraction);
  }
  const auto field = fit_displacement_field(tracked, ctx.options.lambda);

  // Target pixels map into the source image through the ratio of face sizes.
  const double to_src = ctx.align.source_area / ctx.align.target_area;
  const Vec2 tgt_center((ctx.target_ref_image.width() - 1) / 2.0,
                        (ctx.target_ref_image.height() - 1) / 2.0);
  const Vec2 src_center((source.width() - 1) / 2.0, (source.height() - 1) / 2.0);
  std::vector<PixelDisk> disks;
  disks.reserve(ctx.target_ref.markers.size());
  for (const auto& m : ctx.target_ref.markers) {
    const Vec2 at = src_center + (m.centroid - tgt_center) * to_src;
    const Vec3 f = field.eval(at);
    disks.push_back({m.centroid + f.head<2>() / to_src, m.radius * f.z()});
  }
  out.image = rasterize_disks(disks, ctx.target_ref_image.width(), ctx.target_ref_image.height());
  const auto gen = segment_markers(out.image);
  out.marker_count = gen.markers.size();
  const double need = ctx.options.min_count_fraction * static_cast<double>(ctx.target_ref.markers.size());
  if (static_cast<double>(out.marker_count) < need) {
    throw QualityGateError("translate: generated image has " + std::to_string(out.marker_count) +
                               " markers, below the quality gate",
                           out.image);
  }
  return out;
}

BinaryImage translate_image(const BinaryImage& source, const BinaryImage& source_ref,
                            const BinaryImage& target_ref, const DepthAlignment& align,
                            const TranslationOptions& options) {
  return translate(make_translation_context(source_ref, target_ref, align, options), source).image;
}

PositionError marker_position_error(const MarkerSet& generated, const MarkerSet& truth) {
  PositionError e;
  const auto tracked = track_markers(truth, generated, safe_track_distance(truth));
  e.matched_fraction = tracked.matched_fraction();
  if (tracked.pairs.empty()) {
    e.mean = e.max = std::numeric_limits<double>::quiet_NaN();
    return e;
  }
  e.defined = true;
  double sum = 0.0;
  for (const auto& p : tracked.pairs) {
    const double d = p.displacement.norm();
    sum += d;
    e.max = std::max(e.max, d);
  }
  e.mean = sum / static_cast<double>(tracked.pairs.size());
  return e;
}

PositionError marker_position_error(const BinaryImage& generated, const BinaryImage& truth) {
  return marker_position_error(segment_markers(generated), segment_markers(truth));
}

double pixel_iou(const BinaryImage& a, const BinaryImage& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ValidationError("iou: image sizes differ");
  }
  std::size_t inter = 0, uni = 0;
  const auto& x = a.bytes();
  const auto& y = b.bytes();
  for (std::size_t i = 0; i < x.size(); ++i) {
    inter += static_cast<std::size_t>(__builtin_popcount(x[i] & y[i]));
    uni += static_cast<std::size_t>(__builtin_popcount(x[i] | y[i]));
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace tacforge
