#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "tacforge/common.hpp"
#include "tacforge/marker_imaging.hpp"
#include "tacforge/signal_unify.hpp"

namespace tacforge {

/**
 * @brief Thin-plate spline over the image plane with three channels:
 * lateral displacement (px) and log marker-size scale.
 *
 * Control points are centred and scaled to unit RMS radius before the fit,
 * so lambda does not depend on the pixel scale of the pattern.
 */
struct DisplacementField {
  std::vector<Vec2> control_points;  // px
  Eigen::MatrixXd weights;           // n x 3
  Eigen::Matrix3d affine = Eigen::Matrix3d::Zero();  // rows: constant, u, v
  double lambda = 0.0;
  Vec2 center = Vec2::Zero();
  double scale = 1.0;

  /// (dx px, dy px, size scale).
  Vec3 eval(const Vec2& px) const;
};

/// values: n x 3 (dx, dy, log size ratio) at the control points.
DisplacementField fit_displacement_field(const std::vector<Vec2>& points,
                                         const Eigen::MatrixXd& values, double lambda = 1e-3);
DisplacementField fit_displacement_field(const TrackedMarkers& tracked, double lambda = 1e-3);

inline Vec3 eval_displacement(const DisplacementField& field, const Vec2& px) {
  return field.eval(px);
}

/// Depth range and face side of the two sensors.
struct DepthAlignment {
  double source_zmax = 1.2;   // mm
  double target_zmax = 1.2;   // mm
  double source_area = 20.0;  // mm
  double target_area = 20.0;  // mm

  void validate() const;
};

struct TranslationOptions {
  double lambda = 1e-3;
  /// Tracking radius in px; by default 0.45 of the closest source marker spacing.
  std::optional<double> track_distance;
  double min_matched_fraction = 0.5;
  double min_count_fraction = 0.6;
};

/// Raised when too few source markers can be tracked.
class TrackingError : public NumericalError {
 public:
  TrackingError(const std::string& what, double matched) : NumericalError(what), matched_fraction(matched) {}
  double matched_fraction;
};

/// Raised when the generated image holds too few markers; carries the image.
class QualityGateError : public NumericalError {
 public:
  QualityGateError(const std::string& what, BinaryImage partial)
      : NumericalError(what), image(std::move(partial)) {}
  BinaryImage image;
};

/// Reference images segmented once and reused for a batch of frames.
struct TranslationContext {
  BinaryImage source_ref_image;
  MarkerSet source_ref;
  BinaryImage target_ref_image;
  MarkerSet target_ref;
  DepthAlignment align;
  TranslationOptions options;
};

TranslationContext make_translation_context(const BinaryImage& source_ref,
                                            const BinaryImage& target_ref,
                                            const DepthAlignment& align = {},
                                            const TranslationOptions& options = {});

struct TranslationResult {
  BinaryImage image;
  double matched_fraction = 0.0;
  std::size_t marker_count = 0;
};

TranslationResult translate(const TranslationContext& ctx, const BinaryImage& source);

/// Renders the target reference pattern under the deformation seen between
/// source_ref and source.
BinaryImage translate_image(const BinaryImage& source, const BinaryImage& source_ref,
                            const BinaryImage& target_ref, const DepthAlignment& align = {},
                            const TranslationOptions& options = {});

struct PositionError {
  double mean = 0.0;  // px
  double max = 0.0;   // px
  double matched_fraction = 0.0;
  bool defined = false;  // false when nothing matched
};

PositionError marker_position_error(const BinaryImage& generated, const BinaryImage& truth);
PositionError marker_position_error(const MarkerSet& generated, const MarkerSet& truth);

/// |a and b| / |a or b|; 1 when both are empty.
double pixel_iou(const BinaryImage& a, const BinaryImage& b);

}  // namespace tacforge
