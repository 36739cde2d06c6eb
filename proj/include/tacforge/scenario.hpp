#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "tacforge/common.hpp"
#include "tacforge/config.hpp"

namespace tacforge {

enum class IndenterKind {
  Sphere,
  Cylinder,
  Prism,
  Cone,
  Wave,
  Torus,
  TrianglePrism,
  PacmanPrism,
  Hemisphere,
  Capsule,
  Pyramid,
  CrossPrism,
  HexPrism,
  Ring,
  DomeArray,
  Edge,
  StarPrism,
  Ellipsoid,
};

std::string_view to_string(IndenterKind kind);
IndenterKind indenter_kind_from_string(std::string_view name);

/**
 * @brief A rigid indenter primitive.
 *
 * Geometry lives in a local frame centred on the shape (z up). The meaning
 * of each entry of `dims` depends on `kind`; see indenter_catalog().
 */
struct IndenterSpec {
  std::string id;
  IndenterKind kind = IndenterKind::Sphere;
  std::vector<double> dims;  // mm
  bool seen = true;
};

struct Pose {
  Vec3 translation = Vec3::Zero();  // mm
  double yaw = 0.0;                 // rad about +z
};

/// The 18 primitives, sorted by id. Twelve are seen, six held out.
std::vector<IndenterSpec> build_indenter_catalog();
const IndenterSpec& find_indenter(const std::vector<IndenterSpec>& catalog, std::string_view id);

/// Signed distance (mm) from `point` to the indenter placed at `pose`.
/// Negative inside. Every catalog shape is 1-Lipschitz.
double sdf_eval(const IndenterSpec& spec, const Pose& pose, const Vec3& point);

/// Distance from the local origin down to the lowest point of the solid.
double bottom_offset(const IndenterSpec& spec);
/// Radius of a sphere about the local origin that contains the solid.
double bounding_radius(const IndenterSpec& spec);

/// Pose of the shape centre when its lowest point sits at `tip`.
Pose center_pose(const IndenterSpec& spec, const Pose& tip);

enum class Phase { Rest, NormalIncrease, ShearIncrease, ShearDecrease, NormalDecrease };

std::string_view to_string(Phase phase);
Phase phase_from_string(std::string_view name);
/// Loading side of the hysteresis loop: NormalIncrease and ShearIncrease.
bool is_loading(Phase phase);

struct TrajectoryConfig {
  int contact_points = 5;
  double grid_dx = 3.0;         // mm
  double grid_dy = 4.0;         // mm
  double depth_step = 0.3;      // mm
  double max_depth = 1.2;       // mm
  double shear_angle = M_PI / 6;  // rad
  double shear_distance = 1.0;  // mm
  double speed = 10.0;          // mm/s
  double frame_rate = 40.0;     // Hz

  void validate() const;
  int depth_levels() const;
  /// Spacing between consecutive frames along a path.
  double frame_spacing() const { return speed / frame_rate; }
};

/// Poses in a sequence refer to the indenter's lowest point, not its centre.
struct Waypoint {
  Pose pose;
  Phase phase = Phase::Rest;
};

/**
 * @brief One inner-loop cycle of the data-collection trajectory: rest above
 * the contact point, press to depth, shear out, shear back, lift.
 */
struct ContactSequence {
  std::string indenter;
  Vec2 contact_point = Vec2::Zero();  // mm
  double direction = 0.0;            // rad
  int depth_level = 1;               // 1-based
  double depth = 0.0;                // mm
  std::vector<Waypoint> waypoints;   // rest + 4 phases
};

/// Half the side of the square elastomer face.
inline constexpr double kFaceHalfWidth = 10.0;

/**
 * @brief Enumerate contact sequences for every (point, direction, depth).
 *
 * Directions are multiples of cfg.shear_angle starting from +x.
 * Count is |points| * directions_per_point * cfg.depth_levels().
 */
std::vector<ContactSequence> generate_trajectory(const TrajectoryConfig& cfg,
                                                 const std::vector<Vec2>& surface_points,
                                                 int directions_per_point,
                                                 const std::string& indenter_id = {});

/// Directions that cover a full turn at the configured angle (12 at 30 deg).
int full_turn_directions(const TrajectoryConfig& cfg);

std::vector<Vec2> cross_layout(double dx, double dy);
std::vector<Vec2> lattice_layout(double pitch, int n_per_side);

/// Interpolates the sequence at no more than cfg.frame_spacing() per frame.
/// The first entry is the rest pose; every leg ends exactly on its waypoint.
std::vector<Waypoint> densify(const ContactSequence& seq, const TrajectoryConfig& cfg);

double indentation_depth(const Pose& tip_pose);

TrajectoryConfig trajectory_from_config(const Config& cfg);

}  // namespace tacforge
