#include "tacforge/scenario.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace tacforge {

namespace {

struct KindName {
  IndenterKind kind;
  std::string_view name;
};

constexpr std::array<KindName, 18> kKindNames{{
    {IndenterKind::Sphere, "sphere"},
    {IndenterKind::Cylinder, "cylinder"},
    {IndenterKind::Prism, "prism"},
    {IndenterKind::Cone, "cone"},
    {IndenterKind::Wave, "wave"},
    {IndenterKind::Torus, "torus"},
    {IndenterKind::TrianglePrism, "triangle-prism"},
    {IndenterKind::PacmanPrism, "pacman-prism"},
    {IndenterKind::Hemisphere, "hemisphere"},
    {IndenterKind::Capsule, "capsule"},
    {IndenterKind::Pyramid, "pyramid"},
    {IndenterKind::CrossPrism, "cross-prism"},
    {IndenterKind::HexPrism, "hex-prism"},
    {IndenterKind::Ring, "ring"},
    {IndenterKind::DomeArray, "dome-array"},
    {IndenterKind::Edge, "edge"},
    {IndenterKind::StarPrism, "star-prism"},
    {IndenterKind::Ellipsoid, "ellipsoid"},
}};

std::size_t expected_dims(IndenterKind kind) {
  switch (kind) {
    case IndenterKind::Sphere:
    case IndenterKind::Hemisphere:
      return 1;
    case IndenterKind::Cylinder:
    case IndenterKind::Torus:
    case IndenterKind::TrianglePrism:
    case IndenterKind::Capsule:
    case IndenterKind::Pyramid:
    case IndenterKind::HexPrism:
      return 2;
    case IndenterKind::Prism:
    case IndenterKind::Cone:
    case IndenterKind::PacmanPrism:
    case IndenterKind::CrossPrism:
    case IndenterKind::Ring:
    case IndenterKind::DomeArray:
    case IndenterKind::Edge:
    case IndenterKind::StarPrism:
    case IndenterKind::Ellipsoid:
      return 3;
    case IndenterKind::Wave:
      return 4;
  }
  throw ValidationError("unknown indenter kind");
}

double sd_box(const Vec3& p, const Vec3& half) {
  const Vec3 q = p.cwiseAbs() - half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

// Exact extrusion of a 2D distance along an axis of half length h.
double extrude(double d2, double axial, double h) {
  const double wx = d2;
  const double wy = std::abs(axial) - h;
  return std::min(std::max(wx, wy), 0.0) + std::hypot(std::max(wx, 0.0), std::max(wy, 0.0));
}

// Exact signed distance to a simple polygon.
double sd_polygon(const Vec2& p, const std::vector<Vec2>& v) {
  double d = (p - v[0]).squaredNorm();
  double s = 1.0;
  const std::size_t n = v.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i, ++i) {
    const Vec2 e = v[j] - v[i];
    const Vec2 w = p - v[i];
    const Vec2 b = w - e * std::clamp(w.dot(e) / e.dot(e), 0.0, 1.0);
    d = std::min(d, b.squaredNorm());
    const bool c1 = p.y() >= v[i].y();
    const bool c2 = p.y() < v[j].y();
    const bool c3 = e.x() * w.y() > e.y() * w.x();
    if ((c1 && c2 && c3) || (!c1 && !c2 && !c3)) s = -s;
  }
  return s * std::sqrt(d);
}

std::vector<Vec2> regular_polygon(int n, double circumradius, double phase) {
  std::vector<Vec2> v;
  for (int i = 0; i < n; ++i) {
    const double a = phase + 2.0 * M_PI * i / n;
    v.emplace_back(circumradius * std::cos(a), circumradius * std::sin(a));
  }
  return v;
}

std::vector<Vec2> star_polygon(int points, double r_out, double r_in) {
  std::vector<Vec2> v;
  for (int i = 0; i < 2 * points; ++i) {
    const double a = M_PI / 2 + M_PI * i / points;
    const double r = (i % 2 == 0) ? r_out : r_in;
    v.emplace_back(r * std::cos(a), r * std::sin(a));
  }
  return v;
}

// Circular sector of radius r opening toward +y with half aperture `half`.
double sd_pie(Vec2 p, double half, double r) {
  const Vec2 c(std::sin(half), std::cos(half));
  p.x() = std::abs(p.x());
  const double l = p.norm() - r;
  const double m = (p - c * std::clamp(p.dot(c), 0.0, r)).norm();
  const double side = c.y() * p.x() - c.x() * p.y();
  return std::max(l, m * (side > 0 ? 1.0 : (side < 0 ? -1.0 : 0.0)));
}

double sd_capped_cone(const Vec3& p, double half_h, double r_bottom, double r_top) {
  const Vec2 q(std::hypot(p.x(), p.y()), p.z());
  const Vec2 k1(r_top, half_h);
  const Vec2 k2(r_top - r_bottom, 2.0 * half_h);
  const Vec2 ca(q.x() - std::min(q.x(), q.y() < 0.0 ? r_bottom : r_top), std::abs(q.y()) - half_h);
  const Vec2 cb = q - k1 + k2 * std::clamp((k1 - q).dot(k2) / k2.squaredNorm(), 0.0, 1.0);
  const double s = (cb.x() < 0.0 && ca.y() < 0.0) ? -1.0 : 1.0;
  return s * std::sqrt(std::min(ca.squaredNorm(), cb.squaredNorm()));
}

double local_sdf(const IndenterSpec& s, const Vec3& p) {
  const auto& d = s.dims;
  switch (s.kind) {
    case IndenterKind::Sphere:
      return p.norm() - d[0];
    case IndenterKind::Cylinder: {  // axis along y
      const double radial = std::hypot(p.x(), p.z()) - d[0];
      return extrude(radial, p.y(), d[1] / 2);
    }
    case IndenterKind::Prism:
      return sd_box(p, Vec3(d[0] / 2, d[1] / 2, d[2] / 2));
    case IndenterKind::Cone:  // tip down
      return sd_capped_cone(p, d[1] / 2, d[2], d[0]);
    case IndenterKind::Wave: {
      const double w = d[0], amp = d[1], k = 2.0 * M_PI / d[2], h = d[3];
      const double box = sd_box(p, Vec3(w / 2, w / 2, h / 2));
      const double floor_z = -h / 2 + amp * (1.0 - std::cos(k * p.x())) / 2;
      const double slope = amp * k / 2;
      return std::max(box, (floor_z - p.z()) / std::sqrt(1.0 + slope * slope));
    }
    case IndenterKind::Torus: {
      const Vec2 q(std::hypot(p.x(), p.y()) - d[0], p.z());
      return q.norm() - d[1];
    }
    case IndenterKind::TrianglePrism: {
      static thread_local std::vector<Vec2> tri;
      tri = regular_polygon(3, d[0] / std::sqrt(3.0), M_PI / 2);
      return extrude(sd_polygon(p.head<2>(), tri), p.z(), d[1] / 2);
    }
    case IndenterKind::PacmanPrism: {
      const double half_mouth = d[1] * M_PI / 180.0 / 2;
      const Vec2 xy = p.head<2>();
      const double disk = xy.norm() - d[0];
      // Mouth opens toward +x.
      const double mouth = sd_pie(Vec2(xy.y(), xy.x()), half_mouth, d[0] + 1.0);
      return extrude(std::max(disk, -mouth), p.z(), d[2] / 2);
    }
    case IndenterKind::Hemisphere:  // flat face up at z = 0
      return std::max(p.norm() - d[0], p.z());
    case IndenterKind::Capsule: {  // axis along x
      const Vec3 a(std::clamp(p.x(), -d[1], d[1]), 0.0, 0.0);
      return (p - a).norm() - d[0];
    }
    case IndenterKind::Pyramid: {  // apex down
      const double b = d[0], h = d[1];
      const Vec3 apex(0, 0, -h / 2);
      double f = p.z() - h / 2;
      const Vec3 nx = Vec3(h, 0, -b / 2).normalized();
      const Vec3 ny = Vec3(0, h, -b / 2).normalized();
      const Vec3 r = p - apex;
      f = std::max(f, nx.dot(Vec3(std::abs(r.x()), r.y(), r.z())));
      f = std::max(f, ny.dot(Vec3(r.x(), std::abs(r.y()), r.z())));
      return f;
    }
    case IndenterKind::CrossPrism: {
      const double a = sd_box(p, Vec3(d[0] / 2, d[1] / 2, d[2] / 2));
      const double b = sd_box(p, Vec3(d[1] / 2, d[0] / 2, d[2] / 2));
      return std::min(a, b);
    }
    case IndenterKind::HexPrism: {
      static thread_local std::vector<Vec2> hex;
      hex = regular_polygon(6, d[0], 0.0);
      return extrude(sd_polygon(p.head<2>(), hex), p.z(), d[1] / 2);
    }
    case IndenterKind::Ring: {
      const double mid = (d[0] + d[1]) / 2, half_w = (d[0] - d[1]) / 2;
      const double annulus = std::abs(std::hypot(p.x(), p.y()) - mid) - half_w;
      return extrude(annulus, p.z(), d[2] / 2);
    }
    case IndenterKind::DomeArray: {
      const double r = d[0], half_pitch = d[1] / 2, base_h = d[2];
      double f = sd_box(p - Vec3(0, 0, base_h / 2),
                        Vec3(half_pitch + r, half_pitch + r, base_h / 2));
      for (int sx = -1; sx <= 1; sx += 2) {
        for (int sy = -1; sy <= 1; sy += 2) {
          f = std::min(f, (p - Vec3(sx * half_pitch, sy * half_pitch, 0)).norm() - r);
        }
      }
      return f;
    }
    case IndenterKind::Edge: {  // knife edge along y, apex down
      const double len = d[0], w = d[1], h = d[2];
      const std::vector<Vec2> tri{{0.0, -h / 2}, {w / 2, h / 2}, {-w / 2, h / 2}};
      return extrude(sd_polygon(Vec2(p.x(), p.z()), tri), p.y(), len / 2);
    }
    case IndenterKind::StarPrism: {
      static thread_local std::vector<Vec2> star;
      star = star_polygon(5, d[0], d[1]);
      return extrude(sd_polygon(p.head<2>(), star), p.z(), d[2] / 2);
    }
    case IndenterKind::Ellipsoid: {
      const Vec3 axes(d[0], d[1], d[2]);
      return axes.minCoeff() * (p.cwiseQuotient(axes).norm() - 1.0);
    }
  }
  throw ValidationError("sdf_eval: unknown indenter kind for '" + s.id + "'");
}

void validate_spec(const IndenterSpec& s) {
  if (s.dims.size() != expected_dims(s.kind)) {
    throw ValidationError("indenter '" + s.id + "': expected " +
                          std::to_string(expected_dims(s.kind)) + " dims");
  }
}

}  // namespace

std::string_view to_string(IndenterKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  throw ValidationError("unknown indenter kind");
}

IndenterKind indenter_kind_from_string(std::string_view name) {
  for (const auto& kn : kKindNames) {
    if (kn.name == name) return kn.kind;
  }
  throw ValidationError("unknown indenter kind '" + std::string(name) + "'");
}

std::vector<IndenterSpec> build_indenter_catalog() {
  using K = IndenterKind;
  std::vector<IndenterSpec> cat{
      {"sphere", K::Sphere, {4.0}, false},
      {"cylinder", K::Cylinder, {2.5, 12.0}, true},
      {"prism", K::Prism, {8.0, 8.0, 6.0}, true},
      {"cone", K::Cone, {4.0, 6.0, 0.4}, false},
      {"wave", K::Wave, {8.0, 0.6, 4.0, 6.0}, false},
      {"torus", K::Torus, {3.0, 1.2}, false},
      {"triangle-prism", K::TrianglePrism, {8.0, 6.0}, false},
      {"pacman-prism", K::PacmanPrism, {4.0, 60.0, 6.0}, false},
      {"hemisphere", K::Hemisphere, {4.5}, true},
      {"capsule", K::Capsule, {2.0, 4.0}, true},
      {"pyramid", K::Pyramid, {8.0, 5.0}, true},
      {"cross-prism", K::CrossPrism, {9.0, 2.5, 6.0}, true},
      {"hex-prism", K::HexPrism, {4.0, 6.0}, true},
      {"ring", K::Ring, {4.0, 2.5, 6.0}, true},
      {"dome-array", K::DomeArray, {1.5, 4.0, 4.0}, true},
      {"edge", K::Edge, {12.0, 4.0, 5.0}, true},
      {"star-prism", K::StarPrism, {4.2, 2.0, 6.0}, true},
      {"ellipsoid", K::Ellipsoid, {5.0, 3.0, 2.5}, true},
  };
  std::sort(cat.begin(), cat.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return cat;
}

const IndenterSpec& find_indenter(const std::vector<IndenterSpec>& catalog, std::string_view id) {
  for (const auto& s : catalog) {
    if (s.id == id) return s;
  }
  throw ValidationError("unknown indenter id '" + std::string(id) + "'");
}

double sdf_eval(const IndenterSpec& spec, const Pose& pose, const Vec3& point) {
  validate_spec(spec);
  if (!point.allFinite()) throw ValidationError("sdf_eval: non-finite point");
  const Vec3 r = point - pose.translation;
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  const Vec3 local(c * r.x() + s * r.y(), -s * r.x() + c * r.y(), r.z());
  return local_sdf(spec, local);
}

double bottom_offset(const IndenterSpec& s) {
  validate_spec(s);
  const auto& d = s.dims;
  switch (s.kind) {
    case IndenterKind::Sphere:
    case IndenterKind::Cylinder:
    case IndenterKind::Hemisphere:
    case IndenterKind::Capsule:
    case IndenterKind::DomeArray:
      return d[0];
    case IndenterKind::Torus:
      return d[1];
    case IndenterKind::Ellipsoid:
      return d[2];
    case IndenterKind::Prism:
    case IndenterKind::PacmanPrism:
    case IndenterKind::CrossPrism:
    case IndenterKind::Ring:
    case IndenterKind::Edge:
    case IndenterKind::StarPrism:
      return d[2] / 2;
    case IndenterKind::Cone:
    case IndenterKind::TrianglePrism:
    case IndenterKind::Pyramid:
    case IndenterKind::HexPrism:
      return d[1] / 2;
    case IndenterKind::Wave:
      return d[3] / 2;
  }
  throw ValidationError("bottom_offset: unknown indenter kind");
}

double bounding_radius(const IndenterSpec& s) {
  validate_spec(s);
  const auto& d = s.dims;
  auto hyp3 = [](double a, double b, double c) { return std::sqrt(a * a + b * b + c * c); };
  switch (s.kind) {
    case IndenterKind::Sphere:
    case IndenterKind::Hemisphere:
      return d[0];
    case IndenterKind::Cylinder:
      return std::hypot(d[0], d[1] / 2);
    case IndenterKind::Prism:
      return hyp3(d[0] / 2, d[1] / 2, d[2] / 2);
    case IndenterKind::Cone:
      return std::hypot(std::max(d[0], d[2]), d[1] / 2);
    case IndenterKind::Wave:
      return hyp3(d[0] / 2, d[0] / 2, d[3] / 2);
    case IndenterKind::Torus:
      return d[0] + d[1];
    case IndenterKind::TrianglePrism:
      return std::hypot(d[0] / std::sqrt(3.0), d[1] / 2);
    case IndenterKind::PacmanPrism:
      return std::hypot(d[0], d[2] / 2);
    case IndenterKind::Capsule:
      return d[1] + d[0];
    case IndenterKind::Pyramid:
      return hyp3(d[0] / 2, d[0] / 2, d[1] / 2);
    case IndenterKind::CrossPrism:
      return hyp3(d[0] / 2, d[1] / 2, d[2] / 2);
    case IndenterKind::HexPrism:
      return std::hypot(d[0], d[1] / 2);
    case IndenterKind::Ring:
    case IndenterKind::StarPrism:
      return std::hypot(d[0], d[2] / 2);
    case IndenterKind::DomeArray: {
      const double half = d[1] / 2 + d[0];
      return hyp3(half, half, std::max(d[0], d[2]));
    }
    case IndenterKind::Edge:
      return hyp3(d[0] / 2, d[1] / 2, d[2] / 2);
    case IndenterKind::Ellipsoid:
      return std::max({d[0], d[1], d[2]});
  }
  throw ValidationError("bounding_radius: unknown indenter kind");
}

Pose center_pose(const IndenterSpec& spec, const Pose& tip) {
  Pose p = tip;
  p.translation.z() += bottom_offset(spec);
  return p;
}

namespace {
constexpr std::array<std::pair<Phase, std::string_view>, 5> kPhaseNames{{
    {Phase::Rest, "rest"},
    {Phase::NormalIncrease, "normal_inc"},
    {Phase::ShearIncrease, "shear_inc"},
    {Phase::ShearDecrease, "shear_dec"},
    {Phase::NormalDecrease, "normal_dec"},
}};
}  // namespace

std::string_view to_string(Phase phase) {
  for (const auto& [p, name] : kPhaseNames) {
    if (p == phase) return name;
  }
  return "rest";
}

Phase phase_from_string(std::string_view name) {
  for (const auto& [p, n] : kPhaseNames) {
    if (n == name) return p;
  }
  if (name == "loading") return Phase::NormalIncrease;
  if (name == "unloading") return Phase::NormalDecrease;
  throw ValidationError("unknown phase '" + std::string(name) + "'");
}

bool is_loading(Phase phase) {
  return phase == Phase::NormalIncrease || phase == Phase::ShearIncrease;
}

void TrajectoryConfig::validate() const {
  auto finite_pos = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (contact_points < 1) throw ValidationError("trajectory: contact_points must be >= 1");
  if (!finite_pos(depth_step)) throw ValidationError("trajectory: depth step must be > 0");
  if (!finite_pos(max_depth) || max_depth > 4.5) {
    throw ValidationError("trajectory: max depth must be in (0, 4.5] mm");
  }
  if (depth_step > max_depth) {
    throw ValidationError("trajectory: depth step exceeds max depth");
  }
  if (!finite_pos(speed)) throw ValidationError("trajectory: speed must be > 0");
  if (!finite_pos(frame_rate)) throw ValidationError("trajectory: frame rate must be > 0");
  if (!(shear_angle >= 0.0 && shear_angle <= M_PI / 2)) {
    throw ValidationError("trajectory: shear angle must lie in [0, pi/2]");
  }
  if (!(shear_distance >= 0.0) || !std::isfinite(shear_distance)) {
    throw ValidationError("trajectory: shear distance must be >= 0");
  }
  if (!(grid_dx >= 0.0) || !(grid_dy >= 0.0)) throw ValidationError("trajectory: negative grid step");
}

int TrajectoryConfig::depth_levels() const {
  return static_cast<int>(std::floor(max_depth / depth_step + 1e-9));
}

int full_turn_directions(const TrajectoryConfig& cfg) {
  if (cfg.shear_angle <= 0.0) return 1;
  return static_cast<int>(std::lround(2.0 * M_PI / cfg.shear_angle));
}

std::vector<ContactSequence> generate_trajectory(const TrajectoryConfig& cfg,
                                                 const std::vector<Vec2>& surface_points,
                                                 int directions_per_point,
                                                 const std::string& indenter_id) {
  cfg.validate();
  if (surface_points.empty()) throw ValidationError("trajectory: no surface points");
  if (directions_per_point < 1) throw ValidationError("trajectory: directions_per_point < 1");
  auto inside = [](const Vec2& p) {
    return std::abs(p.x()) <= kFaceHalfWidth && std::abs(p.y()) <= kFaceHalfWidth;
  };
  const int levels = cfg.depth_levels();
  std::vector<ContactSequence> out;
  out.reserve(surface_points.size() * directions_per_point * levels);
  for (const auto& p0 : surface_points) {
    if (!p0.allFinite() || !inside(p0)) {
      throw ValidationError("trajectory: contact point outside the elastomer face");
    }
    for (int m = 0; m < directions_per_point; ++m) {
      const double dir = m * cfg.shear_angle;
      const Vec2 shear = p0 + cfg.shear_distance * Vec2(std::cos(dir), std::sin(dir));
      if (!inside(shear)) {
        throw ValidationError("trajectory: shear target leaves the elastomer face");
      }
      for (int j = 1; j <= levels; ++j) {
        ContactSequence seq;
        seq.indenter = indenter_id;
        seq.contact_point = p0;
        seq.direction = dir;
        seq.depth_level = j;
        seq.depth = j * cfg.depth_step;
        auto at = [](const Vec2& xy, double z) {
          Pose pose;
          pose.translation = Vec3(xy.x(), xy.y(), z);
          return pose;
        };
        seq.waypoints = {
            {at(p0, 0.0), Phase::Rest},
            {at(p0, -seq.depth), Phase::NormalIncrease},
            {at(shear, -seq.depth), Phase::ShearIncrease},
            {at(p0, -seq.depth), Phase::ShearDecrease},
            {at(p0, 0.0), Phase::NormalDecrease},
        };
        out.push_back(std::move(seq));
      }
    }
  }
  return out;
}

std::vector<Vec2> cross_layout(double dx, double dy) {
  return {Vec2(0, 0), Vec2(dx, 0), Vec2(-dx, 0), Vec2(0, dy), Vec2(0, -dy)};
}

std::vector<Vec2> lattice_layout(double pitch, int n_per_side) {
  std::vector<Vec2> out;
  const double c = (n_per_side - 1) / 2.0;
  for (int j = 0; j < n_per_side; ++j) {
    for (int i = 0; i < n_per_side; ++i) {
      out.emplace_back((i - c) * pitch, (j - c) * pitch);
    }
  }
  return out;
}

std::vector<Waypoint> densify(const ContactSequence& seq, const TrajectoryConfig& cfg) {
  cfg.validate();
  if (seq.waypoints.empty()) return {};
  const double spacing = cfg.frame_spacing();
  std::vector<Waypoint> out{seq.waypoints.front()};
  for (std::size_t i = 1; i < seq.waypoints.size(); ++i) {
    const auto& a = seq.waypoints[i - 1].pose;
    const auto& b = seq.waypoints[i].pose;
    const double len = (b.translation - a.translation).norm();
    const int n = std::max(1, static_cast<int>(std::ceil(len / spacing - 1e-9)));
    for (int k = 1; k <= n; ++k) {
      const double t = static_cast<double>(k) / n;
      Waypoint w;
      w.pose.translation = a.translation + t * (b.translation - a.translation);
      w.pose.yaw = a.yaw + t * (b.yaw - a.yaw);
      w.phase = seq.waypoints[i].phase;
      if (k == n) w.pose = b;
      out.push_back(w);
    }
  }
  return out;
}

double indentation_depth(const Pose& tip_pose) { return std::max(0.0, -tip_pose.translation.z()); }

TrajectoryConfig trajectory_from_config(const Config& cfg) {
  TrajectoryConfig t;
  const std::string s = "trajectory";
  t.contact_points = static_cast<int>(cfg.number_or(s, "contact_points", t.contact_points));
  t.grid_dx = cfg.number_or(s, "dx_mm", t.grid_dx);
  t.grid_dy = cfg.number_or(s, "dy_mm", t.grid_dy);
  t.depth_step = cfg.number_or(s, "dz_mm", t.depth_step);
  t.max_depth = cfg.number_or(s, "zmax_mm", t.max_depth);
  t.shear_angle = cfg.number_or(s, "theta_deg", t.shear_angle * 180.0 / M_PI) * M_PI / 180.0;
  t.shear_distance = cfg.number_or(s, "shear_mm", t.shear_distance);
  t.speed = cfg.number_or(s, "speed_mm_s", t.speed);
  t.frame_rate = cfg.number_or(s, "frame_rate_hz", t.frame_rate);
  t.validate();
  return t;
}

}  // namespace tacforge
