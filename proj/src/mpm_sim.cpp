#include "tacforge/mpm_sim.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace tacforge {

namespace {

constexpr double kMm = 1e-3;

// Rotation factor of the polar decomposition F = R S, det F > 0.
Mat3 polar_rotation(const Mat3& F) {
  if (F.determinant() <= 0.0) {
    Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 U = svd.matrixU();
    const Mat3 V = svd.matrixV();
    if ((U * V.transpose()).determinant() < 0.0) U.col(2) *= -1.0;
    return U * V.transpose();
  }
  Mat3 R = F;
  for (int it = 0; it < 20; ++it) {
    const Mat3 next = 0.5 * (R + R.inverse().transpose());
    const double change = (next - R).squaredNorm();
    R = next;
    if (change < 1e-24) break;
  }
  return R;
}

struct IndenterFrame {
  Vec3 center_m;
  double c, s;

  Vec3 to_local(const Vec3& x) const {
    const Vec3 r = x - center_m;
    return {c * r.x() + s * r.y(), -s * r.x() + c * r.y(), r.z()};
  }
  Vec3 to_world(const Vec3& l) const {
    return center_m + Vec3(c * l.x() - s * l.y(), s * l.x() + c * l.y(), l.z());
  }
};

Vec3 sdf_gradient(const IndenterSpec& spec, const Pose& pose, const Vec3& p_mm) {
  constexpr double h = 1e-4;
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    g[a] = sdf_eval(spec, pose, p_mm + e) - sdf_eval(spec, pose, p_mm - e);
  }
  const double n = g.norm();
  return n > 0.0 ? Vec3(g / n) : Vec3(0, 0, 1);
}

}  // namespace

void MaterialParams::validate() const {
  if (!(youngs_modulus > 0.0) || !std::isfinite(youngs_modulus)) {
    throw ValidationError("material: Young's modulus must be > 0");
  }
  if (!(poisson >= 0.0 && poisson < 0.5)) throw ValidationError("material: Poisson ratio must be in [0, 0.5)");
  if (!(density > 0.0) || !std::isfinite(density)) throw ValidationError("material: density must be > 0");
  if (!(damping >= 0.0 && damping < 1.0)) throw ValidationError("material: damping must be in [0, 1)");
}

double max_stable_dt(const MaterialParams& mat, const MpmConfig& cfg) {
  const double rho = mat.density * cfg.mass_scale;
  return 0.3 * cfg.dx * kMm / std::sqrt(mat.youngs_modulus / rho);
}

MpmConfig with_stable_dt(const MaterialParams& mat, MpmConfig cfg) {
  cfg.dt = std::min(cfg.dt, max_stable_dt(mat, cfg));
  return cfg;
}

void MpmConfig::validate(const MaterialParams& mat) const {
  mat.validate();
  if (!(dx > 0.0)) throw ValidationError("mpm: grid spacing must be > 0");
  if (particles_per_cell < 4) throw ValidationError("mpm: particles_per_cell must be >= 4");
  if (!(mass_scale >= 1.0)) throw ValidationError("mpm: mass_scale must be >= 1");
  for (int a = 0; a < 3; ++a) {
    const double cells = block_size[a] / dx;
    if (!(block_size[a] > 0.0) || std::abs(cells - std::round(cells)) > 1e-9) {
      throw ValidationError("mpm: block size must be a positive multiple of dx");
    }
  }
  if (!(dt > 0.0)) throw ValidationError("mpm: dt must be > 0");
  const double limit = max_stable_dt(mat, *this);
  if (dt > limit * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "mpm: dt " << dt << " s violates the CFL bound; maximum stable dt is " << limit << " s";
    throw ValidationError(msg.str());
  }
  if (!(friction >= 0.0)) throw ValidationError("mpm: friction must be >= 0");
  if (!(contact_stiffness > 0.0 && contact_stiffness < 4.0)) {
    throw ValidationError("mpm: contact_stiffness must be in (0, 4)");
  }
  if (settle_steps < 0 || force_window < 1) throw ValidationError("mpm: bad settle/force window");
  if (surface_lattice < 2 || idw_neighbors < 1) throw ValidationError("mpm: bad surface lattice");
  if (!(jitter >= 0.0 && jitter < 0.5)) throw ValidationError("mpm: jitter must be in [0, 0.5)");
}

void SimState::reset_force_window() {
  impulse.setZero();
  impulse_time = 0.0;
}

Vec3 SimState::average_force() const {
  return impulse_time > 0.0 ? Vec3(impulse / impulse_time) : last_force;
}

double SimState::kinetic_energy() const {
  double e = 0.0;
  for (const auto& vp : v) e += 0.5 * particle_mass * vp.squaredNorm();
  return e;
}

double SimState::strain_energy() const {
  const double mu = material.mu(), la = material.lambda();
  double e = 0.0;
  for (const auto& Fp : F) {
    const Mat3 R = polar_rotation(Fp);
    const double J = Fp.determinant();
    e += particle_volume * (mu * (Fp - R).squaredNorm() + 0.5 * la * (J - 1.0) * (J - 1.0));
  }
  return e;
}

Vec2 SimFrame::node_position(int i, int j) const {
  const double h = face_size / (lattice_size - 1);
  return {-face_size / 2 + i * h, -face_size / 2 + j * h};
}

Vec3 SimFrame::sample(const Vec2& xy) const {
  const int m = lattice_size;
  const double h = face_size / (m - 1);
  const double gx = std::clamp((xy.x() + face_size / 2) / h, 0.0, double(m - 1));
  const double gy = std::clamp((xy.y() + face_size / 2) / h, 0.0, double(m - 1));
  const int i0 = std::min(static_cast<int>(gx), m - 2);
  const int j0 = std::min(static_cast<int>(gy), m - 2);
  const double tx = gx - i0, ty = gy - j0;
  auto at = [&](int i, int j) -> const Vec3& { return surface_displacement[j * m + i]; };
  return (1 - tx) * (1 - ty) * at(i0, j0) + tx * (1 - ty) * at(i0 + 1, j0) +
         (1 - tx) * ty * at(i0, j0 + 1) + tx * ty * at(i0 + 1, j0 + 1);
}

SimFrame SimState::snapshot(Phase phase) const {
  SimFrame f;
  f.lattice_size = config.surface_lattice;
  f.face_size = std::min(config.block_size.x(), config.block_size.y());
  f.surface_displacement.resize(surface_stencil.size());
  for (std::size_t n = 0; n < surface_stencil.size(); ++n) {
    Vec3 u = Vec3::Zero();
    for (const auto& [p, w] : surface_stencil[n]) u += w * (x[p] - x0[p]);
    f.surface_displacement[n] = u / kMm;
  }
  f.contact_force = average_force();
  f.indenter_pose = tip_pose;
  f.depth = indentation_depth(tip_pose);
  f.phase = phase;
  f.time = time;
  return f;
}

SimState init_sim(const MaterialParams& mat, const MpmConfig& cfg, const IndenterSpec& indenter) {
  cfg.validate(mat);
  (void)bottom_offset(indenter);  // validates the spec

  SimState s;
  s.material = mat;
  s.config = cfg;
  s.indenter = indenter;

  const double dx = cfg.dx * kMm;
  const Eigen::Vector3i cells = (cfg.block_size / cfg.dx).array().round().cast<int>();
  const Vec3 block_min(-cfg.block_size.x() / 2 * kMm, -cfg.block_size.y() / 2 * kMm,
                       -cfg.block_size.z() * kMm);

  // Lateral margin covers shear travel, top margin covers bulging.
  constexpr int kSide = 3, kBottom = 2, kTop = 4;
  s.grid_origin = block_min - Vec3(kSide * dx, kSide * dx, kBottom * dx);
  s.grid_dims = Eigen::Vector3i(cells.x() + 2 * kSide + 1, cells.y() + 2 * kSide + 1,
                                cells.z() + kBottom + kTop + 1);
  s.grid.assign(static_cast<std::size_t>(s.grid_dims.prod()), Eigen::Vector4d::Zero());
  s.fixed_layers = kBottom + 1;

  const int ppc = cfg.particles_per_cell;
  const int per_axis = static_cast<int>(std::lround(std::cbrt(static_cast<double>(ppc))));
  const bool lattice = per_axis * per_axis * per_axis == ppc;
  Rng rng(cfg.seed);
  const double sub = lattice ? dx / per_axis : dx / std::cbrt(static_cast<double>(ppc));

  s.particle_volume = dx * dx * dx / ppc;
  s.particle_mass = mat.density * cfg.mass_scale * s.particle_volume;
  s.contact_radius = 0.5 * sub;

  for (int k = 0; k < cells.z(); ++k) {
    for (int j = 0; j < cells.y(); ++j) {
      for (int i = 0; i < cells.x(); ++i) {
        const Vec3 corner = block_min + Vec3(i * dx, j * dx, k * dx);
        for (int q = 0; q < ppc; ++q) {
          Vec3 p;
          if (lattice) {
            const int a = q % per_axis, b = (q / per_axis) % per_axis, c = q / (per_axis * per_axis);
            p = corner + Vec3((a + 0.5) * sub, (b + 0.5) * sub, (c + 0.5) * sub);
            if (cfg.jitter > 0.0) {
              for (int d = 0; d < 3; ++d) p[d] += cfg.jitter * sub * rng.uniform(-1.0, 1.0);
            }
          } else {
            p = corner + Vec3(rng.uniform(), rng.uniform(), rng.uniform()) * dx;
          }
          s.x.push_back(p);
        }
      }
    }
  }
  const std::size_t n = s.x.size();
  s.x0 = s.x;
  s.v.assign(n, Vec3::Zero());
  s.F.assign(n, Mat3::Identity());
  s.C.assign(n, Mat3::Zero());
  s.in_contact.assign(n, 0);
  s.anchor.assign(n, Vec3::Zero());

  // Surface stencil in the reference configuration.
  std::vector<std::uint32_t> surface;
  for (std::size_t p = 0; p < n; ++p) {
    if (-s.x0[p].z() <= cfg.surface_layer * kMm) surface.push_back(static_cast<std::uint32_t>(p));
  }
  if (surface.size() < static_cast<std::size_t>(cfg.idw_neighbors)) {
    throw ValidationError("mpm: surface layer holds too few particles");
  }
  SimFrame probe;
  probe.lattice_size = cfg.surface_lattice;
  probe.face_size = std::min(cfg.block_size.x(), cfg.block_size.y());
  const int m = cfg.surface_lattice;
  s.surface_stencil.resize(static_cast<std::size_t>(m) * m);
  std::vector<std::pair<double, std::uint32_t>> dist(surface.size());
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) {
      const Vec2 node = probe.node_position(i, j) * kMm;
      for (std::size_t q = 0; q < surface.size(); ++q) {
        dist[q] = {(s.x0[surface[q]].head<2>() - node).squaredNorm(), surface[q]};
      }
      const auto k = static_cast<std::size_t>(cfg.idw_neighbors);
      std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
      auto& stencil = s.surface_stencil[j * m + i];
      double total = 0.0;
      for (std::size_t q = 0; q < k; ++q) {
        const double w = 1.0 / (dist[q].first / (kMm * kMm) + 1e-9);
        stencil.emplace_back(dist[q].second, w);
        total += w;
      }
      for (auto& e : stencil) e.second /= total;
    }
  }

  // Park the indenter well above the face until a sequence moves it.
  s.tip_pose.translation = Vec3(0, 0, 5.0);
  return s;
}

void step(SimState& s) {
  const auto& cfg = s.config;
  const auto& mat = s.material;
  const double dx = cfg.dx * kMm, inv_dx = 1.0 / dx, dt = cfg.dt;
  const double mu = mat.mu(), la = mat.lambda();
  const double mass = s.particle_mass, vol = s.particle_volume;
  const double k_contact = cfg.contact_stiffness * mass / (dt * dt);
  const double stress_scale = -dt * vol * 4.0 * inv_dx * inv_dx;
  const Eigen::Vector3i dims = s.grid_dims;
  const auto node_index = [&](int i, int j, int k) {
    return (static_cast<std::size_t>(k) * dims.y() + j) * dims.x() + i;
  };

  const Pose center = center_pose(s.indenter, s.tip_pose);
  const IndenterFrame frame{center.translation * kMm, std::cos(center.yaw), std::sin(center.yaw)};
  const double reach_mm = bounding_radius(s.indenter) + s.contact_radius / kMm + 0.1;
  const double r_mm = s.contact_radius / kMm;
  const double tip_z = s.tip_pose.translation.z();

  std::fill(s.grid.begin(), s.grid.end(), Eigen::Vector4d::Zero());
  Vec3 force_on_skin = Vec3::Zero();

  const std::size_t n = s.x.size();
  for (std::size_t p = 0; p < n; ++p) {
    const Vec3& xp = s.x[p];

    // Penalty contact with a stick/slip anchor.
    Vec3 f_ext = Vec3::Zero();
    const Vec3 xp_mm = xp / kMm;
    bool touching = false;
    // Nothing below the indenter tip can touch it.
    if (xp_mm.z() >= tip_z - r_mm && (xp_mm - center.translation).norm() <= reach_mm) {
      const double phi_mm = sdf_eval(s.indenter, center, xp_mm) - r_mm;
      if (phi_mm < 0.0) {
        touching = true;
        const Vec3 normal = sdf_gradient(s.indenter, center, xp_mm);
        const double fn = k_contact * (-phi_mm * kMm);
        Vec3 anchor_w = s.in_contact[p] ? frame.to_world(s.anchor[p]) : xp;
        const Vec3 d = xp - anchor_w;
        Vec3 ft = -k_contact * (d - d.dot(normal) * normal);
        const double limit = cfg.friction * fn;
        const double ft_norm = ft.norm();
        if (ft_norm > limit) {
          ft *= limit / ft_norm;
          anchor_w = xp + ft / k_contact;
        }
        s.anchor[p] = frame.to_local(anchor_w);
        f_ext = fn * normal + ft;
        force_on_skin += f_ext;
      }
    }
    s.in_contact[p] = touching ? 1 : 0;

    const Vec3 xg = (xp - s.grid_origin) * inv_dx;
    const Eigen::Vector3i base = (xg.array() - 0.5).floor().cast<int>();
    if ((base.array() < 0).any() || ((base.array() + 2) >= dims.array()).any()) {
      throw NumericalError("mpm: particle left the grid");
    }
    const Vec3 fx = xg - base.cast<double>();
    Vec3 w[3];
    w[0] = 0.5 * (1.5 - fx.array()).square();
    w[1] = 0.75 - (fx.array() - 1.0).square();
    w[2] = 0.5 * (fx.array() - 0.5).square();

    const Mat3& Fp = s.F[p];
    const Mat3 R = polar_rotation(Fp);
    const double J = Fp.determinant();
    const Mat3 tau = 2.0 * mu * (Fp - R) * Fp.transpose() + la * (J - 1.0) * J * Mat3::Identity();
    const Mat3 affine = (stress_scale * tau + mass * s.C[p]) * dx;
    const Vec3 m0 = mass * s.v[p] + dt * f_ext - affine * fx;
    const std::size_t stride_y = dims.x(), stride_z = static_cast<std::size_t>(dims.x()) * dims.y();
    double* g0 = s.grid[node_index(base.x(), base.y(), base.z())].data();
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        const double wab = w[a].x() * w[b].y();
        const double px = m0.x() + a * affine(0, 0) + b * affine(0, 1);
        const double py = m0.y() + a * affine(1, 0) + b * affine(1, 1);
        const double pz = m0.z() + a * affine(2, 0) + b * affine(2, 1);
        for (int c = 0; c < 3; ++c) {
          const double weight = wab * w[c].z();
          double* g = g0 + 4 * (a + b * stride_y + c * stride_z);
          g[0] += weight * (px + c * affine(0, 2));
          g[1] += weight * (py + c * affine(1, 2));
          g[2] += weight * (pz + c * affine(2, 2));
          g[3] += weight * mass;
        }
      }
    }
  }

  const double keep = 1.0 - mat.damping;
  for (int k = 0; k < dims.z(); ++k) {
    for (int j = 0; j < dims.y(); ++j) {
      for (int i = 0; i < dims.x(); ++i) {
        auto& g = s.grid[node_index(i, j, k)];
        if (g.w() <= 0.0) continue;
        if (k < s.fixed_layers) {
          g.head<3>().setZero();
        } else {
          g.head<3>() *= keep / g.w();
        }
      }
    }
  }

  double checksum = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const Vec3 xg = (s.x[p] - s.grid_origin) * inv_dx;
    const Eigen::Vector3i base = (xg.array() - 0.5).floor().cast<int>();
    const Vec3 fx = xg - base.cast<double>();
    Vec3 w[3];
    w[0] = 0.5 * (1.5 - fx.array()).square();
    w[1] = 0.75 - (fx.array() - 1.0).square();
    w[2] = 0.5 * (fx.array() - 0.5).square();
    const std::size_t stride_y = dims.x(), stride_z = static_cast<std::size_t>(dims.x()) * dims.y();
    const double* g0 = s.grid[node_index(base.x(), base.y(), base.z())].data();
    // Accumulate sum w*g and sum w*g*(a,b,c); the fx shift is applied after.
    double sv[3] = {0, 0, 0}, sb[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        const double* g = g0 + 4 * (a + b * stride_y);
        double t0[3], t1[3];
        for (int r = 0; r < 3; ++r) {
          const double g1 = g[4 * stride_z + r], g2 = g[8 * stride_z + r];
          t0[r] = w[0].z() * g[r] + w[1].z() * g1 + w[2].z() * g2;
          t1[r] = w[1].z() * g1 + 2.0 * w[2].z() * g2;
        }
        const double wab = w[a].x() * w[b].y();
        for (int r = 0; r < 3; ++r) {
          const double wt = wab * t0[r];
          sv[r] += wt;
          sb[r][0] += wt * a;
          sb[r][1] += wt * b;
          sb[r][2] += wab * t1[r];
        }
      }
    }
    const Vec3 vp(sv[0], sv[1], sv[2]);
    Mat3 Bp;
    for (int r = 0; r < 3; ++r) {
      for (int q = 0; q < 3; ++q) Bp(r, q) = sb[r][q] - sv[r] * fx[q];
    }
    s.v[p] = vp;
    s.C[p] = 4.0 * inv_dx * Bp;
    s.x[p] += dt * vp;
    s.F[p] = (Mat3::Identity() + dt * s.C[p]) * s.F[p];
    checksum += vp.squaredNorm();
  }
  if (!std::isfinite(checksum)) throw NumericalError("mpm: non-finite particle state");

  const Vec3 reported(force_on_skin.x(), force_on_skin.y(), -force_on_skin.z());
  s.last_force = reported;
  s.impulse += reported * dt;
  s.impulse_time += dt;
  s.tip_pose.translation += s.indenter_velocity * dt;
  s.time += dt;
  ++s.step_count;
}

std::vector<SimFrame> run_contact_sequence(SimState& s, const ContactSequence& seq,
                                           const TrajectoryConfig& traj) {
  const auto path = densify(seq, traj);
  std::vector<SimFrame> frames;
  if (path.empty()) return frames;
  const double dt = s.config.dt;
  const int window = s.config.force_window;
  for (std::size_t f = 0; f < path.size(); ++f) {
    try {
      const Pose& target = path[f].pose;
      long move_steps = 0;
      if (f == 0) {
        s.tip_pose = target;
        s.indenter_velocity.setZero();
      } else {
        const Vec3 delta = target.translation - s.tip_pose.translation;
        move_steps = std::max(1L, static_cast<long>(std::ceil(delta.norm() / (traj.speed * dt) - 1e-9)));
        s.indenter_velocity = delta / (move_steps * dt);
      }
      s.reset_force_window();
      const long total = move_steps + s.config.settle_steps;
      for (long i = 0; i < total; ++i) {
        if (i == move_steps) {
          s.tip_pose = target;
          s.indenter_velocity.setZero();
        }
        if (total - i == window) s.reset_force_window();
        step(s);
      }
      s.tip_pose = target;
      s.indenter_velocity.setZero();
      frames.push_back(s.snapshot(path[f].phase));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at frame " + std::to_string(f));
    }
  }
  return frames;
}

double flat_punch_force(double youngs_modulus, double /*poisson*/, double halfwidth_mm,
                        double depth_mm) {
  if (!(halfwidth_mm > 0.0)) throw ValidationError("flat_punch_force: half-width must be > 0");
  if (depth_mm < 0.0) throw ValidationError("flat_punch_force: negative depth");
  const double alpha = 2.0 * halfwidth_mm * kMm;
  return alpha * youngs_modulus * depth_mm * kMm;
}

std::string forces_csv(const std::vector<SimFrame>& frames) {
  std::string out = "frame,time_s,phase,depth_mm,fx_N,fy_N,fz_N\n";
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    out += std::to_string(i) + "," + format_double(f.time) + "," + std::string(to_string(f.phase)) +
           "," + format_double(f.depth) + "," + format_double(f.contact_force.x()) + "," +
           format_double(f.contact_force.y()) + "," + format_double(f.contact_force.z()) + "\n";
  }
  return out;
}

std::string encode_lattice(const SimFrame& frame) {
  std::string out = "TFLD";
  put_u32(out, static_cast<std::uint32_t>(frame.lattice_size));
  for (const auto& u : frame.surface_displacement) {
    for (int a = 0; a < 3; ++a) put_f32(out, static_cast<float>(u[a]));
  }
  return out;
}

SimFrame decode_lattice(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.take(4) != "TFLD") throw ValidationError("lattice: bad magic");
  SimFrame f;
  f.lattice_size = static_cast<int>(in.u32());
  if (f.lattice_size < 2 || f.lattice_size > 4096) throw ValidationError("lattice: bad size");
  const std::size_t count = static_cast<std::size_t>(f.lattice_size) * f.lattice_size;
  f.surface_displacement.resize(count);
  for (auto& u : f.surface_displacement) {
    for (int a = 0; a < 3; ++a) u[a] = in.f32();
  }
  if (!in.done()) throw ValidationError("lattice: trailing bytes");
  return f;
}

}  // namespace tacforge
