#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tacforge/common.hpp"
#include "tacforge/scenario.hpp"

namespace tacforge {

struct MaterialParams {
  double youngs_modulus = 1.45e5;  // Pa
  double poisson = 0.45;
  double density = 1100.0;  // kg/m^3
  double damping = 0.05;    // fraction of grid velocity removed per step

  void validate() const;
  double mu() const { return youngs_modulus / (2.0 * (1.0 + poisson)); }
  double lambda() const {
    return youngs_modulus * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
  }
};

struct MpmConfig {
  Vec3 block_size{20.0, 20.0, 4.0};  // mm; top face at z = 0
  double dx = 1.0;                   // mm
  int particles_per_cell = 8;
  double dt = 8e-4;  // s
  /// Multiplies the density for inertia; quasi-static runs tolerate large
  /// values and gain a proportionally larger stable step.
  double mass_scale = 1024.0;
  double friction = 1.0;  // indenter/skin Coulomb coefficient
  /// Penalty stiffness as a fraction of the explicit limit m/dt^2.
  double contact_stiffness = 0.5;
  int settle_steps = 20;
  int force_window = 20;  // steps averaged into a frame's force
  double force_noise_floor = 1e-3;  // N
  int surface_lattice = 32;
  double surface_layer = 0.4;  // mm below the face that counts as surface
  int idw_neighbors = 8;
  double jitter = 0.0;  // particle jitter as a fraction of the sub-cell spacing
  std::uint64_t seed = 0;

  void validate(const MaterialParams& mat) const;
};

/// Largest dt allowed by the CFL rule 0.3 dx / sqrt(E / rho_eff).
double max_stable_dt(const MaterialParams& mat, const MpmConfig& cfg);
/// Copy of cfg with dt clamped to max_stable_dt.
MpmConfig with_stable_dt(const MaterialParams& mat, MpmConfig cfg);

struct SimFrame {
  int lattice_size = 0;                   // M
  double face_size = 20.0;                // mm spanned by the lattice
  std::vector<Vec3> surface_displacement;  // M*M nodes, row-major (y, x), mm
  Vec3 contact_force = Vec3::Zero();      // N; +z presses into the skin
  Pose indenter_pose;                     // tip pose, mm
  double depth = 0.0;                     // mm
  Phase phase = Phase::Rest;
  double time = 0.0;  // s

  /// Reference-plane position of lattice node (i, j), mm.
  Vec2 node_position(int i, int j) const;
  /// Bilinear sample of the lattice at a face position (mm). Outside the face
  /// the nearest edge value is used.
  Vec3 sample(const Vec2& xy_mm) const;
};

/**
 * @brief Complete explicit MPM state. Plain data: copy it to branch a run.
 *
 * Internals are SI (m, kg, s); the indenter pose stays in mm like the rest of
 * the API.
 */
struct SimState {
  MaterialParams material;
  MpmConfig config;
  IndenterSpec indenter;

  // Particles.
  std::vector<Vec3> x, x0, v;
  std::vector<Mat3> F, C;
  double particle_volume = 0.0;
  double particle_mass = 0.0;
  double contact_radius = 0.0;  // m, half the particle spacing
  std::vector<std::uint8_t> in_contact;
  std::vector<Vec3> anchor;  // indenter-local stick point, m

  // Grid.
  Eigen::Vector3i grid_dims = Eigen::Vector3i::Zero();
  Vec3 grid_origin = Vec3::Zero();  // m
  std::vector<Eigen::Vector4d> grid;  // momentum xyz + mass
  int fixed_layers = 0;               // z node layers clamped to zero velocity

  // Surface sampling: per lattice node, neighbour particles and weights.
  std::vector<std::vector<std::pair<std::uint32_t, double>>> surface_stencil;

  Pose tip_pose;                               // mm
  Vec3 indenter_velocity = Vec3::Zero();       // mm/s
  Vec3 last_force = Vec3::Zero();              // N, last step
  Vec3 impulse = Vec3::Zero();                 // N*s since last reset
  double impulse_time = 0.0;
  double time = 0.0;
  std::uint64_t step_count = 0;

  void reset_force_window();
  Vec3 average_force() const;
  double kinetic_energy() const;
  double strain_energy() const;
  SimFrame snapshot(Phase phase) const;
};

SimState init_sim(const MaterialParams& mat, const MpmConfig& cfg, const IndenterSpec& indenter);

/// One MLS-MPM update. Throws NumericalError on a non-finite state.
void step(SimState& state);

/// Runs one contact sequence from a fresh state; one frame per densified
/// waypoint, each recorded after config.settle_steps of relaxation.
std::vector<SimFrame> run_contact_sequence(SimState& state, const ContactSequence& seq,
                                           const TrajectoryConfig& traj);

/// F = alpha * E * d with alpha = 2a (circular flat punch), E* taken as E.
double flat_punch_force(double youngs_modulus, double poisson, double halfwidth_mm,
                        double depth_mm);

// Persistence: per-sequence force CSV and per-frame "TFLD" lattice files.
std::string forces_csv(const std::vector<SimFrame>& frames);
std::string encode_lattice(const SimFrame& frame);
/// Decodes a lattice file; only the displacement lattice is restored.
SimFrame decode_lattice(std::string_view bytes);

}  // namespace tacforge
