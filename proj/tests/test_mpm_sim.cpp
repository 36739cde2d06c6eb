#include <gtest/gtest.h>

#include "tacforge/mpm_sim.hpp"

using namespace tacforge;

namespace {

const IndenterSpec& indenter(const std::string& id) {
  static const auto cat = build_indenter_catalog();
  return find_indenter(cat, id);
}

// One centred flat-prism press to 1.2 mm with a +x shear, shared by several tests.
const std::vector<SimFrame>& prism_run() {
  static const std::vector<SimFrame> frames = [] {
    TrajectoryConfig traj;
    traj.depth_step = traj.max_depth;
    auto seq = generate_trajectory(traj, {Vec2(0, 0)}, 1, "prism").front();
    auto state = init_sim(MaterialParams{}, MpmConfig{}, indenter("prism"));
    return run_contact_sequence(state, seq, traj);
  }();
  return frames;
}

}  // namespace

TEST(Material, LameParameters) {
  MaterialParams m;
  EXPECT_NEAR(m.mu(), 1.45e5 / 2.9, 1e-9);
  EXPECT_NEAR(m.lambda(), 1.45e5 * 0.45 / (1.45 * 0.1), 1e-6);
  m.poisson = 0.5;
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Init, ParticleCountIsCellsTimesPpc) {
  const auto s = init_sim(MaterialParams{}, MpmConfig{}, indenter("sphere"));
  EXPECT_EQ(s.x.size(), 20u * 20u * 4u * 8u);
  EXPECT_EQ(s.surface_stencil.size(), 32u * 32u);
}

TEST(Init, CflViolationNamesLimit) {
  MpmConfig cfg;
  cfg.dt = 1.0;
  try {
    init_sim(MaterialParams{}, cfg, indenter("sphere"));
    FAIL() << "expected a CFL error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("dt"), std::string::npos);
  }
  const auto clamped = with_stable_dt(MaterialParams{}, cfg);
  EXPECT_DOUBLE_EQ(clamped.dt, max_stable_dt(MaterialParams{}, cfg));
}

TEST(Init, SameSeedSameParticles) {
  MpmConfig cfg;
  cfg.jitter = 0.25;
  cfg.seed = 9;
  const auto a = init_sim(MaterialParams{}, cfg, indenter("sphere"));
  const auto b = init_sim(MaterialParams{}, cfg, indenter("sphere"));
  EXPECT_EQ(a.x, b.x);
  cfg.seed = 10;
  const auto c = init_sim(MaterialParams{}, cfg, indenter("sphere"));
  EXPECT_NE(a.x, c.x);
}

TEST(Step, NoContactNoForce) {
  auto s = init_sim(MaterialParams{}, MpmConfig{}, indenter("sphere"));
  s.tip_pose.translation = Vec3(0, 0, 3.0);
  s.reset_force_window();
  for (int i = 0; i < 100; ++i) step(s);
  EXPECT_LE(s.average_force().norm(), 1e-3);
  EXPECT_EQ(s.kinetic_energy(), 0.0);
}

TEST(Step, IndenterAdvancesSpeedTimesDt) {
  MpmConfig cfg;
  cfg.dt = 1e-4;
  auto s = init_sim(MaterialParams{}, cfg, indenter("sphere"));
  s.tip_pose.translation = Vec3(0, 0, 2.0);
  s.indenter_velocity = Vec3(0, 0, -10.0);
  for (int i = 0; i < 10; ++i) {
    const double z = s.tip_pose.translation.z();
    step(s);
    EXPECT_NEAR(z - s.tip_pose.translation.z(), 0.001, 1e-12);
  }
}

TEST(Step, DampedFreeVibrationLosesEnergy) {
  auto s = init_sim(MaterialParams{}, MpmConfig{}, indenter("sphere"));
  s.tip_pose.translation = Vec3(0, 0, 5.0);
  Rng rng(4);
  for (std::size_t p = 0; p < s.v.size(); ++p) {
    if (s.x0[p].z() > -1e-3) s.v[p] = Vec3(0, 0, -0.01);
  }
  (void)rng;
  const double e0 = s.kinetic_energy() + s.strain_energy();
  double prev = e0;
  for (int i = 0; i < 60; ++i) {
    step(s);
    const double e = s.kinetic_energy() + s.strain_energy();
    if (i % 10 == 9) {
      EXPECT_LT(e, prev);
      prev = e;
    }
  }
  EXPECT_LT(prev, 0.5 * e0);
}

TEST(Sequence, RestFrameBelowNoiseFloor) {
  const auto& f = prism_run();
  ASSERT_FALSE(f.empty());
  EXPECT_EQ(f.front().phase, Phase::Rest);
  EXPECT_LE(f.front().contact_force.norm(), MpmConfig{}.force_noise_floor);
  for (const auto& fr : f) {
    for (const auto& u : fr.surface_displacement) ASSERT_TRUE(u.allFinite());
  }
}

TEST(Sequence, FlatPrismLoadingIsMonotone) {
  double prev_depth = -1.0, prev_force = -1.0;
  int loading = 0;
  for (const auto& f : prism_run()) {
    if (f.phase != Phase::NormalIncrease) continue;
    ++loading;
    EXPECT_GT(f.depth, prev_depth);
    EXPECT_GT(f.contact_force.z(), prev_force);
    prev_depth = f.depth;
    prev_force = f.contact_force.z();
  }
  EXPECT_GE(loading, 4);
}

TEST(Sequence, ShearForceFollowsDirection) {
  bool any = false;
  for (const auto& f : prism_run()) {
    if (f.phase == Phase::ShearIncrease && f.indenter_pose.translation.x() > 0.5) {
      EXPECT_GT(f.contact_force.x(), 0.0);
      any = true;
    }
  }
  EXPECT_TRUE(any);
}

TEST(Sequence, UnloadingBelowLoadingAtEqualDepth) {
  std::vector<std::pair<double, double>> up, down;
  for (const auto& f : prism_run()) {
    if (f.phase == Phase::NormalIncrease) up.emplace_back(f.depth, f.contact_force.z());
    if (f.phase == Phase::NormalDecrease) down.emplace_back(f.depth, f.contact_force.z());
  }
  int compared = 0;
  for (const auto& [d, fu] : up) {
    for (const auto& [d2, fd] : down) {
      if (std::abs(d - d2) < 1e-9 && d > 0.0) {
        EXPECT_LE(fd, fu) << "depth " << d;
        ++compared;
      }
    }
  }
  EXPECT_GE(compared, 3);
}

TEST(Sequence, Deterministic) {
  TrajectoryConfig traj;
  traj.depth_step = 0.3;
  traj.max_depth = 0.3;
  traj.shear_distance = 0.25;
  const auto seq = generate_trajectory(traj, {Vec2(1, -1)}, 1, "hemisphere").front();
  auto a = init_sim(MaterialParams{}, MpmConfig{}, indenter("hemisphere"));
  auto b = a;
  const auto fa = run_contact_sequence(a, seq, traj);
  const auto fb = run_contact_sequence(b, seq, traj);
  ASSERT_EQ(fa.size(), fb.size());
  for (std::size_t i = 0; i < fa.size(); ++i) {
    EXPECT_EQ(fa[i].contact_force, fb[i].contact_force);
    EXPECT_EQ(fa[i].surface_displacement, fb[i].surface_displacement);
  }
  EXPECT_EQ(forces_csv(fa), forces_csv(fb));
}

TEST(FlatPunch, ClosedForm) {
  EXPECT_EQ(flat_punch_force(1.45e5, 0.45, 4.0, 0.0), 0.0);
  const double f1 = flat_punch_force(1.45e5, 0.45, 4.0, 0.3);
  EXPECT_NEAR(flat_punch_force(1.45e5, 0.45, 4.0, 0.6), 2.0 * f1, 1e-15);
  EXPECT_NEAR(flat_punch_force(1.45e5, 0.45, 4.0, 0.6), 2 * 4e-3 * 1.45e5 * 0.6e-3, 1e-12);
  EXPECT_THROW(flat_punch_force(1.45e5, 0.45, 4.0, -0.1), ValidationError);
  EXPECT_THROW(flat_punch_force(1.45e5, 0.45, 0.0, 0.1), ValidationError);
}

TEST(Persistence, ForcesCsvSchema) {
  const auto csv = forces_csv(prism_run());
  EXPECT_EQ(csv.rfind("frame,time_s,phase,depth_mm,fx_N,fy_N,fz_N\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), prism_run().size() + 1);
}

TEST(Persistence, LatticeRoundTrip) {
  const auto& f = prism_run()[5];
  const auto bytes = encode_lattice(f);
  EXPECT_EQ(bytes.substr(0, 4), "TFLD");
  EXPECT_EQ(bytes.size(), 8u + 32u * 32u * 12u);
  const auto back = decode_lattice(bytes);
  ASSERT_EQ(back.lattice_size, 32);
  for (std::size_t i = 0; i < f.surface_displacement.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      EXPECT_EQ(back.surface_displacement[i][a], static_cast<float>(f.surface_displacement[i][a]));
    }
  }
  EXPECT_EQ(encode_lattice(back), bytes);
  EXPECT_THROW(decode_lattice("TFLX"), ValidationError);
  EXPECT_THROW(decode_lattice(bytes.substr(0, bytes.size() - 1)), ValidationError);
}

TEST(Frame, BilinearSampleReproducesNodes) {
  const auto& f = prism_run()[5];
  for (int j = 0; j < f.lattice_size; j += 7) {
    for (int i = 0; i < f.lattice_size; i += 5) {
      const Vec3 s = f.sample(f.node_position(i, j));
      EXPECT_LT((s - f.surface_displacement[static_cast<std::size_t>(j * f.lattice_size + i)]).norm(), 1e-12);
    }
  }
}
