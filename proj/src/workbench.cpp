#include "tacforge/workbench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <ostream>
#include <set>

#include <json.hpp>

#include "tacforge/signal_unify.hpp"

namespace tacforge {

using nlohmann::json;

namespace {

std::string seq_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04zu", i);
  return buf;
}

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.pbm", i);
  return buf;
}

std::string fmt_or_nan(double v) { return std::isfinite(v) ? format_double(v) : std::string("nan"); }

double parse_number(std::string_view s, const std::string& what) {
  s = trim(s);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(what + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::string value_literal(const Config::Value& v) {
  using K = Config::Value::Kind;
  switch (v.kind) {
    case K::Number:
      return v.text;
    case K::String:
      return "\"" + v.text + "\"";
    case K::Bool:
      return v.boolean ? "true" : "false";
    case K::Array: {
      std::string out = "[";
      for (std::size_t i = 0; i < v.items.size(); ++i) {
        if (i) out += ", ";
        out += value_literal(v.items[i]);
      }
      return out + "]";
    }
  }
  return {};
}

BinaryImage load_image(const fs::path& path, const CameraMap& cam) {
  return decode_pbm(read_file(path), cam.width, cam.height);
}

void write_image(const fs::path& path, const BinaryImage& img) { write_file_atomic(path, encode_pbm(img)); }

json sensor_json(const SensorDescriptor& s) {
  json j;
  j["family"] = std::string(to_string(s.family));
  j["pitch_mm"] = s.pattern.pitch;
  j["radius_mm"] = s.pattern.radius;
  j["material_id"] = s.material_id;
  j["zmax_mm"] = s.zmax;
  j["active_area_mm"] = s.active_area;
  j["kappa"] = s.kappa;
  j["thickness_mm"] = s.thickness;
  j["camera"] = {{"px_per_mm", s.camera.px_per_mm}, {"width", s.camera.width}, {"height", s.camera.height}};
  return j;
}

SensorDescriptor sensor_from_json(const json& j) {
  SensorDescriptor s;
  s.family = pattern_family_from_string(j.at("family").get<std::string>());
  s.pattern.pitch = j.at("pitch_mm").get<double>();
  s.pattern.radius = j.at("radius_mm").get<double>();
  s.material_id = j.at("material_id").get<std::string>();
  s.zmax = j.at("zmax_mm").get<double>();
  s.active_area = j.at("active_area_mm").get<double>();
  s.kappa = j.at("kappa").get<double>();
  s.thickness = j.at("thickness_mm").get<double>();
  const auto& c = j.at("camera");
  s.camera.px_per_mm = c.at("px_per_mm").get<double>();
  s.camera.width = c.at("width").get<int>();
  s.camera.height = c.at("height").get<int>();
  return s;
}

void write_manifest(const fs::path& dir, const DatasetManifest& m) {
  write_file_atomic(dir / "manifest.json", manifest_json(m));
}

// Key that identifies "the same contact" across datasets.
bool same_contact(const SequenceRecord& a, double zmax_a, const SequenceRecord& b, double zmax_b) {
  return a.indenter == b.indenter && (a.contact_point - b.contact_point).norm() < 1e-6 &&
         std::abs(std::remainder(a.direction - b.direction, 2.0 * M_PI)) < 1e-6 &&
         std::abs(a.depth / zmax_a - b.depth / zmax_b) < 0.05;
}

std::vector<Vec2> contact_points(const Config& cfg, const TrajectoryConfig& traj, Rng& rng) {
  const std::string layout = cfg.string_or("dataset", "layout", "cross");
  if (layout == "cross") {
    auto pts = cross_layout(traj.grid_dx, traj.grid_dy);
    pts.resize(std::min<std::size_t>(pts.size(), static_cast<std::size_t>(traj.contact_points)));
    return pts;
  }
  if (layout == "random") {
    const int n = static_cast<int>(cfg.number_or("dataset", "points", traj.contact_points));
    const double r = cfg.number_or("dataset", "point_range_mm", 4.0);
    if (n < 1 || !(r >= 0.0) || r > kFaceHalfWidth) {
      throw ValidationError("dataset: random layout needs points >= 1 and 0 <= point_range_mm <= 10");
    }
    std::vector<Vec2> pts;
    for (int i = 0; i < n; ++i) {
      const double x = rng.uniform(-r, r);
      const double y = rng.uniform(-r, r);
      pts.emplace_back(x, y);
    }
    return pts;
  }
  throw ValidationError("dataset: unknown layout '" + layout + "'");
}

}  // namespace

void SensorDescriptor::validate() const {
  camera.validate();
  if (!(zmax > 0.0) || !(active_area > 0.0) || !(thickness > 0.0) || !std::isfinite(kappa)) {
    throw ValidationError("sensor: zmax, area and thickness must be positive");
  }
  make_pattern();
}

MarkerPattern SensorDescriptor::make_pattern() const { return tacforge::make_pattern(family, pattern); }

SensorDescriptor sensor_from_config(const Config& cfg, std::optional<PatternFamily> family) {
  SensorDescriptor s;
  s.family = family ? *family : pattern_family_from_string(cfg.string("pattern", "family"));
  s.pattern = default_pattern_params(s.family);
  s.pattern.pitch = cfg.number_or("pattern", "pitch_mm", s.pattern.pitch);
  s.pattern.radius = cfg.number_or("pattern", "radius_mm", s.pattern.radius);
  s.material_id = cfg.string_or("sensor", "material_id", s.material_id);
  s.zmax = cfg.number_or("sensor", "zmax_mm", cfg.number_or("trajectory", "zmax_mm", s.zmax));
  s.active_area = cfg.number_or("sensor", "area_mm", s.active_area);
  s.kappa = cfg.number_or("sensor", "kappa", s.kappa);
  s.thickness = cfg.number_or("sensor", "thickness_mm", s.thickness);
  s.camera.px_per_mm = cfg.number_or("sensor", "px_per_mm", s.camera.px_per_mm);
  s.camera.width = static_cast<int>(cfg.number_or("sensor", "width", s.camera.width));
  s.camera.height = static_cast<int>(cfg.number_or("sensor", "height", s.camera.height));
  s.validate();
  return s;
}

MaterialParams material_from_config(const Config& cfg) {
  MaterialParams m;
  m.youngs_modulus = cfg.number_or("material", "youngs_modulus_pa", m.youngs_modulus);
  m.poisson = cfg.number_or("material", "poisson", m.poisson);
  m.density = cfg.number_or("material", "density_kg_m3", m.density);
  m.damping = cfg.number_or("material", "damping", m.damping);
  m.validate();
  return m;
}

MpmConfig mpm_from_config(const Config& cfg, std::uint64_t seed) {
  MpmConfig c;
  c.dx = cfg.number_or("sim", "dx_mm", c.dx);
  c.particles_per_cell = static_cast<int>(cfg.number_or("sim", "particles_per_cell", c.particles_per_cell));
  c.dt = cfg.number_or("sim", "dt_s", c.dt);
  c.mass_scale = cfg.number_or("sim", "mass_scale", c.mass_scale);
  c.friction = cfg.number_or("sim", "friction", c.friction);
  c.contact_stiffness = cfg.number_or("sim", "contact_stiffness", c.contact_stiffness);
  c.settle_steps = static_cast<int>(cfg.number_or("sim", "settle_steps", c.settle_steps));
  c.force_window = static_cast<int>(cfg.number_or("sim", "force_window", c.force_window));
  c.surface_lattice = static_cast<int>(cfg.number_or("sim", "surface_lattice", c.surface_lattice));
  c.jitter = cfg.number_or("sim", "jitter", c.jitter);
  c.seed = seed;
  return c;
}

std::string canonical_config(const Config& cfg) {
  std::string out;
  for (const auto& [table, values] : cfg.tables()) {
    if (values.empty()) continue;
    if (!table.empty()) out += "[" + table + "]\n";
    for (const auto& [key, v] : values) out += key + " = " + value_literal(v) + "\n";
  }
  return out;
}

std::string manifest_json(const DatasetManifest& m) {
  json j;
  j["dataset_id"] = m.dataset_id;
  j["sensor"] = sensor_json(m.sensor);
  j["reference"] = m.reference;
  j["config"] = m.config_text;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["source_dataset"] = m.source_dataset;
  j["complete"] = m.complete;
  j["failures"] = m.failures;
  json flags = json::array();
  for (const auto& f : m.flags) flags.push_back({{"frame", f.frame}, {"reason", f.reason}});
  j["flags"] = flags;
  json seqs = json::array();
  for (const auto& s : m.sequences) {
    json q;
    q["id"] = s.id;
    q["indenter"] = s.indenter;
    q["seen"] = s.seen;
    q["contact_point_mm"] = {s.contact_point.x(), s.contact_point.y()};
    q["direction_rad"] = s.direction;
    q["depth_level"] = s.depth_level;
    q["depth_mm"] = s.depth;
    q["frames"] = s.frames;
    q["forces"] = s.forces;
    json phases = json::array();
    for (auto p : s.phases) phases.push_back(std::string(to_string(p)));
    q["phases"] = phases;
    seqs.push_back(q);
  }
  j["sequences"] = seqs;
  return j.dump(2) + "\n";
}

DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.sensor = sensor_from_json(j.at("sensor"));
    m.reference = j.at("reference").get<std::string>();
    m.config_text = j.at("config").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.source_dataset = j.at("source_dataset").get<std::string>();
    m.complete = j.at("complete").get<bool>();
    m.failures = j.at("failures").get<std::vector<std::string>>();
    for (const auto& f : j.at("flags")) {
      m.flags.push_back({f.at("frame").get<std::string>(), f.at("reason").get<std::string>()});
    }
    for (const auto& q : j.at("sequences")) {
      SequenceRecord s;
      s.id = q.at("id").get<std::string>();
      s.indenter = q.at("indenter").get<std::string>();
      s.seen = q.at("seen").get<bool>();
      const auto cp = q.at("contact_point_mm").get<std::vector<double>>();
      if (cp.size() != 2) throw ValidationError("manifest: contact point needs 2 values");
      s.contact_point = Vec2(cp[0], cp[1]);
      s.direction = q.at("direction_rad").get<double>();
      s.depth_level = q.at("depth_level").get<int>();
      s.depth = q.at("depth_mm").get<double>();
      s.frames = q.at("frames").get<std::vector<std::string>>();
      s.forces = q.at("forces").get<std::string>();
      for (const auto& p : q.at("phases")) s.phases.push_back(phase_from_string(p.get<std::string>()));
      m.sequences.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  m.sensor.validate();
  return m;
}

void validate_manifest(const DatasetManifest& m, const fs::path& dir) {
  if (!m.complete) throw ValidationError("manifest " + m.dataset_id + " is incomplete");
  if (hex64(fnv1a64(m.config_text)) != m.config_hash) {
    throw ValidationError("manifest " + m.dataset_id + ": config hash does not match");
  }
  if (!fs::exists(dir / m.reference)) throw ValidationError("manifest: missing reference " + m.reference);
  for (const auto& s : m.sequences) {
    for (const auto& f : s.frames) {
      if (!fs::exists(dir / f)) throw ValidationError("manifest: missing frame " + f);
    }
    if (s.forces.empty()) continue;
    if (!fs::exists(dir / s.forces)) throw ValidationError("manifest: missing forces " + s.forces);
    const auto rows = parse_forces_csv(read_file(dir / s.forces));
    if (rows.size() != s.frames.size() || s.phases.size() != s.frames.size()) {
      throw ValidationError("manifest: sequence " + s.id + " has " + std::to_string(s.frames.size()) +
                            " frames but " + std::to_string(rows.size()) + " force rows");
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].phase != s.phases[i]) throw ValidationError("manifest: phase mismatch in " + s.id);
    }
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  auto m = parse_manifest(read_file(path));
  validate_manifest(m, path.parent_path());
  return m;
}

std::vector<ForceRow> parse_forces_csv(std::string_view text) {
  std::vector<ForceRow> rows;
  std::size_t line_no = 0;
  bool header = false;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (!header) {
      if (line != "frame,time_s,phase,depth_mm,fx_N,fy_N,fz_N") throw ValidationError("forces csv: bad header");
      header = true;
      continue;
    }
    const auto c = split(line, ',');
    const std::string what = "forces csv line " + std::to_string(line_no);
    if (c.size() != 7) throw ValidationError(what + ": need 7 columns");
    ForceRow r;
    r.frame = static_cast<int>(parse_number(c[0], what));
    r.time = parse_number(c[1], what);
    r.phase = phase_from_string(trim(c[2]));
    r.depth = parse_number(c[3], what);
    r.force = Vec3(parse_number(c[4], what), parse_number(c[5], what), parse_number(c[6], what));
    if (r.frame != static_cast<int>(rows.size())) throw ValidationError(what + ": frames out of order");
    rows.push_back(r);
  }
  if (!header) throw ValidationError("forces csv: empty");
  return rows;
}

std::string write_forces_csv(const std::vector<ForceRow>& rows) {
  std::string out = "frame,time_s,phase,depth_mm,fx_N,fy_N,fz_N\n";
  for (const auto& r : rows) {
    out += std::to_string(r.frame) + "," + format_double(r.time) + "," + std::string(to_string(r.phase)) + "," +
           format_double(r.depth) + "," + format_double(r.force.x()) + "," + format_double(r.force.y()) + "," +
           format_double(r.force.z()) + "\n";
  }
  return out;
}

std::vector<PairKey> pair_keys(const std::vector<ForceRow>& rows, double zmax) {
  std::vector<PairKey> keys(rows.size());
  std::size_t start = 0;
  while (start < rows.size()) {
    std::size_t end = start;
    while (end < rows.size() && rows[end].phase == rows[start].phase) ++end;
    const std::size_t n = end - start;
    for (std::size_t i = start; i < end; ++i) {
      keys[i].z_hat = rows[i].depth / zmax;
      keys[i].phase = rows[i].phase;
      keys[i].ordinal = n > 1 ? static_cast<double>(i - start) / static_cast<double>(n - 1) : 0.0;
    }
    start = end;
  }
  return keys;
}

int pair_frame(const PairKey& key, const std::vector<PairKey>& candidates, double z_tol) {
  int best = -1;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (c.phase != key.phase) continue;
    const double dz = std::abs(c.z_hat - key.z_hat);
    if (dz > z_tol) continue;
    const double score = dz + std::abs(c.ordinal - key.ordinal);
    if (score < best_score) {
      best_score = score;
      best = static_cast<int>(i);
    }
  }
  return best;
}

IndenterSubset indenter_subset_from_string(std::string_view s) {
  if (s == "all") return IndenterSubset::All;
  if (s == "seen") return IndenterSubset::Seen;
  if (s == "unseen") return IndenterSubset::Unseen;
  throw ValidationError("unknown indenter subset '" + std::string(s) + "' (all, seen, unseen)");
}

LoadedDataset load_dataset(const fs::path& manifest_path, IndenterSubset subset) {
  LoadedDataset out;
  out.manifest = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  const auto& cam = out.manifest.sensor.camera;
  const auto ref = segment_markers(load_image(dir / out.manifest.reference, cam));
  const double radius = safe_track_distance(ref);
  for (const auto& s : out.manifest.sequences) {
    if (subset == IndenterSubset::Seen && !s.seen) continue;
    if (subset == IndenterSubset::Unseen && s.seen) continue;
    if (s.forces.empty()) throw ValidationError("dataset: sequence " + s.id + " has no force labels");
    const auto rows = parse_forces_csv(read_file(dir / s.forces));
    if (rows.size() != s.frames.size()) throw ValidationError("dataset: label/frame mismatch in " + s.id);
    std::vector<MarkerSet> frames;
    frames.reserve(s.frames.size());
    for (const auto& f : s.frames) frames.push_back(segment_markers(load_image(dir / f, cam)));
    SequenceSample sample;
    sample.frames = sequence_features(ref, frames, radius);
    for (const auto& r : rows) {
      sample.forces.push_back(r.force);
      sample.depths.push_back(r.depth);
      sample.phases.push_back(r.phase);
    }
    sample.sensor_id = out.manifest.dataset_id;
    out.samples.push_back(std::move(sample));
  }
  return out;
}

std::vector<DatasetManifest> cmd_generate(const Config& cfg, std::uint64_t seed, const fs::path& out,
                                          std::ostream& log) {
  const auto traj = trajectory_from_config(cfg);
  const auto mat = material_from_config(cfg);
  const auto mpm = with_stable_dt(mat, mpm_from_config(cfg, seed));
  mpm.validate(mat);

  std::vector<PatternFamily> families;
  if (cfg.has("pattern", "families")) {
    for (const auto& f : cfg.strings("pattern", "families")) families.push_back(pattern_family_from_string(f));
  } else {
    families.push_back(pattern_family_from_string(cfg.string("pattern", "family")));
  }
  if (families.empty()) throw ValidationError("generate: no pattern family given");
  std::vector<SensorDescriptor> sensors;
  for (auto f : families) sensors.push_back(sensor_from_config(cfg, f));

  const auto catalog = build_indenter_catalog();
  std::vector<std::string> indenters{"hemisphere", "prism"};
  if (cfg.has("dataset", "indenters")) indenters = cfg.strings("dataset", "indenters");
  const int directions = static_cast<int>(cfg.number_or("dataset", "directions", 1));
  const int n_dirs = full_turn_directions(traj);
  if (directions < 1 || directions > n_dirs) {
    throw ValidationError("generate: directions must be in [1, " + std::to_string(n_dirs) + "]");
  }
  std::set<int> levels;
  if (cfg.has("dataset", "depth_levels")) {
    for (double l : cfg.numbers("dataset", "depth_levels")) {
      if (l < 1 || l > traj.depth_levels() || l != std::floor(l)) {
        throw ValidationError("generate: depth level out of range");
      }
      levels.insert(static_cast<int>(l));
    }
  } else {
    for (int l = 1; l <= traj.depth_levels(); ++l) levels.insert(l);
  }

  // Enumerate every sequence before simulating so the draw order is fixed.
  Rng rng(seed);
  std::vector<std::pair<const IndenterSpec*, ContactSequence>> plan;
  for (const auto& id : indenters) {
    const auto& spec = find_indenter(catalog, id);
    for (const auto& p : contact_points(cfg, traj, rng)) {
      const auto all = generate_trajectory(traj, {p}, n_dirs, spec.id);
      for (int level : levels) {
        std::vector<int> dirs(static_cast<std::size_t>(n_dirs));
        for (int k = 0; k < n_dirs; ++k) dirs[static_cast<std::size_t>(k)] = k;
        if (directions < n_dirs) rng.shuffle(dirs);
        dirs.resize(static_cast<std::size_t>(directions));
        std::sort(dirs.begin(), dirs.end());
        for (int k : dirs) {
          for (const auto& seq : all) {
            const int idx = static_cast<int>(std::lround(seq.direction / traj.shear_angle));
            if (seq.depth_level == level && idx == k) plan.emplace_back(&spec, seq);
          }
        }
      }
    }
  }

  const std::string base_id = cfg.string_or("dataset", "id", "dataset");
  const std::string config_text = canonical_config(cfg);
  std::vector<DatasetManifest> manifests(sensors.size());
  std::vector<fs::path> dirs(sensors.size());
  std::vector<MarkerPattern> patterns;
  for (std::size_t k = 0; k < sensors.size(); ++k) {
    auto& m = manifests[k];
    m.dataset_id = sensors.size() == 1 ? base_id : base_id + "-" + std::string(to_string(sensors[k].family));
    m.sensor = sensors[k];
    m.reference = "reference.pbm";
    m.config_text = config_text;
    m.config_hash = hex64(fnv1a64(config_text));
    m.seed = seed;
    dirs[k] = sensors.size() == 1 ? out : out / std::string(to_string(sensors[k].family));
    fs::create_directories(dirs[k]);
    patterns.push_back(sensors[k].make_pattern());
    write_image(dirs[k] / m.reference, rasterize(patterns[k].markers, sensors[k].camera));
  }

  log << "generate: " << plan.size() << " sequences, dt " << mpm.dt << " s\n";
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& [spec, seq] = plan[i];
    const auto name = seq_name(i);
    std::vector<SimFrame> frames;
    try {
      auto state = init_sim(mat, mpm, *spec);
      frames = run_contact_sequence(state, seq, traj);
    } catch (const NumericalError& e) {
      for (auto& m : manifests) {
        m.complete = false;
        m.failures.push_back(name + ": " + e.what());
      }
      log << "generate: " << name << " failed: " << e.what() << "\n";
      continue;
    }
    for (std::size_t k = 0; k < sensors.size(); ++k) {
      SequenceRecord rec;
      rec.id = name;
      rec.indenter = spec->id;
      rec.seen = spec->seen;
      rec.contact_point = seq.contact_point;
      rec.direction = seq.direction;
      rec.depth_level = seq.depth_level;
      rec.depth = seq.depth;
      fs::create_directories(dirs[k] / name);
      for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto markers = warp_markers(patterns[k], lattice_sampler(frames[f]), sensors[k].kappa,
                                          sensors[k].thickness);
        const std::string rel = name + "/" + frame_name(f);
        write_image(dirs[k] / rel, rasterize(markers, sensors[k].camera));
        rec.frames.push_back(rel);
        rec.phases.push_back(frames[f].phase);
      }
      rec.forces = name + "/forces.csv";
      write_file_atomic(dirs[k] / rec.forces, forces_csv(frames));
      manifests[k].sequences.push_back(std::move(rec));
    }
    log << "generate: " << name << " " << spec->id << " level " << seq.depth_level << ", " << frames.size()
        << " frames\n";
  }
  for (std::size_t k = 0; k < sensors.size(); ++k) write_manifest(dirs[k], manifests[k]);
  if (!manifests.front().complete) {
    throw NumericalError("generate: " + std::to_string(manifests.front().failures.size()) +
                         " sequences failed; manifest marked incomplete");
  }
  return manifests;
}

DatasetManifest cmd_translate(const Config& cfg, std::uint64_t seed, const fs::path& out, std::ostream& log) {
  const fs::path src_path = cfg.string("translate", "source");
  const auto src = load_manifest(src_path);
  const auto src_dir = src_path.parent_path();
  const auto target = sensor_from_config(cfg);

  const BinaryImage src_ref = load_image(src_dir / src.reference, src.sensor.camera);
  BinaryImage tgt_ref = rasterize(target.make_pattern().markers, target.camera);
  if (cfg.has("translate", "target_reference")) {
    tgt_ref = load_image(cfg.string("translate", "target_reference"), target.camera);
  }
  DepthAlignment align;
  align.source_zmax = src.sensor.zmax;
  align.target_zmax = target.zmax;
  align.source_area = src.sensor.active_area;
  align.target_area = target.active_area;
  TranslationOptions opt;
  opt.lambda = cfg.number_or("translate", "lambda", opt.lambda);
  if (cfg.has("translate", "track_distance_px")) opt.track_distance = cfg.number("translate", "track_distance_px");
  const auto ctx = make_translation_context(src_ref, tgt_ref, align, opt);

  std::optional<DatasetManifest> truth;
  fs::path truth_dir;
  if (cfg.has("translate", "truth")) {
    const fs::path p = cfg.string("translate", "truth");
    truth = load_manifest(p);
    truth_dir = p.parent_path();
  }

  const bool compensate = cfg.boolean_or("compensation", "enabled", false);
  std::optional<MaterialPrior> prior_src, prior_tgt;
  CompensationOptions copt;
  if (compensate) {
    const auto priors = parse_priors_csv(read_file(cfg.string("compensation", "priors")));
    auto find = [&](const std::string& id) {
      for (const auto& p : priors) {
        if (p.material_id == id) return p;
      }
      throw ValidationError("compensation: no prior for material '" + id + "'");
    };
    prior_src = find(cfg.string_or("compensation", "source_material", src.sensor.material_id));
    prior_tgt = find(cfg.string_or("compensation", "target_material", target.material_id));
    copt.floor = cfg.number_or("compensation", "floor_N", copt.floor);
    copt.normal_only = cfg.boolean_or("compensation", "normal_only", copt.normal_only);
  }

  DatasetManifest m;
  m.dataset_id = cfg.string_or("translate", "id", src.dataset_id + "-to-" + std::string(to_string(target.family)));
  m.sensor = target;
  m.reference = "reference.pbm";
  m.config_text = canonical_config(cfg);
  m.config_hash = hex64(fnv1a64(m.config_text));
  m.seed = seed;
  m.source_dataset = src.dataset_id;
  fs::create_directories(out);
  write_image(out / m.reference, tgt_ref);

  std::string report = "frame,mean_err_px,max_err_px,iou,matched_fraction\n";
  std::size_t flagged = 0;
  for (const auto& s : src.sequences) {
    SequenceRecord rec = s;
    rec.frames.clear();
    fs::create_directories(out / s.id);
    auto rows = parse_forces_csv(read_file(src_dir / s.forces));

    const SequenceRecord* match = nullptr;
    std::vector<PairKey> truth_keys;
    if (truth) {
      for (const auto& t : truth->sequences) {
        if (same_contact(s, src.sensor.zmax, t, truth->sensor.zmax)) {
          match = &t;
          truth_keys = pair_keys(parse_forces_csv(read_file(truth_dir / t.forces)), truth->sensor.zmax);
          break;
        }
      }
    }
    const auto keys = pair_keys(rows, src.sensor.zmax);

    for (std::size_t f = 0; f < s.frames.size(); ++f) {
      const std::string rel = s.id + "/" + frame_name(f);
      const auto source = load_image(src_dir / s.frames[f], src.sensor.camera);
      BinaryImage img;
      double matched = 0.0;
      try {
        auto res = translate(ctx, source);
        img = std::move(res.image);
        matched = res.matched_fraction;
      } catch (const TrackingError& e) {
        img = tgt_ref;
        matched = e.matched_fraction;
        m.flags.push_back({rel, e.what()});
      } catch (const QualityGateError& e) {
        img = e.image;
        m.flags.push_back({rel, e.what()});
      }
      write_image(out / rel, img);
      rec.frames.push_back(rel);

      double mean_err = std::nan(""), max_err = std::nan(""), iou = std::nan("");
      if (match) {
        const int k = pair_frame(keys[f], truth_keys);
        if (k >= 0) {
          const auto gt = load_image(truth_dir / match->frames[static_cast<std::size_t>(k)], target.camera);
          const auto err = marker_position_error(img, gt);
          if (err.defined) {
            mean_err = err.mean;
            max_err = err.max;
          }
          iou = pixel_iou(img, gt);
        }
      }
      report += rel + "," + fmt_or_nan(mean_err) + "," + fmt_or_nan(max_err) + "," + fmt_or_nan(iou) + "," +
                format_double(matched) + "\n";
    }

    if (compensate) {
      std::vector<Vec3> labels;
      std::vector<double> depths;
      std::vector<Phase> phases;
      for (const auto& r : rows) {
        labels.push_back(r.force);
        depths.push_back(r.depth);
        phases.push_back(r.phase);
      }
      const auto scaled = compensate_labels(labels, depths, phases, *prior_src, *prior_tgt, copt);
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i].force = scaled[i];
    }
    rec.forces = s.id + "/forces.csv";
    write_file_atomic(out / rec.forces, write_forces_csv(rows));
    m.sequences.push_back(std::move(rec));
    log << "translate: " << s.id << " (" << s.frames.size() << " frames)\n";
  }
  flagged = m.flags.size();
  write_file_atomic(out / "translation_report.csv", report);
  write_manifest(out, m);
  if (flagged) log << "translate: " << flagged << " frames flagged by the quality gate\n";
  return m;
}

namespace {

TrainConfig train_config(const Config& cfg, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = static_cast<int>(cfg.number_or("train", "epochs", t.epochs));
  t.batch_size = static_cast<int>(cfg.number_or("train", "batch_size", t.batch_size));
  t.learning_rate = cfg.number_or("train", "learning_rate", t.learning_rate);
  t.momentum = cfg.number_or("train", "momentum", t.momentum);
  t.weight_decay = cfg.number_or("train", "weight_decay", t.weight_decay);
  t.decay_at = cfg.number_or("train", "decay_at", t.decay_at);
  t.validation_fraction = cfg.number_or("train", "validation_fraction", t.validation_fraction);
  t.hidden = static_cast<int>(cfg.number_or("train", "hidden", t.hidden));
  t.single_frame = cfg.boolean_or("train", "single_frame", t.single_frame);
  t.seed = seed;
  return t;
}

std::vector<SequenceSample> load_samples(const Config& cfg, const std::string& table) {
  const auto subset = indenter_subset_from_string(cfg.string_or(table, "subset", "all"));
  std::vector<SequenceSample> data;
  for (const auto& p : cfg.strings(table, "manifests")) {
    auto d = load_dataset(p, subset);
    for (auto& s : d.samples) data.push_back(std::move(s));
  }
  if (data.empty()) throw ValidationError(table + ": no sequences selected");
  return data;
}

}  // namespace

TrainResult cmd_train(const Config& cfg, std::uint64_t seed, const fs::path& out, std::ostream& log) {
  const auto tcfg = train_config(cfg, seed);
  const auto data = load_samples(cfg, "train");
  log << "train: " << data.size() << " sequences\n";
  auto result = train(data, tcfg);
  fs::create_directories(out);
  write_file_atomic(out / "model.tfm", encode_model(result.model));
  std::string csv = "epoch,loss,val_mae_N\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    csv += std::to_string(e) + "," + format_double(result.epoch_loss[e]) + "," +
           format_double(result.validation_mae[e]) + "\n";
  }
  write_file_atomic(out / "training_log.csv", csv);
  log << "train: best epoch " << result.best_epoch << ", validation MAE "
      << result.validation_mae[static_cast<std::size_t>(result.best_epoch)] << " N\n";
  return result;
}

EvalReport cmd_eval(const Config& cfg, std::uint64_t /*seed*/, const fs::path& out, std::ostream& log) {
  const auto model = decode_model(read_file(cfg.string("eval", "model")));
  auto data = load_samples(cfg, "eval");
  if (cfg.boolean_or("eval", "single_frame", false)) data = single_frame_samples(data);
  const auto report = evaluate(model, data);
  fs::create_directories(out);
  write_file_atomic(out / "eval_report.csv", eval_report_csv(report));
  log << "eval: " << report.count << " frames, MAE (" << report.mae.x() << ", " << report.mae.y() << ", "
      << report.mae.z() << ") N\n";
  return report;
}

std::vector<MaterialPrior> cmd_fit_material(const Config& cfg, std::uint64_t /*seed*/, const fs::path& out,
                                            std::ostream& log) {
  const std::string id = cfg.string("fit", "material_id");
  const std::string indenter = cfg.string_or("fit", "indenter", "");
  std::vector<ForceDepthSample> samples;
  for (const auto& input : cfg.strings("fit", "inputs")) {
    const fs::path p = input;
    if (p.extension() == ".json") {
      const auto m = load_manifest(p);
      for (const auto& s : m.sequences) {
        if (!indenter.empty() && s.indenter != indenter) continue;
        for (const auto& r : parse_forces_csv(read_file(p.parent_path() / s.forces))) {
          samples.push_back({r.depth, r.force.z(), r.phase});
        }
      }
    } else {
      for (const auto& s : parse_force_depth_csv(read_file(p))) samples.push_back(s);
    }
  }
  const auto prior = fit_material_prior(samples, id);
  log << "fit-material: " << id << " rms loading " << prior.rms_loading << " N, unloading "
      << prior.rms_unloading << " N\n";

  const fs::path priors_path = cfg.has("fit", "priors") ? fs::path(cfg.string("fit", "priors")) : out / "priors.csv";
  std::vector<MaterialPrior> priors;
  if (fs::exists(priors_path)) priors = parse_priors_csv(read_file(priors_path));
  bool replaced = false;
  for (auto& p : priors) {
    if (p.material_id == id) {
      p = prior;
      replaced = true;
    }
  }
  if (replaced) {
    log << "fit-material: warning: replacing existing prior for " << id << "\n";
  } else {
    priors.push_back(prior);
  }
  if (!priors_path.parent_path().empty()) fs::create_directories(priors_path.parent_path());
  write_file_atomic(priors_path, priors_csv(priors));
  return priors;
}

DatasetManifest cmd_translate_taxel(const Config& cfg, std::uint64_t seed, const fs::path& out,
                                    std::ostream& log) {
  const auto frames = parse_taxel_csv(read_file(cfg.string("taxel", "log")));
  const auto ref_row = static_cast<std::size_t>(cfg.number_or("taxel", "reference_row", 0));
  if (ref_row >= frames.size()) throw ValidationError("taxel: reference_row beyond the log");
  TaxelConfig tc;
  tc.scale_x = cfg.number_or("taxel", "scale_x", tc.scale_x);
  tc.scale_y = cfg.number_or("taxel", "scale_y", tc.scale_y);
  tc.scale_size = cfg.number_or("taxel", "scale_size", tc.scale_size);
  tc.max_dx = cfg.number_or("taxel", "max_dx", tc.max_dx);
  tc.max_dy = cfg.number_or("taxel", "max_dy", tc.max_dy);
  tc.min_area = cfg.number_or("taxel", "min_area", tc.min_area);
  tc.max_area = cfg.number_or("taxel", "max_area", tc.max_area);
  tc.grid_pitch_mm = cfg.number_or("taxel", "grid_pitch_mm", tc.grid_pitch_mm);
  tc.validate();

  SensorDescriptor sensor;
  sensor.family = PatternFamily::USkinGrid;
  sensor.pattern = default_pattern_params(PatternFamily::USkinGrid);
  sensor.material_id = cfg.string_or("taxel", "material_id", "uskin");
  sensor.zmax = cfg.number_or("taxel", "zmax_mm", sensor.zmax);
  sensor.camera.px_per_mm = cfg.number_or("sensor", "px_per_mm", sensor.camera.px_per_mm);
  sensor.camera.width = static_cast<int>(cfg.number_or("sensor", "width", sensor.camera.width));
  sensor.camera.height = static_cast<int>(cfg.number_or("sensor", "height", sensor.camera.height));
  sensor.validate();

  DatasetManifest m;
  m.dataset_id = cfg.string_or("taxel", "id", "taxel");
  m.sensor = sensor;
  m.reference = "reference.pbm";
  m.config_text = canonical_config(cfg);
  m.config_hash = hex64(fnv1a64(m.config_text));
  m.seed = seed;
  fs::create_directories(out / "frames");
  const auto& ref = frames[ref_row];
  const auto ref_img = render_markers(taxel_to_markers(ref, ref, tc, sensor.camera));
  write_image(out / m.reference, ref_img);

  std::optional<TranslationContext> ctx;
  if (cfg.has("pattern", "family")) {
    const auto target = sensor_from_config(cfg);
    DepthAlignment align;
    align.source_zmax = sensor.zmax;
    align.target_zmax = target.zmax;
    align.target_area = target.active_area;
    align.source_area = cfg.number_or("taxel", "area_mm", align.source_area);
    fs::create_directories(out / "translated");
    const auto tgt_ref = rasterize(target.make_pattern().markers, target.camera);
    write_image(out / "translated" / "reference.pbm", tgt_ref);
    ctx = make_translation_context(ref_img, tgt_ref, align);
  }

  SequenceRecord rec;
  rec.id = "taxel";
  rec.indenter = cfg.string_or("taxel", "indenter", "unknown");
  std::string report = "frame,matched_fraction,marker_count\n";
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string rel = "frames/" + frame_name(i);
    const auto img = render_markers(taxel_to_markers(frames[i], ref, tc, sensor.camera));
    write_image(out / rel, img);
    rec.frames.push_back(rel);
    if (ctx) {
      const std::string trel = "translated/" + frame_name(i);
      try {
        const auto res = translate(*ctx, img);
        write_image(out / trel, res.image);
        report += trel + "," + format_double(res.matched_fraction) + "," + std::to_string(res.marker_count) + "\n";
      } catch (const QualityGateError& e) {
        write_image(out / trel, e.image);
        m.flags.push_back({trel, e.what()});
        report += trel + ",nan,nan\n";
      } catch (const TrackingError& e) {
        write_image(out / trel, ctx->target_ref_image);
        m.flags.push_back({trel, e.what()});
        report += trel + "," + format_double(e.matched_fraction) + ",nan\n";
      }
    }
  }
  if (cfg.has("taxel", "forces")) {
    const auto rows = parse_forces_csv(read_file(cfg.string("taxel", "forces")));
    if (rows.size() != frames.size()) throw ValidationError("taxel: force rows do not match the log");
    for (const auto& r : rows) rec.phases.push_back(r.phase);
    rec.forces = "forces.csv";
    write_file_atomic(out / rec.forces, write_forces_csv(rows));
  }
  m.sequences.push_back(std::move(rec));
  if (ctx) write_file_atomic(out / "taxel_report.csv", report);
  write_manifest(out, m);
  log << "translate-taxel: " << frames.size() << " frames\n";
  return m;
}

int run_command(std::string_view name, const fs::path& config_path, std::uint64_t seed, const fs::path& out,
                std::ostream& log) {
  try {
    const auto cfg = Config::load(config_path);
    if (name == "generate") {
      cmd_generate(cfg, seed, out, log);
    } else if (name == "translate") {
      cmd_translate(cfg, seed, out, log);
    } else if (name == "train") {
      cmd_train(cfg, seed, out, log);
    } else if (name == "eval") {
      cmd_eval(cfg, seed, out, log);
    } else if (name == "fit-material") {
      cmd_fit_material(cfg, seed, out, log);
    } else if (name == "translate-taxel") {
      cmd_translate_taxel(cfg, seed, out, log);
    } else {
      throw ValidationError("unknown command '" + std::string(name) + "'");
    }
    return 0;
  } catch (const NumericalError& e) {
    log << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tacforge
