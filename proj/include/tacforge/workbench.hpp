#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tacforge/common.hpp"
#include "tacforge/config.hpp"
#include "tacforge/force_transfer.hpp"
#include "tacforge/m2m.hpp"
#include "tacforge/marker_imaging.hpp"
#include "tacforge/mpm_sim.hpp"
#include "tacforge/scenario.hpp"

namespace tacforge {

namespace fs = std::filesystem;

/// What a dataset was imaged with.
struct SensorDescriptor {
  PatternFamily family = PatternFamily::Array2;
  PatternParams pattern = default_pattern_params(PatternFamily::Array2);
  std::string material_id = "base";
  double zmax = 1.2;          // mm
  double active_area = 20.0;  // mm, side of the face
  double kappa = 0.0;         // marker growth per unit normal strain
  double thickness = 4.0;     // mm
  CameraMap camera;

  void validate() const;
  MarkerPattern make_pattern() const;
};

/// Reads [pattern] family/pitch_mm/radius_mm and [sensor] keys.
SensorDescriptor sensor_from_config(const Config& cfg, std::optional<PatternFamily> family = {});
MaterialParams material_from_config(const Config& cfg);
MpmConfig mpm_from_config(const Config& cfg, std::uint64_t seed);

struct SequenceRecord {
  std::string id;
  std::string indenter;
  bool seen = true;
  Vec2 contact_point = Vec2::Zero();  // mm
  double direction = 0.0;             // rad
  int depth_level = 1;
  double depth = 0.0;  // mm, deepest press
  std::vector<std::string> frames;  // relative to the manifest directory
  std::string forces;               // relative forces CSV path
  std::vector<Phase> phases;
};

struct FrameFlag {
  std::string frame;
  std::string reason;
};

struct DatasetManifest {
  std::string dataset_id;
  SensorDescriptor sensor;
  std::string reference;  // relative path of the undeformed image
  std::vector<SequenceRecord> sequences;
  std::string config_text;  // canonical form of the producing config
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string source_dataset;  // set on translated datasets
  bool complete = true;
  std::vector<FrameFlag> flags;  // frames that failed a quality gate
  std::vector<std::string> failures;
};

/// Sorted-key JSON, two-space indent, trailing newline.
std::string manifest_json(const DatasetManifest& m);
DatasetManifest parse_manifest(std::string_view json);
/// Parses and validates: complete, hash matches, files exist, and frame count
/// equals force-row count for every sequence.
DatasetManifest load_manifest(const fs::path& path);
void validate_manifest(const DatasetManifest& m, const fs::path& dir);

/// Stable text form of a config: tables and keys sorted.
std::string canonical_config(const Config& cfg);

struct ForceRow {
  int frame = 0;
  double time = 0.0;   // s
  Phase phase = Phase::Rest;
  double depth = 0.0;  // mm
  Vec3 force = Vec3::Zero();  // N
};

std::vector<ForceRow> parse_forces_csv(std::string_view text);
std::string write_forces_csv(const std::vector<ForceRow>& rows);

/// Index of the frame in `candidates` that pairs with (z_hat, phase, s), where
/// s in [0, 1] is the frame's position within its phase; -1 if none within tol.
struct PairKey {
  double z_hat = 0.0;
  Phase phase = Phase::Rest;
  double ordinal = 0.0;
};
std::vector<PairKey> pair_keys(const std::vector<ForceRow>& rows, double zmax);
int pair_frame(const PairKey& key, const std::vector<PairKey>& candidates, double z_tol = 0.05);

/// Feature sequences and labels for every sequence of a manifest.
struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<SequenceSample> samples;
};

enum class IndenterSubset { All, Seen, Unseen };
IndenterSubset indenter_subset_from_string(std::string_view s);

LoadedDataset load_dataset(const fs::path& manifest_path, IndenterSubset subset = IndenterSubset::All);

// Commands. Each reads its tables from cfg, writes into out and returns the
// manifests it produced (if any). Logs go to `log`.
std::vector<DatasetManifest> cmd_generate(const Config& cfg, std::uint64_t seed, const fs::path& out,
                                          std::ostream& log);
DatasetManifest cmd_translate(const Config& cfg, std::uint64_t seed, const fs::path& out, std::ostream& log);
TrainResult cmd_train(const Config& cfg, std::uint64_t seed, const fs::path& out, std::ostream& log);
EvalReport cmd_eval(const Config& cfg, std::uint64_t seed, const fs::path& out, std::ostream& log);
std::vector<MaterialPrior> cmd_fit_material(const Config& cfg, std::uint64_t seed, const fs::path& out,
                                            std::ostream& log);
DatasetManifest cmd_translate_taxel(const Config& cfg, std::uint64_t seed, const fs::path& out,
                                    std::ostream& log);

/// Dispatches by name and maps errors to exit codes: 0 ok, 1 validation,
/// 2 numerical.
int run_command(std::string_view name, const fs::path& config_path, std::uint64_t seed, const fs::path& out,
                std::ostream& log);

}  // namespace tacforge
