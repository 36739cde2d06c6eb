#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "tacforge/common.hpp"
#include "tacforge/scenario.hpp"
#include "tacforge/signal_unify.hpp"

namespace tacforge {

inline constexpr int kFeatureCount = 12;
using FeatureVector = std::array<double, kFeatureCount>;

/// Feature slots, in order.
enum Feature : int {
  kMeanDx,
  kMeanDy,
  kMeanMag,
  kMaxMag,
  kStdDx,
  kStdDy,
  kContactFraction,
  kDivergence,
  kMeanLogRadius,
  kDeltaMeanMag,
  kDeltaContact,
  kMatchedFraction,
};

/// prev == nullptr zeroes the two delta features.
FeatureVector extract_features(const TrackedMarkers& tracked, const FeatureVector* prev = nullptr);

/// Tracks every frame against the reference and chains the delta features.
std::vector<FeatureVector> sequence_features(const MarkerSet& ref, const std::vector<MarkerSet>& frames,
                                             double max_track_dist);

/**
 * @brief Gated recurrent cell (hidden size H) with a sigmoid output head.
 *
 * Inputs are standardised with a fixed shift/scale before the cell; outputs
 * are mapped from (0, 1) to the per-axis force bounds.
 */
struct ForceModel {
  int hidden = 16;
  Eigen::VectorXd params;  // Wz Wr Wn Uz Ur Un bz br bn Wo bo
  FeatureVector input_shift{};
  FeatureVector input_scale{};
  Vec3 lower = Vec3::Zero();  // N
  Vec3 upper = Vec3::Ones();  // N

  static std::size_t param_count(int hidden);
  static ForceModel zeros(int hidden = 16);
  static ForceModel random(Rng& rng, int hidden = 16);
};

std::vector<Vec3> model_forward(const ForceModel& model, const std::vector<FeatureVector>& seq);

struct SequenceSample {
  std::vector<FeatureVector> frames;
  std::vector<Vec3> forces;  // N
  std::vector<double> depths;  // mm
  std::vector<Phase> phases;
  std::string sensor_id;

  void validate() const;
};

struct GradientResult {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// Mean L1 loss on bound-normalised forces over all frames and axes, with
/// gradients by backpropagation through time.
GradientResult model_gradients(const ForceModel& model, const std::vector<SequenceSample>& batch);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 4;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double decay_at = 0.6;  // fraction of epochs after which lr drops by 10x
  double validation_fraction = 0.1;
  int hidden = 16;
  /// Every frame becomes its own sequence with its delta features zeroed.
  bool single_frame = false;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ForceModel model;
  std::vector<double> epoch_loss;      // mean training loss per epoch
  std::vector<double> validation_mae;  // N, per epoch
  int best_epoch = 0;
};

TrainResult train(const std::vector<SequenceSample>& data, const TrainConfig& cfg);

/// Splits every sequence into length-1 samples with the delta features zeroed.
std::vector<SequenceSample> single_frame_samples(const std::vector<SequenceSample>& data);

struct EvalReport {
  Vec3 mae = Vec3::Zero();  // N
  double total_mae = 0.0;   // N, on force magnitudes
  std::array<std::optional<double>, 3> r2{};
  std::size_t count = 0;
};

EvalReport evaluate(const ForceModel& model, const std::vector<SequenceSample>& data);
EvalReport evaluate_predictions(const std::vector<Vec3>& predicted, const std::vector<Vec3>& truth);
/// Report CSV with rows Fx, Fy, Fz, Ftotal.
std::string eval_report_csv(const EvalReport& report);

// Model file: "TFM1", u32 H, f64 parameter blocks, input shift and scale,
// then lower and upper bounds.
std::string encode_model(const ForceModel& model);
ForceModel decode_model(std::string_view bytes);

struct Quadratic {
  double c2 = 0.0, c1 = 0.0, c0 = 0.0;
  double operator()(double d) const { return (c2 * d + c1) * d + c0; }
};

struct MaterialPrior {
  std::string material_id;
  Quadratic loading, unloading;
  double d_max = 0.0;  // mm
  double rms_loading = 0.0, rms_unloading = 0.0;  // N

  const Quadratic& curve(Phase phase) const;
};

struct ForceDepthSample {
  double depth = 0.0;  // mm
  double fz = 0.0;     // N
  Phase phase = Phase::Rest;
};

/// Degree-2 least squares per side of the loop. Normal loading samples fit
/// the loading curve and normal unloading samples the unloading curve; rest
/// samples feed both and shear samples are ignored.
MaterialPrior fit_material_prior(const std::vector<ForceDepthSample>& samples,
                                 const std::string& material_id);
/// True when loading stays above unloading - eps on [0, d_max].
bool hysteresis_ordered(const MaterialPrior& prior, double eps);

struct CompensationOptions {
  double floor = 0.05;  // N
  double min_ratio = 0.1;
  double max_ratio = 10.0;
  bool normal_only = false;
};

double compensation_ratio(double depth, Phase phase, const MaterialPrior& source,
                          const MaterialPrior& target, const CompensationOptions& opt = {});
std::vector<Vec3> compensate_labels(const std::vector<Vec3>& labels, const std::vector<double>& depths,
                                    const std::vector<Phase>& phases, const MaterialPrior& source,
                                    const MaterialPrior& target, const CompensationOptions& opt = {});

/// Rows: material_id,phase,c2,c1,c0,d_max_mm,rms. Header included.
std::string priors_csv(const std::vector<MaterialPrior>& priors);
std::vector<MaterialPrior> parse_priors_csv(std::string_view text);
/// Reads depth_mm, fz_N, phase columns (any order, header required).
std::vector<ForceDepthSample> parse_force_depth_csv(std::string_view text);

}  // namespace tacforge
