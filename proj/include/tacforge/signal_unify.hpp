#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "tacforge/common.hpp"
#include "tacforge/marker_imaging.hpp"

namespace tacforge {

/// One uSkin sample: 4x4 taxels, row-major (row i, column j).
struct TaxelFrame {
  std::array<Vec3, 16> readings{};
  double timestamp = 0.0;  // s
};

struct TaxelConfig {
  double scale_x = 2e-4;  // grid units per raw unit
  double scale_y = 2e-4;
  double scale_size = 0.2;  // px^2 per raw unit
  double max_dx = 0.6;      // grid units
  double max_dy = 0.6;
  double grid_min = -0.6;
  double grid_max = 3.6;
  double min_area = 300.0;   // px^2
  double max_area = 6000.0;  // px^2
  double grid_pitch_mm = 4.0;  // spacing of taxel columns on the face

  void validate() const;
};

struct DetectedMarker {
  Vec2 centroid = Vec2::Zero();  // px
  double radius = 0.0;           // px, sqrt(area / pi)
  double area = 0.0;             // px^2
};

struct MarkerSet {
  std::vector<DetectedMarker> markers;
  int width = 640;
  int height = 480;
};

MarkerSet taxel_to_markers(const TaxelFrame& frame, const TaxelFrame& reference,
                           const TaxelConfig& cfg, const CameraMap& cam);
/// Filled disks of the markers' areas.
BinaryImage render_markers(const MarkerSet& set);

/// Log columns: timestamp_s, t00x, t00y, t00z, ..., t33z.
std::vector<TaxelFrame> parse_taxel_csv(std::string_view text);
std::string taxel_csv_header();

inline constexpr int kMinComponentArea = 4;

/**
 * @brief Connected components of the foreground, with touching markers
 * separated by a distance-transform watershed.
 *
 * A component is split when it is much larger than the median component or
 * much larger than the disk inscribed at its distance-transform peak.
 */
MarkerSet segment_markers(const BinaryImage& img);

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel centre (outside the image counts as background).
std::vector<double> distance_transform(const std::vector<std::uint8_t>& mask, int width,
                                       int height);

struct TrackPair {
  int ref_index = 0;
  int cur_index = 0;
  Vec2 displacement = Vec2::Zero();  // px, cur - ref
  double radius_ratio = 1.0;
  Vec2 ref_position = Vec2::Zero();  // px
};

struct TrackedMarkers {
  std::vector<TrackPair> pairs;  // ordered by ref_index
  std::vector<int> unmatched_ref, unmatched_cur;
  std::size_t ref_count = 0;

  double matched_fraction() const {
    return ref_count == 0 ? 0.0 : static_cast<double>(pairs.size()) / ref_count;
  }
};

inline constexpr double kDefaultTrackDistance = 15.0;  // px

/// Greedy one-to-one matching by ascending centroid distance.
TrackedMarkers track_markers(const MarkerSet& ref, const MarkerSet& cur,
                             double max_track_dist = kDefaultTrackDistance);

/// Smallest centroid distance between two markers of the set (inf if < 2).
double min_marker_spacing(const MarkerSet& set);
/// Tracking radius that cannot swap neighbours: 0.45 of the closest spacing.
double safe_track_distance(const MarkerSet& ref);

bool marker_count_check(const MarkerSet& set, std::size_t min_count);

}  // namespace tacforge
