#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tacforge/common.hpp"
#include "tacforge/config.hpp"

namespace tacforge {

struct SimFrame;

enum class PatternFamily {
  Array1,
  Array2,
  Array3,
  Array4,
  Circle1,
  Circle2,
  Circle3,
  Circle4,
  Diamond1,
  Diamond2,
  Diamond3,
  Diamond4,
  USkinGrid,
  GelSightGrid,
  TacTipRing,
};

std::string_view to_string(PatternFamily family);
PatternFamily pattern_family_from_string(std::string_view name);
/// The twelve reference families followed by the three sensor grids.
std::vector<PatternFamily> all_pattern_families();

struct Marker {
  Vec2 center = Vec2::Zero();  // mm, sensor plane
  double radius = 0.0;         // mm
};

struct MarkerPattern {
  PatternFamily family = PatternFamily::Array1;
  std::vector<Marker> markers;
  Vec2 active_area{20.0, 20.0};  // mm
};

/// Pitch and marker radius. For Circle families the pitch is the ring spacing.
struct PatternParams {
  double pitch = 2.0;   // mm
  double radius = 0.4;  // mm
};

PatternParams default_pattern_params(PatternFamily family);

MarkerPattern make_pattern(PatternFamily family);
/// Throws ValidationError if the markers overlap or leave the active area.
MarkerPattern make_pattern(PatternFamily family, const PatternParams& params);
/// Reads [pattern] family, pitch_mm, radius_mm (the last two optional).
MarkerPattern pattern_from_config(const Config& cfg);

/// Orthographic camera looking at the marker face.
struct CameraMap {
  double px_per_mm = 24.0;
  int width = 640;
  int height = 480;

  void validate() const;
  /// Image x grows with sensor x, image y grows with -y. Pixel centres sit
  /// on integer coordinates.
  Vec2 to_px(const Vec2& mm) const;
  Vec2 to_mm(const Vec2& px) const;
};

/// Lateral and normal displacement (mm) at a face point; empty where undefined.
using DisplacementSampler = std::function<std::optional<Vec3>(const Vec2&)>;

DisplacementSampler lattice_sampler(const SimFrame& frame);

/// Moves every marker by the field's lateral component; radius is scaled by
/// max(0.2, 1 + kappa * u_z / thickness).
std::vector<Marker> warp_markers(const MarkerPattern& pattern, const DisplacementSampler& field,
                                 double kappa = 0.0, double thickness_mm = 4.0);

/// Disk in pixel units.
struct PixelDisk {
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
};

/// Packed 1-bit image, MSB first, rows padded to whole bytes. 1 = marker.
class BinaryImage {
 public:
  BinaryImage() : BinaryImage(640, 480) {}
  BinaryImage(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  int stride() const { return stride_; }
  bool get(int x, int y) const {
    return (bits_[static_cast<std::size_t>(y) * stride_ + (x >> 3)] >> (7 - (x & 7))) & 1;
  }
  void set(int x, int y, bool on);
  std::size_t count() const;
  const std::vector<std::uint8_t>& bytes() const { return bits_; }
  std::vector<std::uint8_t>& bytes() { return bits_; }

  bool operator==(const BinaryImage& other) const {
    return width_ == other.width_ && height_ == other.height_ && bits_ == other.bits_;
  }
  bool operator!=(const BinaryImage& other) const { return !(*this == other); }

 private:
  int width_, height_, stride_;
  std::vector<std::uint8_t> bits_;
};

/// A pixel is foreground iff its centre lies inside some disk. The test runs
/// in 1/256 px fixed point so the result is identical on every platform.
BinaryImage rasterize_disks(const std::vector<PixelDisk>& disks, int width = 640,
                            int height = 480);
BinaryImage rasterize(const std::vector<Marker>& markers, const CameraMap& cam);

/// "P4\n<w> <h>\n" followed by packed rows.
std::string encode_pbm(const BinaryImage& img);
/// Accepts P4 and P5 (gray < 128 is foreground). Dimensions must match.
BinaryImage decode_pbm(std::string_view bytes, int width = 640, int height = 480);

}  // namespace tacforge
