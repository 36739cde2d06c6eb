#include "tacforge/marker_imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "tacforge/mpm_sim.hpp"

namespace tacforge {

namespace {

constexpr double kEdgeMargin = 0.25;  // mm kept clear between markers and the face edge

struct FamilyName {
  PatternFamily family;
  std::string_view name;
};

constexpr std::array<FamilyName, 15> kFamilyNames{{
    {PatternFamily::Array1, "Array1"},
    {PatternFamily::Array2, "Array2"},
    {PatternFamily::Array3, "Array3"},
    {PatternFamily::Array4, "Array4"},
    {PatternFamily::Circle1, "Circle1"},
    {PatternFamily::Circle2, "Circle2"},
    {PatternFamily::Circle3, "Circle3"},
    {PatternFamily::Circle4, "Circle4"},
    {PatternFamily::Diamond1, "Diamond1"},
    {PatternFamily::Diamond2, "Diamond2"},
    {PatternFamily::Diamond3, "Diamond3"},
    {PatternFamily::Diamond4, "Diamond4"},
    {PatternFamily::USkinGrid, "uSkinGrid"},
    {PatternFamily::GelSightGrid, "GelSightGrid"},
    {PatternFamily::TacTipRing, "TacTipRing"},
}};

int variant(PatternFamily f) {
  const int i = static_cast<int>(f);
  return i < 12 ? i % 4 : 0;
}

enum class Layout { Square, Ring, Rotated, USkin, GelSight, TacTip };

Layout layout_of(PatternFamily f) {
  switch (f) {
    case PatternFamily::USkinGrid:
      return Layout::USkin;
    case PatternFamily::GelSightGrid:
      return Layout::GelSight;
    case PatternFamily::TacTipRing:
      return Layout::TacTip;
    default:
      break;
  }
  const int i = static_cast<int>(f);
  if (i < 4) return Layout::Square;
  if (i < 8) return Layout::Ring;
  return Layout::Rotated;
}

void check_pattern(const MarkerPattern& pat) {
  const Vec2 half = pat.active_area / 2.0;
  for (std::size_t i = 0; i < pat.markers.size(); ++i) {
    const auto& a = pat.markers[i];
    if (!(a.radius > 0.0)) throw ValidationError("pattern: marker radius must be positive");
    if (std::abs(a.center.x()) + a.radius > half.x() || std::abs(a.center.y()) + a.radius > half.y()) {
      throw ValidationError("pattern: marker leaves the active area");
    }
    for (std::size_t j = i + 1; j < pat.markers.size(); ++j) {
      const auto& b = pat.markers[j];
      if ((a.center - b.center).norm() <= a.radius + b.radius) {
        throw ValidationError("pattern: markers overlap (pitch too small for the radius)");
      }
    }
  }
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

}  // namespace

std::string_view to_string(PatternFamily family) {
  for (const auto& e : kFamilyNames) {
    if (e.family == family) return e.name;
  }
  return "unknown";
}

PatternFamily pattern_family_from_string(std::string_view name) {
  for (const auto& e : kFamilyNames) {
    if (e.name == name) return e.family;
  }
  throw ValidationError("unknown pattern family '" + std::string(name) + "'");
}

std::vector<PatternFamily> all_pattern_families() {
  std::vector<PatternFamily> out;
  for (const auto& e : kFamilyNames) out.push_back(e.family);
  return out;
}

PatternParams default_pattern_params(PatternFamily family) {
  constexpr double pitches[] = {2.0, 2.5, 3.0, 3.5};
  constexpr double radii[] = {0.4, 0.5, 0.4, 0.5};
  switch (layout_of(family)) {
    case Layout::USkin:
      return {4.0, std::sqrt(300.0 / M_PI) / 24.0};
    case Layout::GelSight:
      return {2.4, 0.45};
    case Layout::TacTip:
      return {1.5, 0.35};
    default:
      return {pitches[variant(family)], radii[variant(family)]};
  }
}

MarkerPattern make_pattern(PatternFamily family) {
  return make_pattern(family, default_pattern_params(family));
}

MarkerPattern make_pattern(PatternFamily family, const PatternParams& params) {
  const double p = params.pitch, r = params.radius;
  if (!(p > 0.0) || !(r > 0.0)) throw ValidationError("pattern: pitch and radius must be positive");
  if (p <= 2.0 * r) throw ValidationError("pattern: pitch must exceed the marker diameter");
  MarkerPattern pat;
  pat.family = family;
  const double limit = pat.active_area.x() / 2.0 - kEdgeMargin - r;
  auto add = [&](double x, double y) { pat.markers.push_back({Vec2(x, y), r}); };

  switch (layout_of(family)) {
    case Layout::Square: {
      const int n = static_cast<int>(std::floor(pat.active_area.x() / p + 1e-9));
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) add((i - (n - 1) / 2.0) * p, ((n - 1) / 2.0 - j) * p);
      }
      break;
    }
    case Layout::Rotated: {
      // Square lattice turned by 45 degrees about the face centre.
      const int n = static_cast<int>(std::ceil(pat.active_area.x() / p)) + 1;
      const double h = p / std::sqrt(2.0);
      std::vector<Vec2> pts;
      for (int j = -n; j <= n; ++j) {
        for (int i = -n; i <= n; ++i) {
          const Vec2 c((i - j) * h, (i + j) * h);
          if (std::abs(c.x()) <= limit + 1e-9 && std::abs(c.y()) <= limit + 1e-9) pts.push_back(c);
        }
      }
      std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
        return a.y() != b.y() ? a.y() > b.y() : a.x() < b.x();
      });
      for (const auto& c : pts) add(c.x(), c.y());
      break;
    }
    case Layout::Ring: {
      add(0.0, 0.0);
      for (int k = 1; k * p <= limit + 1e-9; ++k) {
        const int count = static_cast<int>(std::floor(2.0 * M_PI * k));
        for (int m = 0; m < count; ++m) {
          const double a = 2.0 * M_PI * m / count;
          add(k * p * std::cos(a), k * p * std::sin(a));
        }
      }
      break;
    }
    case Layout::USkin:
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) add((j - 1.5) * p, (1.5 - i) * p);
      }
      break;
    case Layout::GelSight:
      for (int row = 0; row < 7; ++row) {
        for (int col = 0; col < 8; ++col) add((col - 3.5) * p, (3.0 - row) * p);
      }
      break;
    case Layout::TacTip: {
      constexpr int rings = 6;
      for (int q = -rings; q <= rings; ++q) {
        for (int s = -rings; s <= rings; ++s) {
          if (std::abs(q + s) > rings) continue;
          add(p * (q + 0.5 * s), p * (std::sqrt(3.0) / 2.0) * s);
        }
      }
      break;
    }
  }
  check_pattern(pat);
  return pat;
}

MarkerPattern pattern_from_config(const Config& cfg) {
  const auto family = pattern_family_from_string(cfg.string("pattern", "family"));
  auto params = default_pattern_params(family);
  params.pitch = cfg.number_or("pattern", "pitch_mm", params.pitch);
  params.radius = cfg.number_or("pattern", "radius_mm", params.radius);
  return make_pattern(family, params);
}

void CameraMap::validate() const {
  if (!(px_per_mm > 0.0) || width <= 0 || height <= 0) {
    throw ValidationError("camera: scale and image size must be positive");
  }
  if (px_per_mm * 20.0 > std::min(width, height)) {
    throw ValidationError("camera: the 20 mm face does not fit in the image");
  }
}

Vec2 CameraMap::to_px(const Vec2& mm) const {
  return {(width - 1) / 2.0 + px_per_mm * mm.x(), (height - 1) / 2.0 - px_per_mm * mm.y()};
}

Vec2 CameraMap::to_mm(const Vec2& px) const {
  return {(px.x() - (width - 1) / 2.0) / px_per_mm, ((height - 1) / 2.0 - px.y()) / px_per_mm};
}

DisplacementSampler lattice_sampler(const SimFrame& frame) {
  return [frame](const Vec2& xy) -> std::optional<Vec3> {
    const double half = frame.face_size / 2.0 + 1e-9;
    if (frame.lattice_size < 2 || std::abs(xy.x()) > half || std::abs(xy.y()) > half) {
      return std::nullopt;
    }
    return frame.sample(xy);
  };
}

std::vector<Marker> warp_markers(const MarkerPattern& pattern, const DisplacementSampler& field,
                                 double kappa, double thickness_mm) {
  if (!(thickness_mm > 0.0)) throw ValidationError("warp: thickness must be positive");
  std::vector<Marker> out;
  out.reserve(pattern.markers.size());
  for (const auto& m : pattern.markers) {
    const auto u = field(m.center);
    if (!u || !u->allFinite()) throw ValidationError("warp: displacement field undefined at a marker");
    Marker w;
    w.center = m.center + u->head<2>();
    w.radius = kappa == 0.0 ? m.radius
                            : m.radius * std::max(0.2, 1.0 + kappa * u->z() / thickness_mm);
    out.push_back(w);
  }
  return out;
}

BinaryImage::BinaryImage(int width, int height)
    : width_(width), height_(height), stride_((width + 7) / 8) {
  if (width <= 0 || height <= 0) throw ValidationError("image: dimensions must be positive");
  bits_.assign(static_cast<std::size_t>(stride_) * height_, 0);
}

void BinaryImage::set(int x, int y, bool on) {
  auto& byte = bits_[static_cast<std::size_t>(y) * stride_ + (x >> 3)];
  const std::uint8_t mask = static_cast<std::uint8_t>(0x80u >> (x & 7));
  byte = on ? (byte | mask) : (byte & ~mask);
}

std::size_t BinaryImage::count() const {
  std::size_t n = 0;
  for (auto b : bits_) n += static_cast<std::size_t>(__builtin_popcount(b));
  return n;
}

BinaryImage rasterize_disks(const std::vector<PixelDisk>& disks, int width, int height) {
  BinaryImage img(width, height);
  constexpr std::int64_t kQ = 256;
  for (const auto& d : disks) {
    if (!d.center.allFinite() || !std::isfinite(d.radius) || d.radius <= 0.0) continue;
    if (std::abs(d.center.x()) > 1e7 || std::abs(d.center.y()) > 1e7 || d.radius > 1e7) continue;
    const std::int64_t cx = std::llround(d.center.x() * kQ);
    const std::int64_t cy = std::llround(d.center.y() * kQ);
    const std::int64_t r = std::llround(d.radius * kQ);
    const std::int64_t r2 = r * r;
    const std::int64_t y0 = std::max<std::int64_t>(0, ceil_div(cy - r, kQ));
    const std::int64_t y1 = std::min<std::int64_t>(height - 1, floor_div(cy + r, kQ));
    const std::int64_t x0 = std::max<std::int64_t>(0, ceil_div(cx - r, kQ));
    const std::int64_t x1 = std::min<std::int64_t>(width - 1, floor_div(cx + r, kQ));
    for (std::int64_t y = y0; y <= y1; ++y) {
      const std::int64_t dy = y * kQ - cy;
      for (std::int64_t x = x0; x <= x1; ++x) {
        const std::int64_t dx = x * kQ - cx;
        if (dx * dx + dy * dy <= r2) img.set(static_cast<int>(x), static_cast<int>(y), true);
      }
    }
  }
  return img;
}

BinaryImage rasterize(const std::vector<Marker>& markers, const CameraMap& cam) {
  std::vector<PixelDisk> disks;
  disks.reserve(markers.size());
  for (const auto& m : markers) disks.push_back({cam.to_px(m.center), m.radius * cam.px_per_mm});
  return rasterize_disks(disks, cam.width, cam.height);
}

std::string encode_pbm(const BinaryImage& img) {
  std::string out = "P4\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n";
  out.append(reinterpret_cast<const char*>(img.bytes().data()), img.bytes().size());
  return out;
}

BinaryImage decode_pbm(std::string_view bytes, int width, int height) {
  std::size_t pos = 0;
  auto fail = [](const std::string& why) { return ValidationError("pbm: " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    long v = 0;
    std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1000000) throw fail("header value too large");
      ++pos;
    }
    if (pos == start) throw fail("malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '4' && bytes[1] != '5')) {
    throw fail("expected P4 or P5 magic");
  }
  const bool gray = bytes[1] == '5';
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  long maxval = 1;
  if (gray) {
    maxval = read_int();
    if (maxval < 1 || maxval > 255) throw fail("only 8-bit P5 is supported");
  }
  if (w != width || h != height) {
    throw fail("expected " + std::to_string(width) + "x" + std::to_string(height) + ", got " +
               std::to_string(w) + "x" + std::to_string(h));
  }
  if (pos >= bytes.size()) throw fail("truncated header");
  ++pos;  // single whitespace byte before the raster
  BinaryImage img(width, height);
  if (gray) {
    const std::size_t need = static_cast<std::size_t>(w) * h;
    if (bytes.size() - pos != need) throw fail("raster size mismatch");
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        const auto v = static_cast<unsigned char>(bytes[pos + y * w + x]);
        if (v < 128) img.set(static_cast<int>(x), static_cast<int>(y), true);
      }
    }
  } else {
    const std::size_t need = img.bytes().size();
    if (bytes.size() - pos != need) throw fail("raster size mismatch");
    std::copy(bytes.begin() + pos, bytes.end(), img.bytes().begin());
    const int pad = img.stride() * 8 - width;
    if (pad > 0) {
      const std::uint8_t keep = static_cast<std::uint8_t>(0xFFu << pad);
      for (int y = 0; y < height; ++y) img.bytes()[static_cast<std::size_t>(y) * img.stride() + img.stride() - 1] &= keep;
    }
  }
  return img;
}

}  // namespace tacforge
