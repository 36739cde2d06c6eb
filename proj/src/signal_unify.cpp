#include "tacforge/signal_unify.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

namespace tacforge {

namespace {

constexpr double kSplitAreaRatio = 2.5;
constexpr double kSplitShapeRatio = 1.2;
constexpr double kMinPeakDynamics = 1.0;  // px

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas).
void dt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

DetectedMarker summarize(const std::vector<int>& pixels, int width) {
  double sx = 0.0, sy = 0.0;
  for (int idx : pixels) {
    sx += idx % width;
    sy += idx / width;
  }
  DetectedMarker m;
  m.area = static_cast<double>(pixels.size());
  m.centroid = Vec2(sx / m.area, sy / m.area);
  m.radius = std::sqrt(m.area / M_PI);
  return m;
}

// Splits a component into basins of its distance transform; basins whose peak
// rises less than kMinPeakDynamics above the saddle are merged.
std::vector<std::vector<int>> watershed(const std::vector<int>& pixels, const std::vector<double>& dt,
                                        int width) {
  const int n = static_cast<int>(pixels.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return dt[a] != dt[b] ? dt[a] > dt[b] : pixels[a] < pixels[b];
  });
  // Local index lookup for neighbours.
  std::vector<std::pair<int, int>> sorted_pixels(n);
  for (int i = 0; i < n; ++i) sorted_pixels[i] = {pixels[i], i};
  std::sort(sorted_pixels.begin(), sorted_pixels.end());
  auto local_of = [&](int idx) -> int {
    auto it = std::lower_bound(sorted_pixels.begin(), sorted_pixels.end(), std::make_pair(idx, -1));
    return (it != sorted_pixels.end() && it->first == idx) ? it->second : -1;
  };

  std::vector<int> parent(n, -1), owner(n, -1);
  std::vector<double> peak(n, 0.0);
  std::vector<char> done(n, 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };

  for (int li : order) {
    const int idx = pixels[li];
    const int x = idx % width;
    const int nbr[4] = {x > 0 ? idx - 1 : -1, idx + 1, idx - width, idx + width};
    std::vector<int> roots;
    for (int k = 0; k < 4; ++k) {
      if (nbr[k] < 0 || (k == 1 && x + 1 >= width)) continue;
      const int lj = local_of(nbr[k]);
      if (lj < 0 || !done[lj]) continue;
      const int r = find(owner[lj]);
      if (std::find(roots.begin(), roots.end(), r) == roots.end()) roots.push_back(r);
    }
    done[li] = 1;
    if (roots.empty()) {
      parent[li] = li;
      peak[li] = dt[li];
      owner[li] = li;
      continue;
    }
    std::sort(roots.begin(), roots.end(), [&](int a, int b) {
      return peak[a] != peak[b] ? peak[a] > peak[b] : a < b;
    });
    const int main = roots[0];
    for (std::size_t k = 1; k < roots.size(); ++k) {
      if (peak[roots[k]] - dt[li] < kMinPeakDynamics) parent[roots[k]] = main;
    }
    owner[li] = main;
  }

  std::vector<int> root_ids;
  std::vector<std::vector<int>> basins;
  for (int li = 0; li < n; ++li) {
    const int r = find(owner[li]);
    auto it = std::find(root_ids.begin(), root_ids.end(), r);
    std::size_t b;
    if (it == root_ids.end()) {
      root_ids.push_back(r);
      basins.emplace_back();
      b = basins.size() - 1;
    } else {
      b = static_cast<std::size_t>(it - root_ids.begin());
    }
    basins[b].push_back(pixels[li]);
  }
  return basins;
}

double parse_number(std::string_view s, std::size_t row) {
  s = trim(s);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ValidationError("taxel csv row " + std::to_string(row) + ": bad number '" +
                          std::string(s) + "'");
  }
  return v;
}

}  // namespace

void TaxelConfig::validate() const {
  if (!(min_area > 0.0) || !(min_area < max_area)) {
    throw ValidationError("taxel config: need 0 < min_area < max_area");
  }
  if (!(max_dx > 0.0) || !(max_dy > 0.0)) throw ValidationError("taxel config: bad lateral limits");
  if (!(grid_min < grid_max)) throw ValidationError("taxel config: bad grid range");
  if (!(grid_pitch_mm > 0.0)) throw ValidationError("taxel config: pitch must be positive");
}

MarkerSet taxel_to_markers(const TaxelFrame& frame, const TaxelFrame& reference,
                           const TaxelConfig& cfg, const CameraMap& cam) {
  cfg.validate();
  MarkerSet set;
  set.width = cam.width;
  set.height = cam.height;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const Vec3 s = frame.readings[i * 4 + j] - reference.readings[i * 4 + j];
      const double ox = std::clamp(cfg.scale_x * s.x(), -cfg.max_dx, cfg.max_dx);
      const double oy = std::clamp(cfg.scale_y * s.y(), -cfg.max_dy, cfg.max_dy);
      const double gx = std::clamp(j + ox, cfg.grid_min, cfg.grid_max);
      const double gy = std::clamp(i + oy, cfg.grid_min, cfg.grid_max);
      DetectedMarker m;
      m.area = std::clamp(cfg.min_area + cfg.scale_size * s.z(), cfg.min_area, cfg.max_area);
      m.radius = std::sqrt(m.area / M_PI);
      m.centroid = cam.to_px(Vec2((gx - 1.5) * cfg.grid_pitch_mm, (1.5 - gy) * cfg.grid_pitch_mm));
      set.markers.push_back(m);
    }
  }
  return set;
}

BinaryImage render_markers(const MarkerSet& set) {
  std::vector<PixelDisk> disks;
  for (const auto& m : set.markers) disks.push_back({m.centroid, m.radius});
  return rasterize_disks(disks, set.width, set.height);
}

std::string taxel_csv_header() {
  std::string h = "timestamp_s";
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (char axis : {'x', 'y', 'z'}) {
        h += ",t" + std::to_string(i) + std::to_string(j) + axis;
      }
    }
  }
  return h;
}

std::vector<TaxelFrame> parse_taxel_csv(std::string_view text) {
  std::vector<TaxelFrame> frames;
  std::size_t row = 0;
  for (const auto& raw : split(text, '\n')) {
    ++row;
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (row == 1 && trim(cells[0]) == "timestamp_s") {
      if (cells.size() != 49) throw ValidationError("taxel csv: header needs 49 columns");
      continue;
    }
    if (cells.size() != 49) {
      throw ValidationError("taxel csv row " + std::to_string(row) + ": expected 49 columns, got " +
                            std::to_string(cells.size()));
    }
    TaxelFrame f;
    f.timestamp = parse_number(cells[0], row);
    for (int t = 0; t < 16; ++t) {
      for (int a = 0; a < 3; ++a) f.readings[t][a] = parse_number(cells[1 + 3 * t + a], row);
    }
    frames.push_back(f);
  }
  if (frames.empty()) throw ValidationError("taxel csv: no frames");
  return frames;
}

std::vector<double> distance_transform(const std::vector<std::uint8_t>& mask, int width,
                                       int height) {
  // Pad by one background pixel on every side.
  const int w = width + 2, h = height + 2;
  // Larger than any squared distance in the padded box, and exact in double.
  const double inf = 4.0 * (double(w) + h) * (double(w) + h);
  std::vector<double> g(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (mask[static_cast<std::size_t>(y) * width + x]) g[(y + 1) * w + x + 1] = inf;
    }
  }
  std::vector<int> v;
  std::vector<double> z, f(std::max(w, h)), d(std::max(w, h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = g[y * w + x];
    dt_1d(f.data(), d.data(), h, v, z);
    for (int y = 0; y < h; ++y) g[y * w + x] = d[y];
  }
  for (int y = 0; y < h; ++y) {
    dt_1d(&g[y * w], d.data(), w, v, z);
    std::copy(d.begin(), d.begin() + w, g.begin() + y * w);
  }
  std::vector<double> out(static_cast<std::size_t>(width) * height, 0.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out[static_cast<std::size_t>(y) * width + x] = std::sqrt(g[(y + 1) * w + x + 1]);
  }
  return out;
}

MarkerSet segment_markers(const BinaryImage& img) {
  const int W = img.width(), H = img.height();
  MarkerSet set;
  set.width = W;
  set.height = H;

  // Rough stage: 4-connected components in scan order.
  std::vector<int> label(static_cast<std::size_t>(W) * H, -1);
  std::vector<std::vector<int>> comps;
  std::vector<int> queue;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int idx = y * W + x;
      if (!img.get(x, y) || label[idx] >= 0) continue;
      const int id = static_cast<int>(comps.size());
      comps.emplace_back();
      queue.assign(1, idx);
      label[idx] = id;
      for (std::size_t q = 0; q < queue.size(); ++q) {
        const int p = queue[q];
        comps[id].push_back(p);
        const int px = p % W, py = p / W;
        const int nx[4] = {px - 1, px + 1, px, px};
        const int ny[4] = {py, py, py - 1, py + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= W || ny[k] >= H) continue;
          const int n = ny[k] * W + nx[k];
          if (label[n] < 0 && img.get(nx[k], ny[k])) {
            label[n] = id;
            queue.push_back(n);
          }
        }
      }
    }
  }
  std::vector<std::vector<int>> kept;
  for (auto& c : comps) {
    if (static_cast<int>(c.size()) >= kMinComponentArea) {
      std::sort(c.begin(), c.end());
      kept.push_back(std::move(c));
    }
  }
  if (kept.empty()) return set;

  std::vector<double> areas;
  for (const auto& c : kept) areas.push_back(static_cast<double>(c.size()));
  std::sort(areas.begin(), areas.end());
  const std::size_t m = areas.size();
  const double median = m % 2 ? areas[m / 2] : 0.5 * (areas[m / 2 - 1] + areas[m / 2]);

  // Fine stage.
  for (const auto& c : kept) {
    int x0 = W, y0 = H, x1 = -1, y1 = -1;
    for (int idx : c) {
      x0 = std::min(x0, idx % W);
      x1 = std::max(x1, idx % W);
      y0 = std::min(y0, idx / W);
      y1 = std::max(y1, idx / W);
    }
    const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(bw) * bh, 0);
    for (int idx : c) mask[(idx / W - y0) * bw + (idx % W - x0)] = 1;
    const auto dt_box = distance_transform(mask, bw, bh);
    std::vector<double> dt(c.size());
    double max_dt = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      dt[i] = dt_box[(c[i] / W - y0) * bw + (c[i] % W - x0)];
      max_dt = std::max(max_dt, dt[i]);
    }
    const double area = static_cast<double>(c.size());
    const bool oversized = area > kSplitAreaRatio * median;
    const bool elongated = area > kSplitShapeRatio * M_PI * (max_dt + 0.5) * (max_dt + 0.5);
    if (oversized || elongated) {
      const auto basins = watershed(c, dt, W);
      if (basins.size() > 1) {
        for (const auto& b : basins) {
          if (static_cast<int>(b.size()) >= kMinComponentArea) set.markers.push_back(summarize(b, W));
        }
        continue;
      }
    }
    set.markers.push_back(summarize(c, W));
  }
  return set;
}

TrackedMarkers track_markers(const MarkerSet& ref, const MarkerSet& cur, double max_track_dist) {
  struct Candidate {
    double d;
    int i, j;
  };
  std::vector<Candidate> cands;
  for (int i = 0; i < static_cast<int>(ref.markers.size()); ++i) {
    for (int j = 0; j < static_cast<int>(cur.markers.size()); ++j) {
      const double d = (cur.markers[j].centroid - ref.markers[i].centroid).norm();
      if (d <= max_track_dist) cands.push_back({d, i, j});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.d != b.d) return a.d < b.d;
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });
  std::vector<char> ref_used(ref.markers.size(), 0), cur_used(cur.markers.size(), 0);
  TrackedMarkers out;
  out.ref_count = ref.markers.size();
  for (const auto& c : cands) {
    if (ref_used[c.i] || cur_used[c.j]) continue;
    ref_used[c.i] = cur_used[c.j] = 1;
    TrackPair p;
    p.ref_index = c.i;
    p.cur_index = c.j;
    p.ref_position = ref.markers[c.i].centroid;
    p.displacement = cur.markers[c.j].centroid - ref.markers[c.i].centroid;
    p.radius_ratio = cur.markers[c.j].radius / ref.markers[c.i].radius;
    out.pairs.push_back(p);
  }
  std::sort(out.pairs.begin(), out.pairs.end(),
            [](const TrackPair& a, const TrackPair& b) { return a.ref_index < b.ref_index; });
  for (int i = 0; i < static_cast<int>(ref_used.size()); ++i) {
    if (!ref_used[i]) out.unmatched_ref.push_back(i);
  }
  for (int j = 0; j < static_cast<int>(cur_used.size()); ++j) {
    if (!cur_used[j]) out.unmatched_cur.push_back(j);
  }
  return out;
}

double min_marker_spacing(const MarkerSet& set) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.markers.size(); ++i) {
    for (std::size_t j = i + 1; j < set.markers.size(); ++j) {
      best = std::min(best, (set.markers[i].centroid - set.markers[j].centroid).norm());
    }
  }
  return best;
}

double safe_track_distance(const MarkerSet& ref) {
  const double s = min_marker_spacing(ref);
  return std::isfinite(s) ? 0.45 * s : kDefaultTrackDistance;
}

bool marker_count_check(const MarkerSet& set, std::size_t min_count) {
  return set.markers.size() >= min_count;
}

}  // namespace tacforge
