#include "tacforge/force_transfer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/Dense>

namespace tacforge {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

constexpr int D = kFeatureCount;

struct Layout {
  int H;
  std::size_t wz, wr, wn, uz, ur, un, bz, br, bn, wo, bo, total;

  explicit Layout(int h) : H(h) {
    const std::size_t hd = static_cast<std::size_t>(h) * D, hh = static_cast<std::size_t>(h) * h;
    wz = 0;
    wr = wz + hd;
    wn = wr + hd;
    uz = wn + hd;
    ur = uz + hh;
    un = ur + hh;
    bz = un + hh;
    br = bz + h;
    bn = br + h;
    wo = bn + h;
    bo = wo + 3 * static_cast<std::size_t>(h);
    total = bo + 3;
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct StepCache {
  Eigen::VectorXd x, h_prev, z, r, n, h;
  Eigen::Vector3d y;
};

// Runs the cell over `seq`, filling `cache` with everything backprop needs.
void forward(const ForceModel& m, const std::vector<FeatureVector>& seq, std::vector<StepCache>& cache) {
  const Layout L(m.hidden);
  const int H = m.hidden;
  const double* p = m.params.data();
  ConstMap Wz(p + L.wz, H, D), Wr(p + L.wr, H, D), Wn(p + L.wn, H, D);
  ConstMap Uz(p + L.uz, H, H), Ur(p + L.ur, H, H), Un(p + L.un, H, H);
  Eigen::Map<const Eigen::VectorXd> bz(p + L.bz, H), br(p + L.br, H), bn(p + L.bn, H);
  ConstMap Wo(p + L.wo, 3, H);
  Eigen::Map<const Eigen::Vector3d> bo(p + L.bo);

  cache.resize(seq.size());
  Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    auto& c = cache[t];
    c.x.resize(D);
    for (int i = 0; i < D; ++i) {
      if (!std::isfinite(seq[t][i])) throw ValidationError("model: non-finite feature");
      c.x(i) = (seq[t][i] - m.input_shift[i]) * m.input_scale[i];
    }
    c.h_prev = h;
    c.z = (Wz * c.x + Uz * h + bz).unaryExpr([](double v) { return sigmoid(v); });
    c.r = (Wr * c.x + Ur * h + br).unaryExpr([](double v) { return sigmoid(v); });
    c.n = (Wn * c.x + Un * c.r.cwiseProduct(h) + bn).array().tanh().matrix();
    h = (1.0 - c.z.array()) * c.n.array() + c.z.array() * h.array();
    c.h = h;
    c.y = (Wo * h + bo).unaryExpr([](double v) { return sigmoid(v); });
  }
}

Vec3 bound_range(const ForceModel& m) { return m.upper - m.lower; }

double parse_cell(std::string_view s, const std::string& what) {
  s = trim(s);
  double v = 0.0;
  if (s == "nan") return std::nan("");
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(what + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

Quadratic fit_quadratic(const std::vector<std::pair<double, double>>& pts, double& rms) {
  Eigen::MatrixXd A(static_cast<Eigen::Index>(pts.size()), 3);
  Eigen::VectorXd b(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = pts[i].first;
    A.row(static_cast<Eigen::Index>(i)) << d * d, d, 1.0;
    b(static_cast<Eigen::Index>(i)) = pts[i].second;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < 3) throw ValidationError("material prior: need at least 3 distinct depths per phase");
  const Eigen::Vector3d c = qr.solve(b);
  rms = std::sqrt((A * c - b).squaredNorm() / static_cast<double>(pts.size()));
  return {c(0), c(1), c(2)};
}

}  // namespace

FeatureVector extract_features(const TrackedMarkers& tracked, const FeatureVector* prev) {
  FeatureVector f{};
  const auto n = tracked.pairs.size();
  if (n == 0) return f;
  const double N = static_cast<double>(n);
  double sx = 0, sy = 0, sm = 0, mx = 0, contact = 0, logr = 0, wsum = 0;
  Vec2 wc = Vec2::Zero(), pc = Vec2::Zero();
  for (const auto& p : tracked.pairs) {
    const double mag = p.displacement.norm();
    sx += p.displacement.x();
    sy += p.displacement.y();
    sm += mag;
    mx = std::max(mx, mag);
    if (mag > 1.0) contact += 1.0;
    logr += std::log(p.radius_ratio);
    wc += mag * p.ref_position;
    pc += p.ref_position;
    wsum += mag;
  }
  f[kMeanDx] = sx / N;
  f[kMeanDy] = sy / N;
  f[kMeanMag] = sm / N;
  f[kMaxMag] = mx;
  double vx = 0, vy = 0;
  for (const auto& p : tracked.pairs) {
    vx += (p.displacement.x() - f[kMeanDx]) * (p.displacement.x() - f[kMeanDx]);
    vy += (p.displacement.y() - f[kMeanDy]) * (p.displacement.y() - f[kMeanDy]);
  }
  f[kStdDx] = std::sqrt(vx / N);
  f[kStdDy] = std::sqrt(vy / N);
  f[kContactFraction] = contact / N;
  const Vec2 centre = wsum > 1e-12 ? Vec2(wc / wsum) : Vec2(pc / N);
  double div = 0;
  for (const auto& p : tracked.pairs) {
    const Vec2 r = p.ref_position - centre;
    const double rn = r.norm();
    if (rn > 1e-12) div += p.displacement.dot(r / rn);
  }
  f[kDivergence] = div / N;
  f[kMeanLogRadius] = logr / N;
  if (prev) {
    f[kDeltaMeanMag] = f[kMeanMag] - (*prev)[kMeanMag];
    f[kDeltaContact] = f[kContactFraction] - (*prev)[kContactFraction];
  }
  f[kMatchedFraction] = tracked.matched_fraction();
  return f;
}

std::vector<FeatureVector> sequence_features(const MarkerSet& ref, const std::vector<MarkerSet>& frames,
                                             double max_track_dist) {
  std::vector<FeatureVector> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto tracked = track_markers(ref, frames[t], max_track_dist);
    out.push_back(extract_features(tracked, t == 0 ? nullptr : &out.back()));
  }
  return out;
}

std::size_t ForceModel::param_count(int hidden) { return Layout(hidden).total; }

ForceModel ForceModel::zeros(int hidden) {
  if (hidden < 1) throw ValidationError("model: hidden size must be positive");
  ForceModel m;
  m.hidden = hidden;
  m.params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count(hidden)));
  m.input_shift.fill(0.0);
  m.input_scale.fill(1.0);
  return m;
}

ForceModel ForceModel::random(Rng& rng, int hidden) {
  ForceModel m = zeros(hidden);
  const double a = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Eigen::Index i = 0; i < m.params.size(); ++i) m.params(i) = rng.uniform(-a, a);
  return m;
}

std::vector<Vec3> model_forward(const ForceModel& model, const std::vector<FeatureVector>& seq) {
  if (seq.empty()) throw ValidationError("model: empty sequence");
  std::vector<StepCache> cache;
  forward(model, seq, cache);
  std::vector<Vec3> out;
  out.reserve(seq.size());
  const Vec3 range = bound_range(model);
  for (const auto& c : cache) out.push_back(model.lower + c.y.cwiseProduct(range));
  return out;
}

void SequenceSample::validate() const {
  if (frames.size() != forces.size()) throw ValidationError("sample: frame/label count mismatch");
  if (!depths.empty() && depths.size() != frames.size()) throw ValidationError("sample: depth count mismatch");
  if (!phases.empty() && phases.size() != frames.size()) throw ValidationError("sample: phase count mismatch");
  if (frames.empty()) throw ValidationError("sample: empty sequence");
}

GradientResult model_gradients(const ForceModel& model, const std::vector<SequenceSample>& batch) {
  const Layout L(model.hidden);
  const int H = model.hidden;
  GradientResult out;
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.total));
  if (batch.empty()) throw ValidationError("gradients: empty batch");
  std::size_t frames = 0;
  for (const auto& s : batch) {
    s.validate();
    if (s.frames.size() < 2) throw ValidationError("gradients: sequences need at least two frames");
    frames += s.frames.size();
  }
  const double norm = 1.0 / (3.0 * static_cast<double>(frames));
  const Vec3 range = bound_range(model);

  const double* p = model.params.data();
  ConstMap Uz(p + L.uz, H, H), Ur(p + L.ur, H, H), Un(p + L.un, H, H);
  ConstMap Wo(p + L.wo, 3, H);
  double* g = out.grad.data();
  MutMap gWz(g + L.wz, H, D), gWr(g + L.wr, H, D), gWn(g + L.wn, H, D);
  MutMap gUz(g + L.uz, H, H), gUr(g + L.ur, H, H), gUn(g + L.un, H, H);
  Eigen::Map<Eigen::VectorXd> gbz(g + L.bz, H), gbr(g + L.br, H), gbn(g + L.bn, H);
  MutMap gWo(g + L.wo, 3, H);
  Eigen::Map<Eigen::Vector3d> gbo(g + L.bo);

  std::vector<StepCache> cache;
  for (const auto& s : batch) {
    forward(model, s.frames, cache);
    Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
    for (std::size_t t = cache.size(); t-- > 0;) {
      const auto& c = cache[t];
      const Vec3 target = (s.forces[t] - model.lower).cwiseQuotient(range);
      Eigen::Vector3d dy;
      for (int a = 0; a < 3; ++a) {
        const double e = c.y(a) - target(a);
        out.loss += std::abs(e) * norm;
        dy(a) = (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) * norm;
      }
      const Eigen::Vector3d dao = dy.cwiseProduct(c.y.cwiseProduct((1.0 - c.y.array()).matrix()));
      gWo += dao * c.h.transpose();
      gbo += dao;
      const Eigen::VectorXd dh = Wo.transpose() * dao + dh_next;

      const Eigen::ArrayXd z = c.z.array(), r = c.r.array(), n = c.n.array(), hp = c.h_prev.array();
      const Eigen::ArrayXd dn = dh.array() * (1.0 - z);
      const Eigen::ArrayXd dz = dh.array() * (hp - n);
      Eigen::ArrayXd dhp = dh.array() * z;
      const Eigen::VectorXd dan = (dn * (1.0 - n * n)).matrix();
      const Eigen::VectorXd rh = (r * hp).matrix();
      gWn += dan * c.x.transpose();
      gUn += dan * rh.transpose();
      gbn += dan;
      const Eigen::ArrayXd drh = (Un.transpose() * dan).array();
      const Eigen::ArrayXd dr = drh * hp;
      dhp += drh * r;
      const Eigen::VectorXd daz = (dz * z * (1.0 - z)).matrix();
      const Eigen::VectorXd dar = (dr * r * (1.0 - r)).matrix();
      gWz += daz * c.x.transpose();
      gUz += daz * c.h_prev.transpose();
      gbz += daz;
      gWr += dar * c.x.transpose();
      gUr += dar * c.h_prev.transpose();
      gbr += dar;
      dh_next = dhp.matrix() + Uz.transpose() * daz + Ur.transpose() * dar;
    }
  }
  return out;
}

std::vector<SequenceSample> single_frame_samples(const std::vector<SequenceSample>& data) {
  std::vector<SequenceSample> out;
  for (const auto& s : data) {
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      SequenceSample one;
      FeatureVector f = s.frames[t];
      f[kDeltaMeanMag] = 0.0;
      f[kDeltaContact] = 0.0;
      one.frames = {f};
      one.forces = {s.forces[t]};
      if (!s.depths.empty()) one.depths = {s.depths[t]};
      if (!s.phases.empty()) one.phases = {s.phases[t]};
      one.sensor_id = s.sensor_id;
      out.push_back(std::move(one));
    }
  }
  return out;
}

namespace {

// First `len` frames of s, padded by repeating the last frame and label.
SequenceSample prefix(const SequenceSample& s, std::size_t len) {
  SequenceSample out;
  out.sensor_id = s.sensor_id;
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t k = std::min(t, s.frames.size() - 1);
    out.frames.push_back(s.frames[k]);
    out.forces.push_back(s.forces[k]);
  }
  return out;
}

double mean_abs_error(const ForceModel& m, const std::vector<SequenceSample>& data) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : data) {
    const auto pred = model_forward(m, s.frames);
    for (std::size_t t = 0; t < pred.size(); ++t) {
      sum += (pred[t] - s.forces[t]).cwiseAbs().sum();
      n += 3;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

TrainResult train(const std::vector<SequenceSample>& input, const TrainConfig& cfg) {
  if (input.empty()) throw ValidationError("train: empty dataset");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw ValidationError("train: epochs, batch size and learning rate must be positive");
  }
  for (const auto& s : input) s.validate();
  const auto data = cfg.single_frame ? single_frame_samples(input) : input;

  Rng rng(cfg.seed);
  ForceModel model = ForceModel::random(rng, cfg.hidden);

  // Global label bounds and input standardisation.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  FeatureVector mean{}, sq{};
  double count = 0.0;
  for (const auto& s : data) {
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      lo = lo.cwiseMin(s.forces[t]);
      hi = hi.cwiseMax(s.forces[t]);
      for (int i = 0; i < D; ++i) {
        mean[i] += s.frames[t][i];
        sq[i] += s.frames[t][i] * s.frames[t][i];
      }
      count += 1.0;
    }
  }
  for (int a = 0; a < 3; ++a) {
    if (hi(a) - lo(a) < 1e-9) {
      lo(a) -= 0.5;
      hi(a) += 0.5;
    }
  }
  model.lower = lo;
  model.upper = hi;
  for (int i = 0; i < D; ++i) {
    const double mu = mean[i] / count;
    const double var = std::max(0.0, sq[i] / count - mu * mu);
    model.input_shift[i] = mu;
    model.input_scale[i] = var > 1e-18 ? 1.0 / std::sqrt(var) : 1.0;
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t n_val = 0;
  if (data.size() >= 2) {
    n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.validation_fraction * data.size())));
    n_val = std::min(n_val, data.size() - 1);
  }
  std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<long>(n_val));
  std::vector<SequenceSample> val;
  for (std::size_t i = data.size() - n_val; i < data.size(); ++i) val.push_back(data[order[i]]);
  if (val.empty()) val = data;

  TrainResult result;
  result.model = model;
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(model.params.size());
  const int decay_epoch = static_cast<int>(std::floor(cfg.decay_at * cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch >= decay_epoch ? 0.1 * cfg.learning_rate : cfg.learning_rate;
    rng.shuffle(train_idx);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < train_idx.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(train_idx.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::size_t max_len = 2;
      for (std::size_t k = b; k < e; ++k) max_len = std::max(max_len, data[train_idx[k]].frames.size());
      const std::size_t len = 2 + rng.index(max_len - 1);
      std::vector<SequenceSample> batch;
      for (std::size_t k = b; k < e; ++k) batch.push_back(prefix(data[train_idx[k]], len));
      const auto g = model_gradients(model, batch);
      velocity = cfg.momentum * velocity - lr * (g.grad + cfg.weight_decay * model.params);
      model.params += velocity;
      if (!model.params.allFinite()) throw NumericalError("train: parameters diverged");
      loss_sum += g.loss;
      ++batches;
    }
    result.epoch_loss.push_back(batches ? loss_sum / batches : 0.0);
    const double mae = mean_abs_error(model, val);
    result.validation_mae.push_back(mae);
    if (mae < best) {
      best = mae;
      result.model = model;
      result.best_epoch = epoch;
    }
  }
  return result;
}

EvalReport evaluate_predictions(const std::vector<Vec3>& predicted, const std::vector<Vec3>& truth) {
  if (predicted.size() != truth.size()) throw ValidationError("evaluate: prediction/label count mismatch");
  EvalReport r;
  r.count = truth.size();
  if (truth.empty()) return r;
  const double n = static_cast<double>(truth.size());
  Vec3 mean = Vec3::Zero();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    r.mae += (predicted[i] - truth[i]).cwiseAbs();
    r.total_mae += std::abs(predicted[i].norm() - truth[i].norm());
    mean += truth[i];
  }
  r.mae /= n;
  r.total_mae /= n;
  mean /= n;
  for (int a = 0; a < 3; ++a) {
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      ss_res += (predicted[i](a) - truth[i](a)) * (predicted[i](a) - truth[i](a));
      ss_tot += (truth[i](a) - mean(a)) * (truth[i](a) - mean(a));
    }
    if (ss_tot > 0.0) r.r2[a] = 1.0 - ss_res / ss_tot;
  }
  return r;
}

EvalReport evaluate(const ForceModel& model, const std::vector<SequenceSample>& data) {
  std::vector<Vec3> pred, truth;
  for (const auto& s : data) {
    s.validate();
    const auto p = model_forward(model, s.frames);
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), s.forces.begin(), s.forces.end());
  }
  return evaluate_predictions(pred, truth);
}

std::string eval_report_csv(const EvalReport& report) {
  std::string out = "axis,mae_N,r2\n";
  const char* names[3] = {"Fx", "Fy", "Fz"};
  for (int a = 0; a < 3; ++a) {
    out += std::string(names[a]) + "," + format_double(report.mae(a)) + "," +
           (report.r2[a] ? format_double(*report.r2[a]) : std::string("nan")) + "\n";
  }
  out += "Ftotal," + format_double(report.total_mae) + ",nan\n";
  return out;
}

std::string encode_model(const ForceModel& m) {
  std::string out = "TFM1";
  put_u32(out, static_cast<std::uint32_t>(m.hidden));
  for (Eigen::Index i = 0; i < m.params.size(); ++i) put_f64(out, m.params(i));
  for (double v : m.input_shift) put_f64(out, v);
  for (double v : m.input_scale) put_f64(out, v);
  for (int a = 0; a < 3; ++a) put_f64(out, m.lower(a));
  for (int a = 0; a < 3; ++a) put_f64(out, m.upper(a));
  return out;
}

ForceModel decode_model(std::string_view bytes) {
  ByteReader in(bytes);
  if (bytes.size() < 8 || in.take(4) != "TFM1") throw ValidationError("model file: bad magic");
  const auto h = in.u32();
  if (h < 1 || h > 4096) throw ValidationError("model file: bad hidden size");
  ForceModel m = ForceModel::zeros(static_cast<int>(h));
  const std::size_t need = 8 + 8 * (m.params.size() + 2 * D + 6);
  if (bytes.size() != need) throw ValidationError("model file: wrong length");
  for (Eigen::Index i = 0; i < m.params.size(); ++i) m.params(i) = in.f64();
  for (auto& v : m.input_shift) v = in.f64();
  for (auto& v : m.input_scale) v = in.f64();
  for (int a = 0; a < 3; ++a) m.lower(a) = in.f64();
  for (int a = 0; a < 3; ++a) m.upper(a) = in.f64();
  if (!m.params.allFinite()) throw ValidationError("model file: non-finite parameters");
  if (!((m.upper - m.lower).array() > 0.0).all()) throw ValidationError("model file: bad bounds");
  return m;
}

const Quadratic& MaterialPrior::curve(Phase phase) const {
  return (phase == Phase::ShearDecrease || phase == Phase::NormalDecrease) ? unloading : loading;
}

MaterialPrior fit_material_prior(const std::vector<ForceDepthSample>& samples,
                                 const std::string& material_id) {
  std::vector<std::pair<double, double>> load, unload;
  double d_max = 0.0;
  for (const auto& s : samples) {
    if (!std::isfinite(s.depth) || !std::isfinite(s.fz) || s.depth < 0.0) {
      throw ValidationError("material prior: bad sample");
    }
    const bool rest = s.phase == Phase::Rest;
    if (rest || s.phase == Phase::NormalIncrease) load.emplace_back(s.depth, s.fz);
    if (rest || s.phase == Phase::NormalDecrease) unload.emplace_back(s.depth, s.fz);
    if (rest || s.phase == Phase::NormalIncrease || s.phase == Phase::NormalDecrease) {
      d_max = std::max(d_max, s.depth);
    }
  }
  if (load.size() < 3 || unload.size() < 3) {
    throw ValidationError("material prior: need at least 3 loading and 3 unloading samples");
  }
  if (!(d_max > 0.0)) throw ValidationError("material prior: all depths are zero");
  for (const auto* side : {&load, &unload}) {
    double lo = d_max, hi = 0.0;
    for (const auto& [d, f] : *side) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    if (hi - lo <= 0.5 * d_max) throw ValidationError("material prior: samples span too little depth");
  }
  MaterialPrior prior;
  prior.material_id = material_id;
  prior.d_max = d_max;
  prior.loading = fit_quadratic(load, prior.rms_loading);
  prior.unloading = fit_quadratic(unload, prior.rms_unloading);
  if (!(prior.loading(d_max) > 0.0)) throw ValidationError("material prior: non-positive force at d_max");
  return prior;
}

bool hysteresis_ordered(const MaterialPrior& prior, double eps) {
  for (int i = 0; i <= 100; ++i) {
    const double d = prior.d_max * i / 100.0;
    if (prior.loading(d) < prior.unloading(d) - eps) return false;
  }
  return true;
}

double compensation_ratio(double depth, Phase phase, const MaterialPrior& source,
                          const MaterialPrior& target, const CompensationOptions& opt) {
  const double u = std::clamp(depth / source.d_max, 0.0, 1.0);
  const double fs = source.curve(phase)(u * source.d_max);
  const double ft = target.curve(phase)(u * target.d_max);
  const double r = std::max(ft, opt.floor) / std::max(fs, opt.floor);
  return std::clamp(r, opt.min_ratio, opt.max_ratio);
}

std::vector<Vec3> compensate_labels(const std::vector<Vec3>& labels, const std::vector<double>& depths,
                                    const std::vector<Phase>& phases, const MaterialPrior& source,
                                    const MaterialPrior& target, const CompensationOptions& opt) {
  if (labels.size() != depths.size() || labels.size() != phases.size()) {
    throw ValidationError("compensate: labels, depths and phases differ in length");
  }
  std::vector<Vec3> out(labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double r = compensation_ratio(depths[i], phases[i], source, target, opt);
    if (opt.normal_only) {
      out[i].z() *= r;
    } else {
      out[i] *= r;
    }
  }
  return out;
}

std::string priors_csv(const std::vector<MaterialPrior>& priors) {
  std::string out = "material_id,phase,c2,c1,c0,d_max_mm,rms\n";
  for (const auto& p : priors) {
    for (int side = 0; side < 2; ++side) {
      const auto& q = side == 0 ? p.loading : p.unloading;
      out += p.material_id + (side == 0 ? ",loading," : ",unloading,") + format_double(q.c2) + "," +
             format_double(q.c1) + "," + format_double(q.c0) + "," + format_double(p.d_max) + "," +
             format_double(side == 0 ? p.rms_loading : p.rms_unloading) + "\n";
    }
  }
  return out;
}

std::vector<MaterialPrior> parse_priors_csv(std::string_view text) {
  std::vector<MaterialPrior> out;
  std::map<std::string, std::pair<int, std::size_t>> seen;  // id -> (sides mask, index)
  std::size_t row = 0;
  for (const auto& raw : split(text, '\n')) {
    ++row;
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (row == 1) {
      if (line != "material_id,phase,c2,c1,c0,d_max_mm,rms") throw ValidationError("priors csv: bad header");
      continue;
    }
    if (cells.size() != 7) throw ValidationError("priors csv row " + std::to_string(row) + ": need 7 columns");
    const std::string id(trim(cells[0]));
    const std::string phase(trim(cells[1]));
    if (phase != "loading" && phase != "unloading") {
      throw ValidationError("priors csv row " + std::to_string(row) + ": phase must be loading or unloading");
    }
    auto it = seen.find(id);
    if (it == seen.end()) {
      MaterialPrior p;
      p.material_id = id;
      out.push_back(p);
      it = seen.emplace(id, std::make_pair(0, out.size() - 1)).first;
    }
    auto& prior = out[it->second.second];
    const std::string what = "priors csv row " + std::to_string(row);
    Quadratic q{parse_cell(cells[2], what), parse_cell(cells[3], what), parse_cell(cells[4], what)};
    prior.d_max = parse_cell(cells[5], what);
    const double rms = parse_cell(cells[6], what);
    if (phase == "loading") {
      prior.loading = q;
      prior.rms_loading = rms;
      it->second.first |= 1;
    } else {
      prior.unloading = q;
      prior.rms_unloading = rms;
      it->second.first |= 2;
    }
  }
  for (const auto& [id, st] : seen) {
    if (st.first != 3) throw ValidationError("priors csv: material " + id + " lacks a loading or unloading row");
    if (!(out[st.second].d_max > 0.0)) throw ValidationError("priors csv: material " + id + " has bad d_max");
  }
  return out;
}

std::vector<ForceDepthSample> parse_force_depth_csv(std::string_view text) {
  std::vector<ForceDepthSample> out;
  int col_d = -1, col_f = -1, col_p = -1;
  std::size_t row = 0, columns = 0;
  for (const auto& raw : split(text, '\n')) {
    ++row;
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (col_d < 0) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto c = trim(cells[i]);
        if (c == "depth_mm") col_d = static_cast<int>(i);
        if (c == "fz_N") col_f = static_cast<int>(i);
        if (c == "phase") col_p = static_cast<int>(i);
      }
      if (col_d < 0 || col_f < 0 || col_p < 0) {
        throw ValidationError("force-depth csv: header needs depth_mm, fz_N and phase");
      }
      columns = cells.size();
      continue;
    }
    if (cells.size() != columns) throw ValidationError("force-depth csv row " + std::to_string(row) + ": column count");
    const std::string what = "force-depth csv row " + std::to_string(row);
    ForceDepthSample s;
    s.depth = parse_cell(cells[col_d], what);
    s.fz = parse_cell(cells[col_f], what);
    s.phase = phase_from_string(trim(cells[col_p]));
    out.push_back(s);
  }
  if (out.empty()) throw ValidationError("force-depth csv: no samples");
  return out;
}

}  // namespace tacforge
