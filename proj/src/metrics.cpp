#include "mixdann/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "mixdann/errors.hpp"

namespace mixdann {

namespace {

constexpr double kFar = 1e20;

void require_same(const char* op, const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

// One pass of the lower-envelope squared distance transform along a line.
void edt_1d(const double* f, std::size_t n, std::size_t stride, double* out, std::vector<std::size_t>& v,
            std::vector<double>& z, std::vector<double>& buf) {
  buf.resize(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = f[i * stride];
  v.resize(n);
  z.resize(n + 1);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = 1; q < n; ++q) {
    const double dq = static_cast<double>(q);
    double s = 0.0;
    for (;;) {
      const double dv = static_cast<double>(v[k]);
      s = ((buf[q] + dq * dq) - (buf[v[k]] + dv * dv)) / (2.0 * dq - 2.0 * dv);
      if (s > z[k]) break;
      --k;  // z[0] = -inf stops this at k = 0
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q * stride] = d * d + buf[v[k]];
  }
}

}  // namespace

BinaryMask::BinaryMask(std::size_t depth, std::size_t height, std::size_t width)
    : d_(depth), h_(height), w_(width), bits_(depth * height * width, 0) {}

BinaryMask BinaryMask::from_tensor(const Tensor& t, double threshold) {
  BinaryMask m;
  if (t.rank() == 2) {
    m = BinaryMask(t.dim(0), t.dim(1));
  } else if (t.rank() == 3) {
    m = BinaryMask(t.dim(0), t.dim(1), t.dim(2));
  } else {
    throw ShapeError("BinaryMask: expected rank 2 or 3, got " + shape_str(t.shape()));
  }
  for (std::size_t i = 0; i < t.size(); ++i) m.bits_[i] = t[i] > threshold ? 1 : 0;
  return m;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::string BinaryMask::shape_string() const {
  if (d_ == 1) return "[" + std::to_string(h_) + "," + std::to_string(w_) + "]";
  return "[" + std::to_string(d_) + "," + std::to_string(h_) + "," + std::to_string(w_) + "]";
}

double dsc(const BinaryMask& y, const BinaryMask& yhat) {
  require_same("dsc", y, yhat);
  std::size_t inter = 0, sy = 0, sh = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    inter += (y[i] && yhat[i]) ? 1 : 0;
    sy += y[i] ? 1 : 0;
    sh += yhat[i] ? 1 : 0;
  }
  if (sy + sh == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sy + sh);
}

std::vector<std::size_t> surface_points(const BinaryMask& m, SurfacePoints which) {
  std::vector<std::size_t> pts;
  const std::size_t d = m.depth(), h = m.height(), w = m.width();
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = (z * h + y) * w + x;
        if (!m[i]) continue;
        if (which == SurfacePoints::Foreground) {
          pts.push_back(i);
          continue;
        }
        bool edge = y == 0 || y + 1 == h || x == 0 || x + 1 == w || !m[i - w] || !m[i + w] || !m[i - 1] ||
                    !m[i + 1];
        if (d > 1) edge = edge || z == 0 || z + 1 == d || !m[i - h * w] || !m[i + h * w];
        if (edge) pts.push_back(i);
      }
  return pts;
}

std::vector<double> squared_distance_to(const BinaryMask& m) {
  const std::size_t d = m.depth(), h = m.height(), w = m.width();
  std::vector<double> f(m.size());
  if (m.empty()) {
    std::fill(f.begin(), f.end(), std::numeric_limits<double>::infinity());
    return f;
  }
  for (std::size_t i = 0; i < m.size(); ++i) f[i] = m[i] ? 0.0 : kFar;
  std::vector<double> out(f.size());
  std::vector<std::size_t> v;
  std::vector<double> z, buf;
  // x lines
  for (std::size_t zy = 0; zy < d * h; ++zy) edt_1d(f.data() + zy * w, w, 1, out.data() + zy * w, v, z, buf);
  // y lines
  for (std::size_t zz = 0; zz < d; ++zz)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t off = zz * h * w + x;
      edt_1d(out.data() + off, h, w, out.data() + off, v, z, buf);
    }
  // z lines
  if (d > 1) {
    for (std::size_t p = 0; p < h * w; ++p) edt_1d(out.data() + p, d, h * w, out.data() + p, v, z, buf);
  }
  return out;
}

double nearest_rank_percentile(std::vector<double> values, int percent) {
  if (values.empty()) throw std::invalid_argument("nearest_rank_percentile: no values");
  const std::size_t n = values.size();
  std::size_t rank = (static_cast<std::size_t>(percent) * n + 99) / 100;
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

std::optional<double> h95(const BinaryMask& y, const BinaryMask& yhat, SurfacePoints which) {
  require_same("h95", y, yhat);
  if (y.empty() || yhat.empty()) return std::nullopt;
  auto directed = [which](const BinaryMask& from, const BinaryMask& to) {
    const auto dist = squared_distance_to(to);
    std::vector<double> d2;
    for (std::size_t i : surface_points(from, which)) d2.push_back(dist[i]);
    // Percentile on squared distances, then sqrt: same ordering, fewer roots.
    return std::sqrt(nearest_rank_percentile(std::move(d2), 95));
  };
  return std::max(directed(y, yhat), directed(yhat, y));
}

std::optional<double> avd(const BinaryMask& y, const BinaryMask& yhat) {
  require_same("avd", y, yhat);
  const double vy = static_cast<double>(y.count());
  if (vy == 0.0) return std::nullopt;
  return 100.0 * std::abs(static_cast<double>(yhat.count()) - vy) / vy;
}

Components connected_components(const BinaryMask& m) {
  const long d = static_cast<long>(m.depth()), h = static_cast<long>(m.height()),
             w = static_cast<long>(m.width());
  Components c;
  c.labels.assign(m.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (!m[start] || c.labels[start] != 0) continue;
    const int label = ++c.count;
    c.labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const long z = static_cast<long>(i) / (h * w);
      const long y = (static_cast<long>(i) / w) % h;
      const long x = static_cast<long>(i) % w;
      for (long dz = -1; dz <= 1; ++dz) {
        const long nz = z + dz;
        if (nz < 0 || nz >= d) continue;
        for (long dy = -1; dy <= 1; ++dy) {
          const long ny = y + dy;
          if (ny < 0 || ny >= h) continue;
          for (long dx = -1; dx <= 1; ++dx) {
            const long nx = x + dx;
            if (nx < 0 || nx >= w) continue;
            const auto j = static_cast<std::size_t>((nz * h + ny) * w + nx);
            if (m[j] && c.labels[j] == 0) {
              c.labels[j] = label;
              stack.push_back(j);
            }
          }
        }
      }
    }
  }
  return c;
}

LesionScores lesion_recall_f1(const BinaryMask& y, const BinaryMask& yhat) {
  require_same("lesion_recall_f1", y, yhat);
  const Components gt = connected_components(y);
  const Components pr = connected_components(yhat);
  std::vector<char> gt_hit(static_cast<std::size_t>(gt.count) + 1, 0);
  std::vector<char> pr_hit(static_cast<std::size_t>(pr.count) + 1, 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (gt.labels[i] && pr.labels[i]) {
      gt_hit[static_cast<std::size_t>(gt.labels[i])] = 1;
      pr_hit[static_cast<std::size_t>(pr.labels[i])] = 1;
    }
  }
  LesionScores s;
  for (int l = 1; l <= gt.count; ++l) (gt_hit[static_cast<std::size_t>(l)] ? s.match.tp : s.match.fn)++;
  for (int l = 1; l <= pr.count; ++l) (pr_hit[static_cast<std::size_t>(l)] ? s.match.tp_pred : s.match.fp)++;
  const double tp = s.match.tp, fp = s.match.fp, fn = s.match.fn;
  // Nothing to detect counts as full recall; F1 still penalises false alarms.
  s.recall = (tp + fn) == 0.0 ? 1.0 : tp / (tp + fn);
  const double denom = tp + 0.5 * (fp + fn);
  s.f1 = denom == 0.0 ? 1.0 : tp / denom;
  return s;
}

double metric_value(const MetricValues& v, int index) {
  switch (index) {
    case 0: return v.dsc;
    case 1: return v.h95;
    case 2: return v.avd;
    case 3: return v.recall;
    case 4: return v.f1;
  }
  throw std::out_of_range("metric index");
}

CaseMetrics evaluate_case(int case_id, const BinaryMask& y, const BinaryMask& yhat) {
  CaseMetrics c;
  c.case_id = case_id;
  c.dsc = dsc(y, yhat);
  c.h95 = h95(y, yhat);
  c.avd = avd(y, yhat);
  const auto ls = lesion_recall_f1(y, yhat);
  c.recall = ls.recall;
  c.f1 = ls.f1;
  return c;
}

MetricsReport evaluate_all(const std::vector<BinaryMask>& y_set, const std::vector<BinaryMask>& yhat_set,
                           const std::vector<int>& case_ids) {
  if (y_set.size() != yhat_set.size() || y_set.size() != case_ids.size() || y_set.empty()) {
    throw std::invalid_argument("evaluate_all: misaligned case lists (" + std::to_string(y_set.size()) + ", " +
                                std::to_string(yhat_set.size()) + ", " + std::to_string(case_ids.size()) + ")");
  }
  MetricsReport r;
  double s_dsc = 0, s_h95 = 0, s_avd = 0, s_rec = 0, s_f1 = 0;
  for (std::size_t i = 0; i < y_set.size(); ++i) {
    CaseMetrics c = evaluate_case(case_ids[i], y_set[i], yhat_set[i]);
    s_dsc += c.dsc;
    s_rec += c.recall;
    s_f1 += c.f1;
    if (c.h95) s_h95 += *c.h95; else ++r.n_undefined_h95;
    if (c.avd) s_avd += *c.avd; else ++r.n_undefined_avd;
    r.cases.push_back(c);
  }
  const double n = static_cast<double>(y_set.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.avg.dsc = s_dsc / n;
  r.avg.recall = s_rec / n;
  r.avg.f1 = s_f1 / n;
  const double nh = n - r.n_undefined_h95, na = n - r.n_undefined_avd;
  r.avg.h95 = nh > 0 ? s_h95 / nh : nan;
  r.avg.avd = na > 0 ? s_avd / na : nan;
  return r;
}

void attach_gain(MetricsReport& report, const MetricValues& b) {
  const MetricValues& a = report.avg;
  report.gain = MetricValues{a.dsc - b.dsc, a.h95 - b.h95, a.avd - b.avd, a.recall - b.recall, a.f1 - b.f1};
}

MetricValues average(const std::vector<MetricValues>& values) {
  if (values.empty()) throw std::invalid_argument("average: no values");
  MetricValues m{};
  for (const auto& v : values) {
    m.dsc += v.dsc;
    m.h95 += v.h95;
    m.avd += v.avd;
    m.recall += v.recall;
    m.f1 += v.f1;
  }
  const double n = static_cast<double>(values.size());
  return {m.dsc / n, m.h95 / n, m.avd / n, m.recall / n, m.f1 / n};
}

namespace {

nlohmann::ordered_json values_json(const MetricValues& v) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::ordered_json(x) : nlohmann::ordered_json(nullptr); };
  return {{"DSC", num(v.dsc)}, {"H95", num(v.h95)}, {"AVD", num(v.avd)}, {"Recall", num(v.recall)}, {"F1", num(v.f1)}};
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "case_id,dsc,h95,avd,recall,f1\n";
  for (const auto& c : r.cases) {
    out << c.case_id << ',' << c.dsc << ',';
    if (c.h95) out << *c.h95; else out << "undefined";
    out << ',';
    if (c.avd) out << *c.avd; else out << "undefined";
    out << ',' << c.recall << ',' << c.f1 << '\n';
  }
}

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["n_cases"] = r.cases.size();
  j["avg"] = values_json(r.avg);
  j["gain"] = r.gain ? values_json(*r.gain) : nlohmann::ordered_json(nullptr);
  j["n_undefined"] = {{"H95", r.n_undefined_h95}, {"AVD", r.n_undefined_avd}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

MetricValues read_metrics_avg(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read baseline report " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    const auto& a = j.at("avg");
    auto get = [&a](const char* k) {
      return a.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : a.at(k).get<double>();
    };
    return {get("DSC"), get("H95"), get("AVD"), get("Recall"), get("F1")};
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed baseline report " + path.string() + ": " + e.what());
  }
}

}  // namespace mixdann
