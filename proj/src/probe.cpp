#include "mixdann/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "mixdann/errors.hpp"
#include "mixdann/layers.hpp"
#include "mixdann/rng.hpp"

namespace mixdann {

std::vector<std::vector<double>> average_pool(const Tensor& f) {
  if (f.rank() != 4) throw ShapeError("average_pool: expected [N,C,H,W], got " + shape_str(f.shape()));
  const std::size_t n = f.dim(0), c = f.dim(1), plane = f.dim(2) * f.dim(3);
  std::vector<std::vector<double>> out(n, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      const double* p = f.data().data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
      out[i][ch] = s / static_cast<double>(plane);
    }
  return out;
}

std::vector<FeatureRecord> export_features(const ModelBundle& model, const std::vector<Subject>& subjects) {
  ModelBundle m = model;
  std::vector<FeatureRecord> out;
  constexpr std::size_t kChunk = 8;
  for (std::size_t start = 0; start < subjects.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, subjects.size() - start);
    const Shape& s = subjects[start].image.shape();
    Tensor x(Shape{n, s[0], s[1], s[2]}, 0.0);
    const std::size_t per = subjects[start].image.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& img = subjects[start + i].image;
      if (img.size() != per) throw ShapeError("export_features: subjects differ in shape");
      std::copy(img.data().begin(), img.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    Tape tape;
    EncoderOutput e = extract_features(tape, m, tape.constant(std::move(x)), Binding::Frozen);
    auto pooled = average_pool(e.features.value());
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back({subjects[start + i].case_id, subjects[start + i].domain_id, std::move(pooled[i])});
    }
  }
  return out;
}

void write_features_csv(const std::filesystem::path& path, const std::vector<FeatureRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "case_id,domain_id";
  const std::size_t c = records.empty() ? 0 : records.front().features.size();
  for (std::size_t i = 0; i < c; ++i) out << ",f_" << i;
  out << '\n';
  for (const auto& r : records) {
    out << r.case_id << ',' << r.domain_id;
    for (double v : r.features) out << ',' << v;
    out << '\n';
  }
}

namespace {

struct LogisticModel {
  std::size_t dim = 0, classes = 0;
  std::vector<double> w;  // classes x dim
  std::vector<double> b;
  std::vector<double> mean, scale;
};

std::vector<double> standardised(const LogisticModel& m, const std::vector<double>& x) {
  std::vector<double> z(m.dim);
  for (std::size_t j = 0; j < m.dim; ++j) z[j] = (x[j] - m.mean[j]) / m.scale[j];
  return z;
}

std::vector<double> logits(const LogisticModel& m, const std::vector<double>& z) {
  std::vector<double> out(m.classes);
  for (std::size_t c = 0; c < m.classes; ++c) {
    double s = m.b[c];
    for (std::size_t j = 0; j < m.dim; ++j) s += m.w[c * m.dim + j] * z[j];
    out[c] = s;
  }
  return out;
}

LogisticModel fit(const std::vector<const FeatureRecord*>& train, const std::vector<int>& labels,
                  std::size_t classes, const ProbeConfig& cfg) {
  LogisticModel m;
  m.dim = train.front()->features.size();
  m.classes = classes;
  m.w.assign(classes * m.dim, 0.0);
  m.b.assign(classes, 0.0);
  m.mean.assign(m.dim, 0.0);
  m.scale.assign(m.dim, 0.0);
  const double n = static_cast<double>(train.size());
  for (const auto* r : train)
    for (std::size_t j = 0; j < m.dim; ++j) m.mean[j] += r->features[j] / n;
  for (const auto* r : train)
    for (std::size_t j = 0; j < m.dim; ++j) m.scale[j] += (r->features[j] - m.mean[j]) * (r->features[j] - m.mean[j]) / n;
  for (double& s : m.scale) s = s > 1e-24 ? std::sqrt(s) : 1.0;

  std::vector<std::vector<double>> z;
  z.reserve(train.size());
  for (const auto* r : train) z.push_back(standardised(m, r->features));

  std::vector<double> gw(m.w.size()), gb(classes);
  for (int it = 0; it < cfg.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const auto p = softmax_row(logits(m, z[i]));
      for (std::size_t c = 0; c < classes; ++c) {
        const double err = (p[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) / n;
        gb[c] += err;
        for (std::size_t j = 0; j < m.dim; ++j) gw[c * m.dim + j] += err * z[i][j];
      }
    }
    for (std::size_t k = 0; k < m.w.size(); ++k) m.w[k] -= cfg.learning_rate * (gw[k] + cfg.l2 * m.w[k]);
    for (std::size_t c = 0; c < classes; ++c) m.b[c] -= cfg.learning_rate * gb[c];
  }
  return m;
}

}  // namespace

double domain_probe_accuracy(const std::vector<FeatureRecord>& records, const ProbeConfig& cfg) {
  if (cfg.folds < 2) throw std::invalid_argument("domain_probe_accuracy: need at least 2 folds");
  if (records.size() < static_cast<std::size_t>(cfg.folds)) {
    throw std::invalid_argument("domain_probe_accuracy: fewer records than folds");
  }
  std::map<int, int> class_of;
  for (const auto& r : records) class_of.emplace(r.domain_id, 0);
  if (class_of.size() < 2) throw std::invalid_argument("domain_probe_accuracy: need at least 2 domains");
  int next = 0;
  for (auto& [dom, cls] : class_of) cls = next++;
  const std::size_t dim = records.front().features.size();
  for (const auto& r : records) {
    if (r.features.size() != dim) throw ShapeError("domain_probe_accuracy: ragged feature vectors");
  }

  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(cfg.seed, 41));
  rng.shuffle(order);
  std::vector<int> fold(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) fold[order[i]] = static_cast<int>(i % static_cast<std::size_t>(cfg.folds));

  std::size_t correct = 0;
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<const FeatureRecord*> train;
    std::vector<int> labels;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (fold[i] == f) continue;
      train.push_back(&records[i]);
      labels.push_back(class_of.at(records[i].domain_id));
    }
    const LogisticModel m = fit(train, labels, class_of.size(), cfg);
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (fold[i] != f) continue;
      const auto l = logits(m, standardised(m, records[i].features));
      const auto best = static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
      if (best == class_of.at(records[i].domain_id)) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

}  // namespace mixdann
