#include "mixdann/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "mixdann/errors.hpp"

namespace mixdann {

namespace {

constexpr std::uint64_t kAnatomyStream = 17;
constexpr std::uint64_t kAcquisitionStream = 29;
constexpr double kTissueMax = 0.6;
constexpr double kLesionBoost = 0.3;

std::uint64_t subject_seed(std::uint64_t seed, std::uint64_t stream, int domain_id, int case_id) {
  return mix_seed(mix_seed(seed, stream),
                  static_cast<std::uint64_t>(domain_id) * 1'000'003ULL + static_cast<std::uint64_t>(case_id));
}

}  // namespace

void validate(const DomainSpec& s) {
  if (!(s.gain > 0.0)) throw ConfigError("domain " + s.name + ": gain must be > 0");
  if (!(s.gamma_contrast > 0.0)) throw ConfigError("domain " + s.name + ": gamma_contrast must be > 0");
  if (s.noise_sigma < 0.0 || s.blur_radius < 0) {
    throw ConfigError("domain " + s.name + ": noise and blur must be non-negative");
  }
}

Anatomy generate_anatomy(Rng& rng, int height, int width) {
  if (height < 32 || width < 32) throw std::invalid_argument("generate_anatomy: H and W must be >= 32");
  const auto h = static_cast<std::size_t>(height);
  const auto w = static_cast<std::size_t>(width);
  Anatomy a;
  a.clean = Tensor(Shape{h, w}, 0.0);
  a.mask = Tensor(Shape{h, w}, 0.0);

  const int blobs = rng.integer(3, 6);
  for (int b = 0; b < blobs; ++b) {
    const double cy = rng.uniform(0.2, 0.8) * height;
    const double cx = rng.uniform(0.2, 0.8) * width;
    const double sigma = rng.uniform(height / 8.0, height / 3.5);
    const double amp = rng.uniform(0.5, 1.0);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        a.clean[y * w + x] += amp * std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
  const double mx = *std::max_element(a.clean.data().begin(), a.clean.data().end());
  for (double& v : a.clean.data()) v = kTissueMax * v / mx;

  a.lesions = rng.integer(1, 5);
  for (int l = 0; l < a.lesions; ++l) {
    const int cy = rng.integer(6, height - 7);
    const int cx = rng.integer(6, width - 7);
    const double ra = rng.uniform(2.0, 6.0);
    const double rb = rng.uniform(2.0, 6.0);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double c = std::cos(theta), s = std::sin(theta);
    const int reach = 7;
    for (int y = std::max(0, cy - reach); y <= std::min(height - 1, cy + reach); ++y)
      for (int x = std::max(0, cx - reach); x <= std::min(width - 1, cx + reach); ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * c + dy * s) / ra;
        const double v = (-dx * s + dy * c) / rb;
        if (u * u + v * v <= 1.0) a.mask[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = 1.0;
      }
  }
  for (std::size_t i = 0; i < a.clean.size(); ++i) a.clean[i] += kLesionBoost * a.mask[i];
  return a;
}

Tensor box_blur(const Tensor& image, int radius) {
  if (radius <= 0) return image;
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  const std::size_t planes = image.size() / (h * w);
  const double norm = 1.0 / (2 * radius + 1);
  Tensor tmp = image, out = image;
  auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = image.data().data() + p * h * w;
    double* t = tmp.data().data() + p * h * w;
    double* o = out.data().data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int d = -radius; d <= radius; ++d) s += src[y * w + clampi(static_cast<long>(x) + d, w)];
        t[y * w + x] = s * norm;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int d = -radius; d <= radius; ++d) s += t[clampi(static_cast<long>(y) + d, h) * w + x];
        o[y * w + x] = s * norm;
      }
  }
  return out;
}

Tensor apply_domain(const Tensor& clean, const DomainSpec& spec, Rng& rng) {
  validate(spec);
  Tensor img = box_blur(clean, spec.blur_radius);
  for (double& v : img.data()) {
    double t = spec.gamma_contrast == 1.0 ? v : std::pow(std::max(v, 0.0), spec.gamma_contrast);
    t = spec.gain * t + spec.bias;
    if (spec.noise_sigma > 0.0) t += spec.noise_sigma * rng.normal();
    v = std::clamp(t, 0.0, 1.0);
  }
  return img;
}

std::vector<DomainSpec> default_domain_specs(int k_domains) {
  const std::vector<DomainSpec> table = {
      {"D0", 1.0, 0.0, 1.0, 0.0, 0},
      {"D1", 1.3, 0.1, 1.0, 0.0, 1},
      {"D2", 1.0, 0.0, 1.8, 0.06, 0},
      {"D3", 0.8, -0.05, 1.0, 0.0, 2},
      {"D4", 1.0, 0.0, 0.6, 0.03, 0},
      {"D5", 1.1, 0.05, 1.3, 0.04, 1},
  };
  std::vector<DomainSpec> out;
  for (int i = 0; i < k_domains; ++i) {
    DomainSpec s = table[static_cast<std::size_t>(i) % table.size()];
    if (i >= static_cast<int>(table.size())) {
      // Later cycles shift brightness so every spec stays distinct.
      s.bias += 0.03 * (i / static_cast<int>(table.size()));
    }
    s.name = "D" + std::to_string(i);
    out.push_back(s);
  }
  return out;
}

Subject render_subject(const BenchmarkConfig& cfg, int domain_id, int case_id, const DomainSpec& spec) {
  Rng anatomy_rng(subject_seed(cfg.seed, kAnatomyStream, domain_id, case_id));
  Anatomy a = generate_anatomy(anatomy_rng, cfg.height, cfg.width);
  Rng acq_rng(subject_seed(cfg.seed, kAcquisitionStream, domain_id, case_id));
  Tensor img = apply_domain(a.clean, spec, acq_rng);
  Subject s;
  s.image = img.reshaped(Shape{1, static_cast<std::size_t>(cfg.height), static_cast<std::size_t>(cfg.width)});
  s.mask = std::move(a.mask);
  s.domain_id = domain_id;
  s.case_id = case_id;
  return s;
}

std::vector<DomainDataset> build_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.k_domains < 3) throw ConfigError("build_benchmark: k_domains must be >= 3");
  if (cfg.n_per_domain < 1) throw ConfigError("build_benchmark: n_per_domain must be >= 1");
  const auto specs = default_domain_specs(cfg.k_domains);
  std::vector<DomainDataset> out;
  for (int d = 0; d < cfg.k_domains; ++d) {
    DomainDataset ds;
    ds.spec = specs[static_cast<std::size_t>(d)];
    ds.domain_id = d;
    for (int i = 0; i < cfg.n_per_domain; ++i) {
      ds.subjects.push_back(render_subject(cfg, d, d * cfg.n_per_domain + i, ds.spec));
    }
    out.push_back(std::move(ds));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
}

void write_dataset(const std::filesystem::path& dir, const std::vector<DomainDataset>& domains,
                   bool export_pgm) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream index(dir / "index.csv");
  std::ofstream specs(dir / "domains.csv");
  if (!index || !specs) throw DataError("cannot write index in " + dir.string());
  index << "case_id,domain_id,image_path,mask_path\n";
  specs << "domain_id,name,gain,bias,gamma_contrast,noise_sigma,blur_radius\n";
  specs.precision(17);
  for (const auto& ds : domains) {
    const auto& s = ds.spec;
    specs << ds.domain_id << ',' << s.name << ',' << s.gain << ',' << s.bias << ',' << s.gamma_contrast
          << ',' << s.noise_sigma << ',' << s.blur_radius << '\n';
    const fs::path sub = dir / s.name;
    fs::create_directories(sub);
    for (const auto& subj : ds.subjects) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "case_%05d", subj.case_id);
      const std::string img_rel = s.name + "/" + stem + "_image.mxt";
      const std::string msk_rel = s.name + "/" + stem + "_mask.mxt";
      save_tensor(dir / img_rel, subj.image);
      save_tensor(dir / msk_rel, subj.mask);
      if (export_pgm) {
        write_pgm(sub / (std::string(stem) + "_image.pgm"), subj.image);
        write_pgm(sub / (std::string(stem) + "_mask.pgm"), subj.mask);
      }
      index << subj.case_id << ',' << subj.domain_id << ',' << img_rel << ',' << msk_rel << '\n';
    }
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

std::vector<DomainDataset> read_dataset(const std::filesystem::path& dir) {
  std::ifstream specs(dir / "domains.csv");
  std::ifstream index(dir / "index.csv");
  if (!specs || !index) throw DataError("no dataset (index.csv/domains.csv) in " + dir.string());
  std::map<int, DomainDataset> by_id;
  std::string line;
  std::getline(specs, line);
  try {
    while (std::getline(specs, line)) {
      if (line.empty()) continue;
      const auto c = split_csv(line);
      if (c.size() != 7) throw DataError("domains.csv: expected 7 columns: " + line);
      DomainDataset ds;
      ds.domain_id = std::stoi(c[0]);
      ds.spec = {c[1], std::stod(c[2]), std::stod(c[3]), std::stod(c[4]), std::stod(c[5]), std::stoi(c[6])};
      by_id[ds.domain_id] = std::move(ds);
    }
    std::getline(index, line);
    while (std::getline(index, line)) {
      if (line.empty()) continue;
      const auto c = split_csv(line);
      if (c.size() != 4) throw DataError("index.csv: expected 4 columns: " + line);
      Subject s;
      s.case_id = std::stoi(c[0]);
      s.domain_id = std::stoi(c[1]);
      auto it = by_id.find(s.domain_id);
      if (it == by_id.end()) throw DataError("index.csv: unknown domain " + c[1]);
      s.image = load_tensor(dir / c[2]);
      s.mask = load_tensor(dir / c[3]);
      if (s.image.rank() != 3 || s.mask.rank() != 2 || s.image.dim(1) != s.mask.dim(0) ||
          s.image.dim(2) != s.mask.dim(1)) {
        throw DataError("case " + c[0] + ": image " + shape_str(s.image.shape()) + " and mask " +
                        shape_str(s.mask.shape()) + " are incompatible");
      }
      it->second.subjects.push_back(std::move(s));
    }
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("dataset: malformed number: ") + e.what());
  }
  std::vector<DomainDataset> out;
  for (auto& [id, ds] : by_id) out.push_back(std::move(ds));
  return out;
}

}  // namespace mixdann
