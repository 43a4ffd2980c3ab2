#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixdann/rng.hpp"
#include "mixdann/tensor.hpp"

namespace mixdann {

/// Intensity-only acquisition model of one synthetic scanner/site.
struct DomainSpec {
  std::string name;
  double gain = 1.0;
  double bias = 0.0;
  double gamma_contrast = 1.0;
  double noise_sigma = 0.0;
  int blur_radius = 0;
};

void validate(const DomainSpec& spec);

struct Subject {
  Tensor image;  // [C,H,W] in [0,1]
  Tensor mask;   // [H,W] binary
  int domain_id = 0;
  int case_id = 0;
};

struct DomainDataset {
  DomainSpec spec;
  int domain_id = 0;
  std::vector<Subject> subjects;
};

struct Anatomy {
  Tensor clean;  // [H,W]
  Tensor mask;   // [H,W]
  int lesions = 0;
};

/// Smooth tissue background from 3-6 broad Gaussian blobs (max 0.6) plus
/// 1-5 small ellipses at +0.3; the mask is the union of the ellipses.
Anatomy generate_anatomy(Rng& rng, int height, int width);

/// clip01(gain * blur(clean)^gamma_contrast + bias + N(0, noise_sigma^2))
Tensor apply_domain(const Tensor& clean, const DomainSpec& spec, Rng& rng);

/// Box blur with clamped borders, window 2r+1 per axis.
Tensor box_blur(const Tensor& image, int radius);

/// Default specs: D0 identity, D1 gain 1.3 bias 0.1 blur 1, D2 gamma 1.8
/// noise 0.06. Further domains continue a fixed list.
std::vector<DomainSpec> default_domain_specs(int k_domains);

struct BenchmarkConfig {
  std::uint64_t seed = 0;
  int k_domains = 3;
  int n_per_domain = 60;
  int height = 64;
  int width = 64;
};

std::vector<DomainDataset> build_benchmark(const BenchmarkConfig& cfg);

/// Re-render subject anatomy under another spec; masks are unchanged.
Subject render_subject(const BenchmarkConfig& cfg, int domain_id, int case_id, const DomainSpec& spec);

/// One directory per domain with MXT1 image/mask files plus index.csv
/// (case_id, domain_id, image_path, mask_path) at the root.
void write_dataset(const std::filesystem::path& dir, const std::vector<DomainDataset>& domains,
                   bool export_pgm = false);
std::vector<DomainDataset> read_dataset(const std::filesystem::path& dir);

/// 8-bit binary PGM of a [H,W] or [1,H,W] tensor in [0,1].
void write_pgm(const std::filesystem::path& path, const Tensor& image);

}  // namespace mixdann
