#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mixdann/models.hpp"
#include "mixdann/synth.hpp"

namespace mixdann {

struct FeatureRecord {
  int case_id = 0;
  int domain_id = 0;
  std::vector<double> features;  // spatial average of each extractor channel
};

/// Spatial average pooling of an [N,C,H,W] feature map -> N vectors of C.
std::vector<std::vector<double>> average_pool(const Tensor& features);

/// Extractor features of every subject, pooled; pure in (model, data).
std::vector<FeatureRecord> export_features(const ModelBundle& model, const std::vector<Subject>& subjects);

void write_features_csv(const std::filesystem::path& path, const std::vector<FeatureRecord>& records);

struct ProbeConfig {
  int folds = 5;
  std::uint64_t seed = 0;
  int iterations = 500;
  double learning_rate = 0.5;
  double l2 = 1e-3;
};

/// Cross-validated accuracy of a multinomial logistic regression trained by
/// full-batch gradient descent on standardised frozen features.
double domain_probe_accuracy(const std::vector<FeatureRecord>& records, const ProbeConfig& cfg = {});

}  // namespace mixdann
