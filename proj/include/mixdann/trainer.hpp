#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mixdann/augment.hpp"
#include "mixdann/metrics.hpp"
#include "mixdann/mixup.hpp"
#include "mixdann/models.hpp"
#include "mixdann/optim.hpp"
#include "mixdann/synth.hpp"

namespace mixdann {

enum class Variant { DeepAll, DANN, Mixup, MixDANN };

inline constexpr Variant kAllVariants[4] = {Variant::DeepAll, Variant::DANN, Variant::Mixup, Variant::MixDANN};

const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);
bool uses_domain_loss(Variant v);
bool uses_mixup(Variant v);

struct TrainConfig {
  Variant variant = Variant::MixDANN;
  double lr = 2e-4;
  int epochs = 30;
  int batch_size = 4;
  std::uint64_t seed = 0;
  MixupConfig mixup;
  GammaSchedule gamma;  // max_epoch is taken from epochs
  /// When set, gamma is held at this value for every epoch.
  std::optional<double> gamma_override;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  AugmentConfig augment;
  TaskLoss task_loss = TaskLoss::Dice;
  double dice_eps = 1.0;
  int base_channels = 8;
  double val_fraction = 0.2;
  /// Return the parameters of the epoch with the best mean source-val DSC.
  bool select_best = true;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double task_loss = 0.0;
  double domain_loss = 0.0;
  double gamma = 0.0;
  double val_dsc = 0.0;
  double seconds = 0.0;
  /// Discriminator accuracy on the (dominant) domain labels of the batches;
  /// NaN when no discriminator is trained.
  double domain_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
};

void write_train_log_csv(const std::filesystem::path& path, const TrainLog& log);

/// What happened in one optimiser step; passed to a TrainObserver.
enum class UpdateKind { Task, Domain };

struct StepEvent {
  int epoch = 0;
  int batch = 0;
  UpdateKind kind = UpdateKind::Task;
  const ModelBundle* model = nullptr;
  const MixedBatch* batch_data = nullptr;
};

using TrainObserver = std::function<void(const StepEvent&)>;

struct TrainResult {
  ModelBundle model;
  TrainLog log;
};

/// Runs the per-batch mixup, task update and domain update loop on the
/// given source domains. Domain labels are the positions in `sources`.
TrainResult train(const TrainConfig& cfg, const std::vector<DomainDataset>& sources,
                  const TrainObserver& observer = {});

/// Deterministic per-domain train/validation split of subject indices.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
Split split_domain(std::size_t n, double val_fraction, std::uint64_t seed, int domain_index);

/// Probability maps [N,1,H,W] for a stack of subjects.
Tensor predict_probabilities(const ModelBundle& model, const std::vector<const Subject*>& subjects);

/// Masks thresholded strictly above 0.5.
std::vector<BinaryMask> predict(const ModelBundle& model, const std::vector<const Subject*>& subjects);

/// Predicts every subject of a domain and evaluates the five metrics.
MetricsReport evaluate_domain(const ModelBundle& model, const DomainDataset& domain);

}  // namespace mixdann
