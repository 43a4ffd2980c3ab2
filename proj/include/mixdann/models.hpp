#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "mixdann/autodiff.hpp"
#include "mixdann/layers.hpp"

namespace mixdann {

struct ModelConfig {
  int in_channels = 1;
  int base_channels = 8;
  int height = 64;
  int width = 64;
  /// Number of source domains the discriminator classifies. 0 means no
  /// discriminator is allocated (DeepAll, Mixup).
  int num_domains = 0;
  int disc_channels = 32;
  int disc_hidden = 64;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ConvSpec {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int stride = 1;
  int padding = 1;
};

struct DenseSpec {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

// Encoder (feature extractor): two conv-conv-pool blocks ending at the second
// downsampling. Decoder (task head): bottleneck conv, two upsample + concat
// blocks and a 1x1 sigmoid head.
struct UNetLayout {
  ConvSpec enc1a, enc1b, enc2a, enc2b;
  ConvSpec mid, up2, dec2, up1, dec1, head;
};

// Three strided convs then three dense layers ending in num_domains logits.
struct DiscriminatorLayout {
  ConvSpec conv1, conv2, conv3;
  DenseSpec fc1, fc2, fc3;
  std::size_t flat_features = 0;
};

class ModelBundle {
 public:
  ModelConfig config;
  std::vector<Parameter> params;
  UNetLayout unet;
  std::optional<DiscriminatorLayout> discriminator;

  bool has_discriminator() const noexcept { return discriminator.has_value(); }

  /// Shape of the extractor output [C, H/4, W/4] for one item.
  Shape feature_shape() const;

  std::vector<Parameter*> select(std::initializer_list<Role> roles);
  const Parameter& find(const std::string& name) const;
  void zero_grads();
  std::size_t parameter_count() const;
};

/// Glorot/Xavier uniform bound sqrt(6 / (fan_in + fan_out)).
double glorot_bound(std::size_t fan_in, std::size_t fan_out);

/// Deterministic initialisation. The extractor and head draw from one
/// stream, the discriminator from another, so adding a discriminator never
/// changes the U-Net's initial weights.
ModelBundle init_params(const ModelConfig& config, std::uint64_t seed);

struct EncoderOutput {
  Var skip1;     // [N, base, H, W]
  Var skip2;     // [N, 4*base, H/2, W/2]
  Var features;  // [N, 4*base, H/4, W/4]
};

struct UNetOutput {
  Var features;
  Var mask_prob;  // [N, 1, H, W]
};

/// How parameters enter the tape: as differentiable leaves or as constants
/// (evaluation only).
enum class Binding { Trainable, Frozen };

EncoderOutput extract_features(Tape& tape, ModelBundle& model, Var x,
                               Binding binding = Binding::Trainable);
Var task_head(Tape& tape, ModelBundle& model, const EncoderOutput& enc,
              Binding binding = Binding::Trainable);
UNetOutput unet_forward(Tape& tape, ModelBundle& model, Var x, Binding binding = Binding::Trainable);

/// Domain logits [N, num_domains] through a gradient reversal layer.
Var discriminate(Tape& tape, ModelBundle& model, Var features, GrlConfig grl_cfg,
                 Binding binding = Binding::Trainable);

/// Writes <dir>/model.ckpt (concatenated MXT1 tensors) and
/// <dir>/model.manifest.json (config plus name, role, shape per tensor).
void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& model);
ModelBundle load_checkpoint(const std::filesystem::path& dir);

}  // namespace mixdann
