#pragma once

// Training configuration and its flat "key = value" file format.

#include "wmcir/view_forge.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wmcir {

struct AblationFlags {
  bool no_crop = false;         // source view = whole image
  bool no_action = false;       // action embedding zeroed in the predictor
  bool no_gate = false;         // direct sum of source and predicted branches
  bool mask_source = false;     // random cell masking instead of cropping
  bool predict_entire = false;  // mask block covers the whole grid
  bool average_then_map = false;  // average rows before mapping in the fusion head
};

struct TrainConfig {
  std::string preset = "paper";

  double lr = 1e-5;
  double weight_decay = 0.1;
  int warmup_steps = 10000;
  int batch_size = 1024;
  int max_steps = 100000;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // 0 disables clipping

  CropRanges crop;

  int predictor_depth = 12;
  int predictor_width = 384;
  int predictor_heads = 8;
  int predictor_mlp_ratio = 4;
  std::string residual_wiring = "literal";  // literal | standard

  double tau = 100.0;
  AblationFlags ablation;

  std::string encoder = "paper_scale";
  int embed_dim = 1024;
  int grid = 16;
  int patch = 14;
  std::uint64_t encoder_seed = 0;

  int checkpoint_every = 0;  // 0: final checkpoint only
  int workers = 1;

  static TrainConfig paper();
  /// Desk-scale settings used by the tests and the synthetic corpus.
  static TrainConfig toy();

  void validate() const;
  /// Every key with its canonical string value, in key order.
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

const std::vector<std::string>& config_keys();
/// Closest valid key by edit distance.
std::string nearest_config_key(std::string_view key);

/// Sets one key; throws ConfigError naming the key (and the nearest valid
/// key when unknown).
void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value);

/// "preset" is applied first; remaining keys override it.
TrainConfig parse_config(std::string_view text);
TrainConfig parse_config(const std::map<std::string, std::string>& kv);
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace wmcir
