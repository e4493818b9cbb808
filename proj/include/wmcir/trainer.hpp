#pragma once

// Training loop: batching, AdamW with linear warmup, checkpoints and the
// JSON-lines metrics stream.

#include "wmcir/checkpoint.hpp"
#include "wmcir/config.hpp"
#include "wmcir/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace wmcir {

/// lr * min(1, step / warmup_steps); full lr when warmup_steps == 0.
double learning_rate(const TrainConfig& cfg, int step);

/// Adam with decoupled weight decay. Parameters with decay == false are
/// only moved by the adaptive step.
class AdamW {
 public:
  void step(ParameterSet& params, double lr, const TrainConfig& cfg);

  int updates = 0;
  std::map<std::string, Mat> first_moment;
  std::map<std::string, Mat> second_moment;
};

struct StepMetrics {
  int step = 0;
  double l_pred = 0.0;
  double l_align = 0.0;
  double l_total = 0.0;
  double gate_value = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;

  nlohmann::json to_json() const;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::vector<RawPair> data);

  /// Deterministic batch for a step: epoch-wise shuffled pairs, per-item
  /// crops and mask blocks seeded from (seed, step, slot).
  std::vector<PreparedItem> prepare_batch(int step) const;
  StepMetrics train_step();
  StepMetrics train_step(std::span<const PreparedItem> batch);

  int step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const std::vector<RawPair>& data() const { return data_; }
  const AdamW& optimizer() const { return opt_; }

  Archive to_archive() const;
  void save(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer state and step from a checkpoint made
  /// with the same configuration.
  void restore(const Archive& archive);

 private:
  TrainConfig cfg_;
  std::vector<RawPair> data_;
  std::unique_ptr<Model> model_;
  AdamW opt_;
  int step_ = 0;
  std::uint64_t encoder_checksum_ = 0;
  std::vector<RowVec> actions_;
  std::vector<VisualFeatures> targets_;
  ViewConfig views_;
};

/// Rebuilds a model (frozen encoders + trained parameters) from a checkpoint.
std::unique_ptr<Model> load_model(const std::filesystem::path& checkpoint);
TrainConfig checkpoint_config(const Archive& archive);
Archive model_archive(const Model& model);
void load_parameters(ParameterSet& params, const Archive& archive);

struct RunResult {
  std::filesystem::path checkpoint;
  std::vector<StepMetrics> metrics;  // steps run in this invocation
};

/// Trains to cfg.max_steps writing <out>/metrics.jsonl, periodic
/// <out>/checkpoint_step<N>.ckpt and the final <out>/checkpoint.ckpt.
/// With resume, the metrics log is truncated to the checkpoint step and
/// continued.
RunResult run_training(const TrainConfig& cfg, const std::vector<RawPair>& data, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume = std::nullopt,
                       const std::function<void(const StepMetrics&)>& on_step = {});

}  // namespace wmcir
