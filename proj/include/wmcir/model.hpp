#pragma once

// Trainable mapping network (predictor + fusion head) bundled with its frozen
// encoders, and the per-batch loss graph.

#include "wmcir/alignment.hpp"
#include "wmcir/config.hpp"
#include "wmcir/encoders.hpp"
#include "wmcir/predictor.hpp"

#include <span>
#include <string>
#include <vector>

namespace wmcir {

EncoderProfile encoder_profile(const TrainConfig& cfg);
PredictorConfig predictor_config(const TrainConfig& cfg);
FusionConfig fusion_config(const TrainConfig& cfg);

class Model {
 public:
  explicit Model(const TrainConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const TrainConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const ContentPredictor& predictor() const { return predictor_; }
  const FusionHead& fusion() const { return fusion_; }
  FusionHead& fusion() { return fusion_; }
  const EncoderPair& encoders() const { return encoders_; }

  /// Pseudo-token for one source view, on tape.
  Var pseudo_token(Tape& tape, const RowVec& action, const VisualFeatures& source, const MaskBlock& block,
                   PredictorOutput* out = nullptr) const;

 private:
  TrainConfig cfg_;
  EncoderPair encoders_;
  ParameterSet params_;
  Rng init_rng_;
  ContentPredictor predictor_;
  FusionHead fusion_;
};

/// One training item with frozen-encoder features precomputed.
struct PreparedItem {
  std::string id;
  RowVec action;
  VisualFeatures source;
  VisualFeatures target;
  MaskBlock block;
};

struct LossGraph {
  Var prediction;  // batch mean of per-item L_pred
  Var alignment;   // symmetric contrastive loss
  Var total;
};

LossGraph build_loss(Tape& tape, const Model& model, std::span<const PreparedItem> batch);

}  // namespace wmcir
