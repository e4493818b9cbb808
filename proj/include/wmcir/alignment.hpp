#pragma once

// Predictive cross-modal alignment: tanh-gated fusion of predicted and source
// content into a pseudo-word token, and the symmetric contrastive loss that
// aligns the prompted sentence embedding with the target image.

#include "wmcir/autodiff.hpp"
#include "wmcir/encoders.hpp"
#include "wmcir/rng.hpp"

#include <string_view>

namespace wmcir {

enum class FusionOrder {
  map_then_average,  // tanh(a) * mean(f_Mp(rows))
  average_then_map,  // f_Mp(tanh(a) * mean(rows))
};

struct FusionConfig {
  int width = 64;  // predictor width p
  int dim = 32;    // token embedding width d
  bool gated = true;
  FusionOrder order = FusionOrder::map_then_average;
};

/// Three linear layers with gelu in between; names "<prefix>.{0,1,2}.{weight,bias}".
class Mlp3 {
 public:
  Mlp3(std::string_view prefix, int in, int hidden, int out, ParameterSet& params, Rng& rng);
  Var operator()(Tape& tape, Var x) const;

 private:
  Parameter* w_[3];
  Parameter* b_[3];
};

class FusionHead {
 public:
  /// Registers "fusion.*" parameters; the gate scalar starts at 0.
  FusionHead(const FusionConfig& cfg, ParameterSet& params, Rng& rng);

  const FusionConfig& config() const { return cfg_; }

  /// S* = f_Ms(v_xg) + tanh(gate) * Avg(f_Mp([enhanced; predicted])).
  Var fuse(Tape& tape, Var enhanced_source, Var predicted, Var source_global) const;
  Var source_mapping(Tape& tape, Var source_global) const { return f_ms_(tape, source_global); }

  /// Effective multiplier of the prediction branch (1 when ungated).
  double gate_value() const;
  Parameter& gate() { return *gate_; }

 private:
  FusionConfig cfg_;
  Mlp3 f_mp_;
  Mlp3 f_ms_;
  Parameter* gate_;
};

/// L_t2i + L_i2t over L2-normalized rows with logits tau * t_i . v_j.
double contrastive_loss(const Mat& text, const Mat& image, double tau);
Var contrastive_loss(Var text, Var image, double tau);

/// L = L_pred + L_align; throws on non-finite input.
double total_loss(double prediction, double alignment);
Var total_loss(Var prediction, Var alignment);

inline constexpr std::string_view kTrainingPrompt = "a photo of [*]";

/// "a photo of" followed by the injected pseudo-token.
PromptSequence build_training_prompt(const TextEncoder& text, Var pseudo);

}  // namespace wmcir
