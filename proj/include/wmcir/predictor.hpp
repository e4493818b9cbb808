#pragma once

// Target content predictor: a narrow transformer over
// [action token; source patch tokens; mask tokens] that predicts the latent
// features of the masked target patches.

#include "wmcir/autodiff.hpp"
#include "wmcir/rng.hpp"
#include "wmcir/view_forge.hpp"

#include <string>
#include <vector>

namespace wmcir {

enum class ResidualWiring {
  literal,   // X_i = FFW(X_att + X_{i-1}) + X_att
  standard,  // X = X + X_att; X = X + FFW(X)
};

struct PredictorConfig {
  int in_dim = 32;  // encoder width d
  int width = 64;   // predictor width p
  int depth = 4;
  int heads = 8;
  int grid = 4;
  int mlp_ratio = 4;
  ResidualWiring wiring = ResidualWiring::literal;

  void validate() const;
};

struct PredictorOutput {
  Var action_out;       // 1 x p
  Var enhanced_source;  // g^2 x p
  Var predicted;        // |B| x p, rows in MaskBlock::indices order
};

class ContentPredictor {
 public:
  /// Registers "predictor.*" parameters in params.
  ContentPredictor(const PredictorConfig& cfg, ParameterSet& params, Rng& init_rng);

  const PredictorConfig& config() const { return cfg_; }

  /// Shared d -> p projection (action, source patches and loss targets).
  Var project(Tape& tape, Var x) const;
  /// Shared mask vector plus positional embedding of each block position.
  Var build_mask_tokens(Tape& tape, const MaskBlock& block) const;

  /// zero_action replaces the action embedding by zeros ("w/o action").
  PredictorOutput forward(Tape& tape, Var action, Var source_patches, const MaskBlock& block,
                          bool zero_action = false) const;

 private:
  struct Block {
    Parameter *ln1_gain, *ln1_bias, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    Parameter *ln2_gain, *ln2_bias, *w1, *b1, *w2, *b2;
  };

  Var attention(Tape& tape, const Block& b, Var x) const;
  Var feed_forward(Tape& tape, const Block& b, Var x) const;

  PredictorConfig cfg_;
  Parameter* in_w_;
  Parameter* in_b_;
  Parameter* mask_token_;
  Parameter* pos_embed_;
  std::vector<Block> blocks_;
};

/// Sum over block rows of squared L2 distances.
double prediction_loss(const Mat& predicted, const Mat& target);
Var prediction_loss(Var predicted, Var target);

/// 2-D sine-cosine table (grid^2 x width); width must be divisible by 4.
Mat sincos_position_table(int grid, int width);

}  // namespace wmcir
