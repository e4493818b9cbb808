#include "wmcir/model.hpp"

#include <stdexcept>

namespace wmcir {

EncoderProfile encoder_profile(const TrainConfig& cfg) {
  EncoderProfile p = EncoderProfile::named(cfg.encoder);
  p.dim = cfg.embed_dim;
  p.grid = cfg.grid;
  p.patch = cfg.patch;
  p.seed = cfg.encoder_seed;
  return p;
}

PredictorConfig predictor_config(const TrainConfig& cfg) {
  PredictorConfig p;
  p.in_dim = cfg.embed_dim;
  p.width = cfg.predictor_width;
  p.depth = cfg.predictor_depth;
  p.heads = cfg.predictor_heads;
  p.grid = cfg.grid;
  p.mlp_ratio = cfg.predictor_mlp_ratio;
  p.wiring = cfg.residual_wiring == "standard" ? ResidualWiring::standard : ResidualWiring::literal;
  return p;
}

FusionConfig fusion_config(const TrainConfig& cfg) {
  FusionConfig f;
  f.width = cfg.predictor_width;
  f.dim = cfg.embed_dim;
  f.gated = !cfg.ablation.no_gate;
  f.order = cfg.ablation.average_then_map ? FusionOrder::average_then_map : FusionOrder::map_then_average;
  return f;
}

Model::Model(const TrainConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      encoders_(make_encoders(encoder_profile(cfg))),
      init_rng_(derive_seed(cfg.seed, 0x1417)),
      predictor_(predictor_config(cfg), params_, init_rng_),
      fusion_(fusion_config(cfg), params_, init_rng_) {}

Var Model::pseudo_token(Tape& tape, const RowVec& action, const VisualFeatures& source, const MaskBlock& block,
                        PredictorOutput* out) const {
  PredictorOutput po =
      predictor_.forward(tape, tape.constant(action), tape.constant(source.patches), block, cfg_.ablation.no_action);
  if (out != nullptr) *out = po;
  return fusion_.fuse(tape, po.enhanced_source, po.predicted, tape.constant(source.global));
}

LossGraph build_loss(Tape& tape, const Model& model, std::span<const PreparedItem> batch) {
  if (batch.size() < 2) throw std::invalid_argument("build_loss: batch size must be >= 2");
  const TextEncoder& text = *model.encoders().text;
  std::vector<Var> prompts;
  Mat targets(static_cast<Eigen::Index>(batch.size()), model.config().embed_dim);
  Var pred_sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PreparedItem& item = batch[i];
    PredictorOutput po;
    Var pseudo = model.pseudo_token(tape, item.action, item.source, item.block, &po);
    Mat target_rows(static_cast<Eigen::Index>(item.block.size()), model.config().embed_dim);
    for (std::size_t r = 0; r < item.block.size(); ++r)
      target_rows.row(static_cast<Eigen::Index>(r)) = item.target.patches.row(item.block.indices[r]);
    Var target = model.predictor().project(tape, tape.constant(target_rows));
    Var l = prediction_loss(po.predicted, target);
    pred_sum = pred_sum.valid() ? ad::add(pred_sum, l) : l;
    prompts.push_back(text.encode_prompt(tape, build_training_prompt(text, pseudo)));
    targets.row(static_cast<Eigen::Index>(i)) = item.target.global;
  }
  LossGraph g;
  g.prediction = ad::scale(pred_sum, 1.0 / static_cast<double>(batch.size()));
  g.alignment = contrastive_loss(ad::concat_rows(prompts), tape.constant(targets), model.config().tau);
  g.total = total_loss(g.prediction, g.alignment);
  return g;
}

}  // namespace wmcir
