#include "wmcir/alignment.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wmcir {

Mlp3::Mlp3(std::string_view prefix, int in, int hidden, int out, ParameterSet& params, Rng& rng) {
  const int dims[4] = {in, hidden, hidden, out};
  for (int i = 0; i < 3; ++i) {
    Mat w(dims[i], dims[i + 1]);
    const double sd = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal() * sd;
    const std::string base = std::string(prefix) + "." + std::to_string(i);
    w_[i] = &params.add(base + ".weight", std::move(w));
    b_[i] = &params.add(base + ".bias", Mat::Zero(1, dims[i + 1]));
  }
}

Var Mlp3::operator()(Tape& tape, Var x) const {
  for (int i = 0; i < 3; ++i) {
    x = ad::add_row(ad::matmul(x, tape.param(*w_[i])), tape.param(*b_[i]));
    if (i < 2) x = ad::gelu(x);
  }
  return x;
}

FusionHead::FusionHead(const FusionConfig& cfg, ParameterSet& params, Rng& rng)
    : cfg_(cfg),
      f_mp_("fusion.f_mp", cfg.width, cfg.dim, cfg.dim, params, rng),
      f_ms_("fusion.f_ms", cfg.dim, cfg.dim, cfg.dim, params, rng),
      gate_(&params.add("fusion.gate_alpha", Mat::Zero(1, 1), false)) {}

double FusionHead::gate_value() const { return cfg_.gated ? std::tanh(gate_->value(0, 0)) : 1.0; }

Var FusionHead::fuse(Tape& tape, Var enhanced_source, Var predicted, Var source_global) const {
  if (enhanced_source.cols() != cfg_.width || predicted.cols() != cfg_.width)
    throw std::invalid_argument("fuse: predictor rows must have width " + std::to_string(cfg_.width));
  if (source_global.rows() != 1 || source_global.cols() != cfg_.dim)
    throw std::invalid_argument("fuse: global source feature must be 1 x " + std::to_string(cfg_.dim));
  const Var parts[] = {enhanced_source, predicted};
  Var rows = ad::concat_rows(parts);
  Var source_term = f_ms_(tape, source_global);
  Var predicted_term;
  if (cfg_.order == FusionOrder::map_then_average) {
    predicted_term = ad::mean_rows(f_mp_(tape, rows));
    if (cfg_.gated) predicted_term = ad::scalar_mul(ad::tanh(tape.param(*gate_)), predicted_term);
  } else {
    Var pooled = ad::mean_rows(rows);
    if (cfg_.gated) pooled = ad::scalar_mul(ad::tanh(tape.param(*gate_)), pooled);
    predicted_term = f_mp_(tape, pooled);
  }
  return ad::add(source_term, predicted_term);
}

namespace {

void check_batch(Eigen::Index tr, Eigen::Index tc, Eigen::Index ir, Eigen::Index ic, double tau) {
  if (tr != ir || tc != ic) throw std::invalid_argument("contrastive_loss: text and image batches differ in shape");
  if (tr < 2) throw std::invalid_argument("contrastive_loss: batch size must be >= 2");
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be > 0");
}

}  // namespace

Var contrastive_loss(Var text, Var image, double tau) {
  check_batch(text.rows(), text.cols(), image.rows(), image.cols(), tau);
  Var logits = ad::scale(ad::matmul(ad::normalize_rows(text), ad::transpose(ad::normalize_rows(image))), tau);
  return ad::add(ad::diag_cross_entropy(logits), ad::diag_cross_entropy(ad::transpose(logits)));
}

double contrastive_loss(const Mat& text, const Mat& image, double tau) {
  Tape tape;
  return contrastive_loss(tape.constant(text), tape.constant(image), tau).scalar();
}

double total_loss(double prediction, double alignment) {
  if (!std::isfinite(prediction) || !std::isfinite(alignment))
    throw std::domain_error("total_loss: non-finite component");
  return prediction + alignment;
}

Var total_loss(Var prediction, Var alignment) {
  total_loss(prediction.scalar(), alignment.scalar());
  return ad::add(prediction, alignment);
}

PromptSequence build_training_prompt(const TextEncoder& text, Var pseudo) {
  PromptSequence seq = text.make_prompt(kTrainingPrompt);
  seq.injected = pseudo;
  return seq;
}

}  // namespace wmcir
