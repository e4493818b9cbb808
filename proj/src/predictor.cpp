#include "wmcir/predictor.hpp"

#include <cmath>
#include <stdexcept>

namespace wmcir {

namespace {

Mat lecun(Rng& rng, int fan_in, int fan_out) {
  Mat m(fan_in, fan_out);
  const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal() * sd;
  return m;
}

}  // namespace

void PredictorConfig::validate() const {
  if (in_dim < 1 || width < 1 || grid < 2 || mlp_ratio < 1) throw std::invalid_argument("predictor: bad dimensions");
  if (depth < 0) throw std::invalid_argument("predictor: depth must be >= 0");
  if (heads < 1 || width % heads != 0)
    throw std::invalid_argument("predictor: heads (" + std::to_string(heads) + ") must divide width (" +
                                std::to_string(width) + ")");
}

Mat sincos_position_table(int grid, int width) {
  if (width % 4 != 0) throw std::invalid_argument("sincos_position_table: width must be divisible by 4");
  const int quarter = width / 4;
  Mat t(grid * grid, width);
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c)
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        const int row = r * grid + c;
        t(row, i) = std::sin(r * omega);
        t(row, quarter + i) = std::cos(r * omega);
        t(row, 2 * quarter + i) = std::sin(c * omega);
        t(row, 3 * quarter + i) = std::cos(c * omega);
      }
  return t;
}

ContentPredictor::ContentPredictor(const PredictorConfig& cfg, ParameterSet& params, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.in_dim, p = cfg_.width, hidden = cfg_.width * cfg_.mlp_ratio;
  in_w_ = &params.add("predictor.in_proj.weight", lecun(rng, d, p));
  in_b_ = &params.add("predictor.in_proj.bias", Mat::Zero(1, p));
  Mat mask(1, p);
  for (Eigen::Index i = 0; i < p; ++i) mask(0, i) = rng.normal() * 0.02;
  mask_token_ = &params.add("predictor.mask_token", mask, false);
  Mat pos = (p % 4 == 0) ? sincos_position_table(cfg_.grid, p) : lecun(rng, p, cfg_.grid * cfg_.grid).transpose();
  pos_embed_ = &params.add("predictor.pos_embed", pos, false);

  for (int i = 0; i < cfg_.depth; ++i) {
    const std::string pre = "predictor.blocks." + std::to_string(i) + ".";
    Block b{};
    b.ln1_gain = &params.add(pre + "ln1.gain", Mat::Ones(1, p));
    b.ln1_bias = &params.add(pre + "ln1.bias", Mat::Zero(1, p));
    b.wq = &params.add(pre + "attn.wq", lecun(rng, p, p));
    b.bq = &params.add(pre + "attn.bq", Mat::Zero(1, p));
    b.wk = &params.add(pre + "attn.wk", lecun(rng, p, p));
    b.bk = &params.add(pre + "attn.bk", Mat::Zero(1, p));
    b.wv = &params.add(pre + "attn.wv", lecun(rng, p, p));
    b.bv = &params.add(pre + "attn.bv", Mat::Zero(1, p));
    b.wo = &params.add(pre + "attn.wo", lecun(rng, p, p));
    b.bo = &params.add(pre + "attn.bo", Mat::Zero(1, p));
    b.ln2_gain = &params.add(pre + "ln2.gain", Mat::Ones(1, p));
    b.ln2_bias = &params.add(pre + "ln2.bias", Mat::Zero(1, p));
    b.w1 = &params.add(pre + "ffn.w1", lecun(rng, p, hidden));
    b.b1 = &params.add(pre + "ffn.b1", Mat::Zero(1, hidden));
    b.w2 = &params.add(pre + "ffn.w2", lecun(rng, hidden, p));
    b.b2 = &params.add(pre + "ffn.b2", Mat::Zero(1, p));
    blocks_.push_back(b);
  }
}

Var ContentPredictor::project(Tape& tape, Var x) const {
  if (x.cols() != cfg_.in_dim)
    throw std::invalid_argument("predictor input width " + std::to_string(x.cols()) + ", expected " +
                                std::to_string(cfg_.in_dim));
  return ad::add_row(ad::matmul(x, tape.param(*in_w_)), tape.param(*in_b_));
}

Var ContentPredictor::build_mask_tokens(Tape& tape, const MaskBlock& block) const {
  if (block.grid != cfg_.grid) throw std::invalid_argument("mask block grid does not match predictor grid");
  if (block.indices.empty()) throw std::invalid_argument("mask block is empty");
  Var pos = ad::gather_rows(tape.param(*pos_embed_), block.indices);
  return ad::add_row(pos, tape.param(*mask_token_));
}

Var ContentPredictor::attention(Tape& tape, const Block& b, Var x) const {
  Var q = ad::add_row(ad::matmul(x, tape.param(*b.wq)), tape.param(*b.bq));
  Var k = ad::add_row(ad::matmul(x, tape.param(*b.wk)), tape.param(*b.bk));
  Var v = ad::add_row(ad::matmul(x, tape.param(*b.wv)), tape.param(*b.bv));
  const int dh = cfg_.width / cfg_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(k, h * dh, dh);
    Var vh = ad::slice_cols(v, h * dh, dh);
    Var a = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
    heads.push_back(ad::matmul(a, vh));
  }
  return ad::add_row(ad::matmul(ad::concat_cols(heads), tape.param(*b.wo)), tape.param(*b.bo));
}

Var ContentPredictor::feed_forward(Tape& tape, const Block& b, Var x) const {
  Var h = ad::gelu(ad::add_row(ad::matmul(x, tape.param(*b.w1)), tape.param(*b.b1)));
  return ad::add_row(ad::matmul(h, tape.param(*b.w2)), tape.param(*b.b2));
}

PredictorOutput ContentPredictor::forward(Tape& tape, Var action, Var source_patches, const MaskBlock& block,
                                          bool zero_action) const {
  const int cells = cfg_.grid * cfg_.grid;
  if (action.rows() != 1 || action.cols() != cfg_.in_dim)
    throw std::invalid_argument("action embedding must be 1 x " + std::to_string(cfg_.in_dim));
  if (source_patches.rows() != cells || source_patches.cols() != cfg_.in_dim)
    throw std::invalid_argument("source patches must be " + std::to_string(cells) + " x " +
                                std::to_string(cfg_.in_dim));
  if (zero_action) action = tape.constant(Mat::Zero(1, cfg_.in_dim));

  Var act = project(tape, action);
  Var src = ad::add(project(tape, source_patches), tape.param(*pos_embed_));
  Var masks = build_mask_tokens(tape, block);
  const Var parts[] = {act, src, masks};
  Var x = ad::concat_rows(parts);

  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    Var x_att = attention(tape, b, ad::layer_norm(x, tape.param(*b.ln1_gain), tape.param(*b.ln1_bias)));
    if (cfg_.wiring == ResidualWiring::literal) {
      Var ffw_in = ad::layer_norm(ad::add(x_att, x), tape.param(*b.ln2_gain), tape.param(*b.ln2_bias));
      x = ad::add(feed_forward(tape, b, ffw_in), x_att);
    } else {
      x = ad::add(x, x_att);
      x = ad::add(x, feed_forward(tape, b, ad::layer_norm(x, tape.param(*b.ln2_gain), tape.param(*b.ln2_bias))));
    }
    if (!x.value().allFinite())
      throw std::runtime_error("non-finite activations after predictor block " + std::to_string(i));
  }

  const auto nb = static_cast<Eigen::Index>(block.size());
  return {ad::slice_rows(x, 0, 1), ad::slice_rows(x, 1, cells), ad::slice_rows(x, 1 + cells, nb)};
}

double prediction_loss(const Mat& predicted, const Mat& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
    throw std::invalid_argument("prediction_loss: shape mismatch");
  return (predicted - target).squaredNorm();
}

Var prediction_loss(Var predicted, Var target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
    throw std::invalid_argument("prediction_loss: shape mismatch");
  return ad::sum_squares(ad::sub(predicted, target));
}

}  // namespace wmcir
