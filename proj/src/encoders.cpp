#include "wmcir/encoders.hpp"

#include "wmcir/rng.hpp"
#include "wmcir/view_forge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace wmcir {

namespace {

Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal() * stddev;
  return m;
}

std::uint64_t fnv1a(std::uint64_t h, const Mat& m) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
  const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

// Per-coordinate scale of vocabulary embeddings.
constexpr double kTokenScale = 0.02;

Mat softmax_rows_plain(const Mat& a) {
  Mat y(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    y.row(r) = (a.row(r).array() - a.row(r).maxCoeff()).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

}  // namespace

// ------------------------------------------------------------------ profiles

EncoderProfile EncoderProfile::toy() { return EncoderProfile{}; }

EncoderProfile EncoderProfile::paper_scale() {
  EncoderProfile p;
  p.name = "paper_scale";
  p.dim = 1024;
  p.grid = 16;
  p.patch = 14;
  p.context = 77;
  return p;
}

EncoderProfile EncoderProfile::named(std::string_view name) {
  if (name == "toy") return toy();
  if (name == "paper_scale") return paper_scale();
  throw std::invalid_argument("unknown encoder profile '" + std::string(name) + "' (expected toy or paper_scale)");
}

// -------------------------------------------------------------------- vision

VisualFeatures VisionEncoder::encode_any(const Image& img) const {
  const int s = profile().image_size();
  if (img.height == s && img.width == s) return encode_image(img);
  return encode_image(resize_bilinear(img, s, s));
}

ToyVisionEncoder::ToyVisionEncoder(EncoderProfile profile) : profile_(std::move(profile)) {
  const int d = profile_.dim, fan_in = profile_.patch * profile_.patch * 3;
  if (d < 1 || profile_.grid < 1 || profile_.patch < 1) throw std::invalid_argument("ToyVisionEncoder: bad profile");
  Rng rng(derive_seed(profile_.seed, 0x715102));
  patch_proj_ = gaussian(rng, fan_in, d, 2.0 / std::sqrt(fan_in));
  pos_ = gaussian(rng, profile_.grid * profile_.grid, d, 0.1);
  cls_ = gaussian(rng, 1, d, 0.1);
  wq_ = gaussian(rng, d, d, 2.0 / std::sqrt(d));
  wk_ = gaussian(rng, d, d, 2.0 / std::sqrt(d));
  wv_ = gaussian(rng, d, d, 1.0 / std::sqrt(d));
  w1_ = gaussian(rng, d, 2 * d, 2.0 / std::sqrt(d));
  w2_ = gaussian(rng, 2 * d, d, 1.0 / std::sqrt(2 * d));
  w_contrast_ = gaussian(rng, fan_in, d, 1.0 / std::sqrt(fan_in));
  w_color_ = gaussian(rng, 3, d, 1.0);
}

VisualFeatures ToyVisionEncoder::encode_image(const Image& img) const {
  const int g = profile_.grid, ps = profile_.patch, s = profile_.image_size();
  if (img.height != s || img.width != s)
    throw std::invalid_argument("encode_image: expected " + std::to_string(s) + "x" + std::to_string(s) +
                                " input for a " + std::to_string(g) + "x" + std::to_string(g) + " grid of " +
                                std::to_string(ps) + " px patches, got " + std::to_string(img.width) + "x" +
                                std::to_string(img.height));
  Mat patches(g * g, ps * ps * 3);
  for (int gr = 0; gr < g; ++gr)
    for (int gc = 0; gc < g; ++gc) {
      Eigen::Index k = 0;
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          for (int c = 0; c < 3; ++c) patches(gr * g + gc, k++) = img.at(gr * ps + y, gc * ps + x, c) - 0.5;
    }
  Mat x(g * g + 1, profile_.dim);
  x.row(0) = cls_;
  x.bottomRows(g * g) = patches * patch_proj_ + pos_;
  const Mat attn = softmax_rows_plain((x * wq_) * (x * wk_).transpose() / std::sqrt(static_cast<double>(profile_.dim)));
  Mat h = x + attn * (x * wv_);
  h += (h * w1_).array().tanh().matrix() * w2_;
  // Global summary: pooled responses to local contrast (pixels against the
  // image mean colour) plus a mean-colour term. A plain attention summary is
  // dominated by large uniform regions.
  RowVec mean_color = RowVec::Zero(3);
  for (Eigen::Index k = 0; k < patches.cols(); ++k) mean_color(k % 3) += patches.col(k).sum();
  mean_color /= static_cast<double>(patches.rows()) * ps * ps;
  Mat centered = patches;
  for (Eigen::Index k = 0; k < centered.cols(); ++k) centered.col(k).array() -= mean_color(k % 3);
  const RowVec contrast = (centered * w_contrast_).array().tanh().matrix().colwise().mean();
  const RowVec color = (mean_color * w_color_).array().tanh().matrix();
  const double unit = std::sqrt(profile_.dim / 2.0);
  VisualFeatures f;
  f.grid = g;
  f.global = unit * (contrast / std::max(contrast.norm(), 1e-12) + color / std::max(color.norm(), 1e-12));
  f.patches = h.bottomRows(g * g);
  if (!f.patches.allFinite() || !f.global.allFinite()) throw std::runtime_error("encode_image: non-finite features");
  return f;
}

std::uint64_t ToyVisionEncoder::weights_checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const Mat* m : {&patch_proj_, &pos_, &cls_, &wq_, &wk_, &wv_, &w1_, &w2_, &w_contrast_, &w_color_}) h = fnv1a(h, *m);
  return h;
}

// ---------------------------------------------------------------------- text

std::size_t PromptSequence::placeholder_index() const {
  const auto n = std::count(token_ids.begin(), token_ids.end(), kPlaceholderId);
  if (n != 1)
    throw std::invalid_argument("prompt must contain exactly one placeholder, found " + std::to_string(n));
  return static_cast<std::size_t>(std::find(token_ids.begin(), token_ids.end(), kPlaceholderId) - token_ids.begin());
}

PromptSequence TextEncoder::make_prompt(std::string_view text) const {
  PromptSequence seq{tokenize(text), std::nullopt};
  seq.placeholder_index();
  return seq;
}

RowVec TextEncoder::encode_prompt(std::string_view text, const RowVec& pseudo) const {
  Tape tape;
  PromptSequence seq = make_prompt(text);
  seq.injected = tape.constant(pseudo);
  return encode_prompt(tape, seq).value();
}

namespace {

std::vector<std::string> build_vocabulary() {
  std::vector<std::string> v{"[UNK]", std::string(kPlaceholderToken), ","};
  const std::vector<std::string> words{
      "a", "an", "the", "photo", "of", "and", "on", "in", "with", "image", "picture", "field",
      // domain tags
      "cartoon", "origami", "toy", "sculpture", "painting", "sketch", "drawing", "embroidery", "graffiti",
      // object tags
      "cat", "dog", "person", "car", "bird", "horse", "tree", "boat", "chair", "table",
      // manipulation vocabulary
      "make", "it", "change", "to", "turn", "into", "add", "remove", "bigger", "smaller", "left", "right",
      "top", "bottom", "background", "color", "shape"};
  for (const auto& w : words) v.push_back(w);
  for (const auto& w : synth_vocabulary()) v.push_back(w);
  std::vector<std::string> out;
  for (const auto& w : v)
    if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  return out;
}

}  // namespace

ToyTextEncoder::ToyTextEncoder(EncoderProfile profile) : profile_(std::move(profile)), vocab_(build_vocabulary()) {
  const int d = profile_.dim;
  if (d < 1 || profile_.context < 2) throw std::invalid_argument("ToyTextEncoder: bad profile");
  Rng rng(derive_seed(profile_.seed, 0x7e37));
  embed_ = gaussian(rng, static_cast<Eigen::Index>(vocab_.size()), d, kTokenScale);
  pos_ = gaussian(rng, profile_.context, d, kTokenScale);
  wq_ = gaussian(rng, d, d, 1.0 / (std::sqrt(d) * kTokenScale));
  wk_ = gaussian(rng, d, d, 1.0 / (std::sqrt(d) * kTokenScale));
  wv_ = gaussian(rng, d, d, 4.0 / std::sqrt(d));
  out_ = gaussian(rng, d, d, 1.0 / std::sqrt(d));
}

std::vector<int> ToyTextEncoder::tokenize(std::string_view text) const {
  std::string spaced;
  for (char ch : text) {
    if (ch == ',') {
      spaced += " , ";
    } else {
      spaced += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  std::vector<int> ids;
  std::size_t i = 0;
  while (i < spaced.size()) {
    while (i < spaced.size() && std::isspace(static_cast<unsigned char>(spaced[i]))) ++i;
    std::size_t j = i;
    while (j < spaced.size() && !std::isspace(static_cast<unsigned char>(spaced[j]))) ++j;
    if (j == i) break;
    std::string word = spaced.substr(i, j - i);
    i = j;
    if (word == kPlaceholderToken) {
      ids.push_back(kPlaceholderId);
      continue;
    }
    if (word != ",") {
      std::erase_if(word, [](char c) { return c == '[' || c == ']' || c == '.' || c == ';' || c == ':' ||
                                              c == '!' || c == '?' || c == '"'; });
      if (word.empty()) continue;
    }
    const auto it = std::find(vocab_.begin(), vocab_.end(), word);
    ids.push_back(it == vocab_.end() ? kUnkId : static_cast<int>(it - vocab_.begin()));
  }
  return ids;
}

std::string ToyTextEncoder::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(vocab_.size())) throw std::out_of_range("detokenize: bad token id");
    const std::string& w = vocab_[static_cast<std::size_t>(id)];
    if (!out.empty() && w != ",") out += ' ';
    out += w;
  }
  return out;
}

Var ToyTextEncoder::forward(Tape& tape, const std::vector<int>& ids, std::optional<Var> injected,
                            Var* tokens_out) const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (n == 0) throw std::invalid_argument("encode_text: empty text");
  if (n > profile_.context)
    throw std::invalid_argument("text has " + std::to_string(n) + " tokens, context length is " +
                                std::to_string(profile_.context));
  const int d = profile_.dim;
  std::vector<Var> rows;
  Mat run(0, d);
  auto flush = [&] {
    if (run.rows() > 0) rows.push_back(tape.constant(run));
    run.resize(0, d);
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id == kPlaceholderId && injected) {
      if (injected->cols() != d || injected->rows() != 1)
        throw std::invalid_argument("pseudo-token must be 1 x " + std::to_string(d));
      flush();
      rows.push_back(*injected);
    } else {
      run.conservativeResize(run.rows() + 1, d);
      run.row(run.rows() - 1) = embed_.row(id);
    }
  }
  flush();
  Var x = ad::add(ad::concat_rows(rows), tape.constant(pos_.topRows(n)));
  Var q = ad::matmul(x, wq_);
  Var k = ad::matmul(x, wk_);
  Var v = ad::matmul(x, wv_);
  Var attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(d))));
  Var h = ad::add(x, ad::matmul(attn, v));
  if (tokens_out != nullptr) *tokens_out = h;
  return ad::matmul(ad::mean_rows(h), out_);
}

TextEncoding ToyTextEncoder::encode_text(std::string_view text) const {
  Tape tape;
  Var tokens;
  Var cls = forward(tape, tokenize(text), std::nullopt, &tokens);
  return {tokens.value(), cls.value()};
}

Var ToyTextEncoder::encode_prompt(Tape& tape, const PromptSequence& seq) const {
  seq.placeholder_index();
  if (!seq.injected) throw std::invalid_argument("encode_prompt: placeholder not filled");
  return forward(tape, seq.token_ids, seq.injected, nullptr);
}

std::uint64_t ToyTextEncoder::weights_checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const Mat* m : {&embed_, &pos_, &wq_, &wk_, &wv_, &out_}) h = fnv1a(h, *m);
  return h;
}

std::uint64_t EncoderPair::checksum() const { return mix_seed(vision->weights_checksum()) ^ text->weights_checksum(); }

EncoderPair make_encoders(const EncoderProfile& profile) {
  if (profile.name != "toy" && profile.name != "paper_scale")
    throw std::invalid_argument("no encoder implementation for profile '" + profile.name + "'");
  return {std::make_shared<ToyVisionEncoder>(profile), std::make_shared<ToyTextEncoder>(profile)};
}

}  // namespace wmcir
