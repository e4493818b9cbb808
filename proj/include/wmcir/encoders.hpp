#pragma once

// Frozen dual-encoder abstraction.
//
// The vision side maps an image to one global vector plus a g x g grid of
// patch vectors. The text side maps a token sequence to per-token embeddings
// and a summary (CLS) vector; a prompt may carry one placeholder slot whose
// token embedding is replaced by a continuous pseudo-token. Encoder weights
// are never trained, but gradients flow through the text encoder into the
// injected pseudo-token.

#include "wmcir/autodiff.hpp"
#include "wmcir/image.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wmcir {

struct EncoderProfile {
  std::string name = "toy";
  int dim = 32;
  int grid = 4;
  int patch = 16;
  int context = 32;
  std::uint64_t seed = 0;
  bool frozen = true;

  int image_size() const { return grid * patch; }
  /// Tokens per image: one global plus grid^2 patches.
  int tokens() const { return grid * grid + 1; }

  static EncoderProfile toy();
  /// ViT-L/14 geometry: 224 px input, 16 x 16 patches, d = 1024.
  static EncoderProfile paper_scale();
  /// Resolves "toy" and "paper_scale"; throws on other names.
  static EncoderProfile named(std::string_view name);
};

struct VisualFeatures {
  RowVec global;  // 1 x d
  Mat patches;    // grid^2 x d, row-major grid order
  int grid = 0;
};

class VisionEncoder {
 public:
  virtual ~VisionEncoder() = default;
  virtual const EncoderProfile& profile() const = 0;
  /// Input must be exactly image_size() square; throws otherwise.
  virtual VisualFeatures encode_image(const Image& img) const = 0;
  virtual std::uint64_t weights_checksum() const = 0;

  /// Bilinear resize to the input resolution, then encode.
  VisualFeatures encode_any(const Image& img) const;
};

inline constexpr int kUnkId = 0;
inline constexpr int kPlaceholderId = 1;
inline constexpr std::string_view kPlaceholderToken = "[*]";

struct PromptSequence {
  std::vector<int> token_ids;
  std::optional<Var> injected;

  /// Position of the single placeholder; throws unless exactly one exists.
  std::size_t placeholder_index() const;
};

struct TextEncoding {
  Mat tokens;  // n x d
  RowVec cls;  // 1 x d
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual const EncoderProfile& profile() const = 0;
  virtual std::vector<int> tokenize(std::string_view text) const = 0;
  virtual std::string detokenize(const std::vector<int>& ids) const = 0;
  /// Encodes text as-is; a bare placeholder uses its reserved embedding.
  virtual TextEncoding encode_text(std::string_view text) const = 0;
  /// Sentence embedding of a prompt with the pseudo-token injected, on tape.
  virtual Var encode_prompt(Tape& tape, const PromptSequence& seq) const = 0;
  virtual std::uint64_t weights_checksum() const = 0;

  /// Tokenizes text that must contain exactly one placeholder.
  PromptSequence make_prompt(std::string_view text) const;
  /// Convenience: constant pseudo-token, no gradient.
  RowVec encode_prompt(std::string_view text, const RowVec& pseudo) const;
};

/// Patch flattening + seeded projection + one frozen attention/MLP mixing
/// layer for the patch features; the global feature pools random responses
/// to local contrast and adds a mean-colour term.
class ToyVisionEncoder final : public VisionEncoder {
 public:
  explicit ToyVisionEncoder(EncoderProfile profile);
  const EncoderProfile& profile() const override { return profile_; }
  VisualFeatures encode_image(const Image& img) const override;
  std::uint64_t weights_checksum() const override;

 private:
  EncoderProfile profile_;
  Mat patch_proj_, pos_, cls_, wq_, wk_, wv_, w1_, w2_, w_contrast_, w_color_;
};

/// Seeded embedding table + one frozen self-attention layer; the summary
/// vector is the mean over positions, projected.
class ToyTextEncoder final : public TextEncoder {
 public:
  explicit ToyTextEncoder(EncoderProfile profile);
  const EncoderProfile& profile() const override { return profile_; }
  std::vector<int> tokenize(std::string_view text) const override;
  std::string detokenize(const std::vector<int>& ids) const override;
  TextEncoding encode_text(std::string_view text) const override;
  Var encode_prompt(Tape& tape, const PromptSequence& seq) const override;
  std::uint64_t weights_checksum() const override;

  const std::vector<std::string>& vocabulary() const { return vocab_; }

 private:
  Var forward(Tape& tape, const std::vector<int>& ids, std::optional<Var> injected, Var* tokens_out) const;

  EncoderProfile profile_;
  std::vector<std::string> vocab_;
  Mat embed_, pos_, wq_, wk_, wv_, out_;
};

/// Frozen encoder pair sharing one profile.
struct EncoderPair {
  std::shared_ptr<const VisionEncoder> vision;
  std::shared_ptr<const TextEncoder> text;

  std::uint64_t checksum() const;
};

/// Builds the encoders for a profile. Only the seeded toy architecture ships;
/// pretrained backbones plug in by implementing VisionEncoder/TextEncoder.
EncoderPair make_encoders(const EncoderProfile& profile);

}  // namespace wmcir
