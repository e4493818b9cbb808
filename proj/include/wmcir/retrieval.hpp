#pragma once

// Inference: prompt templates, composed queries, gallery ranking and
// Recall@K / mAP@K evaluation.

#include "wmcir/model.hpp"
#include "wmcir/view_forge.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wmcir {

enum class PromptTemplate {
  domain_conversion,      // "a {tag} of [*]"
  object_composition,     // "a photo of [*], [a], [b] and [c]"
  sentence_manipulation,  // "a photo of [*], {text}"
};

/// Accepts the full names and the short forms "domain", "objects", "sentence".
PromptTemplate parse_template(std::string_view name);
std::string template_name(PromptTemplate t);

struct QuerySpec {
  std::string id;
  Image reference;
  std::string text;
  PromptTemplate templ = PromptTemplate::sentence_manipulation;
  std::vector<std::string> slots;
  std::vector<std::string> truths;
  std::string reference_path;  // as read from a query file, if any

  /// Domain needs exactly one slot, objects at least one, sentence none.
  void validate() const;
};

/// Prompt text with the [*] placeholder. The manipulation text is appended
/// only for the sentence template; the other two carry their intent in slots.
std::string render_prompt(const QuerySpec& q);

/// Sentence embedding of the rendered prompt with the pseudo-token injected.
/// The rendered prompt is also the action; the predictor fills the whole grid.
RowVec compose_query(const Model& model, const QuerySpec& q);

struct Gallery {
  std::vector<std::string> ids;
  Mat features;  // one global feature per row
  std::uint64_t encoder_checksum = 0;

  /// Ids unique, rows finite, one row per id.
  void validate() const;
  int dim() const { return static_cast<int>(features.cols()); }
};

Gallery embed_gallery(const std::vector<RawPair>& items, const VisionEncoder& vision, int workers = 1);
Gallery embed_gallery(const std::filesystem::path& manifest, const VisionEncoder& vision, int workers = 1);
void save_gallery(const Gallery& g, const std::filesystem::path& path);
Gallery load_gallery(const std::filesystem::path& path);

enum class Similarity { cosine, dot };

struct RankedRetrieval {
  std::vector<std::string> ids;
  std::vector<double> scores;  // descending
};

/// Full ranking; equal scores are ordered by ascending id.
RankedRetrieval rank(const RowVec& query, const Gallery& gallery, Similarity sim = Similarity::cosine);

struct QueryResult {
  std::string query_id;
  RankedRetrieval ranking;
  std::vector<std::string> truths;
};

/// Fraction of queries with a truth id in the top k.
double recall_at_k(std::span<const QueryResult> results, int k);
/// Mean AP truncated at k, normalised by min(k, |truth|).
double map_at_k(std::span<const QueryResult> results, int k);

struct EvalReport {
  std::vector<int> ks;  // ascending, unique
  std::vector<double> recall;
  std::vector<double> map;
  std::vector<std::string> query_ids;
  std::vector<int> first_hit_rank;  // 1-based rank of the best-placed truth

  nlohmann::json to_json() const;
  std::string to_table() const;
};

EvalReport evaluate(std::span<const QueryResult> results, std::vector<int> ks);
std::vector<int> parse_k_list(std::string_view text);

/// Ranks every query against the gallery; checks dimensions first.
std::vector<QueryResult> run_queries(const Model& model, std::span<const QuerySpec> queries, const Gallery& gallery,
                                     Similarity sim = Similarity::cosine, int workers = 1);

/// JSON-lines {id?, reference, text, template, slots, truths}; reference
/// paths are relative to the file.
std::vector<QuerySpec> read_queries(const std::filesystem::path& path);
/// Writes the reference images to <dir>/refs/<id>.ppm beside the file.
void write_queries(std::span<const QuerySpec> queries, const std::filesystem::path& path);

/// Reference = whole image, empty text, truth = the image itself.
std::vector<QuerySpec> self_queries(const std::vector<RawPair>& pairs);
/// Reference = a seeded source crop, text = caption, truth = the original.
std::vector<QuerySpec> composite_queries(const std::vector<RawPair>& pairs, const CropRanges& ranges,
                                         std::uint64_t seed);

}  // namespace wmcir
