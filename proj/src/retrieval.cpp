#include "wmcir/retrieval.hpp"

#include "wmcir/checkpoint.hpp"
#include "wmcir/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace wmcir {

PromptTemplate parse_template(std::string_view name) {
  if (name == "domain_conversion" || name == "domain") return PromptTemplate::domain_conversion;
  if (name == "object_composition" || name == "objects") return PromptTemplate::object_composition;
  if (name == "sentence_manipulation" || name == "sentence") return PromptTemplate::sentence_manipulation;
  throw std::invalid_argument("unknown template '" + std::string(name) +
                              "' (expected domain_conversion, object_composition or sentence_manipulation)");
}

std::string template_name(PromptTemplate t) {
  switch (t) {
    case PromptTemplate::domain_conversion: return "domain_conversion";
    case PromptTemplate::object_composition: return "object_composition";
    case PromptTemplate::sentence_manipulation: return "sentence_manipulation";
  }
  return "?";
}

void QuerySpec::validate() const {
  const std::string who = "query '" + id + "': ";
  switch (templ) {
    case PromptTemplate::domain_conversion:
      if (slots.size() != 1) throw std::invalid_argument(who + "domain_conversion needs exactly one domain tag slot");
      break;
    case PromptTemplate::object_composition:
      if (slots.empty()) throw std::invalid_argument(who + "object_composition needs at least one object tag slot");
      break;
    case PromptTemplate::sentence_manipulation:
      if (!slots.empty()) throw std::invalid_argument(who + "sentence_manipulation takes no slots");
      break;
  }
  for (const auto& s : slots)
    if (s.empty()) throw std::invalid_argument(who + "empty template slot");
}

std::string render_prompt(const QuerySpec& q) {
  q.validate();
  switch (q.templ) {
    case PromptTemplate::domain_conversion:
      return "a " + q.slots[0] + " of [*]";
    case PromptTemplate::object_composition: {
      std::string out = "a photo of [*], ";
      for (std::size_t i = 0; i < q.slots.size(); ++i) {
        if (i > 0) out += (i + 1 == q.slots.size()) ? " and " : ", ";
        out += "[" + q.slots[i] + "]";
      }
      return out;
    }
    case PromptTemplate::sentence_manipulation:
      return q.text.empty() ? "a photo of [*]" : "a photo of [*], " + q.text;
  }
  return {};
}

RowVec compose_query(const Model& model, const QuerySpec& q) {
  const std::string prompt = render_prompt(q);
  const TextEncoder& text = *model.encoders().text;
  const RowVec action = text.encode_text(prompt).cls;
  const VisualFeatures source = model.encoders().vision->encode_any(q.reference);
  Tape tape;
  Var pseudo = model.pseudo_token(tape, action, source, full_mask_block(model.config().grid));
  return text.encode_prompt(prompt, pseudo.value());
}

// -------------------------------------------------------------------- gallery

void Gallery::validate() const {
  if (static_cast<Eigen::Index>(ids.size()) != features.rows())
    throw std::invalid_argument("gallery has " + std::to_string(ids.size()) + " ids but " +
                                std::to_string(features.rows()) + " feature rows");
  std::unordered_set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw std::invalid_argument("duplicate gallery id '" + id + "'");
  for (Eigen::Index r = 0; r < features.rows(); ++r)
    if (!features.row(r).allFinite())
      throw std::invalid_argument("gallery row for '" + ids[static_cast<std::size_t>(r)] + "' is not finite");
}

Gallery embed_gallery(const std::vector<RawPair>& items, const VisionEncoder& vision, int workers) {
  Gallery g;
  g.encoder_checksum = vision.weights_checksum();
  g.features.resize(static_cast<Eigen::Index>(items.size()), vision.profile().dim);
  for (const auto& it : items) g.ids.push_back(it.id);
  parallel_for(static_cast<int>(items.size()), workers, [&](int i) {
    g.features.row(i) = vision.encode_any(items[static_cast<std::size_t>(i)].image).global;
  });
  g.validate();
  return g;
}

Gallery embed_gallery(const std::filesystem::path& manifest, const VisionEncoder& vision, int workers) {
  const auto entries = read_manifest(manifest);
  const auto base = manifest.parent_path();
  std::vector<RawPair> items(entries.size());
  parallel_for(static_cast<int>(entries.size()), workers, [&](int i) {
    const auto& e = entries[static_cast<std::size_t>(i)];
    const auto path = base / e.image;
    RawPair& p = items[static_cast<std::size_t>(i)];
    p.id = e.id;
    p.caption = e.caption;
    try {
      p.image = read_ppm(path);
    } catch (const std::exception& ex) {
      throw std::runtime_error("cannot read gallery image " + path.string() + ": " + ex.what());
    }
  });
  return embed_gallery(items, vision, workers);
}

void save_gallery(const Gallery& g, const std::filesystem::path& path) {
  g.validate();
  Archive a;
  a.meta = {{"kind", "gallery"}, {"gallery_version", 1}, {"ids", g.ids}, {"encoder_checksum", g.encoder_checksum}};
  a.arrays.push_back({"features", g.features});
  write_archive(a, path);
}

Gallery load_gallery(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  if (a.meta.value("kind", "") != "gallery") throw std::runtime_error(path.string() + " is not a gallery file");
  if (a.meta.value("gallery_version", 0) != 1) throw std::runtime_error(path.string() + ": unsupported gallery version");
  Gallery g;
  g.ids = a.meta.at("ids").get<std::vector<std::string>>();
  g.encoder_checksum = a.meta.at("encoder_checksum").get<std::uint64_t>();
  g.features = a.array("features");
  g.validate();
  return g;
}

// -------------------------------------------------------------------- ranking

RankedRetrieval rank(const RowVec& query, const Gallery& gallery, Similarity sim) {
  if (gallery.ids.empty()) throw std::invalid_argument("cannot rank against an empty gallery");
  if (query.size() != gallery.features.cols())
    throw std::invalid_argument("query has dimension " + std::to_string(query.size()) + ", gallery has " +
                                std::to_string(gallery.features.cols()));
  const auto n = static_cast<std::size_t>(gallery.features.rows());
  std::vector<double> score(n);
  const double qn = query.norm();
  if (sim == Similarity::cosine && qn == 0.0) throw std::invalid_argument("cosine ranking of a zero query");
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = gallery.features.row(static_cast<Eigen::Index>(i));
    const double dot = row.dot(query);
    if (sim == Similarity::dot) {
      score[i] = dot;
    } else {
      const double rn = row.norm();
      score[i] = rn == 0.0 ? 0.0 : dot / (qn * rn);
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return gallery.ids[a] < gallery.ids[b];
  });
  RankedRetrieval r;
  r.ids.reserve(n);
  r.scores.reserve(n);
  for (auto i : order) {
    r.ids.push_back(gallery.ids[i]);
    r.scores.push_back(score[i]);
  }
  return r;
}

namespace {

// 1-based ranks of each truth; throws when a truth is missing.
std::vector<int> truth_ranks(const QueryResult& q) {
  if (q.truths.empty()) throw std::invalid_argument("query '" + q.query_id + "' has no ground-truth ids");
  std::unordered_map<std::string, int> pos;
  for (std::size_t i = 0; i < q.ranking.ids.size(); ++i) pos.emplace(q.ranking.ids[i], static_cast<int>(i) + 1);
  std::set<std::string> unique(q.truths.begin(), q.truths.end());
  std::vector<int> ranks;
  for (const auto& t : unique) {
    auto it = pos.find(t);
    if (it == pos.end())
      throw std::invalid_argument("query '" + q.query_id + "': truth id '" + t + "' is not in the gallery");
    ranks.push_back(it->second);
  }
  std::sort(ranks.begin(), ranks.end());
  return ranks;
}

void check_k(int k) {
  if (k < 1) throw std::invalid_argument("K must be >= 1, got " + std::to_string(k));
}

}  // namespace

double recall_at_k(std::span<const QueryResult> results, int k) {
  check_k(k);
  if (results.empty()) throw std::invalid_argument("recall_at_k: no queries");
  int hits = 0;
  for (const auto& q : results)
    if (truth_ranks(q).front() <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double map_at_k(std::span<const QueryResult> results, int k) {
  check_k(k);
  if (results.empty()) throw std::invalid_argument("map_at_k: no queries");
  double total = 0.0;
  for (const auto& q : results) {
    const auto ranks = truth_ranks(q);
    double ap = 0.0;
    int hits = 0;
    for (int r : ranks) {
      if (r > k) break;
      ++hits;
      ap += static_cast<double>(hits) / r;
    }
    total += ap / std::min<double>(k, static_cast<double>(ranks.size()));
  }
  return total / static_cast<double>(results.size());
}

// --------------------------------------------------------------------- report

std::vector<int> parse_k_list(std::string_view text) {
  std::vector<int> ks;
  std::string item;
  std::stringstream ss{std::string(text)};
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || k < 1)
      throw std::invalid_argument("bad K value '" + item + "' (expected positive integers like 1,5,10)");
    ks.push_back(k);
  }
  if (ks.empty()) throw std::invalid_argument("empty K list");
  return ks;
}

EvalReport evaluate(std::span<const QueryResult> results, std::vector<int> ks) {
  if (ks.empty()) throw std::invalid_argument("evaluate: empty K list");
  for (int k : ks) check_k(k);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  EvalReport rep;
  rep.ks = ks;
  for (int k : ks) {
    rep.recall.push_back(recall_at_k(results, k));
    rep.map.push_back(map_at_k(results, k));
  }
  for (const auto& q : results) {
    rep.query_ids.push_back(q.query_id);
    rep.first_hit_rank.push_back(truth_ranks(q).front());
  }
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["ks"] = ks;
  j["recall"] = nlohmann::json::object();
  j["map"] = nlohmann::json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    j["recall"][std::to_string(ks[i])] = recall[i];
    j["map"][std::to_string(ks[i])] = map[i];
  }
  j["num_queries"] = query_ids.size();
  j["queries"] = nlohmann::json::array();
  for (std::size_t i = 0; i < query_ids.size(); ++i)
    j["queries"].push_back({{"id", query_ids[i]}, {"first_hit_rank", first_hit_rank[i]}});
  return j;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(8) << "metric";
  for (int k : ks) os << std::right << std::setw(9) << ("K=" + std::to_string(k));
  os << "\n";
  auto row = [&](const char* name, const std::vector<double>& v) {
    os << std::left << std::setw(8) << name;
    for (double x : v) os << std::right << std::setw(9) << std::fixed << std::setprecision(4) << x;
    os << "\n";
  };
  row("R@K", recall);
  row("mAP@K", map);
  os << "queries: " << query_ids.size() << "\n";
  return os.str();
}

std::vector<QueryResult> run_queries(const Model& model, std::span<const QuerySpec> queries, const Gallery& gallery,
                                     Similarity sim, int workers) {
  if (gallery.dim() != model.config().embed_dim)
    throw std::invalid_argument("dimension mismatch: checkpoint embeds d=" + std::to_string(model.config().embed_dim) +
                                ", gallery features have d=" + std::to_string(gallery.dim()));
  if (gallery.encoder_checksum != model.encoders().vision->weights_checksum())
    throw std::invalid_argument("gallery was embedded with a different image encoder than the checkpoint uses");
  std::vector<QueryResult> out(queries.size());
  parallel_for(static_cast<int>(queries.size()), workers, [&](int i) {
    const QuerySpec& q = queries[static_cast<std::size_t>(i)];
    QueryResult& r = out[static_cast<std::size_t>(i)];
    r.query_id = q.id;
    r.truths = q.truths;
    r.ranking = rank(compose_query(model, q), gallery, sim);
  });
  return out;
}

// ----------------------------------------------------------------- query files

std::vector<QuerySpec> read_queries(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open query file: " + path.string());
  std::vector<QuerySpec> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + "invalid JSON: " + e.what());
    }
    if (!j.contains("reference")) throw std::invalid_argument(where + "missing 'reference'");
    QuerySpec q;
    char buf[32];
    std::snprintf(buf, sizeof buf, "q%05d", static_cast<int>(out.size()));
    q.id = j.value("id", std::string(buf));
    q.reference_path = j.at("reference").get<std::string>();
    q.text = j.value("text", "");
    try {
      q.templ = parse_template(j.value("template", "sentence_manipulation"));
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + e.what());
    }
    q.slots = j.value("slots", std::vector<std::string>{});
    q.truths = j.value("truths", std::vector<std::string>{});
    try {
      q.validate();
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + e.what());
    }
    const auto img = path.parent_path() / q.reference_path;
    try {
      q.reference = read_ppm(img);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + "cannot read reference " + img.string() + ": " + e.what());
    }
    out.push_back(std::move(q));
  }
  return out;
}

void write_queries(std::span<const QuerySpec> queries, const std::filesystem::path& path) {
  const auto dir = path.parent_path();
  std::filesystem::create_directories(dir / "refs");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write query file: " + path.string());
  for (const auto& q : queries) {
    q.validate();
    const std::string rel = "refs/" + q.id + ".ppm";
    write_ppm(q.reference, dir / rel);
    nlohmann::json j = {{"id", q.id},       {"reference", rel}, {"text", q.text},
                        {"template", template_name(q.templ)}, {"slots", q.slots}, {"truths", q.truths}};
    os << j.dump() << "\n";
  }
}

std::vector<QuerySpec> self_queries(const std::vector<RawPair>& pairs) {
  std::vector<QuerySpec> out;
  for (const auto& p : pairs) {
    QuerySpec q;
    q.id = p.id;
    q.reference = p.image;
    q.truths = {p.id};
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<QuerySpec> composite_queries(const std::vector<RawPair>& pairs, const CropRanges& ranges,
                                         std::uint64_t seed) {
  std::vector<QuerySpec> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const RawPair& p = pairs[i];
    Rng rng(derive_seed(seed, 0xc0de, i));
    const CropSpec c = sample_crop_spec(p.image.width, p.image.height, ranges, rng);
    QuerySpec q;
    q.id = p.id;
    q.reference = crop(p.image, c.x, c.y, c.width, c.height);
    q.text = p.caption;
    q.truths = {p.id};
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace wmcir
