// wmcir: data synthesis, training, gallery embedding, retrieval, evaluation
// and self-verification from one entry point.

#include "wmcir/retrieval.hpp"
#include "wmcir/trainer.hpp"
#include "wmcir/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

#ifndef WMCIR_VERSION
#define WMCIR_VERSION "0.1.0"
#endif

namespace fs = std::filesystem;
using namespace wmcir;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  fs::path out_dir;
  std::string started = utc_now();
  nlohmann::json inputs = nlohmann::json::object();

  void write() const {
    fs::create_directories(out_dir);
    const nlohmann::json j = {{"command", command},         {"config_path", config_path},
                              {"seed", seed},               {"version", WMCIR_VERSION},
                              {"started_at", started},      {"finished_at", utc_now()},
                              {"output_dir", out_dir.string()}, {"inputs", inputs}};
    std::ofstream(out_dir / "run_manifest.json") << j.dump(2) << "\n";
  }
};

fs::path manifest_path(const fs::path& data) { return fs::is_directory(data) ? data / "manifest.jsonl" : data; }

Similarity parse_similarity(const std::string& s) {
  if (s == "cosine") return Similarity::cosine;
  if (s == "dot") return Similarity::dot;
  throw std::invalid_argument("unknown similarity '" + s + "' (cosine or dot)");
}

// ------------------------------------------------------------------ commands

struct SynthArgs {
  int n = 32;
  fs::path out = "data/synth";
  std::uint64_t seed = 0;
  int size = kSynthImageSize;
};

int cmd_synth(const SynthArgs& a) {
  if (a.n < 1) throw std::invalid_argument("--n must be >= 1");
  RunManifest rm{"synth-data", "", a.seed, a.out};
  rm.inputs = {{"n", a.n}, {"size", a.size}};
  const auto pairs = synth_dataset(a.n, a.seed, a.size);
  const auto manifest = write_dataset(pairs, a.out);
  rm.write();
  std::cout << "wrote " << pairs.size() << " pairs to " << manifest.string() << "\n";
  return 0;
}

struct PreviewArgs {
  fs::path data;
  fs::path out = "preview";
  int n = 4;
  std::uint64_t seed = 0;
  std::string config;
};

int cmd_preview(const PreviewArgs& a) {
  const TrainConfig cfg = a.config.empty() ? TrainConfig::toy() : load_config(a.config);
  const auto pairs = load_dataset(manifest_path(a.data));
  RunManifest rm{"preview", a.config, a.seed, a.out};
  rm.inputs = {{"data", a.data.string()}, {"n", a.n}};
  ViewConfig views;
  views.ranges = cfg.crop;
  if (cfg.ablation.no_crop) views.source = SourceMode::identity;
  if (cfg.ablation.mask_source) views.source = SourceMode::random_mask;
  fs::create_directories(a.out);
  std::ofstream log(a.out / "preview.jsonl");
  const int n = std::min<int>(a.n, static_cast<int>(pairs.size()));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(a.seed, 0x9e11, static_cast<std::uint64_t>(i)));
    const ViewTriplet t = make_triplet(pairs[static_cast<std::size_t>(i)], views, rng);
    const MaskBlock b = sample_mask_block(cfg.grid, cfg.crop, cfg.ablation.predict_entire, rng);
    write_ppm(t.source_image, a.out / (t.id + "_source.ppm"));
    write_ppm(t.target_image, a.out / (t.id + "_target.ppm"));
    const auto& c = t.crop_spec;
    log << nlohmann::json{{"id", t.id},
                          {"action", t.action_text},
                          {"crop", {{"x", c.x}, {"y", c.y}, {"w", c.width}, {"h", c.height}, {"scale", c.scale},
                                    {"aspect", c.aspect}}},
                          {"mask_block", {{"top", b.top}, {"left", b.left}, {"rows", b.rows}, {"cols", b.cols}}}}
               .dump()
        << "\n";
  }
  rm.write();
  std::cout << "wrote " << n << " triplets to " << a.out.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  fs::path data = "data/synth";
  fs::path out = "runs/toy";
  std::string resume;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  int log_every = 50;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig::toy() : load_config(a.config);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string x) {
      x.erase(0, x.find_first_not_of(" \t"));
      x.erase(x.find_last_not_of(" \t") + 1);
      return x;
    };
    apply_setting(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.workers) cfg.workers = *a.workers;
  cfg.validate();
  const auto data = load_dataset(manifest_path(a.data));
  RunManifest rm{"train", a.config, cfg.seed, a.out};
  rm.inputs = {{"data", a.data.string()}, {"resume", a.resume}, {"config", cfg.to_map()}};
  std::optional<fs::path> resume;
  if (!a.resume.empty()) resume = a.resume;
  const auto result = run_training(cfg, data, a.out, resume, [&](const StepMetrics& m) {
    if (a.log_every > 0 && (m.step % a.log_every == 0 || m.step + 1 == cfg.max_steps))
      std::cerr << "step " << m.step << "  L_pred " << m.l_pred << "  L_align " << m.l_align << "  L " << m.l_total
                << "  gate " << m.gate_value << "\n";
  });
  rm.write();
  if (!result.metrics.empty()) {
    const auto& m = result.metrics.back();
    std::cout << "final step " << m.step << ": L_pred " << m.l_pred << ", L_align " << m.l_align << ", L " << m.l_total
              << "\n";
  }
  std::cout << "checkpoint: " << result.checkpoint.string() << "\n";
  return 0;
}

struct GalleryArgs {
  fs::path checkpoint;
  fs::path data;
  fs::path out = "gallery.bin";
  int workers = 1;
};

int cmd_embed_gallery(const GalleryArgs& a) {
  const auto model = load_model(a.checkpoint);
  const Gallery g = embed_gallery(manifest_path(a.data), *model->encoders().vision, a.workers);
  const fs::path dir = a.out.has_parent_path() ? a.out.parent_path() : fs::path(".");
  RunManifest rm{"embed-gallery", "", model->config().seed, dir};
  rm.inputs = {{"checkpoint", a.checkpoint.string()}, {"data", a.data.string()}};
  fs::create_directories(dir);
  save_gallery(g, a.out);
  rm.write();
  std::cout << "embedded " << g.ids.size() << " images (d=" << g.dim() << ") to " << a.out.string() << "\n";
  return 0;
}

struct QueryArgs {
  fs::path data;
  fs::path out = "queries";
  std::string mode = "composite";
  std::uint64_t seed = 0;
};

int cmd_make_queries(const QueryArgs& a) {
  const auto pairs = load_dataset(manifest_path(a.data));
  std::vector<QuerySpec> qs;
  if (a.mode == "self")
    qs = self_queries(pairs);
  else if (a.mode == "composite")
    qs = composite_queries(pairs, CropRanges{}, a.seed);
  else
    throw std::invalid_argument("unknown --mode '" + a.mode + "' (self or composite)");
  RunManifest rm{"make-queries", "", a.seed, a.out};
  rm.inputs = {{"data", a.data.string()}, {"mode", a.mode}};
  write_queries(qs, a.out / "queries.jsonl");
  rm.write();
  std::cout << "wrote " << qs.size() << " queries to " << (a.out / "queries.jsonl").string() << "\n";
  return 0;
}

struct RetrieveArgs {
  fs::path checkpoint;
  fs::path queries;
  fs::path gallery;
  fs::path out = "retrieval";
  int top = 10;
  std::string similarity = "cosine";
  int workers = 1;
  std::string k = "1,5,10";
};

int cmd_retrieve(const RetrieveArgs& a) {
  if (a.top < 1) throw std::invalid_argument("--top must be >= 1");
  const auto model = load_model(a.checkpoint);
  const Gallery g = load_gallery(a.gallery);
  const auto qs = read_queries(a.queries);
  const auto results = run_queries(*model, qs, g, parse_similarity(a.similarity), a.workers);
  RunManifest rm{"retrieve", "", model->config().seed, a.out};
  rm.inputs = {{"checkpoint", a.checkpoint.string()}, {"queries", a.queries.string()}, {"gallery", a.gallery.string()}};
  fs::create_directories(a.out);
  std::ofstream os(a.out / "rankings.jsonl");
  for (const auto& r : results) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(a.top), r.ranking.ids.size());
    os << nlohmann::json{{"query", r.query_id},
                         {"ids", std::vector<std::string>(r.ranking.ids.begin(), r.ranking.ids.begin() + static_cast<long>(n))},
                         {"scores", std::vector<double>(r.ranking.scores.begin(), r.ranking.scores.begin() + static_cast<long>(n))}}
              .dump()
       << "\n";
  }
  rm.write();
  std::cout << "ranked " << results.size() << " queries; top-" << a.top << " lists in "
            << (a.out / "rankings.jsonl").string() << "\n";
  return 0;
}

int cmd_evaluate(const RetrieveArgs& a) {
  const auto ks = parse_k_list(a.k);
  const auto model = load_model(a.checkpoint);
  const Gallery g = load_gallery(a.gallery);
  const auto qs = read_queries(a.queries);
  const auto results = run_queries(*model, qs, g, parse_similarity(a.similarity), a.workers);
  const EvalReport rep = evaluate(results, ks);
  RunManifest rm{"evaluate", "", model->config().seed, a.out};
  rm.inputs = {{"checkpoint", a.checkpoint.string()}, {"queries", a.queries.string()}, {"gallery", a.gallery.string()},
               {"k", rep.ks}, {"similarity", a.similarity}};
  fs::create_directories(a.out);
  std::ofstream(a.out / "report.json") << rep.to_json().dump(2) << "\n";
  std::ofstream(a.out / "report.txt") << rep.to_table();
  rm.write();
  std::cout << rep.to_table();
  return 0;
}

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_verify(const VerifyArgs& a) {
  const auto reports = run_suites(a.suite, a.seed);
  bool ok = true;
  nlohmann::json j = nlohmann::json::object();
  for (const auto& r : reports) {
    std::cout << r.to_text();
    ok = ok && r.passed();
    j[r.suite] = {{"passed", r.passed()}, {"metrics", r.metrics}};
  }
  if (!a.out.empty()) {
    RunManifest rm{"verify", "", a.seed, a.out};
    rm.inputs = {{"suite", a.suite}};
    fs::create_directories(a.out);
    std::ofstream(fs::path(a.out) / "verify.json") << j.dump(2) << "\n";
    rm.write();
  }
  std::cout << (ok ? "all suites passed" : "verification FAILED") << "\n";
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wmcir: predictive pseudo-token training and composed image retrieval"};
  app.set_version_flag("--version", std::string(WMCIR_VERSION));
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Generate the synthetic image/caption corpus");
  s->add_option("--n", synth.n, "Number of pairs")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->capture_default_str();
  s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  s->add_option("--size", synth.size, "Image side in pixels")->capture_default_str();

  PreviewArgs preview;
  auto* p = app.add_subcommand("preview", "Write sample source/target views and mask blocks");
  p->add_option("--data", preview.data, "Dataset directory or manifest")->required();
  p->add_option("--out", preview.out, "Output directory")->capture_default_str();
  p->add_option("--n", preview.n, "Number of triplets")->capture_default_str();
  p->add_option("--seed", preview.seed, "Random seed")->capture_default_str();
  p->add_option("--config", preview.config, "Config file (crop ranges, ablations)");

  TrainArgs train;
  std::uint64_t train_seed = 0;
  int train_workers = 1;
  auto* t = app.add_subcommand("train", "Train the predictor and fusion head");
  t->add_option("--config", train.config, "Config file (key = value)");
  t->add_option("--data", train.data, "Dataset directory or manifest")->capture_default_str();
  t->add_option("--out", train.out, "Run directory")->capture_default_str();
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_option("--set", train.sets, "Override a config key (key=value); repeatable");
  auto* seed_opt = t->add_option("--seed", train_seed, "Random seed (overrides the config)");
  auto* workers_opt = t->add_option("--workers", train_workers, "Data preparation threads");
  t->add_option("--log-every", train.log_every, "Progress line interval in steps")->capture_default_str();

  GalleryArgs gallery;
  auto* g = app.add_subcommand("embed-gallery", "Embed candidate images with the frozen image encoder");
  g->add_option("--checkpoint", gallery.checkpoint, "Trained checkpoint (selects the encoder)")->required();
  g->add_option("--data", gallery.data, "Dataset directory or manifest")->required();
  g->add_option("--out", gallery.out, "Gallery file")->capture_default_str();
  g->add_option("--workers", gallery.workers, "Embedding threads")->capture_default_str();

  QueryArgs queries;
  auto* q = app.add_subcommand("make-queries", "Build a query file from a dataset");
  q->add_option("--data", queries.data, "Dataset directory or manifest")->required();
  q->add_option("--out", queries.out, "Output directory")->capture_default_str();
  q->add_option("--mode", queries.mode, "self (whole image, no text) or composite (crop + caption)")
      ->capture_default_str();
  q->add_option("--seed", queries.seed, "Random seed for composite crops")->capture_default_str();

  RetrieveArgs retrieve;
  auto* r = app.add_subcommand("retrieve", "Rank the gallery for each query");
  RetrieveArgs evaluate_args;
  evaluate_args.out = "eval";
  auto* e = app.add_subcommand("evaluate", "Recall@K and mAP@K over a query file");
  for (auto [cmd, args] : {std::pair{r, &retrieve}, std::pair{e, &evaluate_args}}) {
    cmd->add_option("--checkpoint", args->checkpoint, "Trained checkpoint")->required();
    cmd->add_option("--queries", args->queries, "Query JSON-lines file")->required();
    cmd->add_option("--gallery", args->gallery, "Gallery file from embed-gallery")->required();
    cmd->add_option("--out", args->out, "Output directory")->capture_default_str();
    cmd->add_option("--similarity", args->similarity, "cosine or dot")->capture_default_str();
    cmd->add_option("--workers", args->workers, "Query threads")->capture_default_str();
  }
  r->add_option("--top", retrieve.top, "Candidates listed per query")->capture_default_str();
  e->add_option("--k", evaluate_args.k, "Comma-separated K values")->capture_default_str();

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Run gradient, oracle and invariant self-checks");
  v->add_option("--suite", verify.suite, "grad, oracle, invariants or all")
      ->check(CLI::IsMember({"grad", "oracle", "invariants", "all"}))
      ->capture_default_str();
  v->add_option("--seed", verify.seed, "Random seed")->capture_default_str();
  v->add_option("--out", verify.out, "Directory for verify.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitValidation;
  }
  if (seed_opt->count() > 0) train.seed = train_seed;
  if (workers_opt->count() > 0) train.workers = train_workers;

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (p->parsed()) return cmd_preview(preview);
    if (t->parsed()) return cmd_train(train);
    if (g->parsed()) return cmd_embed_gallery(gallery);
    if (q->parsed()) return cmd_make_queries(queries);
    if (r->parsed()) return cmd_retrieve(retrieve);
    if (e->parsed()) return cmd_evaluate(evaluate_args);
    if (v->parsed()) return cmd_verify(verify);
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
