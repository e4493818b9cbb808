// Acceptance run: one PASS/FAIL line per criterion.

#include "wmcir/retrieval.hpp"
#include "wmcir/trainer.hpp"
#include "wmcir/verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace wmcir;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Mat random_mat(int r, int c, Rng& rng, double s = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = s * rng.normal();
  return m;
}

// ---------------------------------------------------------------- oracles

double loop_contrastive(const Mat& t, const Mat& v, double tau) {
  const auto n = t.rows();
  std::vector<std::vector<double>> z(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double dot = 0, nt = 0, nv = 0;
      for (Eigen::Index k = 0; k < t.cols(); ++k) {
        dot += t(i, k) * v(j, k);
        nt += t(i, k) * t(i, k);
        nv += v(j, k) * v(j, k);
      }
      z[i][j] = tau * dot / (std::sqrt(nt) * std::sqrt(nv));
    }
  double loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double mr = -INFINITY, mc = -INFINITY;
    for (Eigen::Index j = 0; j < n; ++j) {
      mr = std::max(mr, z[i][j]);
      mc = std::max(mc, z[j][i]);
    }
    double sr = 0, sc = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      sr += std::exp(z[i][j] - mr);
      sc += std::exp(z[j][i] - mc);
    }
    loss += (std::log(sr) + mr - z[i][i]) + (std::log(sc) + mc - z[i][i]);
  }
  return loss / static_cast<double>(n);
}

double loop_prediction(const Mat& p, const Mat& t) {
  double s = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) s += (p(i, j) - t(i, j)) * (p(i, j) - t(i, j));
  return s;
}

bool in_top(const std::vector<std::string>& ranking, const std::vector<std::string>& truths, int k) {
  for (int i = 0; i < k && i < static_cast<int>(ranking.size()); ++i)
    for (const auto& t : truths)
      if (ranking[static_cast<std::size_t>(i)] == t) return true;
  return false;
}

double loop_ap(const std::vector<std::string>& ranking, const std::vector<std::string>& truths, int k) {
  double hits = 0, ap = 0;
  for (int i = 0; i < k && i < static_cast<int>(ranking.size()); ++i)
    for (const auto& t : truths)
      if (ranking[static_cast<std::size_t>(i)] == t) {
        hits += 1;
        ap += hits / (i + 1);
      }
  return ap / std::min<double>(k, static_cast<double>(truths.size()));
}

// ----------------------------------------------------------- training runs

constexpr int kPairs = 32;
constexpr std::uint64_t kDataSeed = 7;
constexpr std::uint64_t kQuerySeed = 7;

struct TrainedRun {
  double pred_ratio = 0;
  double r1 = 0;
  double seconds = 0;
};

TrainedRun train_and_score(const TrainConfig& cfg, const fs::path& dir) {
  const auto data = synth_dataset(kPairs, kDataSeed);
  const auto t0 = Clock::now();
  fs::remove_all(dir);
  const RunResult run = run_training(cfg, data, dir);
  TrainedRun out;
  out.seconds = seconds_since(t0);
  out.pred_ratio = run.metrics.back().l_pred / run.metrics.front().l_pred;
  const auto model = load_model(run.checkpoint);
  const Gallery g = embed_gallery(data, *model->encoders().vision, cfg.workers);
  const auto queries = composite_queries(data, cfg.crop, kQuerySeed);
  const auto results = run_queries(*model, queries, g, Similarity::cosine, cfg.workers);
  out.r1 = recall_at_k(results, 1);
  return out;
}

TrainConfig toy_run(std::uint64_t seed) {
  TrainConfig c = TrainConfig::toy();
  c.seed = seed;
  return c;
}

// -------------------------------------------------------------- criteria

Outcome gradient_fidelity() {
  const SuiteReport r = verify_gradients(0);
  return {r.passed(), "max rel error " + fmt("%.2e", r.metrics.value("max_rel_error", -1.0)) + ", " +
                          fmt("%.1f s", r.metrics.value("seconds", -1.0))};
}

Outcome loss_oracles() {
  Rng rng(2024);
  double worst_c = 0, worst_p = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 14));
    const int d = 1 + static_cast<int>(rng.uniform_int(0, 31));
    const double tau = std::exp(rng.uniform(std::log(0.01), std::log(100.0)));
    const Mat t = random_mat(n, d, rng, rng.uniform(0.1, 10.0)), v = random_mat(n, d, rng);
    worst_c = std::max(worst_c, std::abs(contrastive_loss(t, v, tau) - loop_contrastive(t, v, tau)));
    const Mat p = random_mat(n, d, rng), q = random_mat(n, d, rng);
    worst_p = std::max(worst_p, std::abs(prediction_loss(p, q) - loop_prediction(p, q)));
  }
  double worst_lim = 0;
  for (int n : {2, 5, 16, 64}) {
    const Mat t = random_mat(n, 8, rng), v = random_mat(n, 8, rng);
    worst_lim = std::max(worst_lim, std::abs(contrastive_loss(t, v, 1e-9) - 2 * std::log(static_cast<double>(n))));
  }
  const bool ok = worst_c <= 1e-10 && worst_p <= 1e-10 && worst_lim <= 1e-6;
  return {ok, "contrastive " + fmt("%.1e", worst_c) + ", prediction " + fmt("%.1e", worst_p) + ", tau->0 " +
                  fmt("%.1e", worst_lim)};
}

Outcome gate_zero_identity() {
  TrainConfig cfg = TrainConfig::toy();
  Model model(cfg);
  model.fusion().gate().value(0, 0) = 0.0;
  const auto data = synth_dataset(8, 1);
  const auto& vision = *model.encoders().vision;
  const auto& text = *model.encoders().text;
  Rng rng(5);
  int mismatches = 0, checks = 0;
  for (const auto& pair : data) {
    const VisualFeatures f = vision.encode_any(pair.image);
    Tape ref_tape;
    const Mat reference = model.fusion().source_mapping(ref_tape, ref_tape.constant(f.global)).value();
    // through the full pseudo-token path
    Tape t0;
    const MaskBlock block = sample_mask_block(cfg.grid, cfg.crop, false, rng);
    mismatches += model.pseudo_token(t0, text.encode_text(pair.caption).cls, f, block).value() != reference;
    ++checks;
    // arbitrary predictor outputs
    for (int k = 0; k < 25; ++k) {
      Tape t;
      const double s = std::pow(10.0, rng.uniform(-3, 6));
      Var enhanced = t.constant(random_mat(cfg.grid * cfg.grid, cfg.predictor_width, rng, s));
      Var predicted = t.constant(random_mat(1 + k % 16, cfg.predictor_width, rng, s));
      mismatches += model.fusion().fuse(t, enhanced, predicted, t.constant(f.global)).value() != reference;
      ++checks;
    }
  }
  return {mismatches == 0, std::to_string(checks - mismatches) + "/" + std::to_string(checks) + " bitwise equal"};
}

Outcome crop_geometry() {
  const CropRanges ranges;
  Rng rng(derive_seed(0, 0xacc4));
  int violations = 0;
  const int samples = 10000;
  for (int i = 0; i < samples; ++i) {
    const int W = 32 + static_cast<int>(rng.uniform_int(0, 224));
    const int H = 32 + static_cast<int>(rng.uniform_int(0, 224));
    Image img(H, W);
    for (std::size_t k = 0; k < img.data.size(); ++k) img.data[k] = static_cast<float>(k % 251) / 251.0f;
    RawPair pair{"p", img, "c"};
    ViewConfig vc;
    vc.ranges = ranges;
    const ViewTriplet t = make_triplet(pair, vc, rng);
    const CropSpec& c = t.crop_spec;
    bool ok = c.scale >= ranges.scale_min && c.scale <= ranges.scale_max;
    const double area = static_cast<double>(W) * H;
    const double wt = std::sqrt(c.scale * c.aspect * area), ht = std::sqrt(c.scale * area / c.aspect);
    ok = ok && std::abs(c.width - std::max<double>(wt, kMinCropSide)) <= 0.5 + 1e-9;
    ok = ok && std::abs(c.height - std::max<double>(ht, kMinCropSide)) <= 0.5 + 1e-9;
    ok = ok && c.x >= 0 && c.y >= 0 && c.x + c.width <= W && c.y + c.height <= H;
    ok = ok && t.source_image.width == c.width && t.source_image.height == c.height;
    for (int y = 0; ok && y < c.height; ++y)
      for (int x = 0; ok && x < c.width; ++x)
        for (int ch = 0; ch < 3; ++ch) ok = ok && t.source_image.at(y, x, ch) == img.at(y + c.y, x + c.x, ch);
    violations += !ok;
  }
  return {violations == 0, std::to_string(samples - violations) + "/" + std::to_string(samples) + " crops valid"};
}

Outcome metric_oracles() {
  Rng rng(77);
  int mismatches = 0, monotone_breaks = 0;
  for (int inst = 0; inst < 100; ++inst) {
    Gallery g;
    const int n = 50, d = 6;
    g.features = random_mat(n, d, rng);
    for (int i = 0; i < n; ++i) g.ids.push_back("img" + std::to_string((i * 31 + inst) % n));
    for (int i = 7; i < n; i += 7) g.features.row(i) = g.features.row(i - 1);  // exact ties
    std::vector<QueryResult> results;
    for (int q = 0; q < 12; ++q) {
      QueryResult r;
      r.query_id = "q" + std::to_string(q);
      r.ranking = rank(RowVec(random_mat(1, d, rng)), g);
      const int nt = 1 + static_cast<int>(rng.uniform_int(0, 4));
      std::set<std::string> truths;
      while (static_cast<int>(truths.size()) < nt)
        truths.insert(g.ids[static_cast<std::size_t>(rng.uniform_int(0, n - 1))]);
      r.truths.assign(truths.begin(), truths.end());
      results.push_back(std::move(r));
    }
    double prev = 0;
    for (int k = 1; k <= n; ++k) {
      double rec = 0, map = 0;
      for (const auto& r : results) {
        rec += in_top(r.ranking.ids, r.truths, k);
        map += loop_ap(r.ranking.ids, r.truths, k);
      }
      rec /= static_cast<double>(results.size());
      map /= static_cast<double>(results.size());
      const double got = recall_at_k(results, k);
      mismatches += got != rec;
      mismatches += map_at_k(results, k) != map;
      monotone_breaks += got < prev;
      prev = got;
    }
  }
  return {mismatches == 0 && monotone_breaks == 0,
          std::to_string(mismatches) + " mismatches, " + std::to_string(monotone_breaks) + " monotonicity breaks"};
}

Outcome overfit(const fs::path& out, std::map<std::string, TrainedRun>& cache) {
  const TrainedRun r = train_and_score(toy_run(0), out / "overfit");
  cache["full/0"] = r;
  const bool ok = r.pred_ratio <= 0.1 && r.r1 >= 0.9 && r.seconds < 300;
  return {ok, "L_pred ratio " + fmt("%.4f", r.pred_ratio) + ", composite R@1 " + fmt("%.3f", r.r1) + ", " +
                  fmt("%.0f s", r.seconds)};
}

Outcome ablation_direction(const fs::path& out, std::map<std::string, TrainedRun>& cache) {
  const std::vector<std::string> variants{"no_action", "no_crop", "no_gate"};
  std::map<std::string, int> wins;
  std::ostringstream detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    const std::string full_key = "full/" + std::to_string(seed);
    if (!cache.contains(full_key)) cache[full_key] = train_and_score(toy_run(seed), out / ("full_" + std::to_string(seed)));
    const double full = cache[full_key].r1;
    detail << "seed " << seed << ": full " << fmt("%.3f", full);
    for (const auto& v : variants) {
      TrainConfig cfg = toy_run(seed);
      apply_setting(cfg, v, "true");
      const TrainedRun r = train_and_score(cfg, out / (v + "_" + std::to_string(seed)));
      wins[v] += full >= r.r1;
      detail << " " << v << " " << fmt("%.3f", r.r1);
    }
    detail << "; ";
  }
  bool ok = true;
  for (const auto& v : variants) ok = ok && wins[v] >= 2;
  return {ok, detail.str()};
}

std::vector<std::string> file_lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

Outcome determinism(const fs::path& out) {
  TrainConfig cfg = TrainConfig::toy();
  cfg.max_steps = 30;
  cfg.seed = 11;
  const auto data = synth_dataset(kPairs, kDataSeed);
  fs::remove_all(out / "det_a");
  fs::remove_all(out / "det_b");
  run_training(cfg, data, out / "det_a");
  cfg.workers = 3;  // thread count must not change results
  run_training(cfg, data, out / "det_b");
  const auto a = file_lines(out / "det_a" / "metrics.jsonl"), b = file_lines(out / "det_b" / "metrics.jsonl");
  const bool logs_equal = a == b && a.size() == 30;

  Trainer tr(TrainConfig::toy(), data);
  for (int i = 0; i < 5; ++i) tr.train_step();
  const auto queries = composite_queries(data, CropRanges{}, 3);
  std::vector<RowVec> before;
  for (const auto& q : queries) before.push_back(compose_query(tr.model(), q));
  const auto batch = tr.prepare_batch(9);
  Tape t0;
  const double loss_before = build_loss(t0, tr.model(), batch).total.scalar();
  tr.save(out / "persist.ckpt");
  const auto loaded = load_model(out / "persist.ckpt");
  bool forward_equal = true;
  for (std::size_t i = 0; i < queries.size(); ++i) forward_equal = forward_equal && compose_query(*loaded, queries[i]) == before[i];
  Tape t1;
  forward_equal = forward_equal && build_loss(t1, *loaded, batch).total.scalar() == loss_before;
  return {logs_equal && forward_equal, std::string("metric logs ") + (logs_equal ? "identical" : "differ") +
                                           ", reloaded forward " + (forward_equal ? "identical" : "differs")};
}

Outcome prompt_fidelity() {
  auto q = [](PromptTemplate t, std::vector<std::string> slots, std::string text) {
    QuerySpec s;
    s.reference = Image(32, 32);
    s.templ = t;
    s.slots = std::move(slots);
    s.text = std::move(text);
    return render_prompt(s);
  };
  const std::vector<std::pair<std::string, std::string>> cases{
      {q(PromptTemplate::domain_conversion, {"cartoon"}, ""), "a cartoon of [*]"},
      {q(PromptTemplate::domain_conversion, {"sketch"}, ""), "a sketch of [*]"},
      {q(PromptTemplate::object_composition, {"cat"}, ""), "a photo of [*], [cat]"},
      {q(PromptTemplate::object_composition, {"cat", "hat"}, ""), "a photo of [*], [cat] and [hat]"},
      {q(PromptTemplate::object_composition, {"cat", "hat", "sofa"}, ""), "a photo of [*], [cat], [hat] and [sofa]"},
      {q(PromptTemplate::sentence_manipulation, {}, "is red and larger"), "a photo of [*], is red and larger"},
  };
  int bad = 0;
  std::string first_bad;
  for (const auto& [got, want] : cases)
    if (got != want) {
      if (bad++ == 0) first_bad = "got '" + got + "' want '" + want + "'";
    }
  return {bad == 0, bad == 0 ? std::to_string(cases.size()) + " templates exact" : first_bad};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  fs::path out = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--out", out, "Scratch directory for training runs")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(out);

  std::map<std::string, TrainedRun> cache;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"loss oracles", loss_oracles},
      {"gate-zero identity", gate_zero_identity},
      {"crop geometry", crop_geometry},
      {"metric oracles", metric_oracles},
      {"overfit sanity", [&] { return overfit(out, cache); }},
      {"ablation directionality", [&] { return ablation_direction(out, cache); }},
      {"determinism and persistence", [&] { return determinism(out); }},
      {"prompt fidelity", prompt_fidelity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
