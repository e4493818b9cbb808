#include "wmcir/verify.hpp"

#include "wmcir/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

namespace wmcir {

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

void SuiteReport::add(std::string name, bool ok, std::string detail) {
  checks.push_back({std::move(name), ok, std::move(detail)});
}

std::string SuiteReport::to_text() const {
  std::ostringstream os;
  os << "[" << suite << "]\n";
  for (const auto& c : checks) {
    os << "  " << (c.passed ? "PASS" : "FAIL") << "  " << c.name;
    if (!c.detail.empty()) os << "  (" << c.detail << ")";
    os << "\n";
  }
  os << "  " << (passed() ? "suite passed" : "suite FAILED") << "\n";
  return os.str();
}

namespace {

Mat random_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal() * sd;
  return m;
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << x;
  return os.str();
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

// ------------------------------------------------------------------ gradients

TrainConfig gradcheck_config() {
  TrainConfig c = TrainConfig::toy();
  c.predictor_depth = 2;
  c.predictor_width = 16;
  c.predictor_heads = 8;
  c.grid = 4;
  c.batch_size = 4;
  c.validate();
  return c;
}

std::vector<PreparedItem> gradcheck_batch(const Model& model, std::uint64_t seed) {
  const int g = model.config().grid;
  const auto pairs = synth_dataset(model.config().batch_size, seed);
  ViewConfig views;
  views.ranges = model.config().crop;
  std::vector<PreparedItem> batch;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Rng rng(derive_seed(seed, 0x96ad, i));
    const ViewTriplet t = make_triplet(pairs[i], views, rng);
    PreparedItem item;
    item.id = pairs[i].id;
    item.action = model.encoders().text->encode_text(pairs[i].caption).cls;
    item.source = model.encoders().vision->encode_any(t.source_image);
    item.target = model.encoders().vision->encode_any(t.target_image);
    const int top = static_cast<int>(rng.uniform_int(0, g - 2));
    const int left = static_cast<int>(rng.uniform_int(0, g - 2));
    item.block = make_mask_block(g, top, left, 2, 2);
    batch.push_back(std::move(item));
  }
  return batch;
}

namespace {
constexpr double kZeroGradient = 1e-6;
}  // namespace

std::vector<GroupGradError> gradient_check(Model& model, std::span<const PreparedItem> batch, double h,
                                           int max_entries, std::uint64_t seed) {
  auto loss_value = [&] {
    Tape t;
    return build_loss(t, model, batch).total.scalar();
  };
  ParameterSet& params = model.params();
  {
    Tape tape;
    LossGraph g = build_loss(tape, model, batch);
    params.zero_grad();
    tape.backward(g.total);
  }
  Rng rng(derive_seed(seed, 0x6c4e));
  std::vector<GroupGradError> out;
  for (auto& p : params) {
    const Mat analytic = p->grad;
    const auto n = static_cast<int>(p->value.size());
    std::vector<int> picks;
    if (n <= max_entries) {
      picks.resize(static_cast<std::size_t>(n));
      std::iota(picks.begin(), picks.end(), 0);
    } else {
      Eigen::Index arg = 0;
      analytic.cwiseAbs().reshaped().maxCoeff(&arg);
      std::set<int> chosen{static_cast<int>(arg)};
      while (static_cast<int>(chosen.size()) < max_entries) chosen.insert(static_cast<int>(rng.uniform_int(0, n - 1)));
      picks.assign(chosen.begin(), chosen.end());
    }
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (int idx : picks) {
      double& v = p->value.data()[idx];
      const double orig = v;
      v = orig + h;
      const double lp = loss_value();
      v = orig - h;
      const double lm = loss_value();
      v = orig;
      const double num = (lp - lm) / (2.0 * h);
      const double a = analytic.data()[idx];
      max_diff = std::max(max_diff, std::abs(a - num));
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(num));
    }
    // Keys biases (softmax shift invariance) have an exactly zero gradient;
    // there the central difference is pure rounding noise and the absolute
    // difference is reported instead.
    const bool zero = max_a < kZeroGradient && max_n < kZeroGradient;
    const double err = zero ? max_diff : max_diff / std::max(max_a, max_n);
    out.push_back({p->name, static_cast<int>(picks.size()), err, zero, max_a, max_n});
  }
  return out;
}

SuiteReport verify_gradients(std::uint64_t seed) {
  SuiteReport rep;
  rep.suite = "grad";
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg = gradcheck_config();
  cfg.seed = seed;
  Model model(cfg);
  // A nonzero gate so gradients reach the prediction branch.
  model.fusion().gate().value(0, 0) = 0.5;
  const auto batch = gradcheck_batch(model, seed);
  const auto errors = gradient_check(model, batch, 1e-6, 48, seed);
  double worst = 0.0, worst_zero = 0.0;
  int zero_groups = 0;
  std::string worst_name;
  for (const auto& e : errors) {
    rep.metrics["groups"][e.group] = {{"error", e.max_rel_error}, {"analytic", e.max_abs_analytic},
                                      {"numeric", e.max_abs_numeric}, {"zero_gradient", e.zero_gradient}};
    if (e.zero_gradient) {
      ++zero_groups;
      worst_zero = std::max(worst_zero, e.max_rel_error);
    } else if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.group;
    }
  }
  rep.metrics["max_rel_error"] = worst;
  rep.metrics["zero_gradient_groups"] = zero_groups;
  rep.metrics["zero_gradient_max_abs_error"] = worst_zero;
  rep.add("parameter groups within 1e-4 (" + std::to_string(errors.size()) + " groups)",
          worst < 1e-4 && worst_zero < 1e-4,
          "max relative error " + fmt(worst) + " in " + worst_name + "; " + std::to_string(zero_groups) +
              " zero-gradient groups, max abs error " + fmt(worst_zero));

  // Vector-Jacobian product through the prompt encoder into the pseudo-token.
  const TextEncoder& text = *model.encoders().text;
  Rng rng(derive_seed(seed, 0x7a11));
  const Mat pseudo = random_mat(rng, 1, cfg.embed_dim);
  Tape tape;
  Var s = tape.leaf(pseudo);
  tape.backward(ad::sum_squares(text.encode_prompt(tape, build_training_prompt(text, s))));
  const Mat analytic = tape.grad(s);
  double diff = 0.0, scale = 1e-12;
  for (Eigen::Index i = 0; i < pseudo.cols(); ++i) {
    RowVec up = pseudo.row(0), dn = pseudo.row(0);
    up(i) += 1e-6;
    dn(i) -= 1e-6;
    const double num = (text.encode_prompt(kTrainingPrompt, up).squaredNorm() -
                        text.encode_prompt(kTrainingPrompt, dn).squaredNorm()) / 2e-6;
    diff = std::max(diff, std::abs(num - analytic(0, i)));
    scale = std::max({scale, std::abs(num), std::abs(analytic(0, i))});
  }
  rep.metrics["prompt_vjp_rel_error"] = diff / scale;
  rep.add("prompt encoder gradient w.r.t. injected token", diff / scale < 1e-4, "relative error " + fmt(diff / scale));

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.metrics["seconds"] = secs;
  rep.add("runtime under 60 s", secs < 60.0, std::to_string(secs) + " s");
  return rep;
}

// -------------------------------------------------------------------- oracles

double brute_contrastive_loss(const Mat& text, const Mat& image, double tau) {
  const auto b = text.rows(), d = text.cols();
  std::vector<std::vector<double>> t(static_cast<std::size_t>(b), std::vector<double>(static_cast<std::size_t>(d)));
  auto v = t;
  for (Eigen::Index i = 0; i < b; ++i) {
    double nt = 0.0, nv = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
      nt += text(i, k) * text(i, k);
      nv += image(i, k) * image(i, k);
    }
    for (Eigen::Index k = 0; k < d; ++k) {
      t[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = text(i, k) / std::sqrt(nt);
      v[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = image(i, k) / std::sqrt(nv);
    }
  }
  auto logit = [&](Eigen::Index i, Eigen::Index j) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < d; ++k)
      s += t[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
    return tau * s;
  };
  double t2i = 0.0, i2t = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    double row = 0.0, col = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      row += std::exp(logit(i, j));
      col += std::exp(logit(j, i));
    }
    t2i += std::log(row) - logit(i, i);
    i2t += std::log(col) - logit(i, i);
  }
  return t2i / static_cast<double>(b) + i2t / static_cast<double>(b);
}

double brute_prediction_loss(const Mat& predicted, const Mat& target) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < predicted.rows(); ++i)
    for (Eigen::Index k = 0; k < predicted.cols(); ++k) {
      const double e = predicted(i, k) - target(i, k);
      s += e * e;
    }
  return s;
}

double brute_recall_at_k(const std::vector<std::vector<std::string>>& rankings,
                         const std::vector<std::vector<std::string>>& truths, int k) {
  int hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    bool hit = false;
    for (int j = 0; j < k && j < static_cast<int>(rankings[q].size()); ++j)
      for (const auto& t : truths[q])
        if (rankings[q][static_cast<std::size_t>(j)] == t) hit = true;
    if (hit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

double brute_map_at_k(const std::vector<std::vector<std::string>>& rankings,
                      const std::vector<std::vector<std::string>>& truths, int k) {
  double total = 0.0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const std::set<std::string> truth(truths[q].begin(), truths[q].end());
    int hits = 0;
    double ap = 0.0;
    for (int j = 1; j <= k && j <= static_cast<int>(rankings[q].size()); ++j)
      if (truth.count(rankings[q][static_cast<std::size_t>(j - 1)])) {
        ++hits;
        ap += static_cast<double>(hits) / j;
      }
    total += ap / std::min<double>(k, static_cast<double>(truth.size()));
  }
  return total / static_cast<double>(rankings.size());
}

namespace {

// Selection-sort ranking used as the oracle for rank().
std::vector<std::string> brute_rank(const RowVec& q, const Gallery& g) {
  const auto n = g.ids.size();
  std::vector<double> score(n);
  double qn = 0.0;
  for (Eigen::Index k = 0; k < q.size(); ++k) qn += q(k) * q(k);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, rn = 0.0;
    for (Eigen::Index k = 0; k < q.size(); ++k) {
      dot += q(k) * g.features(static_cast<Eigen::Index>(i), k);
      rn += g.features(static_cast<Eigen::Index>(i), k) * g.features(static_cast<Eigen::Index>(i), k);
    }
    score[i] = dot / std::sqrt(qn * rn);
  }
  std::vector<bool> used(n, false);
  std::vector<std::string> out;
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      if (best == n || score[i] > score[best] || (score[i] == score[best] && g.ids[i] < g.ids[best])) best = i;
    }
    used[best] = true;
    out.push_back(g.ids[best]);
  }
  return out;
}

Gallery random_gallery(Rng& rng, int n, int d) {
  Gallery g;
  g.features = random_mat(rng, n, d);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "g%03d", perm[static_cast<std::size_t>(i)]);
    g.ids.push_back(buf);
  }
  // A few exact duplicate rows to exercise the tie-break.
  for (int i = 0; i + 1 < n; i += 7) g.features.row(i + 1) = g.features.row(i);
  return g;
}

}  // namespace

SuiteReport verify_oracles(std::uint64_t seed, int instances) {
  SuiteReport rep;
  rep.suite = "oracle";
  Rng rng(derive_seed(seed, 0x0a11));

  int bad_contrastive = 0, bad_pred = 0;
  double worst_contrastive = 0.0, worst_pred = 0.0;
  for (int i = 0; i < instances; ++i) {
    const auto b = rng.uniform_int(2, 8), d = rng.uniform_int(2, 16);
    const double tau = std::exp(rng.uniform(std::log(0.1), std::log(100.0)));
    const Mat t = random_mat(rng, b, d), v = random_mat(rng, b, d);
    const double ref = brute_contrastive_loss(t, v, tau);
    Tape tape;
    const double on_tape = contrastive_loss(tape.constant(t), tape.constant(v), tau).scalar();
    const double err = std::max(std::abs(contrastive_loss(t, v, tau) - ref), std::abs(on_tape - ref));
    worst_contrastive = std::max(worst_contrastive, err);
    if (!(err <= 1e-10)) ++bad_contrastive;

    const auto rows = rng.uniform_int(1, 16);
    const Mat p = random_mat(rng, rows, d), q = random_mat(rng, rows, d);
    const double pref = brute_prediction_loss(p, q);
    Tape t2;
    const double pe = std::max(std::abs(prediction_loss(p, q) - pref),
                               std::abs(prediction_loss(t2.constant(p), t2.constant(q)).scalar() - pref));
    worst_pred = std::max(worst_pred, pe);
    if (!(pe <= 1e-10)) ++bad_pred;
  }
  rep.metrics["contrastive_mismatches"] = bad_contrastive;
  rep.metrics["prediction_mismatches"] = bad_pred;
  rep.add("contrastive loss vs loop oracle", bad_contrastive == 0,
          std::to_string(bad_contrastive) + " mismatches, max error " + fmt(worst_contrastive));
  rep.add("prediction loss vs loop oracle", bad_pred == 0,
          std::to_string(bad_pred) + " mismatches, max error " + fmt(worst_pred));

  double worst_limit = 0.0;
  for (int b : {2, 4, 16, 64}) {
    const Mat t = random_mat(rng, b, 8), v = random_mat(rng, b, 8);
    worst_limit = std::max(worst_limit, std::abs(contrastive_loss(t, v, 1e-9) - 2.0 * std::log(b)));
  }
  rep.add("small-temperature limit equals 2 log B", worst_limit < 1e-6, "max error " + fmt(worst_limit));

  int bad_rank = 0;
  for (int i = 0; i < instances; ++i) {
    const Gallery g = random_gallery(rng, 50, 8);
    const RowVec q = random_mat(rng, 1, 8);
    if (rank(q, g).ids != brute_rank(q, g)) ++bad_rank;
  }
  rep.metrics["rank_mismatches"] = bad_rank;
  rep.add("rank vs selection-sort oracle", bad_rank == 0, std::to_string(bad_rank) + " mismatches");

  int bad_metric = 0, monotone_violations = 0, map_over_recall = 0;
  for (int i = 0; i < instances; ++i) {
    const int n = 50;
    const auto nq = rng.uniform_int(1, 12);
    const bool single = i % 2 == 0;
    std::vector<QueryResult> results;
    std::vector<std::vector<std::string>> rankings, truths;
    for (int q = 0; q < nq; ++q) {
      std::vector<std::string> ids;
      for (int j = 0; j < n; ++j) ids.push_back("c" + std::to_string(j));
      for (int j = n - 1; j > 0; --j) std::swap(ids[static_cast<std::size_t>(j)], ids[static_cast<std::size_t>(rng.uniform_int(0, j))]);
      const auto nt = single ? 1 : rng.uniform_int(1, 5);
      std::vector<std::string> truth;
      for (int k = 0; k < nt; ++k) truth.push_back("c" + std::to_string(rng.uniform_int(0, n - 1)));
      QueryResult r;
      r.query_id = "q" + std::to_string(q);
      r.ranking.ids = ids;
      r.ranking.scores.assign(ids.size(), 0.0);
      r.truths = truth;
      results.push_back(r);
      rankings.push_back(ids);
      truths.push_back(truth);
    }
    double prev = 0.0;
    for (int k = 1; k <= n; ++k) {
      const double r = recall_at_k(results, k), m = map_at_k(results, k);
      if (r != brute_recall_at_k(rankings, truths, k) || m != brute_map_at_k(rankings, truths, k)) ++bad_metric;
      if (r < prev) ++monotone_violations;
      if (single && m > r) ++map_over_recall;
      prev = r;
    }
  }
  rep.metrics["metric_mismatches"] = bad_metric;
  rep.add("recall_at_k / map_at_k vs brute-force oracles", bad_metric == 0, std::to_string(bad_metric) + " mismatches");
  rep.add("Recall@K non-decreasing in K", monotone_violations == 0, std::to_string(monotone_violations) + " violations");
  rep.add("mAP@K <= Recall@K for single-truth queries", map_over_recall == 0,
          std::to_string(map_over_recall) + " violations");
  return rep;
}

// ----------------------------------------------------------------- invariants

SuiteReport verify_invariants(std::uint64_t seed, int samples) {
  SuiteReport rep;
  rep.suite = "invariants";
  Rng rng(derive_seed(seed, 0x1a7a));

  const CropRanges ranges;
  int area_fail = 0, contain_fail = 0, range_fail = 0;
  for (int i = 0; i < samples; ++i) {
    const int w = static_cast<int>(rng.uniform_int(32, 256)), h = static_cast<int>(rng.uniform_int(32, 256));
    const CropSpec c = sample_crop_spec(w, h, ranges, rng);
    if (c.x < 0 || c.y < 0 || c.x + c.width > w || c.y + c.height > h) ++contain_fail;
    if (c.scale < ranges.scale_min || c.scale > ranges.scale_max) ++range_fail;
    const double ew = std::sqrt(c.scale * c.aspect * w * h), eh = std::sqrt(c.scale * w * h / c.aspect);
    const bool w_ok = std::abs(c.width - ew) <= 0.5 + 1e-9 || (c.width == kMinCropSide && ew < kMinCropSide);
    const bool h_ok = std::abs(c.height - eh) <= 0.5 + 1e-9 || (c.height == kMinCropSide && eh < kMinCropSide);
    if (!w_ok || !h_ok) ++area_fail;
  }
  rep.add("crop area law within rounding", area_fail == 0, std::to_string(area_fail) + " of " + std::to_string(samples));
  rep.add("crop containment", contain_fail == 0, std::to_string(contain_fail) + " of " + std::to_string(samples));
  rep.add("crop scale inside its range", range_fail == 0, std::to_string(range_fail) + " of " + std::to_string(samples));

  int block_fail = 0;
  for (int i = 0; i < samples; ++i) {
    const int g = (i % 3 == 0) ? 4 : (i % 3 == 1) ? 8 : 16;
    const MaskBlock b = sample_mask_block(g, ranges, false, rng);
    bool ok = b.rows >= 1 && b.cols >= 1 && b.top >= 0 && b.left >= 0 && b.top + b.rows <= g &&
              b.left + b.cols <= g && static_cast<int>(b.size()) == b.rows * b.cols &&
              static_cast<int>(b.size()) < g * g;
    for (std::size_t k = 0; ok && k < b.size(); ++k) {
      const int r = b.top + static_cast<int>(k) / b.cols, c = b.left + static_cast<int>(k) % b.cols;
      ok = b.indices[k] == r * g + c;
    }
    if (!ok) ++block_fail;
  }
  rep.add("mask blocks are in-grid rectangles smaller than the grid", block_fail == 0,
          std::to_string(block_fail) + " of " + std::to_string(samples));

  TrainConfig cfg = gradcheck_config();
  cfg.seed = seed;
  Model model(cfg);
  const int p = cfg.predictor_width, d = cfg.embed_dim, g = cfg.grid;
  int gate_fail = 0, shape_fail = 0;
  for (int i = 0; i < samples; ++i) {
    const Mat v = random_mat(rng, 1, d);
    Tape tape;
    Var vg = tape.constant(v);
    const Mat reference = model.fusion().source_mapping(tape, vg).value();
    const auto nb = rng.uniform_int(1, g * g);
    Var fused = model.fusion().fuse(tape, tape.constant(random_mat(rng, g * g, p, 10.0)),
                                    tape.constant(random_mat(rng, nb, p, 10.0)), vg);
    if (!bitwise_equal(fused.value(), reference)) ++gate_fail;

    if (i % 10 == 0) {
      const MaskBlock b = sample_mask_block(g, ranges, i % 20 == 0, rng);
      VisualFeatures src{random_mat(rng, 1, d), random_mat(rng, g * g, d), g};
      PredictorOutput po;
      Var s = model.pseudo_token(tape, random_mat(rng, 1, d), src, b, &po);
      const bool ok = s.rows() == 1 && s.cols() == d && po.action_out.rows() == 1 && po.action_out.cols() == p &&
                      po.enhanced_source.rows() == g * g && po.predicted.rows() == static_cast<Eigen::Index>(b.size()) &&
                      po.predicted.cols() == p;
      if (!ok) ++shape_fail;
    }
  }
  rep.add("zero gate: pseudo-token equals the source mapping bitwise", gate_fail == 0,
          std::to_string(gate_fail) + " of " + std::to_string(samples));
  rep.add("predictor and fusion output shapes", shape_fail == 0, std::to_string(shape_fail) + " mismatches");

  int scale_fail = 0;
  for (int i = 0; i < samples / 10; ++i) {
    Gallery gal = random_gallery(rng, 20, 8);
    const RowVec q = random_mat(rng, 1, 8);
    if (rank(q, gal).ids != rank(q * std::exp(rng.uniform(-5.0, 5.0)), gal).ids) ++scale_fail;
  }
  rep.add("ranking invariant under positive query rescaling", scale_fail == 0, std::to_string(scale_fail) + " changes");
  return rep;
}

std::vector<SuiteReport> run_suites(std::string_view which, std::uint64_t seed) {
  if (which != "grad" && which != "oracle" && which != "invariants" && which != "all")
    throw std::invalid_argument("unknown suite '" + std::string(which) + "' (grad, oracle, invariants, all)");
  std::vector<SuiteReport> out;
  if (which == "grad" || which == "all") out.push_back(verify_gradients(seed));
  if (which == "oracle" || which == "all") out.push_back(verify_oracles(seed));
  if (which == "invariants" || which == "all") out.push_back(verify_invariants(seed));
  return out;
}

}  // namespace wmcir
