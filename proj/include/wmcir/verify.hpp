#pragma once

// Self-check suites run by `wmcir verify`: finite-difference gradients,
// brute-force loss and metric oracles, and seeded property sweeps.

#include "wmcir/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wmcir {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;
  nlohmann::json metrics = nlohmann::json::object();

  bool passed() const;
  void add(std::string name, bool ok, std::string detail = {});
  std::string to_text() const;
};

struct GroupGradError {
  std::string group;   // parameter name
  int entries = 0;     // coordinates compared
  double max_rel_error = 0.0;
  bool zero_gradient = false;  // both gradients below 1e-6; error is absolute
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
};

/// Central differences of L = L_pred + L_align against the tape gradient,
/// per parameter. Groups larger than max_entries are checked on a seeded
/// subset that always includes the largest-magnitude analytic entry.
std::vector<GroupGradError> gradient_check(Model& model, std::span<const PreparedItem> batch, double h,
                                           int max_entries, std::uint64_t seed);

/// Small graph used by the gradient suite: two predictor blocks of width 16,
/// a 4 x 4 grid, a 4-cell mask block and a batch of four.
TrainConfig gradcheck_config();
std::vector<PreparedItem> gradcheck_batch(const Model& model, std::uint64_t seed);

/// Reference implementations written as plain loops.
double brute_contrastive_loss(const Mat& text, const Mat& image, double tau);
double brute_prediction_loss(const Mat& predicted, const Mat& target);
double brute_recall_at_k(const std::vector<std::vector<std::string>>& rankings,
                         const std::vector<std::vector<std::string>>& truths, int k);
double brute_map_at_k(const std::vector<std::vector<std::string>>& rankings,
                      const std::vector<std::vector<std::string>>& truths, int k);

SuiteReport verify_gradients(std::uint64_t seed = 0);
SuiteReport verify_oracles(std::uint64_t seed = 0, int instances = 100);
SuiteReport verify_invariants(std::uint64_t seed = 0, int samples = 1000);

/// "grad", "oracle", "invariants" or "all".
std::vector<SuiteReport> run_suites(std::string_view which, std::uint64_t seed = 0);

}  // namespace wmcir
