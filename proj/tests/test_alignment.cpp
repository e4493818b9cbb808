#include "wmcir/alignment.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace wmcir;

namespace {

Mat random_mat(int r, int c, Rng& rng, double s = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = s * rng.normal();
  return m;
}

double loop_contrastive(const Mat& text, const Mat& image, double tau) {
  const int n = static_cast<int>(text.rows());
  auto unit = [](const Mat& m, int i) { return RowVec(m.row(i) / m.row(i).norm()); };
  double logits[64][64];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) logits[i][j] = tau * unit(text, i).dot(unit(image, j));
  double t2i = 0.0, i2t = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < n; ++j) {
      row += std::exp(logits[i][j] - tau);
      col += std::exp(logits[j][i] - tau);
    }
    t2i += std::log(row) + tau - logits[i][i];
    i2t += std::log(col) + tau - logits[i][i];
  }
  return (t2i + i2t) / n;
}

}  // namespace

TEST_SUITE("alignment") {

TEST_CASE("contrastive loss equals the explicit double loop") {
  Rng rng(8);
  for (int k = 0; k < 30; ++k) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 10));
    const Mat t = random_mat(n, 6, rng), v = random_mat(n, 6, rng, 3.0);
    const double tau = k % 2 ? 100.0 : 0.7;
    CHECK(std::abs(contrastive_loss(t, v, tau) - loop_contrastive(t, v, tau)) <= 1e-10);
  }
}

TEST_CASE("contrastive loss limits") {
  Rng rng(9);
  const Mat t = random_mat(8, 5, rng), v = random_mat(8, 5, rng);
  CHECK(contrastive_loss(t, v, 1e-12) == doctest::Approx(2 * std::log(8.0)).epsilon(1e-9));
  // perfectly aligned, orthogonal rows at high temperature -> loss near 0
  const Mat eye = Mat::Identity(4, 4);
  CHECK(contrastive_loss(eye, eye, 100.0) < 1e-30 + 1e-12);
  // scale invariance of the normalized rows
  CHECK(contrastive_loss(t * 7.0, v * 0.1, 3.0) == doctest::Approx(contrastive_loss(t, v, 3.0)).epsilon(1e-12));
  CHECK_THROWS(contrastive_loss(Mat::Zero(3, 5), Mat::Zero(4, 5), 1.0));
}

TEST_CASE("contrastive loss gradient matches central differences") {
  Rng rng(10);
  const Mat t0 = random_mat(4, 5, rng), v0 = random_mat(4, 5, rng);
  Tape tape;
  Var t = tape.leaf(t0), v = tape.leaf(v0);
  tape.backward(contrastive_loss(t, v, 5.0));
  const Mat gt = tape.grad(t), gv = tape.grad(v);
  const double h = 1e-6;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) {
      Mat tp = t0, tm = t0, vp = v0, vm = v0;
      tp(i, j) += h;
      tm(i, j) -= h;
      vp(i, j) += h;
      vm(i, j) -= h;
      CHECK(gt(i, j) == doctest::Approx((contrastive_loss(tp, v0, 5.0) - contrastive_loss(tm, v0, 5.0)) / (2 * h)).epsilon(1e-6));
      CHECK(gv(i, j) == doctest::Approx((contrastive_loss(t0, vp, 5.0) - contrastive_loss(t0, vm, 5.0)) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("zero gate reproduces the source mapping bitwise") {
  FusionConfig cfg;
  cfg.width = 16;
  cfg.dim = 8;
  ParameterSet params;
  Rng init(1), rng(2);
  FusionHead head(cfg, params, init);
  CHECK(head.gate_value() == 0.0);
  const Mat src = random_mat(1, 8, rng);
  Mat reference;
  {
    Tape t;
    reference = head.source_mapping(t, t.constant(src)).value();
  }
  for (int k = 0; k < 20; ++k) {
    Tape t;
    Var enhanced = t.constant(random_mat(16, 16, rng, 50.0));
    Var predicted = t.constant(random_mat(1 + k % 5, 16, rng, 50.0));
    const Mat s = head.fuse(t, enhanced, predicted, t.constant(src)).value();
    CHECK(s == reference);
  }
  head.gate().value(0, 0) = 0.3;
  CHECK(head.gate_value() == doctest::Approx(std::tanh(0.3)));
  Tape t;
  const Mat s = head.fuse(t, t.constant(random_mat(16, 16, rng)), t.constant(random_mat(2, 16, rng)), t.constant(src)).value();
  CHECK(s != reference);
}

TEST_CASE("ungated fusion reports a unit multiplier") {
  FusionConfig cfg;
  cfg.width = 16;
  cfg.dim = 8;
  cfg.gated = false;
  ParameterSet params;
  Rng init(1);
  FusionHead head(cfg, params, init);
  CHECK(head.gate_value() == 1.0);
}

TEST_CASE("total loss sums and rejects non-finite parts") {
  CHECK(total_loss(1.5, 2.0) == 3.5);
  CHECK_THROWS(total_loss(std::numeric_limits<double>::quiet_NaN(), 1.0));
  CHECK_THROWS(total_loss(1.0, std::numeric_limits<double>::infinity()));
}

}  // TEST_SUITE
