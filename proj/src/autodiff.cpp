#include "wmcir/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace wmcir {

// ---------------------------------------------------------------- parameters

Parameter& ParameterSet::add(std::string name, Mat init, bool decay) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(init);
  p->decay = decay;
  p->zero_grad();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Parameter& ParameterSet::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

const Parameter& ParameterSet::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

double ParameterSet::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) s += p->grad.squaredNorm();
  return std::sqrt(s);
}

// ---------------------------------------------------------------------- tape

const Mat& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw std::logic_error("Var::scalar on a non-scalar node");
  return v(0, 0);
}

int Tape::check(Var v) const {
  if (v.tape() != this || v.id() < 0 || v.id() >= static_cast<int>(nodes_.size()))
    throw std::logic_error("Var does not belong to this tape");
  return v.id();
}

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, true, {}, &p});
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, Backprop fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Mat value, std::span<const Var> inputs, Backprop fn) {
  bool rg = false;
  for (const Var& in : inputs) rg = rg || nodes_[check(in)].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(fn) : Backprop{}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(Var v, const Mat& delta) {
  Node& n = nodes_[check(v)];
  if (!n.requires_grad) return;
  if (delta.rows() != n.value.rows() || delta.cols() != n.value.cols())
    throw std::logic_error("gradient shape mismatch in backward pass");
  if (n.grad.size() == 0)
    n.grad = delta;
  else
    n.grad += delta;
}

void Tape::backward(Var loss) {
  const int root = check(loss);
  if (nodes_[root].value.size() != 1) throw std::logic_error("backward target must be 1 x 1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[root].grad = Mat::Ones(1, 1);
  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backprop) {
      const Mat g = n.grad;
      n.backprop(*this, g);
    }
  }
  for (auto& n : nodes_)
    if (n.param != nullptr && n.grad.size() != 0) n.param->grad += n.grad;
}

// ----------------------------------------------------------------------- ops

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

namespace ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g * b.value().transpose());
    tp.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul(Var a, const Mat& w) {
  require(a.cols() == w.rows(), "matmul: inner dimensions differ");
  const Mat* wp = &w;
  return a.tape()->record(a.value() * w, {a},
                          [a, wp](Tape& tp, const Mat& g) { tp.accumulate(a, g * wp->transpose()); });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: expected 1 x cols row");
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(row, g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  return a.tape()->record(a.value() * s, {a}, [a, s](Tape& tp, const Mat& g) { tp.accumulate(a, g * s); });
}

Var scalar_mul(Var s, Var a) {
  require(s.rows() == 1 && s.cols() == 1, "scalar_mul: expected 1 x 1 scale");
  return a.tape()->record(a.value() * s.scalar(), {s, a}, [s, a](Tape& tp, const Mat& g) {
    tp.accumulate(s, Mat::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
    tp.accumulate(a, g * s.scalar());
  });
}

Var tanh(Var a) {
  Mat y = a.value().array().tanh().matrix();
  return a.tape()->record(y, {a}, [a, y](Tape& tp, const Mat& g) {
    tp.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var gelu(Var a) {
  Mat y = a.value().unaryExpr([](double x) { return wmcir::gelu(x); });
  return a.tape()->record(std::move(y), {a}, [a](Tape& tp, const Mat& g) {
    tp.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) { return gelu_grad(x); })));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Eigen::Index n = x.cols();
  require(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n,
          "layer_norm: gain/bias must be 1 x cols");
  const Mat& xv = x.value();
  Mat xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Mat y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  return x.tape()->record(std::move(y), {x, gain, bias},
                          [x, gain, bias, xhat, inv_std, n](Tape& tp, const Mat& g) {
                            Mat dxhat = g;
                            dxhat.array().rowwise() *= gain.value().row(0).array();
                            Mat dx(g.rows(), n);
                            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                              const double m1 = dxhat.row(r).mean();
                              const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                              dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                            }
                            tp.accumulate(x, dx);
                            tp.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                            tp.accumulate(bias, g.colwise().sum());
                          });
}

Var softmax_rows(Var a) {
  const Mat& av = a.value();
  Mat y(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const double mx = av.row(r).maxCoeff();
    y.row(r) = (av.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  return a.tape()->record(y, {a}, [a, y](Tape& tp, const Mat& g) {
    Mat dz = g.cwiseProduct(y);
    const Eigen::VectorXd dots = dz.rowwise().sum();
    for (Eigen::Index r = 0; r < y.rows(); ++r) dz.row(r) -= dots(r) * y.row(r);
    tp.accumulate(a, dz);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(a.value().middleRows(start, count), {a},
                          [a, start, count, rows, cols](Tape& tp, const Mat& g) {
                            Mat d = Mat::Zero(rows, cols);
                            d.middleRows(start, count) = g;
                            tp.accumulate(a, d);
                          });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(a.value().middleCols(start, count), {a},
                          [a, start, count, rows, cols](Tape& tp, const Mat& g) {
                            Mat d = Mat::Zero(rows, cols);
                            d.middleCols(start, count) = g;
                            tp.accumulate(a, d);
                          });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [ins](Tape& tp, const Mat& g) {
    Eigen::Index off = 0;
    for (const Var& p : ins) {
      tp.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [ins](Tape& tp, const Mat& g) {
    Eigen::Index off = 0;
    for (const Var& p : ins) {
      tp.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  const Eigen::Index ar = a.rows(), ac = a.cols();
  return a.tape()->record(std::move(out), {a}, [a, idx, ar, ac](Tape& tp, const Mat& g) {
    Mat d = Mat::Zero(ar, ac);
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(a, d);
  });
}

Var mean_rows(Var a) {
  require(a.rows() > 0, "mean_rows: empty input");
  const Eigen::Index n = a.rows();
  return a.tape()->record(a.value().colwise().mean(), {a}, [a, n](Tape& tp, const Mat& g) {
    tp.accumulate(a, g.replicate(n, 1) / static_cast<double>(n));
  });
}

Var transpose(Var a) {
  return a.tape()->record(a.value().transpose(), {a},
                          [a](Tape& tp, const Mat& g) { tp.accumulate(a, g.transpose()); });
}

Var normalize_rows(Var a, double eps) {
  const Mat& av = a.value();
  Eigen::VectorXd norms = av.rowwise().norm().cwiseMax(eps);
  Mat y = av;
  for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) /= norms(r);
  return a.tape()->record(y, {a}, [a, y, norms](Tape& tp, const Mat& g) {
    Mat d(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      d.row(r) = (g.row(r) - dot * y.row(r)) / norms(r);
    }
    tp.accumulate(a, d);
  });
}

Var sum(Var a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(Mat::Constant(1, 1, a.value().sum()), {a}, [a, r, c](Tape& tp, const Mat& g) {
    tp.accumulate(a, Mat::Constant(r, c, g(0, 0)));
  });
}

Var sum_squares(Var a) {
  return a.tape()->record(Mat::Constant(1, 1, a.value().squaredNorm()), {a}, [a](Tape& tp, const Mat& g) {
    tp.accumulate(a, 2.0 * g(0, 0) * a.value());
  });
}

Var diag_cross_entropy(Var logits) {
  const Mat& z = logits.value();
  require(z.rows() == z.cols() && z.rows() > 0, "diag_cross_entropy: expected a square matrix");
  const Eigen::Index n = z.rows();
  Mat p(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - mx).exp();
    const double s = p.row(i).sum();
    p.row(i) /= s;
    total += (mx + std::log(s)) - z(i, i);
  }
  return logits.tape()->record(Mat::Constant(1, 1, total / static_cast<double>(n)), {logits},
                               [logits, p, n](Tape& tp, const Mat& g) {
                                 Mat d = p;
                                 d.diagonal().array() -= 1.0;
                                 tp.accumulate(logits, d * (g(0, 0) / static_cast<double>(n)));
                               });
}

}  // namespace ad
}  // namespace wmcir
