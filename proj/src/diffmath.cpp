#include "flowscope/diffmath.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "flowscope/error.hpp"
#include "flowscope/rng.hpp"

namespace flowscope::diff {
namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    fail(Errc::ShapeMismatch,
         std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) fail(Errc::InvalidArgument, "operands recorded on different tapes");
}

template <typename Fwd, typename Bwd>
Var unary(Var x, Fwd fwd, Bwd dfdx) {
  const Matrix& in = x.value();
  Matrix out(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  const std::size_t xid = x.id();
  return x.tape()->record(std::move(out), {x}, [xid, dfdx](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& xv = t.value(xid);
    const Matrix& yv = t.value(self);
    Matrix& dx = t.grad_slot(xid);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(Errc::ShapeMismatch, "matrix data length does not match shape");
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t k = n ? rows.begin()->size() : 0;
  Matrix m(n, k);
  std::size_t r = 0;
  for (const auto& row : rows) {
    if (row.size() != k) fail(Errc::ShapeMismatch, "ragged initializer");
    std::copy(row.begin(), row.end(), m.row(r++).begin());
  }
  return m;
}

void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& out,
          bool accumulate) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  require(k == kb, "gemm", a, b);
  if (!accumulate) {
    out = Matrix(m, n);
  } else if (out.rows() != m || out.cols() != n) {
    require(false, "gemm(accumulate)", out, Matrix(m, n));
  }
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = out.row(i).data();
      const double* arow = a.row(i).data();
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b.row(p).data();
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a.row(i).data();
      double* orow = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b.row(j).data();
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        orow[j] += acc;
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = a.row(p).data();
      const double* brow = b.row(p).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* orow = out.row(i).data();
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a(p, i) * b(j, p);
        out(i, j) += acc;
      }
  }
}

// ---- Var / Tape ----------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool needs = false;
  for (Var p : parents) {
    if (p.tape() != this) fail(Errc::InvalidArgument, "operand recorded on a different tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

const Matrix& Tape::grad(std::size_t id) const {
  return const_cast<Tape*>(this)->grad_slot(id);
}

void Tape::note_kinks(std::span<const std::uint8_t> states) {
  kinks_.insert(kinks_.end(), states.begin(), states.end());
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) fail(Errc::InvalidArgument, "loss recorded on a different tape");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    fail(Errc::NonScalarLoss, "backward requires a 1x1 loss, got " + shape_str(lv));
  }
  for (Node& n : nodes_) n.grad = Matrix();
  grad_slot(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

// ---- primitives ------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Matrix out;
  gemm(a.value(), false, b.value(), false, out, false);
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(out), {a, b}, [aid, bid](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(aid)) gemm(g, false, t.value(bid), true, t.grad_slot(aid), true);
    if (t.requires_grad(bid)) gemm(t.value(aid), true, g, false, t.grad_slot(bid), true);
  });
}

namespace {
template <typename Op, typename Da, typename Db>
Var binary_elementwise(const char* name, Var a, Var b, Op op, Da da, Db db) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.same_shape(bv), name, av, bv);
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = op(av[i], bv[i]);
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(out), {a, b}, [aid, bid, da, db](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(aid);
    const Matrix& y = t.value(bid);
    if (t.requires_grad(aid)) {
      Matrix& d = t.grad_slot(aid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * da(x[i], y[i]);
    }
    if (t.requires_grad(bid)) {
      Matrix& d = t.grad_slot(bid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * db(x[i], y[i]);
    }
  });
}
}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var add_row(Var x, Var bias) {
  require_same_tape(x, bias);
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  require(bv.rows() == 1 && bv.cols() == xv.cols(), "add_row", xv, bv);
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  const std::size_t xid = x.id(), bid = bias.id();
  return x.tape()->record(std::move(out), {x, bias}, [xid, bid](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(xid)) {
      Matrix& d = t.grad_slot(xid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(bid)) {
      Matrix& d = t.grad_slot(bid);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) d[c] += row[c];
      }
    }
  });
}

Var scale(Var x, double factor) {
  return unary(
      x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary(
      x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var mul_scalar(Var x, Var factor) {
  require_same_tape(x, factor);
  const Matrix& xv = x.value();
  const Matrix& fv = factor.value();
  require(fv.rows() == 1 && fv.cols() == 1, "mul_scalar", xv, fv);
  const double s = fv[0];
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = s * xv[i];
  const std::size_t xid = x.id(), fid = factor.id();
  return x.tape()->record(std::move(out), {x, factor}, [xid, fid](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& xv = t.value(xid);
    if (t.requires_grad(xid)) {
      const double s = t.value(fid)[0];
      Matrix& d = t.grad_slot(xid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
    }
    if (t.requires_grad(fid)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      t.grad_slot(fid)[0] += acc;
    }
  });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var pow(Var x, double exponent) {
  return unary(
      x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) {
        if (exponent == 0.0) return 0.0;
        return exponent * std::pow(v, exponent - 1.0);
      });
}

Var relu(Var x) {
  const Matrix& xv = x.value();
  std::vector<std::uint8_t> states(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) states[i] = xv[i] < 0.0 ? 0 : (xv[i] == 0.0 ? 1 : 2);
  x.tape()->note_kinks(states);
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var clamp(Var x, double lo, double hi) {
  const Matrix& xv = x.value();
  std::vector<std::uint8_t> states(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) states[i] = xv[i] < lo ? 0 : (xv[i] > hi ? 2 : 1);
  x.tape()->note_kinks(states);
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var sum(Var x) {
  const Matrix& xv = x.value();
  double acc = 0.0;
  for (double v : xv.values()) acc += v;
  const std::size_t xid = x.id();
  return x.tape()->record(Matrix::scalar(acc), {x}, [xid](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Matrix& d = t.grad_slot(xid);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) fail(Errc::ShapeMismatch, "mean of an empty matrix");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var concat(Var a, Var b, int axis) {
  require_same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  if (axis == 0) {
    require(av.cols() == bv.cols(), "concat(axis=0)", av, bv);
    out = Matrix(av.rows() + bv.rows(), av.cols());
    std::copy(av.values().begin(), av.values().end(), out.values().begin());
    std::copy(bv.values().begin(), bv.values().end(), out.values().begin() + av.size());
  } else if (axis == 1) {
    require(av.rows() == bv.rows(), "concat(axis=1)", av, bv);
    out = Matrix(av.rows(), av.cols() + bv.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
      auto o = out.row(r);
      std::copy(av.row(r).begin(), av.row(r).end(), o.begin());
      std::copy(bv.row(r).begin(), bv.row(r).end(), o.begin() + av.cols());
    }
  } else {
    fail(Errc::InvalidArgument, "concat axis must be 0 or 1");
  }
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(out), {a, b}, [aid, bid, axis](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const std::size_t ac = t.value(aid).cols();
    const std::size_t asz = t.value(aid).size();
    if (t.requires_grad(aid)) {
      Matrix& d = t.grad_slot(aid);
      if (axis == 0) {
        for (std::size_t i = 0; i < asz; ++i) d[i] += g[i];
      } else {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < ac; ++c) d(r, c) += g(r, c);
      }
    }
    if (t.requires_grad(bid)) {
      Matrix& d = t.grad_slot(bid);
      if (axis == 0) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[asz + i];
      } else {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += g(r, ac + c);
      }
    }
  });
}

Var index_select(Var x, std::span<const std::size_t> rows) {
  const Matrix& xv = x.value();
  Matrix out(rows.size(), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) fail(Errc::ShapeMismatch, "index_select: row index out of range");
    std::copy(xv.row(rows[i]).begin(), xv.row(rows[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const std::size_t xid = x.id();
  return x.tape()->record(std::move(out), {x},
                          [xid, idx = std::move(idx)](Tape& t, std::size_t self) {
                            const Matrix& g = t.grad(self);
                            Matrix& d = t.grad_slot(xid);
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              auto src = g.row(i);
                              auto dst = d.row(idx[i]);
                              for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                            }
                          });
}

Var scatter_add(Var x, std::span<const std::size_t> targets, std::size_t out_rows) {
  const Matrix& xv = x.value();
  if (targets.size() != xv.rows()) {
    fail(Errc::ShapeMismatch, "scatter_add: one target index per input row required");
  }
  Matrix out(out_rows, xv.cols());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= out_rows) fail(Errc::ShapeMismatch, "scatter_add: target out of range");
    auto src = xv.row(i);
    auto dst = out.row(targets[i]);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
  }
  std::vector<std::size_t> idx(targets.begin(), targets.end());
  const std::size_t xid = x.id();
  return x.tape()->record(std::move(out), {x},
                          [xid, idx = std::move(idx)](Tape& t, std::size_t self) {
                            const Matrix& g = t.grad(self);
                            Matrix& d = t.grad_slot(xid);
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              auto src = g.row(idx[i]);
                              auto dst = d.row(i);
                              for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                            }
                          });
}

Var squared_norm(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double acc = 0.0;
    for (double v : xv.row(r)) acc += v * v;
    out[r] = acc;
  }
  const std::size_t xid = x.id();
  return x.tape()->record(std::move(out), {x}, [xid](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& xv = t.value(xid);
    Matrix& d = t.grad_slot(xid);
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) d(r, c) += 2.0 * g[r] * xv(r, c);
  });
}

Var umap_kernel(Var diff, double a, double b) {
  const Matrix& dv = diff.value();
  Matrix out(dv.rows(), 1);
  for (std::size_t r = 0; r < dv.rows(); ++r) {
    double s = 0.0;
    for (double v : dv.row(r)) s += v * v;
    out[r] = 1.0 / (1.0 + a * std::pow(s, b));
  }
  const std::size_t did = diff.id();
  return diff.tape()->record(std::move(out), {diff}, [did, a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& dv = t.value(did);
    const Matrix& p = t.value(self);
    Matrix& d = t.grad_slot(did);
    for (std::size_t r = 0; r < dv.rows(); ++r) {
      double s = 0.0;
      for (double v : dv.row(r)) s += v * v;
      if (s == 0.0) continue;
      // dp/dd = -p^2 * a * b * s^(b-1) * 2d
      const double coef = -g[r] * p[r] * p[r] * a * b * std::pow(s, b - 1.0) * 2.0;
      for (std::size_t c = 0; c < dv.cols(); ++c) d(r, c) += coef * dv(r, c);
    }
  });
}

// ---- grad check --------------------------------------------------------------

namespace {
struct Evaluation {
  double value;
  std::vector<std::uint8_t> kinks;
};

Evaluation evaluate(const LossBuilder& f, const std::vector<Matrix>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
  Var loss = f(tape, leaves);
  return {loss.value()[0], tape.kink_signature()};
}
}  // namespace

GradCheckResult grad_check(const LossBuilder& f, std::vector<Matrix> params, double h,
                           std::size_t max_coords, std::uint64_t seed) {
  std::vector<Matrix> analytic;
  std::vector<std::uint8_t> base_kinks;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
    Var loss = f(tape, leaves);
    tape.backward(loss);
    for (Var v : leaves) analytic.push_back(v.grad());
    base_kinks = tape.kink_signature();
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  if (max_coords > 0 && max_coords < coords.size()) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_coords; ++i) {
      std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
    }
    coords.resize(max_coords);
  }

  GradCheckResult result;
  for (auto [p, i] : coords) {
    const double original = params[p][i];
    params[p][i] = original + h;
    Evaluation plus = evaluate(f, params);
    params[p][i] = original - h;
    Evaluation minus = evaluate(f, params);
    params[p][i] = original;
    if (plus.kinks != base_kinks || minus.kinks != base_kinks) {
      ++result.skipped_kinks;
      continue;
    }
    const double fd = (plus.value - minus.value) / (2.0 * h);
    const double ad = analytic[p][i];
    const double denom = std::max({1.0, std::abs(ad), std::abs(fd)});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(ad - fd) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace flowscope::diff
