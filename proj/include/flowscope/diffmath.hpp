#pragma once

// Dense float64 matrices and a reverse-mode tape. Everything is 2-D; scalars
// are 1x1. Broadcasting exists only for the row-vector bias add.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace flowscope::diff {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix scalar(double value) { return Matrix(1, 1, value); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// C (+)= op(A) * op(B) on plain matrices; shared by forward and backward passes.
void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& out,
          bool accumulate);

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable input (parameter or perturbed feature block).
  Var leaf(Matrix value);
  /// A non-differentiable input.
  Var constant(Matrix value);

  /// Seeds d(loss)/d(loss) = 1 and visits every recorded node once, in reverse.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Appended to by non-smooth primitives (relu, clamp): one byte per element
  /// saying which side of the kink it sits on. Two evaluations with equal
  /// signatures lie in the same smooth piece.
  const std::vector<std::uint8_t>& kink_signature() const noexcept { return kinks_; }

  // Primitive implementation interface.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);
  Matrix& grad_slot(std::size_t id);
  void note_kinks(std::span<const std::uint8_t> states);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::uint8_t> kinks_;
};

// ---- primitives --------------------------------------------------------
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                  // elementwise
Var add_row(Var x, Var bias);           // x (n x k) + bias (1 x k) on every row
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);
Var mul_scalar(Var x, Var factor);      // factor is 1x1 and differentiable
Var exp(Var x);
Var log(Var x);
Var pow(Var x, double exponent);
Var relu(Var x);                        // derivative at exactly 0 is 0
Var sigmoid(Var x);
Var clamp(Var x, double lo, double hi); // zero gradient outside [lo, hi]
Var sum(Var x);                         // -> 1x1
Var mean(Var x);                        // -> 1x1
Var concat(Var a, Var b, int axis);     // axis 0 stacks rows, axis 1 columns
Var index_select(Var x, std::span<const std::size_t> rows);
Var scatter_add(Var x, std::span<const std::size_t> targets, std::size_t out_rows);
Var squared_norm(Var x);                // per-row sum of squares -> n x 1
/// Per-row kernel (1 + a * |d|^(2b))^-1 on difference rows d; n x 1 output.
/// Differentiated through |d|^2 directly so coincident points have gradient 0.
Var umap_kernel(Var diff, double a, double b);

// ---- verification ------------------------------------------------------
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

/// Builds the scalar loss from leaves bound to `params` on a fresh tape.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

/// Central finite differences against the tape's reverse-mode gradient.
/// Error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). If
/// `max_coords` is non-zero, that many coordinates are sampled (seeded);
/// coordinates whose +/-h evaluations change the kink signature are skipped.
GradCheckResult grad_check(const LossBuilder& f, std::vector<Matrix> params, double h = 1e-5,
                           std::size_t max_coords = 0, std::uint64_t seed = 0);

}  // namespace flowscope::diff
