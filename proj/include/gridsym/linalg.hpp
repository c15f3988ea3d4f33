#pragma once

// Minimal numerical kernel: compressed-column sparse matrices with a fixed
// pattern and allocation-free in-place addition, a direct sparse LU solver
// (left-looking, partial pivoting, reusable symbolic analysis), and a dense
// eigensolver (balancing + Hessenberg reduction + shifted QR).

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridsym {

struct Triplet {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

struct SingularMatrixError : std::runtime_error {
  SingularMatrixError(const std::string& msg, int pivot)
      : std::runtime_error(msg), pivot_index(pivot) {}
  int pivot_index;
};

/// Compressed-column sparse matrix. The pattern is fixed at construction;
/// values may be reset and refilled in place without allocation.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(int rows, int cols);

  /// Duplicate (row, col) entries are summed; entries are stored in canonical
  /// order (row indices strictly increasing within each column).
  static SparseMatrix from_triplets(int rows, int cols, std::span<const Triplet> entries);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int nnz() const { return static_cast<int>(values_.size()); }

  const std::vector<int>& col_ptr() const { return col_ptr_; }
  const std::vector<int>& row_idx() const { return row_idx_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  /// Slot of (row, col) in the values array, or -1 when outside the pattern.
  int find_slot(int row, int col) const;

  /// Reset stored values to zero; the pattern is untouched.
  void zero_values();

  /// values[slots[k]] += add[k] for every k. Slots must come from find_slot.
  void add_at_slots(std::span<const int> slots, std::span<const double> add);

  double coeff(int row, int col) const;
  std::vector<double> to_dense() const;  // column-major rows*cols

  /// y += A x
  void multiply_add(std::span<const double> x, std::span<double> y) const;

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<int> col_ptr_;
  std::vector<int> row_idx_;
  std::vector<double> values_;
};

SparseMatrix csc_from_triplets(int rows, int cols, std::span<const Triplet> entries);

inline void inplace_add(SparseMatrix& m, std::span<const int> slots,
                        std::span<const double> values) {
  m.add_at_slots(slots, values);
}

/// Symbolic analysis reusable across factorizations with the same pattern:
/// a fill-reducing symmetric ordering (reverse Cuthill-McKee).
struct LuSymbolic {
  std::vector<int> order;      // new index -> original index
  std::vector<int> order_inv;  // original index -> new index
};

LuSymbolic lu_analyze(const SparseMatrix& a);

/// Sparse LU factors of a square matrix, produced with partial pivoting.
/// Immutable after construction; safe to share between threads.
class SparseLu {
 public:
  /// Factorize. Throws SingularMatrixError naming the failing pivot column.
  explicit SparseLu(const SparseMatrix& a, const LuSymbolic* symbolic = nullptr);

  int size() const { return n_; }
  void solve(std::span<const double> b, std::span<double> x) const;
  std::vector<double> solve(std::span<const double> b) const;

 private:
  int n_ = 0;
  std::vector<int> lp_, li_;  // L (unit diagonal implicit), CSC
  std::vector<double> lx_;
  std::vector<int> up_, ui_;  // U, CSC, row indices in pivot coordinates
  std::vector<double> ux_;
  std::vector<int> prow_;      // pivot step -> permuted row
  std::vector<int> order_;     // new -> old (identity when no symbolic given)
};

/// Convenience wrapper: factorize and solve in one call.
std::vector<double> sparse_lu_solve(const SparseMatrix& a, std::span<const double> b,
                                    const LuSymbolic* symbolic = nullptr);

/// Small dense row-major matrix used for the reduced state matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(int rows, int cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

/// All eigenvalues of a real square matrix via balancing, Hessenberg
/// reduction, and Francis double-shift QR iteration.
/// Throws on iteration-cap overflow.
std::vector<std::complex<double>> dense_eigenvalues(DenseMatrix a);

/// Residual check for a computed eigenvalue: runs a couple of inverse
/// iteration steps and returns ||(A - lambda I) v|| / (||A||_F ||v||).
double eigen_residual(const DenseMatrix& a, std::complex<double> lambda);

}  // namespace gridsym
