#include "gridsym/linalg.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace gridsym {

// ---------------------------------------------------------------------------
// SparseMatrix
// ---------------------------------------------------------------------------

SparseMatrix::SparseMatrix(int rows, int cols)
    : rows_(rows), cols_(cols), col_ptr_(cols + 1, 0) {}

SparseMatrix SparseMatrix::from_triplets(int rows, int cols,
                                         std::span<const Triplet> entries) {
  for (const auto& t : entries) {
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
      throw std::out_of_range("triplet index outside matrix shape");
    }
  }
  std::vector<Triplet> sorted(entries.begin(), entries.end());
  std::sort(sorted.begin(), sorted.end(), [](const Triplet& a, const Triplet& b) {
    return a.col != b.col ? a.col < b.col : a.row < b.row;
  });

  SparseMatrix m(rows, cols);
  m.row_idx_.reserve(sorted.size());
  m.values_.reserve(sorted.size());
  int last_col = -1;
  int last_row = -1;
  for (const auto& t : sorted) {
    if (t.col == last_col && t.row == last_row) {
      m.values_.back() += t.value;  // duplicate position: sum
      continue;
    }
    for (int c = last_col + 1; c <= t.col; ++c) {
      m.col_ptr_[c] = static_cast<int>(m.row_idx_.size());
    }
    last_col = t.col;
    last_row = t.row;
    m.row_idx_.push_back(t.row);
    m.values_.push_back(t.value);
  }
  for (int c = last_col + 1; c <= cols; ++c) {
    m.col_ptr_[c] = static_cast<int>(m.row_idx_.size());
  }
  return m;
}

int SparseMatrix::find_slot(int row, int col) const {
  if (col < 0 || col >= cols_) return -1;
  const int lo = col_ptr_[col];
  const int hi = col_ptr_[col + 1];
  auto begin = row_idx_.begin() + lo;
  auto end = row_idx_.begin() + hi;
  auto it = std::lower_bound(begin, end, row);
  if (it == end || *it != row) return -1;
  return static_cast<int>(it - row_idx_.begin());
}

void SparseMatrix::zero_values() { std::fill(values_.begin(), values_.end(), 0.0); }

void SparseMatrix::add_at_slots(std::span<const int> slots, std::span<const double> add) {
  assert(slots.size() == add.size());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    assert(slots[k] >= 0 && slots[k] < static_cast<int>(values_.size()));
    values_[static_cast<std::size_t>(slots[k])] += add[k];
  }
}

double SparseMatrix::coeff(int row, int col) const {
  int s = find_slot(row, col);
  return s < 0 ? 0.0 : values_[static_cast<std::size_t>(s)];
}

std::vector<double> SparseMatrix::to_dense() const {
  std::vector<double> d(static_cast<std::size_t>(rows_) * cols_, 0.0);
  for (int c = 0; c < cols_; ++c) {
    for (int p = col_ptr_[c]; p < col_ptr_[c + 1]; ++p) {
      d[static_cast<std::size_t>(c) * rows_ + row_idx_[p]] += values_[p];
    }
  }
  return d;
}

void SparseMatrix::multiply_add(std::span<const double> x, std::span<double> y) const {
  for (int c = 0; c < cols_; ++c) {
    const double xc = x[c];
    if (xc == 0.0) continue;
    for (int p = col_ptr_[c]; p < col_ptr_[c + 1]; ++p) {
      y[row_idx_[p]] += values_[p] * xc;
    }
  }
}

SparseMatrix csc_from_triplets(int rows, int cols, std::span<const Triplet> entries) {
  return SparseMatrix::from_triplets(rows, cols, entries);
}

// ---------------------------------------------------------------------------
// Reverse Cuthill-McKee ordering on the pattern of A + A^T
// ---------------------------------------------------------------------------

LuSymbolic lu_analyze(const SparseMatrix& a) {
  const int n = a.cols();
  std::vector<std::vector<int>> adj(n);
  for (int c = 0; c < n; ++c) {
    for (int p = a.col_ptr()[c]; p < a.col_ptr()[c + 1]; ++p) {
      int r = a.row_idx()[p];
      if (r == c) continue;
      adj[c].push_back(r);
      adj[r].push_back(c);
    }
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }

  std::vector<int> degree(n);
  for (int i = 0; i < n; ++i) degree[i] = static_cast<int>(adj[i].size());

  std::vector<char> visited(n, 0);
  std::vector<int> order;
  order.reserve(n);
  std::vector<int> candidates(n);
  std::iota(candidates.begin(), candidates.end(), 0);
  std::sort(candidates.begin(), candidates.end(),
            [&](int x, int y) { return degree[x] != degree[y] ? degree[x] < degree[y] : x < y; });

  for (int start : candidates) {
    if (visited[start]) continue;
    std::queue<int> bfs;
    bfs.push(start);
    visited[start] = 1;
    while (!bfs.empty()) {
      int u = bfs.front();
      bfs.pop();
      order.push_back(u);
      std::vector<int> next;
      for (int v : adj[u]) {
        if (!visited[v]) {
          visited[v] = 1;
          next.push_back(v);
        }
      }
      std::sort(next.begin(), next.end(), [&](int x, int y) {
        return degree[x] != degree[y] ? degree[x] < degree[y] : x < y;
      });
      for (int v : next) bfs.push(v);
    }
  }
  std::reverse(order.begin(), order.end());

  LuSymbolic sym;
  sym.order = std::move(order);
  sym.order_inv.assign(n, 0);
  for (int i = 0; i < n; ++i) sym.order_inv[sym.order[i]] = i;
  return sym;
}

// ---------------------------------------------------------------------------
// Left-looking sparse LU with partial pivoting
// ---------------------------------------------------------------------------

namespace {

// Depth-first search from `root` through the columns of the partially built L,
// pushing the reverse post-order onto xi[top..n). Rows map to L columns via
// pinv. Returns the new top index.
int lu_dfs(int root, const std::vector<int>& lp, const std::vector<int>& li,
           const std::vector<int>& pinv, std::vector<int>& xi, std::vector<int>& pstack,
           std::vector<int>& mark, int stamp, int top) {
  int head = 0;
  xi[head] = root;
  while (head >= 0) {
    int node = xi[head];
    int col = pinv[node];
    if (mark[node] != stamp) {
      mark[node] = stamp;
      pstack[head] = (col < 0) ? 0 : lp[col];
    }
    bool done = true;
    if (col >= 0) {
      for (int p = pstack[head]; p < lp[col + 1]; ++p) {
        int child = li[p];
        if (mark[child] == stamp) continue;
        pstack[head] = p + 1;
        xi[++head] = child;
        done = false;
        break;
      }
    }
    if (done) {
      --head;
      xi[--top] = node;
    }
  }
  return top;
}

}  // namespace

SparseLu::SparseLu(const SparseMatrix& a, const LuSymbolic* symbolic) {
  if (a.rows() != a.cols()) throw std::invalid_argument("LU requires a square matrix");
  n_ = a.rows();
  const int n = n_;

  order_.resize(n);
  if (symbolic) {
    order_ = symbolic->order;
  } else {
    std::iota(order_.begin(), order_.end(), 0);
  }
  std::vector<int> order_inv(n);
  for (int i = 0; i < n; ++i) order_inv[order_[i]] = i;

  // Permuted matrix A'(i,j) = A(order[i], order[j]) gathered column by column.
  std::vector<std::vector<std::pair<int, double>>> acols(n);
  for (int c = 0; c < n; ++c) {
    for (int p = a.col_ptr()[c]; p < a.col_ptr()[c + 1]; ++p) {
      acols[order_inv[c]].emplace_back(order_inv[a.row_idx()[p]], a.values()[p]);
    }
  }

  lp_.assign(1, 0);
  up_.assign(1, 0);
  prow_.assign(n, -1);
  std::vector<int> pinv(n, -1);
  std::vector<double> x(n, 0.0);
  std::vector<int> xi(n), pstack(n), mark(n, -1);

  for (int j = 0; j < n; ++j) {
    // Symbolic step: rows reachable from the pattern of A'(:,j).
    int top = n;
    for (const auto& [r, v] : acols[j]) {
      (void)v;
      if (mark[r] != j) top = lu_dfs(r, lp_, li_, pinv, xi, pstack, mark, j, top);
    }
    for (int t = top; t < n; ++t) x[xi[t]] = 0.0;
    for (const auto& [r, v] : acols[j]) x[r] += v;

    // Numeric step: apply the already-pivoted columns in topological order.
    for (int t = top; t < n; ++t) {
      int i = xi[t];
      int k = pinv[i];
      if (k < 0) continue;
      const double uval = x[i];
      if (uval == 0.0) continue;
      for (int p = lp_[k]; p < lp_[k + 1]; ++p) {
        x[li_[p]] -= lx_[p] * uval;
      }
    }

    // Pivot: largest magnitude among rows not yet pivotal.
    int pivot_row = -1;
    double pivot_abs = 0.0;
    for (int t = top; t < n; ++t) {
      int i = xi[t];
      if (pinv[i] >= 0) continue;
      double m = std::abs(x[i]);
      if (m > pivot_abs) {
        pivot_abs = m;
        pivot_row = i;
      }
    }
    if (pivot_row < 0 || pivot_abs == 0.0) {
      throw SingularMatrixError(
          "numerically singular matrix: zero pivot at column " + std::to_string(order_[j]),
          order_[j]);
    }
    const double pivot = x[pivot_row];
    pinv[pivot_row] = j;
    prow_[j] = pivot_row;

    // Emit U(:,j) (pivot coordinates) and L(:,j) scaled by the pivot.
    for (int t = top; t < n; ++t) {
      int i = xi[t];
      if (pinv[i] >= 0 && i != pivot_row) {
        ui_.push_back(pinv[i]);
        ux_.push_back(x[i]);
      }
    }
    ui_.push_back(j);
    ux_.push_back(pivot);
    up_.push_back(static_cast<int>(ui_.size()));

    for (int t = top; t < n; ++t) {
      int i = xi[t];
      if (pinv[i] < 0 && x[i] != 0.0) {
        li_.push_back(i);
        lx_.push_back(x[i] / pivot);
      }
    }
    lp_.push_back(static_cast<int>(li_.size()));
  }
}

void SparseLu::solve(std::span<const double> b, std::span<double> out) const {
  const int n = n_;
  if (static_cast<int>(b.size()) != n || static_cast<int>(out.size()) != n) {
    throw std::invalid_argument("solve: dimension mismatch");
  }
  // Forward substitution on L in permuted-row coordinates.
  std::vector<double> work(n);
  for (int i = 0; i < n; ++i) work[i] = b[order_[i]];
  std::vector<double> y(n);
  for (int k = 0; k < n; ++k) {
    const double yk = work[prow_[k]];
    y[k] = yk;
    if (yk == 0.0) continue;
    for (int p = lp_[k]; p < lp_[k + 1]; ++p) {
      work[li_[p]] -= lx_[p] * yk;
    }
  }
  // Backward substitution on U (pivot coordinates both ways).
  for (int j = n - 1; j >= 0; --j) {
    const int last = up_[j + 1] - 1;  // diagonal entry is emitted last
    const double zj = y[j] / ux_[last];
    y[j] = zj;
    if (zj == 0.0) continue;
    for (int p = up_[j]; p < last; ++p) {
      y[ui_[p]] -= ux_[p] * zj;
    }
  }
  for (int j = 0; j < n; ++j) out[order_[j]] = y[j];
}

std::vector<double> SparseLu::solve(std::span<const double> b) const {
  std::vector<double> x(n_);
  solve(b, x);
  return x;
}

std::vector<double> sparse_lu_solve(const SparseMatrix& a, std::span<const double> b,
                                    const LuSymbolic* symbolic) {
  SparseLu lu(a, symbolic);
  return lu.solve(b);
}

// ---------------------------------------------------------------------------
// Dense eigensolver: balance + Hessenberg + Francis double-shift QR
// ---------------------------------------------------------------------------

namespace {

void balance(DenseMatrix& a) {
  const int n = a.rows();
  const double radix = 2.0;
  const double sq = radix * radix;
  bool done = false;
  while (!done) {
    done = true;
    for (int i = 0; i < n; ++i) {
      double r = 0.0, c = 0.0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        c += std::abs(a(j, i));
        r += std::abs(a(i, j));
      }
      if (c == 0.0 || r == 0.0) continue;
      double g = r / radix;
      double f = 1.0;
      double s = c + r;
      while (c < g) {
        f *= radix;
        c *= sq;
      }
      g = r * radix;
      while (c > g) {
        f /= radix;
        c /= sq;
      }
      if ((c + r) / f < 0.95 * s) {
        done = false;
        g = 1.0 / f;
        for (int j = 0; j < n; ++j) a(i, j) *= g;
        for (int j = 0; j < n; ++j) a(j, i) *= f;
      }
    }
  }
}

// Reduce to upper Hessenberg form by stabilized elementary transformations.
void hessenberg(DenseMatrix& a) {
  const int n = a.rows();
  for (int m = 1; m < n - 1; ++m) {
    double x = 0.0;
    int pivot = m;
    for (int j = m; j < n; ++j) {
      if (std::abs(a(j, m - 1)) > std::abs(x)) {
        x = a(j, m - 1);
        pivot = j;
      }
    }
    if (pivot != m) {
      for (int j = m - 1; j < n; ++j) std::swap(a(pivot, j), a(m, j));
      for (int j = 0; j < n; ++j) std::swap(a(j, pivot), a(j, m));
    }
    if (x != 0.0) {
      for (int i = m + 1; i < n; ++i) {
        double y = a(i, m - 1);
        if (y == 0.0) continue;
        y /= x;
        a(i, m - 1) = y;
        for (int j = m; j < n; ++j) a(i, j) -= y * a(m, j);
        for (int j = 0; j < n; ++j) a(j, m) += y * a(j, i);
      }
    }
  }
  // The strictly-lower part beyond the first subdiagonal holds multipliers;
  // clear it so the QR sweeps see a clean Hessenberg matrix.
  for (int i = 2; i < n; ++i) {
    for (int j = 0; j < i - 1; ++j) a(i, j) = 0.0;
  }
}

inline double sign_of(double magnitude, double sign) {
  return sign >= 0.0 ? std::abs(magnitude) : -std::abs(magnitude);
}

// Francis double-shift QR on an upper Hessenberg matrix (classic scheme).
std::vector<std::complex<double>> hqr(DenseMatrix& a) {
  const int n = a.rows();
  const double eps = std::numeric_limits<double>::epsilon();
  std::vector<std::complex<double>> eig(n);

  double anorm = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = std::max(i - 1, 0); j < n; ++j) anorm += std::abs(a(i, j));
  }
  if (anorm == 0.0) return eig;  // zero matrix

  int nn = n - 1;
  double t = 0.0;
  double p = 0, q = 0, r = 0, x = 0, y = 0, z = 0, w = 0, s = 0, u = 0, v = 0;
  while (nn >= 0) {
    int its = 0;
    int l;
    do {
      for (l = nn; l >= 1; --l) {
        s = std::abs(a(l - 1, l - 1)) + std::abs(a(l, l));
        if (s == 0.0) s = anorm;
        if (std::abs(a(l, l - 1)) <= eps * s) {
          a(l, l - 1) = 0.0;
          break;
        }
      }
      x = a(nn, nn);
      if (l == nn) {
        eig[nn--] = x + t;
      } else {
        y = a(nn - 1, nn - 1);
        w = a(nn, nn - 1) * a(nn - 1, nn);
        if (l == nn - 1) {
          p = 0.5 * (y - x);
          q = p * p + w;
          z = std::sqrt(std::abs(q));
          x += t;
          if (q >= 0.0) {
            z = p + sign_of(z, p);
            eig[nn - 1] = eig[nn] = x + z;
            if (z != 0.0) eig[nn] = x - w / z;
          } else {
            eig[nn] = {x + p, -z};
            eig[nn - 1] = std::conj(eig[nn]);
          }
          nn -= 2;
        } else {
          if (its == 60) throw std::runtime_error("eigensolver iteration cap exceeded");
          if (its == 10 || its == 20 || its == 30 || its == 40 || its == 50) {
            t += x;
            for (int i = 0; i <= nn; ++i) a(i, i) -= x;
            s = std::abs(a(nn, nn - 1)) + std::abs(a(nn - 1, nn - 2));
            y = x = 0.75 * s;
            w = -0.4375 * s * s;
          }
          ++its;
          int m;
          for (m = nn - 2; m >= l; --m) {
            z = a(m, m);
            r = x - z;
            s = y - z;
            p = (r * s - w) / a(m + 1, m) + a(m, m + 1);
            q = a(m + 1, m + 1) - z - r - s;
            r = a(m + 2, m + 1);
            s = std::abs(p) + std::abs(q) + std::abs(r);
            p /= s;
            q /= s;
            r /= s;
            if (m == l) break;
            u = std::abs(a(m, m - 1)) * (std::abs(q) + std::abs(r));
            v = std::abs(p) *
                (std::abs(a(m - 1, m - 1)) + std::abs(z) + std::abs(a(m + 1, m + 1)));
            if (u <= eps * v) break;
          }
          for (int i = m + 2; i <= nn; ++i) {
            a(i, i - 2) = 0.0;
            if (i != m + 2) a(i, i - 3) = 0.0;
          }
          for (int k = m; k <= nn - 1; ++k) {
            if (k != m) {
              p = a(k, k - 1);
              q = a(k + 1, k - 1);
              r = (k != nn - 1) ? a(k + 2, k - 1) : 0.0;
              x = std::abs(p) + std::abs(q) + std::abs(r);
              if (x != 0.0) {
                p /= x;
                q /= x;
                r /= x;
              }
            }
            s = sign_of(std::sqrt(p * p + q * q + r * r), p);
            if (s == 0.0) continue;
            if (k == m) {
              if (l != m) a(k, k - 1) = -a(k, k - 1);
            } else {
              a(k, k - 1) = -s * x;
            }
            p += s;
            x = p / s;
            y = q / s;
            z = r / s;
            q /= p;
            r /= p;
            for (int j = k; j <= nn; ++j) {
              p = a(k, j) + q * a(k + 1, j);
              if (k != nn - 1) {
                p += r * a(k + 2, j);
                a(k + 2, j) -= p * z;
              }
              a(k + 1, j) -= p * y;
              a(k, j) -= p * x;
            }
            const int mmin = nn < k + 3 ? nn : k + 3;
            for (int i = l; i <= mmin; ++i) {
              p = x * a(i, k) + y * a(i, k + 1);
              if (k != nn - 1) {
                p += z * a(i, k + 2);
                a(i, k + 2) -= p * r;
              }
              a(i, k + 1) -= p * q;
              a(i, k) -= p;
            }
          }
        }
      }
    } while (l < nn - 1 && nn >= 0);
  }
  return eig;
}

}  // namespace

std::vector<std::complex<double>> dense_eigenvalues(DenseMatrix a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("eigenvalues require a square matrix");
  for (double v : a.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("matrix has non-finite entries");
  }
  if (a.rows() == 0) return {};
  if (a.rows() == 1) return {std::complex<double>(a(0, 0), 0.0)};
  balance(a);
  hessenberg(a);
  return hqr(a);
}

double eigen_residual(const DenseMatrix& a, std::complex<double> lambda) {
  using cd = std::complex<double>;
  const int n = a.rows();
  double fro = 0.0;
  for (double v : a.data()) fro += v * v;
  fro = std::sqrt(fro);
  if (fro == 0.0) fro = 1.0;

  // (A - lambda I) with a tiny diagonal nudge so the factorization stays
  // usable when lambda is (nearly) exact.
  std::vector<cd> m(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m[static_cast<std::size_t>(i) * n + j] = cd(a(i, j), 0.0);
    m[static_cast<std::size_t>(i) * n + i] -= lambda + cd(fro * 1e-13, 0.0);
  }

  // Dense complex LU with partial pivoting.
  std::vector<int> piv(n);
  for (int k = 0; k < n; ++k) {
    int best = k;
    double bm = std::abs(m[static_cast<std::size_t>(k) * n + k]);
    for (int i = k + 1; i < n; ++i) {
      double c = std::abs(m[static_cast<std::size_t>(i) * n + k]);
      if (c > bm) {
        bm = c;
        best = i;
      }
    }
    piv[k] = best;
    if (best != k) {
      for (int j = 0; j < n; ++j) {
        std::swap(m[static_cast<std::size_t>(k) * n + j], m[static_cast<std::size_t>(best) * n + j]);
      }
    }
    cd pivot = m[static_cast<std::size_t>(k) * n + k];
    if (std::abs(pivot) == 0.0) pivot = cd(fro * 1e-300, 0.0);
    for (int i = k + 1; i < n; ++i) {
      cd f = m[static_cast<std::size_t>(i) * n + k] / pivot;
      m[static_cast<std::size_t>(i) * n + k] = f;
      for (int j = k + 1; j < n; ++j) {
        m[static_cast<std::size_t>(i) * n + j] -= f * m[static_cast<std::size_t>(k) * n + j];
      }
    }
  }

  auto lu_solve = [&](std::vector<cd> b) {
    for (int k = 0; k < n; ++k) {
      if (piv[k] != k) std::swap(b[k], b[piv[k]]);
      for (int i = k + 1; i < n; ++i) b[i] -= m[static_cast<std::size_t>(i) * n + k] * b[k];
    }
    for (int k = n - 1; k >= 0; --k) {
      for (int j = k + 1; j < n; ++j) b[k] -= m[static_cast<std::size_t>(k) * n + j] * b[j];
      b[k] /= m[static_cast<std::size_t>(k) * n + k];
    }
    return b;
  };

  std::vector<cd> vvec(n, cd(1.0, 0.0));
  for (int iter = 0; iter < 3; ++iter) {
    vvec = lu_solve(std::move(vvec));
    double norm = 0.0;
    for (const auto& c : vvec) norm += std::norm(c);
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    for (auto& c : vvec) c /= norm;
  }

  // residual of (A - lambda I) v
  std::vector<cd> res(n, cd(0.0, 0.0));
  for (int i = 0; i < n; ++i) {
    cd acc(0.0, 0.0);
    for (int j = 0; j < n; ++j) acc += cd(a(i, j), 0.0) * vvec[j];
    res[i] = acc - lambda * vvec[i];
  }
  double rn = 0.0, vn = 0.0;
  for (int i = 0; i < n; ++i) {
    rn += std::norm(res[i]);
    vn += std::norm(vvec[i]);
  }
  return std::sqrt(rn) / (fro * std::sqrt(vn));
}

}  // namespace gridsym
