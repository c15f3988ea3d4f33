#include "doctest.h"

#include <cmath>
#include <complex>
#include <random>

#include "gridsym/linalg.hpp"

using namespace gridsym;

TEST_CASE("triplets assemble with duplicates summed and canonical order") {
  std::vector<Triplet> t{{0, 1, 2.0}, {1, 1, -3.0}};
  auto m = csc_from_triplets(2, 2, t);
  CHECK(m.nnz() == 2);
  CHECK(m.coeff(0, 1) == 2.0);
  CHECK(m.coeff(1, 1) == -3.0);
  CHECK(m.coeff(0, 0) == 0.0);

  auto empty = csc_from_triplets(3, 4, std::vector<Triplet>{});
  CHECK(empty.nnz() == 0);
  CHECK(empty.rows() == 3);
  CHECK(empty.cols() == 4);

  std::vector<Triplet> dup{{0, 0, 1.0}, {0, 0, 2.0}};
  auto d = csc_from_triplets(1, 1, dup);
  CHECK(d.nnz() == 1);
  CHECK(d.coeff(0, 0) == 3.0);
}

TEST_CASE("triplet assembly equals dense accumulation on random instances") {
  std::mt19937 rng(123);
  std::uniform_int_distribution<int> idx(0, 7);
  std::uniform_real_distribution<double> val(-2, 2);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<Triplet> trips;
    std::vector<double> dense(64, 0.0);
    for (int k = 0; k < 40; ++k) {
      int r = idx(rng), c = idx(rng);
      double v = val(rng);
      trips.push_back({r, c, v});
      dense[c * 8 + r] += v;
    }
    auto m = csc_from_triplets(8, 8, trips);
    auto got = m.to_dense();
    for (int i = 0; i < 64; ++i) {
      CHECK(got[i] == doctest::Approx(dense[i]).epsilon(1e-14));
    }
    // canonical ordering: rows strictly increasing within each column
    for (int c = 0; c < 8; ++c) {
      for (int p = m.col_ptr()[c] + 1; p < m.col_ptr()[c + 1]; ++p) {
        CHECK(m.row_idx()[p] > m.row_idx()[p - 1]);
      }
    }
  }
}

TEST_CASE("in-place addition at registered slots") {
  std::vector<Triplet> t{{0, 0, 0.0}, {1, 0, 0.0}, {2, 1, 0.0}};
  auto m = csc_from_triplets(3, 2, t);
  std::vector<int> slots{m.find_slot(0, 0), m.find_slot(1, 0), m.find_slot(2, 1)};
  for (int s : slots) REQUIRE(s >= 0);

  std::vector<double> add{0.002, 0.002, 0.002};
  inplace_add(m, slots, add);
  CHECK(m.coeff(0, 0) == doctest::Approx(0.002));
  CHECK(m.coeff(2, 1) == doctest::Approx(0.002));

  std::vector<double> zeros{0, 0, 0};
  auto before = m.values();
  inplace_add(m, slots, zeros);
  CHECK(m.values() == before);

  // two passes equal one pass of summed values
  auto m2 = csc_from_triplets(3, 2, t);
  std::vector<double> a{1, 2, 3}, b{4, 5, 6}, ab{5, 7, 9};
  inplace_add(m2, slots, a);
  inplace_add(m2, slots, b);
  auto m3 = csc_from_triplets(3, 2, t);
  inplace_add(m3, slots, ab);
  CHECK(m2.values() == m3.values());

  CHECK(m.find_slot(0, 1) == -1);  // outside the pattern
  m.zero_values();
  for (double v : m.values()) CHECK(v == 0.0);
}

TEST_CASE("sparse LU solves small systems exactly") {
  // identity
  std::vector<Triplet> id{{0, 0, 1.0}, {1, 1, 1.0}, {2, 2, 1.0}};
  auto I = csc_from_triplets(3, 3, id);
  std::vector<double> b{1.5, -2.0, 7.0};
  auto z = sparse_lu_solve(I, b);
  CHECK(z[0] == doctest::Approx(1.5));
  CHECK(z[1] == doctest::Approx(-2.0));
  CHECK(z[2] == doctest::Approx(7.0));

  // hand elimination: [[2,1],[1,3]] z = [3,5] -> z = [0.8, 1.4]
  std::vector<Triplet> t{{0, 0, 2.0}, {0, 1, 1.0}, {1, 0, 1.0}, {1, 1, 3.0}};
  auto A = csc_from_triplets(2, 2, t);
  auto z2 = sparse_lu_solve(A, std::vector<double>{3.0, 5.0});
  CHECK(z2[0] == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(z2[1] == doctest::Approx(1.4).epsilon(1e-14));
}

TEST_CASE("sparse LU on random diagonally dominant systems") {
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> val(-1, 1);
  std::uniform_int_distribution<int> ridx(0, 49);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 50;
    std::vector<Triplet> trips;
    std::vector<double> diag(n, 0.0);
    for (int k = 0; k < 300; ++k) {
      int r = ridx(rng), c = ridx(rng);
      if (r == c) continue;
      double v = val(rng);
      trips.push_back({r, c, v});
      diag[r] += std::abs(v);
    }
    for (int i = 0; i < n; ++i) trips.push_back({i, i, diag[i] + 1.0});

    auto A = csc_from_triplets(n, n, trips);
    std::vector<double> b(n);
    for (auto& x : b) x = val(rng);

    LuSymbolic sym = lu_analyze(A);
    SparseLu lu(A, &sym);
    auto z = lu.solve(b);

    std::vector<double> residual(b.begin(), b.end());
    for (auto& r : residual) r = -r;
    A.multiply_add(z, residual);
    double maxres = 0, maxb = 0;
    for (int i = 0; i < n; ++i) {
      maxres = std::max(maxres, std::abs(residual[i]));
      maxb = std::max(maxb, std::abs(b[i]));
    }
    CHECK(maxres < 1e-10 * (1.0 + maxb));
  }
}

TEST_CASE("LU requires pivoting when the diagonal is structurally zero") {
  // [[0, 1], [1, 0]] is perfectly solvable with row pivoting
  std::vector<Triplet> t{{0, 1, 1.0}, {1, 0, 1.0}};
  auto A = csc_from_triplets(2, 2, t);
  auto z = sparse_lu_solve(A, std::vector<double>{3.0, 4.0});
  CHECK(z[0] == doctest::Approx(4.0));
  CHECK(z[1] == doctest::Approx(3.0));
}

TEST_CASE("singular matrices raise with a pivot index") {
  std::vector<Triplet> t{{0, 0, 1.0}, {1, 0, 2.0}};  // second column empty
  auto A = csc_from_triplets(2, 2, t);
  CHECK_THROWS_AS(sparse_lu_solve(A, std::vector<double>{1.0, 1.0}), SingularMatrixError);
}

TEST_CASE("symbolic analysis is reusable across same-pattern factorizations") {
  std::vector<Triplet> t{{0, 0, 4.0}, {1, 0, 1.0}, {0, 1, 1.0}, {1, 1, 3.0}, {2, 2, 5.0}};
  auto A = csc_from_triplets(3, 3, t);
  LuSymbolic sym = lu_analyze(A);
  SparseLu lu1(A, &sym);
  // same pattern, new values
  A.values()[0] = 8.0;
  SparseLu lu2(A, &sym);
  auto z = lu2.solve(std::vector<double>{8.0, 1.0, 5.0});
  CHECK(8.0 * z[0] + 1.0 * z[1] == doctest::Approx(8.0));
  CHECK(1.0 * z[0] + 3.0 * z[1] == doctest::Approx(1.0));
  CHECK(5.0 * z[2] == doctest::Approx(5.0));
}

TEST_CASE("dense eigenvalues of simple matrices") {
  DenseMatrix d(3, 3);
  d(0, 0) = 1;
  d(1, 1) = 2;
  d(2, 2) = 3;
  auto eigs = dense_eigenvalues(d);
  std::vector<double> re;
  for (auto& l : eigs) {
    CHECK(std::abs(l.imag()) < 1e-12);
    re.push_back(l.real());
  }
  std::sort(re.begin(), re.end());
  CHECK(re[0] == doctest::Approx(1.0));
  CHECK(re[1] == doctest::Approx(2.0));
  CHECK(re[2] == doctest::Approx(3.0));

  DenseMatrix r(2, 2);
  r(0, 1) = 1;
  r(1, 0) = -4;
  auto ri = dense_eigenvalues(r);
  std::sort(ri.begin(), ri.end(),
            [](auto a, auto b) { return a.imag() < b.imag(); });
  CHECK(ri[0].real() == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(ri[0].imag() == doctest::Approx(-2.0));
  CHECK(ri[1].imag() == doctest::Approx(2.0));
}

TEST_CASE("companion matrix of (s + 0.192)^2 + 4.225^2") {
  // s^2 + 2*0.192 s + (0.192^2 + 4.225^2)
  const double b = 2 * 0.192;
  const double c = 0.192 * 0.192 + 4.225 * 4.225;
  DenseMatrix m(2, 2);
  m(0, 0) = -b;
  m(0, 1) = -c;
  m(1, 0) = 1.0;
  auto eigs = dense_eigenvalues(m);
  std::sort(eigs.begin(), eigs.end(), [](auto a, auto b2) { return a.imag() < b2.imag(); });
  CHECK(eigs[1].real() == doctest::Approx(-0.192).epsilon(1e-8));
  CHECK(eigs[1].imag() == doctest::Approx(4.225).epsilon(1e-8));
  CHECK(eigs[0].real() == doctest::Approx(-0.192).epsilon(1e-8));
  CHECK(eigs[0].imag() == doctest::Approx(-4.225).epsilon(1e-8));
}

TEST_CASE("eigenvalues of A^T A are real and nonnegative") {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> val(-1, 1);
  const int n = 12;
  DenseMatrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = val(rng);
  }
  DenseMatrix ata(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int k = 0; k < n; ++k) s += a(k, i) * a(k, j);
      ata(i, j) = s;
    }
  }
  for (auto& l : dense_eigenvalues(ata)) {
    CHECK(std::abs(l.imag()) < 1e-8);
    CHECK(l.real() > -1e-8);
  }
}

TEST_CASE("computed eigenvalues pass the residual check") {
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> val(-1, 1);
  const int n = 30;
  DenseMatrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = val(rng);
  }
  auto eigs = dense_eigenvalues(a);
  REQUIRE(eigs.size() == static_cast<std::size_t>(n));
  for (const auto& l : eigs) {
    CHECK(eigen_residual(a, l) < 1e-8);
  }
}
