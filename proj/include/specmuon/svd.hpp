#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "specmuon/errors.hpp"
#include "specmuon/matrix.hpp"
#include "specmuon/random.hpp"

namespace specmuon {

using Vector = std::vector<double>;

/// Truncated singular triplets, sigma sorted descending.
///
/// Each u[i] has length rows and each v[i] has length cols. The rank-one
/// modes Q_i = u_i v_i^T are Frobenius-orthonormal.
struct SvdFactors {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Vector> u;
  Vector sigma;
  std::vector<Vector> v;

  std::size_t rank() const noexcept { return sigma.size(); }

  /// Q_i = u_i v_i^T
  Matrix mode(std::size_t i) const { return rank_one_accumulate(Matrix(rows, cols), 1.0, u[i], v[i]); }

  /// sum_{i < count} sigma_i u_i v_i^T
  Matrix reconstruct(std::size_t count) const {
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < std::min(count, rank()); ++i) out = rank_one_accumulate(std::move(out), sigma[i], u[i], v[i]);
    return out;
  }
  Matrix reconstruct() const { return reconstruct(rank()); }
};

struct SvdOptions {
  /// Above this min-dimension the randomized range finder is used for
  /// truncated requests.
  std::size_t jacobi_max_dim = 32;
  std::size_t oversampling = 8;
  std::size_t power_iterations = 2;
  std::uint64_t sketch_seed = 0x5eed5eedULL;
};

namespace detail {

inline constexpr double kOrthoTolerance = 1e-10;
inline constexpr double kTieTolerance = 1e-12;
inline constexpr double kRankTolerance = 4.0 * std::numeric_limits<double>::epsilon();

inline void axpy(double s, const Vector& x, Vector& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

inline void scale(Vector& x, double s) {
  for (double& e : x) e *= s;
}

/// Orthonormalize `x` against `basis` (two Gram-Schmidt passes). Returns
/// the norm left after projection, before normalization.
inline double orthogonalize_against(Vector& x, const std::vector<Vector>& basis, std::size_t count) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < count; ++j) axpy(-dot(basis[j], x), basis[j], x);
  }
  const double n = norm2(x);
  if (n > 0.0) scale(x, 1.0 / n);
  return n;
}

/// Replace columns that lost orthogonality (or were zero) by a completion
/// drawn from the standard basis.
inline void orthonormalize_columns(std::vector<Vector>& cols) {
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const double before = norm2(cols[i]);
    const double after = orthogonalize_against(cols[i], cols, i);
    if (before == 0.0 || after < 0.5 * before) {
      const std::size_t len = cols[i].size();
      for (std::size_t e = 0; e < len; ++e) {
        Vector cand(len, 0.0);
        cand[e] = 1.0;
        if (orthogonalize_against(cand, cols, i) > 1e-3) {
          cols[i] = std::move(cand);
          break;
        }
      }
    }
  }
}

struct RawTriplets {
  std::vector<Vector> u;
  Vector sigma;
  std::vector<Vector> v;
};

/// One-sided (Hestenes) Jacobi on the columns of an m x n matrix with
/// m >= n, given as n column vectors. Returns all n triplets unsorted.
inline RawTriplets hestenes(std::vector<Vector> cols) {
  const std::size_t n = cols.size();
  std::vector<Vector> rot(n, Vector(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) rot[i][i] = 1.0;

  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (int sweep = 0; sweep < 80; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot(cols[p], cols[p]);
        const double beta = dot(cols[q], cols[q]);
        const double gamma = dot(cols[p], cols[q]);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < cols[p].size(); ++i) {
          const double xp = cols[p][i];
          const double xq = cols[q][i];
          cols[p][i] = c * xp - s * xq;
          cols[q][i] = s * xp + c * xq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = rot[p][i];
          const double xq = rot[q][i];
          rot[p][i] = c * xp - s * xq;
          rot[q][i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  RawTriplets out;
  out.sigma.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    out.sigma[j] = norm2(cols[j]);
    if (out.sigma[j] > 0.0) scale(cols[j], 1.0 / out.sigma[j]);
  }
  out.u = std::move(cols);
  out.v = std::move(rot);
  return out;
}

/// Jacobi SVD of g on the smaller Gram side; all min(m,n) triplets.
inline RawTriplets jacobi_svd(const Matrix& g) {
  const std::size_t m = g.rows();
  const std::size_t n = g.cols();
  if (m >= n) {
    std::vector<Vector> cols(n);
    for (std::size_t j = 0; j < n; ++j) cols[j] = g.col(j);
    return hestenes(std::move(cols));
  }
  std::vector<Vector> rows(m);
  for (std::size_t i = 0; i < m; ++i) rows[i] = Vector(g.data().begin() + i * n, g.data().begin() + (i + 1) * n);
  RawTriplets t = hestenes(std::move(rows));
  std::swap(t.u, t.v);
  return t;
}

/// Sort descending, order near-ties lexicographically by u, fix signs so
/// the largest-magnitude entry of each u is positive, re-orthonormalize the
/// side derived by division (tiny-sigma directions), truncate to k and drop
/// exact zeros.
inline SvdFactors canonicalize(RawTriplets raw, std::size_t rows, std::size_t cols, std::size_t k,
                               bool u_derived) {
  const std::size_t count = raw.sigma.size();
  for (std::size_t i = 0; i < count; ++i) {
    auto& u = raw.u[i];
    std::size_t arg = 0;
    for (std::size_t e = 1; e < u.size(); ++e)
      if (std::abs(u[e]) > std::abs(u[arg])) arg = e;
    if (!u.empty() && u[arg] < 0.0) {
      scale(u, -1.0);
      scale(raw.v[i], -1.0);
    }
  }

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return raw.sigma[a] > raw.sigma[b]; });
  const double top = count ? raw.sigma[order[0]] : 0.0;
  // Values stay in sorted order; only the vectors of a tie group are permuted.
  Vector sorted_sigma(count);
  for (std::size_t i = 0; i < count; ++i) sorted_sigma[i] = raw.sigma[order[i]];
  for (std::size_t begin = 0; begin < count;) {
    std::size_t end = begin + 1;
    while (end < count && raw.sigma[order[end - 1]] - raw.sigma[order[end]] <= kTieTolerance * top) ++end;
    if (end - begin > 1) {
      std::stable_sort(order.begin() + begin, order.begin() + end, [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(raw.u[b].begin(), raw.u[b].end(), raw.u[a].begin(), raw.u[a].end());
      });
    }
    begin = end;
  }

  SvdFactors f;
  f.rows = rows;
  f.cols = cols;
  for (std::size_t i = 0; i < count; ++i) {
    f.u.push_back(std::move(raw.u[order[i]]));
    f.sigma.push_back(sorted_sigma[i]);
    f.v.push_back(std::move(raw.v[order[i]]));
  }

  // The side obtained by dividing by sigma is inaccurate for tiny sigma.
  const auto snapshot = u_derived ? f.u : f.v;
  orthonormalize_columns(u_derived ? f.u : f.v);
  auto& fixed = u_derived ? f.u : f.v;
  auto& partner = u_derived ? f.v : f.u;
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    // keep the pairing sign consistent if completion flipped the direction
    if (dot(fixed[i], snapshot[i]) < 0.0) scale(partner[i], -1.0);
  }
  if (u_derived) {
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      auto& u = f.u[i];
      std::size_t arg = 0;
      for (std::size_t e = 1; e < u.size(); ++e)
        if (std::abs(u[e]) > std::abs(u[arg])) arg = e;
      if (!u.empty() && u[arg] < 0.0) {
        scale(u, -1.0);
        scale(f.v[i], -1.0);
      }
    }
  }

  // Numerical rank: singular values at roundoff level relative to sigma_1
  // carry no direction information and are dropped.
  const double cutoff = std::max(std::numeric_limits<double>::min(),
                                 kRankTolerance * static_cast<double>(std::max(rows, cols)) * top);
  std::size_t keep = std::min(k, f.sigma.size());
  while (keep > 0 && !(f.sigma[keep - 1] > cutoff)) --keep;
  f.u.resize(keep);
  f.sigma.resize(keep);
  f.v.resize(keep);
  return f;
}

inline void orthonormal_basis(std::vector<Vector>& cols) {
  for (std::size_t i = 0; i < cols.size(); ++i) orthogonalize_against(cols[i], cols, i);
}

inline std::vector<Vector> columns_of(const Matrix& m) {
  std::vector<Vector> cols(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) cols[j] = m.col(j);
  return cols;
}

inline Matrix from_columns(const std::vector<Vector>& cols, std::size_t rows) {
  Matrix m(rows, cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < rows; ++i) m(i, j) = cols[j][i];
  return m;
}

/// Randomized range finder with power iterations, then Jacobi on the
/// projected (k + p) x n block.
inline SvdFactors randomized_svd(const Matrix& g, std::size_t k, const SvdOptions& opt) {
  const std::size_t width = std::min(k + opt.oversampling, g.min_dim());
  Rng rng(opt.sketch_seed ^ (static_cast<std::uint64_t>(g.rows()) << 32) ^ g.cols());
  const Matrix omega = rng.normal_matrix(g.cols(), width);

  std::vector<Vector> q = columns_of(matmul(g, omega));
  orthonormal_basis(q);
  for (std::size_t it = 0; it < opt.power_iterations; ++it) {
    std::vector<Vector> z = columns_of(matmul_tn(g, from_columns(q, g.rows())));
    orthonormal_basis(z);
    q = columns_of(matmul(g, from_columns(z, g.cols())));
    orthonormal_basis(q);
  }
  const Matrix qm = from_columns(q, g.rows());
  const Matrix b = matmul_tn(qm, g);  // width x n
  RawTriplets small = jacobi_svd(b);
  for (auto& ub : small.u) {
    Vector full(g.rows(), 0.0);
    for (std::size_t j = 0; j < width; ++j) axpy(ub[j], q[j], full);
    ub = std::move(full);
  }
  // b has width <= n rows, so jacobi ran on b^T and u came from rotations;
  // after lifting through q it stays orthonormal. v was divided by sigma.
  return canonicalize(std::move(small), g.rows(), g.cols(), k, /*u_derived=*/false);
}

}  // namespace detail

/// Verifies the documented SvdFactors invariants; throws DataError.
inline void validate(const SvdFactors& f) {
  for (std::size_t i = 0; i < f.rank(); ++i) {
    if (!(f.sigma[i] >= 0.0) || (i + 1 < f.rank() && f.sigma[i] < f.sigma[i + 1])) {
      throw DataError("SvdFactors: singular values not sorted non-negative");
    }
    for (std::size_t j = 0; j <= i; ++j) {
      const double target = i == j ? 1.0 : 0.0;
      if (std::abs(dot(f.u[i], f.u[j]) - target) > detail::kOrthoTolerance ||
          std::abs(dot(f.v[i], f.v[j]) - target) > detail::kOrthoTolerance) {
        throw DataError("SvdFactors: singular vectors not orthonormal at (" + std::to_string(i) + "," +
                        std::to_string(j) + ")");
      }
    }
  }
}

/// Top-k singular triplets of g. Triplets below the numerical rank
/// (sigma <= 4 eps max(rows, cols) sigma_1) are dropped, so rank() may be
/// below k.
inline SvdFactors thin_svd(const Matrix& g, std::size_t k, const SvdOptions& opt = {}) {
  if (k > g.min_dim()) {
    throw ArgumentError("thin_svd: k=" + std::to_string(k) + " exceeds min dimension " +
                        std::to_string(g.min_dim()));
  }
  g.check_finite("thin_svd");
  SvdFactors f;
  if (k == 0) {
    f.rows = g.rows();
    f.cols = g.cols();
    return f;
  }
  if (g.min_dim() > opt.jacobi_max_dim && k + opt.oversampling < g.min_dim()) {
    f = detail::randomized_svd(g, k, opt);
  } else {
    f = detail::canonicalize(detail::jacobi_svd(g), g.rows(), g.cols(), k,
                             /*u_derived=*/g.rows() >= g.cols());
  }
  validate(f);
  return f;
}

}  // namespace specmuon
