#pragma once

#include <cmath>
#include <cstddef>

#include "specmuon/errors.hpp"
#include "specmuon/matrix.hpp"
#include "specmuon/svd.hpp"

namespace specmuon {

inline constexpr std::size_t kDefaultNewtonSchulzIters = 5;

/// Largest singular value.
inline double spectral_norm(const Matrix& x) {
  if (x.empty()) return 0.0;
  const SvdFactors f = thin_svd(x, 1);
  return f.rank() ? f.sigma[0] : 0.0;
}

/// Cubic Newton-Schulz iteration X <- 1.5 X - 0.5 X X^T X.
///
/// Each singular value follows s <- 1.5 s - 0.5 s^3 while the singular
/// vectors are preserved, so singular values in (0, sqrt(3)) are driven to 1.
/// The caller is responsible for scaling; inputs whose spectral norm reaches
/// sqrt(3) are rejected with StabilityError. The Frobenius norm bounds the
/// spectral norm, so the exact check only runs when ||x||_F >= sqrt(3).
inline Matrix newton_schulz_orthogonalize(const Matrix& x, std::size_t iters = kDefaultNewtonSchulzIters) {
  x.check_finite("newton_schulz_orthogonalize");
  const double limit = std::sqrt(3.0);
  if (frobenius_norm(x) >= limit && spectral_norm(x) >= limit) {
    throw StabilityError("newton_schulz_orthogonalize: spectral norm >= sqrt(3); normalize the input first");
  }
  Matrix cur = x;
  const bool tall = x.rows() >= x.cols();
  for (std::size_t t = 0; t < iters; ++t) {
    // X (X^T X) on the smaller Gram side.
    Matrix cubic = tall ? matmul(cur, matmul_tn(cur, cur)) : matmul(matmul_nt(cur, cur), cur);
    cur *= 1.5;
    cur.axpy(-0.5, cubic);
  }
  return cur;
}

}  // namespace specmuon
