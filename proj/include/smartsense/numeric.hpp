#pragma once

#include <cmath>

#include "smartsense/common.hpp"

namespace smartsense {

constexpr double kLayerNormEps = 1e-5;

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow; equals -log(sigmoid(-x)).
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// Row-wise softmax with max subtraction. Rows of the result are positive and
// sum to 1.
template <typename Derived>
Matrix softmax_rows(const Eigen::MatrixBase<Derived>& m) {
  Matrix out = m;
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return out;
}

// Row-wise standardization (population variance) followed by per-column gain
// and bias. eps sits inside the square root.
template <typename Derived>
Matrix layer_norm(const Eigen::MatrixBase<Derived>& m, const Vector& gain,
                  const Vector& bias, double eps = kLayerNormEps) {
  if (gain.size() != m.cols() || bias.size() != m.cols()) {
    throw UsageError("layer_norm: gain/bias length must equal column count");
  }
  Matrix out(m.rows(), m.cols());
  const double n = static_cast<double>(m.cols());
  for (Index r = 0; r < m.rows(); ++r) {
    const double mu = m.row(r).mean();
    const double var = (m.row(r).array() - mu).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + eps);
    out.row(r) = (((m.row(r).array() - mu) * inv) * gain.transpose().array() +
                  bias.transpose().array())
                     .matrix();
  }
  return out;
}

// Mask of dropout survivors, already scaled by 1/(1-p) (inverted dropout).
inline Matrix dropout_mask(Index rows, Index cols, double p, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) {
      mask(r, c) = next_double(rng) < p ? 0.0 : keep_scale;
    }
  }
  return mask;
}

// Inverted dropout: identity in eval mode, zero-and-rescale in train mode.
template <typename Derived>
Matrix dropout(const Eigen::MatrixBase<Derived>& m, double p, Mode mode,
               Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw UsageError("dropout: p must be in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) return m;
  return m.cwiseProduct(dropout_mask(m.rows(), m.cols(), p, rng));
}

}  // namespace smartsense
