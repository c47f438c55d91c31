// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Real-valued kernels shared by the loss, model and evaluation code:
// tempered softmax, divergences, entropies, binary cross-entropy and a
// central-difference gradient oracle. Everything here is a pure function
// of its arguments and computed in double precision.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kdar/errors.hpp"

namespace kdar {

using Vector = std::vector<double>;

/// Floor applied to any probability before it enters a logarithm.
inline constexpr double kDefaultEpsilon = 1e-7;

namespace detail {

inline void require_same_length(std::span<const double> a, std::span<const double> b,
                                const char* op) {
  if (a.size() != b.size()) {
    throw DomainError(std::string(op) + ": length mismatch (" + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()) + ")");
  }
}

inline void require_non_empty(std::span<const double> a, const char* op) {
  if (a.empty()) throw DomainError(std::string(op) + ": empty input");
}

inline void require_finite(std::span<const double> a, const char* op) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) {
      throw DomainError(std::string(op) + ": non-finite entry at index " + std::to_string(i));
    }
  }
}

}  // namespace detail

/// log(sum(exp(z))) with the maximum shifted out, so |z| up to ~1e300 is safe.
inline double log_sum_exp(std::span<const double> z) {
  detail::require_non_empty(z, "log_sum_exp");
  const double m = *std::max_element(z.begin(), z.end());
  if (!std::isfinite(m)) throw DomainError("log_sum_exp: non-finite maximum");
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - m);
  return m + std::log(acc);
}

/// softmax(z / tau).
inline Vector tempered_softmax(std::span<const double> z, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("tempered_softmax: temperature must be positive and finite, got " +
                      std::to_string(tau));
  }
  detail::require_non_empty(z, "tempered_softmax");
  detail::require_finite(z, "tempered_softmax");
  Vector out(z.size());
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp((z[i] - m) / tau);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline Vector softmax(std::span<const double> z) { return tempered_softmax(z, 1.0); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vector sigmoid(std::span<const double> z) {
  Vector out(z.size());
  std::transform(z.begin(), z.end(), out.begin(), [](double v) { return sigmoid(v); });
  return out;
}

/// KL(p || q) = sum p_i log(p_i / q_i). Both arguments of every log are
/// clamped to >= eps; terms with p_i = 0 vanish.
inline double kl_divergence(std::span<const double> p, std::span<const double> q,
                            double eps = kDefaultEpsilon) {
  detail::require_same_length(p, q, "kl_divergence");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) acc += p[i] * (std::log(std::max(p[i], eps)) - std::log(std::max(q[i], eps)));
  }
  return acc;
}

inline double entropy(std::span<const double> p, double eps = kDefaultEpsilon) {
  double acc = 0.0;
  for (double v : p) {
    if (v > 0.0) acc -= v * std::log(std::max(v, eps));
  }
  return acc;
}

/// H(target, pred) = -sum t_i log pred_i, pred clamped to >= eps.
inline double cross_entropy(std::span<const double> target, std::span<const double> pred,
                            double eps = kDefaultEpsilon) {
  detail::require_same_length(target, pred, "cross_entropy");
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != 0.0) acc -= target[i] * std::log(std::max(pred[i], eps));
  }
  return acc;
}

/// Per-sample BCE averaged over classes; predictions clamped into [eps, 1-eps].
inline double binary_cross_entropy(std::span<const double> y, std::span<const double> p,
                                   double eps = kDefaultEpsilon) {
  detail::require_same_length(y, p, "binary_cross_entropy");
  detail::require_non_empty(y, "binary_cross_entropy");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double pc = std::clamp(p[i], eps, 1.0 - eps);
    acc -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  return acc / static_cast<double>(y.size());
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <class F>
Vector finite_diff_gradient(F&& f, std::span<const double> x, double h = 1e-5) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_gradient: step must be positive");
  Vector probe(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(std::span<const double>(probe));
    probe[i] = orig - h;
    const double fm = f(std::span<const double>(probe));
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalError("finite_diff_gradient: non-finite evaluation at coordinate " +
                           std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

/// Gradient-check acceptance: relative error within `rel`, or absolute error
/// within `abs` for entries near zero.
inline bool close_enough(double a, double b, double rel = 1e-4, double abs = 1e-7) {
  return std::abs(a - b) <= abs || relative_error(a, b) <= rel;
}

}  // namespace kdar
