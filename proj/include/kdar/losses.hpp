// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// The distillation loss family. Every loss returns its scalar value together
// with the analytic gradient with respect to the student logits; teacher
// logits are read-only inputs and never receive a gradient.
//
//   bce    : class-mean binary cross-entropy on sigmoid(student logits)
//   kd     : (1 - alpha) H(hard, p_s) + alpha * s * KL(p_t || p_s),
//            p_x = softmax(z_x / tau), s = tau^2 unless disabled
//   apt    : w * bce, w = 1 - exp(-log p_t[gt] / log p_s[gt]) held constant
//   total  : apt + beta * kd

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "kdar/errors.hpp"
#include "kdar/numerics.hpp"

namespace kdar {

struct KdarConfig {
  double tau = 2.5;
  double alpha = 0.5;
  double beta = 3.0;
  double epsilon = kDefaultEpsilon;
  /// Multiply the KL term by tau^2. Disable to get the literal unscaled mixture.
  bool scale_kl_by_tau_squared = true;
  /// Evaluate the hard-label CE term at tau = 1. When false the CE term uses the
  /// distillation tau, so its gradient shrinks as 1/tau.
  bool ce_at_unit_temperature = true;
  /// Replaces the adaptive weight with a constant (ablations and equivalence tests).
  std::optional<double> fixed_apt_weight;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
      throw ConfigError("KdarConfig.tau must be > 0, got " + std::to_string(tau));
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw ConfigError("KdarConfig.alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
      throw ConfigError("KdarConfig.beta must be >= 0, got " + std::to_string(beta));
    }
    if (!(epsilon > 0.0 && epsilon < 1e-3)) {
      throw ConfigError("KdarConfig.epsilon must lie in (0, 1e-3), got " +
                        std::to_string(epsilon));
    }
    if (fixed_apt_weight && !(*fixed_apt_weight >= 0.0 && std::isfinite(*fixed_apt_weight))) {
      throw ConfigError("KdarConfig.fixed_apt_weight must be finite and >= 0");
    }
  }
};

struct LossOutput {
  double value = 0.0;
  Vector grad_student_logits;
  /// Stable keys: "bce", "kd_ce", "kd_kl", "apt_weight", "total".
  std::map<std::string, double> diagnostics;
};

/// (1 - alpha) * hard + alpha * teacher.
inline Vector smoothed_target(std::span<const double> hard, std::span<const double> teacher,
                              double alpha) {
  detail::require_same_length(hard, teacher, "smoothed_target");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("smoothed_target: alpha outside [0, 1]");
  Vector out(hard.size());
  for (std::size_t i = 0; i < hard.size(); ++i) {
    out[i] = (1.0 - alpha) * hard[i] + alpha * teacher[i];
  }
  return out;
}

/// Value and logit-gradient of the class-mean BCE on sigmoid(logits).
/// Entries whose probability sits on the clamp boundary contribute no gradient.
inline LossOutput bce_loss(std::span<const double> logits, std::span<const double> targets,
                           double epsilon = kDefaultEpsilon) {
  detail::require_same_length(logits, targets, "bce_loss");
  const Vector p = sigmoid(logits);
  LossOutput out;
  out.value = binary_cross_entropy(targets, p, epsilon);
  out.grad_student_logits.resize(p.size());
  const double inv_k = 1.0 / static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool clamped = p[i] < epsilon || p[i] > 1.0 - epsilon;
    out.grad_student_logits[i] = clamped ? 0.0 : (p[i] - targets[i]) * inv_k;
  }
  out.diagnostics["bce"] = out.value;
  out.diagnostics["total"] = out.value;
  return out;
}

inline LossOutput kd_loss(std::span<const double> student_logits,
                          std::span<const double> teacher_logits, std::span<const double> hard,
                          const KdarConfig& cfg) {
  cfg.validate();
  detail::require_same_length(student_logits, teacher_logits, "kd_loss");
  detail::require_same_length(student_logits, hard, "kd_loss");

  const double tau = cfg.tau;
  const double ce_tau = cfg.ce_at_unit_temperature ? 1.0 : tau;
  const double kl_scale = cfg.scale_kl_by_tau_squared ? tau * tau : 1.0;

  const Vector ps = tempered_softmax(student_logits, tau);
  const Vector pt = tempered_softmax(teacher_logits, tau);
  const Vector ps_ce = cfg.ce_at_unit_temperature ? tempered_softmax(student_logits, 1.0) : ps;

  const double ce = cross_entropy(hard, ps_ce, cfg.epsilon);
  const double kl = kl_divergence(pt, ps, cfg.epsilon);

  double hard_mass = 0.0;
  for (double v : hard) hard_mass += v;

  LossOutput out;
  out.value = (1.0 - cfg.alpha) * ce + cfg.alpha * kl_scale * kl;
  out.grad_student_logits.resize(ps.size());
  for (std::size_t j = 0; j < ps.size(); ++j) {
    const double d_ce = (hard_mass * ps_ce[j] - hard[j]) / ce_tau;
    const double d_kl = (ps[j] - pt[j]) / tau;
    out.grad_student_logits[j] = (1.0 - cfg.alpha) * d_ce + cfg.alpha * kl_scale * d_kl;
  }
  out.diagnostics["kd_ce"] = ce;
  out.diagnostics["kd_kl"] = kl;
  out.diagnostics["total"] = out.value;
  return out;
}

/// 1 - exp(-log p_t / log p_s) with both probabilities clamped into
/// [eps, 1 - eps]. The result is kept strictly below 1 when the exponent
/// underflows.
inline double adaptive_weight(double p_teacher_gt, double p_student_gt,
                              double epsilon = kDefaultEpsilon) {
  const double pt = std::clamp(p_teacher_gt, epsilon, 1.0 - epsilon);
  const double ps = std::clamp(p_student_gt, epsilon, 1.0 - epsilon);
  const double ratio = std::log(pt) / std::log(ps);
  const double w = -std::expm1(-ratio);
  return std::min(w, std::nextafter(1.0, 0.0));
}

inline LossOutput apt_loss(std::span<const double> student_logits,
                           std::span<const double> teacher_logits,
                           std::span<const double> targets, std::size_t gt_index,
                           const KdarConfig& cfg) {
  cfg.validate();
  detail::require_same_length(student_logits, teacher_logits, "apt_loss");
  if (gt_index >= student_logits.size()) {
    throw DomainError("apt_loss: gt_index " + std::to_string(gt_index) + " out of range for " +
                      std::to_string(student_logits.size()) + " classes");
  }
  double weight = 0.0;
  if (cfg.fixed_apt_weight) {
    weight = *cfg.fixed_apt_weight;
  } else {
    const Vector ps = tempered_softmax(student_logits, cfg.tau);
    const Vector pt = tempered_softmax(teacher_logits, cfg.tau);
    weight = adaptive_weight(pt[gt_index], ps[gt_index], cfg.epsilon);
  }

  LossOutput out = bce_loss(student_logits, targets, cfg.epsilon);
  const double bce = out.value;
  out.value = weight * bce;
  for (double& g : out.grad_student_logits) g *= weight;
  out.diagnostics["bce"] = bce;
  out.diagnostics["apt_weight"] = weight;
  out.diagnostics["total"] = out.value;
  return out;
}

inline LossOutput total_loss(std::span<const double> student_logits,
                             std::span<const double> teacher_logits,
                             std::span<const double> targets, std::span<const double> hard,
                             std::size_t gt_index, const KdarConfig& cfg) {
  LossOutput apt = apt_loss(student_logits, teacher_logits, targets, gt_index, cfg);
  const LossOutput kd = kd_loss(student_logits, teacher_logits, hard, cfg);

  LossOutput out;
  out.value = apt.value + cfg.beta * kd.value;
  out.grad_student_logits = std::move(apt.grad_student_logits);
  for (std::size_t j = 0; j < out.grad_student_logits.size(); ++j) {
    out.grad_student_logits[j] += cfg.beta * kd.grad_student_logits[j];
  }
  out.diagnostics["bce"] = apt.diagnostics.at("bce");
  out.diagnostics["apt_weight"] = apt.diagnostics.at("apt_weight");
  out.diagnostics["kd_ce"] = kd.diagnostics.at("kd_ce");
  out.diagnostics["kd_kl"] = kd.diagnostics.at("kd_kl");
  out.diagnostics["total"] = out.value;
  return out;
}

}  // namespace kdar
