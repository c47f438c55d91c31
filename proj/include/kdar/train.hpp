// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-phase pipeline: fit a debiased teacher, freeze it, then fit a student
// against the selected loss using the teacher's tempered outputs.

#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kdar/datagen.hpp"
#include "kdar/errors.hpp"
#include "kdar/eval.hpp"
#include "kdar/losses.hpp"
#include "kdar/model.hpp"
#include "kdar/random.hpp"

namespace kdar {

/// Rows of the loss ablation:
///   bce_only  L_bce
///   apt_only  L_apt
///   kd_only   L_bce + beta L_kd
///   kdar      L_apt + beta L_kd
enum class LossMode { bce_only, apt_only, kd_only, kdar };

inline const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::bce_only: return "bce_only";
    case LossMode::apt_only: return "apt_only";
    case LossMode::kd_only: return "kd_only";
    case LossMode::kdar: return "kdar";
  }
  return "kdar";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "bce_only") return LossMode::bce_only;
  if (s == "apt_only") return LossMode::apt_only;
  if (s == "kd_only") return LossMode::kd_only;
  if (s == "kdar") return LossMode::kdar;
  throw ConfigError("loss_mode: expected bce_only|apt_only|kd_only|kdar, got '" + s + "'");
}

inline bool needs_teacher(LossMode m) { return m != LossMode::bce_only; }

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t hidden = 64;
  LossMode loss_mode = LossMode::kdar;
  KdarConfig kdar;
  bool teacher_reweight = true;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("train.learning_rate must be > 0");
    }
    if (hidden < 1) throw ConfigError("train.hidden must be >= 1");
    kdar.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_total = 0.0;
  /// Mean of each LossOutput diagnostic produced in this epoch (keys vary by mode).
  std::map<std::string, double> diagnostics;
  double acc_train = 0.0;
  std::optional<double> acc_iid;
  std::optional<double> acc_ood;
  double seconds = 0.0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  /// Mean batch loss after every optimizer step.
  std::vector<double> step_losses;
};

/// Optional held-out splits scored after every epoch.
struct EvalSplits {
  const Dataset* test_iid = nullptr;
  const Dataset* test_ood = nullptr;
};

struct TrainResult {
  MlpParams params;
  RunHistory history;
};

inline constexpr const char* kHistoryCsvHeader =
    "epoch,loss_total,loss_bce,loss_kd_ce,loss_kd_kl,apt_weight_mean,acc_train,acc_iid,acc_ood,"
    "seconds";

/// Absent diagnostics (e.g. kd terms in bce_only mode) are written as empty fields.
inline void write_history_csv(std::ostream& os, const RunHistory& h) {
  os << kHistoryCsvHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  for (const EpochRecord& r : h.epochs) {
    auto diag = [&](const char* key) {
      auto it = r.diagnostics.find(key);
      return it == r.diagnostics.end() ? std::string() : format_real(it->second);
    };
    os << r.epoch << ',' << format_real(r.loss_total) << ',' << diag("bce") << ','
       << diag("kd_ce") << ',' << diag("kd_kl") << ',' << diag("apt_weight") << ','
       << format_real(r.acc_train) << ',' << opt(r.acc_iid) << ',' << opt(r.acc_ood) << ','
       << format_real(r.seconds) << '\n';
  }
}

/// Target vector for the BCE term: one-hot on the answer, scaled by min(1, agreement / 3).
inline Vector soft_targets(const Sample& s, std::size_t n_classes) {
  Vector y(n_classes, 0.0);
  y[s.answer] = std::min(1.0, static_cast<double>(s.agreement) / 3.0);
  return y;
}

/// 1 / freq(answer | qtype), normalized to mean 1 over the dataset.
inline Vector inverse_frequency_weights(const Dataset& ds) {
  const PriorTable prior = prior_histogram(ds);
  Vector w(ds.size());
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    w[i] = 1.0 / prior.freq.at(s.qtype)[s.answer];
    total += w[i];
  }
  const double mean = total / static_cast<double>(w.size());
  for (double& x : w) x /= mean;
  return w;
}

namespace detail {

inline LossOutput sample_loss(LossMode mode, std::span<const double> logits,
                              std::span<const double> teacher_logits, const Vector& targets,
                              const Vector& hard, std::size_t gt, const KdarConfig& cfg) {
  switch (mode) {
    case LossMode::bce_only:
      return bce_loss(logits, targets, cfg.epsilon);
    case LossMode::apt_only:
      return apt_loss(logits, teacher_logits, targets, gt, cfg);
    case LossMode::kd_only: {
      KdarConfig unit = cfg;
      if (!unit.fixed_apt_weight) unit.fixed_apt_weight = 1.0;
      return total_loss(logits, teacher_logits, targets, hard, gt, unit);
    }
    case LossMode::kdar:
      return total_loss(logits, teacher_logits, targets, hard, gt, cfg);
  }
  throw ConfigError("unknown loss mode");
}

inline TrainResult run_training(const Dataset& train, const MlpParams* teacher,
                                const TrainConfig& cfg, const Vector* sample_weights,
                                const EvalSplits& eval) {
  cfg.validate();
  if (train.empty()) throw DomainError("training set is empty");
  const std::size_t n_classes = train.n_classes();
  const ModelDims dims = train.spec.model_dims(cfg.hidden);
  if (needs_teacher(cfg.loss_mode) && teacher == nullptr) {
    throw ConfigError(std::string("loss_mode ") + to_string(cfg.loss_mode) + " requires a teacher");
  }
  if (teacher && needs_teacher(cfg.loss_mode) &&
      (teacher->dims.visual != dims.visual || teacher->dims.question != dims.question ||
       teacher->dims.classes != dims.classes)) {
    throw ConfigError("teacher dims " + teacher->dims.to_string() +
                      " incompatible with student dims " + dims.to_string());
  }

  // The teacher is frozen, so its logits can be computed once up front.
  std::vector<Vector> teacher_logits;
  if (teacher && needs_teacher(cfg.loss_mode)) {
    teacher_logits.reserve(train.size());
    ForwardCache tc;
    for (const Sample& s : train.samples) {
      const auto z = forward(*teacher, s.features.visual, s.features.question, tc);
      teacher_logits.emplace_back(z.begin(), z.end());
    }
  }

  TrainResult result{init_params(cfg.seed, dims), {}};
  MlpParams& params = result.params;
  OptimizerState opt = OptimizerState::for_params(params, cfg.learning_rate);
  MlpParams grads = MlpParams::zeros(dims);
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5348554646ULL));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const PriorTable train_prior = prior_histogram(train);
  const Vector no_teacher(n_classes, 0.0);

  std::vector<Vector> targets(train.size()), hard(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    targets[i] = soft_targets(train.samples[i], n_classes);
    hard[i].assign(n_classes, 0.0);
    hard[i][train.samples[i].answer] = 1.0;
  }

  ForwardCache cache;
  Vector scaled_grad(n_classes);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::map<std::string, double> diag_sum;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (Tensor* t : grads.tensors()) std::fill(t->data.begin(), t->data.end(), 0.0);
      double batch_loss = 0.0;

      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const Sample& s = train.samples[i];
        const auto logits = forward(params, s.features.visual, s.features.question, cache);
        const Vector& tz = teacher_logits.empty() ? no_teacher : teacher_logits[i];
        const LossOutput out =
            sample_loss(cfg.loss_mode, logits, tz, targets[i], hard[i], s.answer, cfg.kdar);
        const double w = sample_weights ? (*sample_weights)[i] : 1.0;
        if (!std::isfinite(out.value)) {
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                               std::to_string(i));
        }
        for (std::size_t k = 0; k < n_classes; ++k) {
          scaled_grad[k] = out.grad_student_logits[k] * w * inv_batch;
        }
        accumulate_backward(params, cache, scaled_grad, grads);
        batch_loss += w * out.value;
        for (const auto& [key, v] : out.diagnostics) {
          if (key != "total") diag_sum[key] += v;
        }
      }
      optimizer_step(params, grads, opt);
      loss_sum += batch_loss;
      result.history.step_losses.push_back(batch_loss * inv_batch);
    }

    const double n = static_cast<double>(train.size());
    rec.loss_total = loss_sum / n;
    for (const auto& [key, v] : diag_sum) rec.diagnostics[key] = v / n;
    rec.acc_train = evaluate(params, train, train_prior).overall;
    if (eval.test_iid) rec.acc_iid = evaluate(params, *eval.test_iid, train_prior).overall;
    if (eval.test_ood) rec.acc_ood = evaluate(params, *eval.test_ood, train_prior).overall;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(std::move(rec));
  }
  return result;
}

}  // namespace detail

/// BCE-trained teacher; with `cfg.teacher_reweight` each sample's loss is
/// scaled by its inverse answer frequency within its question type.
inline TrainResult train_teacher(const Dataset& train, const TrainConfig& cfg,
                                 const EvalSplits& eval = {}) {
  if (train.empty()) throw DomainError("train_teacher: empty dataset");
  TrainConfig teacher_cfg = cfg;
  teacher_cfg.loss_mode = LossMode::bce_only;
  if (!cfg.teacher_reweight) return detail::run_training(train, nullptr, teacher_cfg, nullptr, eval);
  const Vector weights = inverse_frequency_weights(train);
  return detail::run_training(train, nullptr, teacher_cfg, &weights, eval);
}

/// Student run. The teacher is only read; bce_only never evaluates it and
/// accepts a null teacher.
inline TrainResult train_student(const Dataset& train, const MlpParams* teacher,
                                 const TrainConfig& cfg, const EvalSplits& eval = {}) {
  return detail::run_training(train, teacher, cfg, nullptr, eval);
}

inline TrainResult train_student(const Dataset& train, const MlpParams& teacher,
                                 const TrainConfig& cfg, const EvalSplits& eval = {}) {
  return train_student(train, &teacher, cfg, eval);
}

}  // namespace kdar
