// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-run drivers: the beta x tau sweep and the loss-mode ablation.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <future>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "kdar/checkpoint.hpp"
#include "kdar/train.hpp"

namespace kdar {

struct ExperimentData {
  const Dataset* train = nullptr;
  const Dataset* test_iid = nullptr;
  const Dataset* test_ood = nullptr;
};

struct RunAccuracy {
  double acc_iid = 0.0;
  double acc_ood = 0.0;
};

/// Trains one student and scores it on both held-out splits.
inline RunAccuracy student_accuracy(const ExperimentData& data, const MlpParams* teacher,
                                    const TrainConfig& cfg) {
  const MlpParams params = train_student(*data.train, teacher, cfg).params;
  const PriorTable prior = prior_histogram(*data.train);
  return {evaluate(params, *data.test_iid, prior).overall,
          evaluate(params, *data.test_ood, prior).overall};
}

/// Runs `job(i)` for i in [0, n) on up to `parallel` threads and hands each
/// result to `commit(i, result)` in index order, from one thread at a time.
template <class Job, class Commit>
void run_ordered(std::size_t n, std::size_t parallel, Job job, Commit commit) {
  if (parallel <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) commit(i, job(i));
    return;
  }
  using Result = decltype(job(std::size_t{0}));
  std::vector<std::optional<Result>> done(n);
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t next_commit = 0;
  std::exception_ptr failure;

  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      Result r = job(i);
      std::lock_guard<std::mutex> lock(mu);
      done[i] = std::move(r);
      try {
        while (next_commit < n && done[next_commit]) {
          commit(next_commit, std::move(*done[next_commit]));
          done[next_commit].reset();
          ++next_commit;
        }
      } catch (...) {
        if (!failure) failure = std::current_exception();
        next = n;
        return;
      }
    }
  };
  std::vector<std::future<void>> threads;
  for (std::size_t t = 0; t < std::min(parallel, n); ++t) {
    threads.push_back(std::async(std::launch::async, worker));
  }
  for (auto& f : threads) f.get();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepCell {
  double beta = 3.0;
  double tau = 2.5;
  std::uint64_t seed = 0;
};

struct SweepOutcome {
  SweepCell cell;
  bool ok = false;
  RunAccuracy acc;
  std::string error;
};

/// Grid in beta-major, then tau, then seed order.
inline std::vector<SweepCell> sweep_grid(const std::vector<double>& betas,
                                         const std::vector<double>& taus,
                                         const std::vector<std::uint64_t>& seeds) {
  if (betas.empty() || taus.empty() || seeds.empty()) {
    throw ConfigError("sweep grid needs at least one beta, tau and seed");
  }
  std::vector<SweepCell> cells;
  for (double b : betas) {
    for (double t : taus) {
      for (std::uint64_t s : seeds) cells.push_back({b, t, s});
    }
  }
  return cells;
}

/// A failed cell is reported, never thrown, so the rest of the grid still runs.
inline SweepOutcome run_sweep_cell(const ExperimentData& data, const MlpParams& teacher,
                                   const TrainConfig& base, const SweepCell& cell) {
  SweepOutcome out{cell, false, {}, {}};
  try {
    TrainConfig cfg = base;
    cfg.kdar.beta = cell.beta;
    cfg.kdar.tau = cell.tau;
    cfg.seed = cell.seed;
    out.acc = student_accuracy(data, &teacher, cfg);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

inline constexpr const char* kSweepCsvHeader = "beta,tau,seed,acc_ood,acc_iid,status";

inline std::string format_param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string sweep_csv_row(const SweepOutcome& o) {
  std::string row = format_param(o.cell.beta) + "," + format_param(o.cell.tau) + "," +
                    std::to_string(o.cell.seed) + ",";
  if (o.ok) {
    row += format_real(o.acc.acc_ood) + "," + format_real(o.acc.acc_iid) + ",ok";
  } else {
    row += ",,failed";
  }
  return row;
}

// ---------------------------------------------------------------------------
// Ablation

inline constexpr LossMode kAblationModes[] = {LossMode::bce_only, LossMode::apt_only,
                                              LossMode::kd_only, LossMode::kdar};

struct AblationRun {
  LossMode mode = LossMode::kdar;
  std::uint64_t seed = 0;
  RunAccuracy acc;
};

struct AblationSummary {
  LossMode mode = LossMode::kdar;
  std::size_t seeds = 0;
  double iid_mean = 0.0;
  double ood_mean = 0.0;
  double ood_min = 0.0;
  double ood_max = 0.0;
};

/// Mode-major job list: every mode over every seed.
inline std::vector<AblationRun> ablation_jobs(const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<AblationRun> jobs;
  for (LossMode m : kAblationModes) {
    for (std::uint64_t s : seeds) jobs.push_back({m, s, {}});
  }
  return jobs;
}

inline AblationRun run_ablation_job(const ExperimentData& data, const MlpParams& teacher,
                                    const TrainConfig& base, AblationRun job) {
  TrainConfig cfg = base;
  cfg.loss_mode = job.mode;
  cfg.seed = job.seed;
  job.acc = student_accuracy(data, &teacher, cfg);
  return job;
}

inline std::vector<AblationSummary> summarize_ablation(const std::vector<AblationRun>& runs) {
  std::vector<AblationSummary> out;
  for (LossMode m : kAblationModes) {
    AblationSummary s;
    s.mode = m;
    s.ood_min = INFINITY;
    s.ood_max = -INFINITY;
    for (const AblationRun& r : runs) {
      if (r.mode != m) continue;
      ++s.seeds;
      s.iid_mean += r.acc.acc_iid;
      s.ood_mean += r.acc.acc_ood;
      s.ood_min = std::min(s.ood_min, r.acc.acc_ood);
      s.ood_max = std::max(s.ood_max, r.acc.acc_ood);
    }
    if (s.seeds == 0) continue;
    s.iid_mean /= static_cast<double>(s.seeds);
    s.ood_mean /= static_cast<double>(s.seeds);
    out.push_back(s);
  }
  return out;
}

inline const AblationSummary& ablation_row(const std::vector<AblationSummary>& rows, LossMode m) {
  for (const AblationSummary& r : rows) {
    if (r.mode == m) return r;
  }
  throw DomainError(std::string("ablation has no row for ") + to_string(m));
}

inline constexpr const char* kAblationCsvHeader =
    "loss_mode,seeds,acc_iid_mean,acc_ood_mean,acc_ood_min,acc_ood_max";

inline std::string ablation_csv_row(const AblationSummary& s) {
  return std::string(to_string(s.mode)) + "," + std::to_string(s.seeds) + "," +
         format_real(s.iid_mean) + "," + format_real(s.ood_mean) + "," + format_real(s.ood_min) +
         "," + format_real(s.ood_max);
}

inline constexpr const char* kAblationRunsCsvHeader = "loss_mode,seed,acc_ood,acc_iid";

inline std::string ablation_run_csv_row(const AblationRun& r) {
  return std::string(to_string(r.mode)) + "," + std::to_string(r.seed) + "," +
         format_real(r.acc.acc_ood) + "," + format_real(r.acc.acc_iid);
}

}  // namespace kdar
