// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Consensus accuracy and bias diagnostics.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kdar/datagen.hpp"
#include "kdar/errors.hpp"
#include "kdar/model.hpp"

namespace kdar {

/// min(1, agreement / 3) when the prediction is the annotated answer, else 0.
inline double consensus_accuracy(std::size_t predicted, const Sample& sample) {
  if (predicted != sample.answer) return 0.0;
  return std::min(1.0, static_cast<double>(sample.agreement) / 3.0);
}

struct MetricsReport {
  double overall = 0.0;
  std::map<std::size_t, double> per_qtype;
  std::map<std::size_t, std::size_t> per_qtype_count;
  double head_acc = 0.0;
  double tail_acc = 0.0;
  std::size_t n = 0;
  std::size_t n_head = 0;
  std::size_t n_tail = 0;
};

/// Scores a dataset given per-sample predicted class indices.
inline MetricsReport score_predictions(const Dataset& ds, std::span<const std::size_t> predicted,
                                       const PriorTable& train_prior) {
  if (ds.empty()) throw DomainError("evaluate: empty dataset");
  if (predicted.size() != ds.size()) throw DomainError("evaluate: prediction count mismatch");

  std::map<std::size_t, std::map<double, std::size_t>> credit_hist;
  std::map<double, std::size_t> head_hist, tail_hist;
  MetricsReport r;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    if (!train_prior.has(s.qtype)) {
      throw DomainError("evaluate: qtype " + std::to_string(s.qtype) + " missing from train prior");
    }
    const double acc = consensus_accuracy(predicted[i], s);
    ++credit_hist[s.qtype][acc];
    ++r.per_qtype_count[s.qtype];
    if (s.answer == train_prior.head_answer(s.qtype)) {
      ++head_hist[acc];
      ++r.n_head;
    } else {
      ++tail_hist[acc];
      ++r.n_tail;
    }
  }
  // Credit takes few distinct values; summing value * count over a sorted
  // histogram makes the totals independent of sample order.
  auto total = [](const std::map<double, std::size_t>& h) {
    double s = 0.0;
    for (const auto& [v, c] : h) s += v * static_cast<double>(c);
    return s;
  };
  double sum_all = 0.0;
  for (const auto& [q, h] : credit_hist) {
    const double s = total(h);
    sum_all += s;
    r.per_qtype[q] = s / static_cast<double>(r.per_qtype_count[q]);
  }
  r.n = ds.size();
  r.overall = sum_all / static_cast<double>(r.n);
  r.head_acc = r.n_head ? total(head_hist) / static_cast<double>(r.n_head) : 0.0;
  r.tail_acc = r.n_tail ? total(tail_hist) / static_cast<double>(r.n_tail) : 0.0;
  return r;
}

inline std::vector<std::size_t> predict(const MlpParams& params, const Dataset& ds) {
  std::vector<std::size_t> out;
  out.reserve(ds.size());
  ForwardCache cache;
  for (const Sample& s : ds.samples) {
    out.push_back(argmax(forward(params, s.features.visual, s.features.question, cache)));
  }
  return out;
}

inline MetricsReport evaluate(const MlpParams& params, const Dataset& ds,
                              const PriorTable& train_prior) {
  if (ds.n_classes() != params.dims.classes) {
    throw DomainError("evaluate: dataset has " + std::to_string(ds.n_classes()) +
                      " classes, model has " + std::to_string(params.dims.classes));
  }
  return score_predictions(ds, predict(params, ds), train_prior);
}

inline double ood_gap(const MetricsReport& iid, const MetricsReport& ood) {
  return iid.overall - ood.overall;
}

/// Column order: label,n,overall,head_acc,tail_acc,qtype_0..qtype_{Q-1}
inline std::string metrics_csv_header(std::size_t n_qtypes) {
  std::string h = "label,n,overall,head_acc,tail_acc";
  for (std::size_t q = 0; q < n_qtypes; ++q) h += ",qtype_" + std::to_string(q);
  return h;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string metrics_csv_row(const std::string& label, const MetricsReport& r,
                                   std::size_t n_qtypes) {
  std::string row = label + "," + std::to_string(r.n) + "," + format_real(r.overall) + "," +
                    format_real(r.head_acc) + "," + format_real(r.tail_acc);
  for (std::size_t q = 0; q < n_qtypes; ++q) {
    auto it = r.per_qtype.find(q);
    row += ",";
    if (it != r.per_qtype.end()) row += format_real(it->second);
  }
  return row;
}

inline void print_metrics_table(std::ostream& os, const std::string& label, const MetricsReport& r) {
  char buf[128];
  os << label << " (n=" << r.n << ")\n";
  std::snprintf(buf, sizeof buf, "  %-10s %8.2f%%\n", "overall", 100.0 * r.overall);
  os << buf;
  std::snprintf(buf, sizeof buf, "  %-10s %8.2f%%  (n=%zu)\n", "head", 100.0 * r.head_acc, r.n_head);
  os << buf;
  std::snprintf(buf, sizeof buf, "  %-10s %8.2f%%  (n=%zu)\n", "tail", 100.0 * r.tail_acc, r.n_tail);
  os << buf;
  for (const auto& [q, acc] : r.per_qtype) {
    std::snprintf(buf, sizeof buf, "  qtype %-4zu %8.2f%%  (n=%zu)\n", q, 100.0 * acc,
                  r.per_qtype_count.at(q));
    os << buf;
  }
}

}  // namespace kdar
