// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic benchmark with a question-type shortcut.
//
// Each question type owns a disjoint block of answers. Within a block the
// training prior is a power law over rank, rank^-skew, so the rank-1 ("head")
// answer dominates. The OOD test split reverses the rank order (or flattens
// it); the IID test split redraws from the training prior. The question
// feature only reveals the question type, while the visual feature is a noisy
// copy of a per-answer prototype, so the answer is recoverable from vision
// alone and the question channel carries nothing but the prior.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdar/errors.hpp"
#include "kdar/model.hpp"
#include "kdar/random.hpp"

namespace kdar {

enum class ShiftMode { inverted, uniform };
enum class Split { train, test_ood, test_iid };

inline const char* to_string(ShiftMode m) { return m == ShiftMode::inverted ? "inverted" : "uniform"; }

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_ood: return "test_ood";
    case Split::test_iid: return "test_iid";
  }
  return "train";
}

inline ShiftMode parse_shift_mode(const std::string& s) {
  if (s == "inverted") return ShiftMode::inverted;
  if (s == "uniform") return ShiftMode::uniform;
  throw ConfigError("shift_mode: expected 'inverted' or 'uniform', got '" + s + "'");
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test_ood") return Split::test_ood;
  if (s == "test_iid") return Split::test_iid;
  throw ParseError("unknown split tag '" + s + "'");
}

struct SyntheticSpec {
  std::size_t n_qtypes = 4;
  std::size_t n_answers_per_type = 5;
  double skew = 3.0;
  ShiftMode shift_mode = ShiftMode::inverted;
  std::size_t d_v = 16;
  std::size_t d_q = 16;
  double noise_sigma = 0.3;
  /// Standard deviation of each prototype coordinate. Controls how much the
  /// visual channel overlaps between answers of the same question type.
  double prototype_scale = 0.15;
  std::size_t n_train = 20000;
  std::size_t n_test = 4000;
  std::size_t annotator_count_max = 10;
  std::uint64_t seed = 0;

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;

  std::size_t n_classes() const { return n_qtypes * n_answers_per_type; }

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw ConfigError("spec." + field + ": " + why);
    };
    if (n_qtypes < 1) fail("n_qtypes", "must be >= 1");
    if (n_answers_per_type < 1) fail("n_answers_per_type", "must be >= 1");
    if (!(skew >= 1.0) || !std::isfinite(skew)) fail("skew", "must be >= 1");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma", "must be >= 0");
    if (!(prototype_scale > 0.0) || !std::isfinite(prototype_scale)) {
      fail("prototype_scale", "must be > 0");
    }
    if (d_v < 1) fail("d_v", "must be >= 1");
    if (d_q < n_qtypes) fail("d_q", "must be >= n_qtypes to embed the question type");
    if (n_train < 1) fail("n_train", "must be >= 1");
    if (n_test < 1) fail("n_test", "must be >= 1");
    if (annotator_count_max < 1) fail("annotator_count_max", "must be >= 1");
  }

  /// Answer probabilities by within-block rank under the training prior.
  Vector train_rank_prior() const {
    Vector w(n_answers_per_type);
    double total = 0.0;
    for (std::size_t r = 0; r < w.size(); ++r) {
      w[r] = std::pow(static_cast<double>(r + 1), -skew);
      total += w[r];
    }
    for (double& x : w) x /= total;
    return w;
  }

  Vector ood_rank_prior() const {
    if (shift_mode == ShiftMode::uniform) {
      return Vector(n_answers_per_type, 1.0 / static_cast<double>(n_answers_per_type));
    }
    Vector w = train_rank_prior();
    return Vector(w.rbegin(), w.rend());
  }

  /// max(1, round(N (0.6 + 0.4 prior))) where prior is the training prior.
  std::size_t agreement_for_rank(std::size_t rank) const {
    const double prior = train_rank_prior()[rank];
    const double raw = std::round(static_cast<double>(annotator_count_max) * (0.6 + 0.4 * prior));
    const auto a = static_cast<std::size_t>(std::max(1.0, raw));
    return std::min(a, annotator_count_max);
  }

  ModelDims model_dims(std::size_t hidden = 64) const { return {d_v, d_q, hidden, n_classes()}; }
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return nlohmann::json{{"n_qtypes", s.n_qtypes},
                        {"n_answers_per_type", s.n_answers_per_type},
                        {"skew", s.skew},
                        {"shift_mode", to_string(s.shift_mode)},
                        {"d_v", s.d_v},
                        {"d_q", s.d_q},
                        {"noise_sigma", s.noise_sigma},
                        {"prototype_scale", s.prototype_scale},
                        {"n_train", s.n_train},
                        {"n_test", s.n_test},
                        {"annotator_count_max", s.annotator_count_max},
                        {"seed", s.seed}};
}

/// Fields missing from `j` keep the values already in `base`.
inline SyntheticSpec spec_from_json(const nlohmann::json& j, SyntheticSpec base = {}) {
  auto take = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("spec.") + key + ": " + e.what());
    }
  };
  take("n_qtypes", base.n_qtypes);
  take("n_answers_per_type", base.n_answers_per_type);
  take("skew", base.skew);
  if (j.contains("shift_mode")) base.shift_mode = parse_shift_mode(j.at("shift_mode").get<std::string>());
  take("d_v", base.d_v);
  take("d_q", base.d_q);
  take("noise_sigma", base.noise_sigma);
  take("prototype_scale", base.prototype_scale);
  take("n_train", base.n_train);
  take("n_test", base.n_test);
  take("annotator_count_max", base.annotator_count_max);
  take("seed", base.seed);
  return base;
}

inline std::uint64_t fingerprint(const SyntheticSpec& s) {
  const std::string canon = to_json(s).dump();
  return fnv1a64({reinterpret_cast<const unsigned char*>(canon.data()), canon.size()});
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Sample {
  std::size_t qtype = 0;
  FeaturePair features;
  std::size_t answer = 0;
  std::size_t agreement = 1;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;
  Split split = Split::train;
  SyntheticSpec spec;
  std::uint64_t spec_fingerprint = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t n_classes() const { return spec.n_classes(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GeneratedBenchmark {
  Dataset train;
  Dataset test_ood;
  Dataset test_iid;
};

namespace detail {

inline Dataset draw_split(const SyntheticSpec& spec, Split split, std::size_t n,
                          const std::vector<Vector>& prototypes, const Vector& rank_prior,
                          std::uint64_t stream) {
  Rng rng(mix_seed(spec.seed, stream));
  Dataset ds;
  ds.split = split;
  ds.spec = spec;
  ds.spec_fingerprint = fingerprint(spec);
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.qtype = static_cast<std::size_t>(rng.below(spec.n_qtypes));
    const std::size_t rank = rng.categorical(rank_prior);
    s.answer = s.qtype * spec.n_answers_per_type + rank;
    s.agreement = spec.agreement_for_rank(rank);
    s.features.question.assign(spec.d_q, 0.0);
    s.features.question[s.qtype] = 1.0;
    for (double& x : s.features.question) x += spec.noise_sigma * rng.normal();
    s.features.visual = prototypes[s.answer];
    for (double& x : s.features.visual) x += spec.noise_sigma * rng.normal();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace detail

/// Per-answer visual prototypes; part of the generator so tests can probe decodability.
inline std::vector<Vector> answer_prototypes(const SyntheticSpec& spec) {
  Rng rng(mix_seed(spec.seed, 0));
  std::vector<Vector> protos(spec.n_classes(), Vector(spec.d_v));
  for (Vector& p : protos) {
    for (double& x : p) x = spec.prototype_scale * rng.normal();
  }
  return protos;
}

inline GeneratedBenchmark generate(const SyntheticSpec& spec) {
  spec.validate();
  const auto protos = answer_prototypes(spec);
  const Vector train_prior = spec.train_rank_prior();
  GeneratedBenchmark out;
  out.train = detail::draw_split(spec, Split::train, spec.n_train, protos, train_prior, 1);
  out.test_ood = detail::draw_split(spec, Split::test_ood, spec.n_test, protos,
                                    spec.ood_rank_prior(), 2);
  out.test_iid = detail::draw_split(spec, Split::test_iid, spec.n_test, protos, train_prior, 3);
  return out;
}

/// Per-question-type answer frequencies over the full answer vocabulary.
struct PriorTable {
  std::size_t n_classes = 0;
  std::map<std::size_t, Vector> freq;
  std::map<std::size_t, std::size_t> counts;

  bool has(std::size_t qtype) const { return freq.count(qtype) != 0; }

  /// Most frequent answer of a question type; ties go to the lowest index.
  std::size_t head_answer(std::size_t qtype) const {
    auto it = freq.find(qtype);
    if (it == freq.end()) throw DomainError("prior table has no row for qtype " + std::to_string(qtype));
    return argmax(it->second);
  }
};

inline PriorTable prior_histogram(const Dataset& ds) {
  if (ds.empty()) throw DomainError("prior_histogram: empty dataset");
  PriorTable t;
  t.n_classes = ds.n_classes();
  for (const Sample& s : ds.samples) {
    if (s.answer >= t.n_classes) {
      throw DomainError("prior_histogram: answer " + std::to_string(s.answer) +
                        " outside vocabulary of " + std::to_string(t.n_classes));
    }
    auto [it, inserted] = t.freq.try_emplace(s.qtype, Vector(t.n_classes, 0.0));
    it->second[s.answer] += 1.0;
    ++t.counts[s.qtype];
  }
  for (auto& [q, row] : t.freq) {
    const double n = static_cast<double>(t.counts[q]);
    for (double& x : row) x /= n;
  }
  return t;
}

// ---------------------------------------------------------------------------
// JSONL persistence

namespace detail {

inline void append_array(std::string& out, const Vector& v) {
  char buf[32];
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    out += buf;
  }
  out += ']';
}

inline void check_sample(const Sample& s, const SyntheticSpec& spec, std::size_t line) {
  auto fail = [line](const std::string& why) {
    throw ParseError("line " + std::to_string(line) + ": " + why);
  };
  if (s.qtype >= spec.n_qtypes) fail("qtype " + std::to_string(s.qtype) + " out of range");
  if (s.answer / spec.n_answers_per_type != s.qtype) {
    fail("answer " + std::to_string(s.answer) + " is not in the block of qtype " +
         std::to_string(s.qtype));
  }
  if (s.agreement < 1 || s.agreement > spec.annotator_count_max) {
    fail("agreement " + std::to_string(s.agreement) + " outside [1, " +
         std::to_string(spec.annotator_count_max) + "]");
  }
  if (s.features.visual.size() != spec.d_v || s.features.question.size() != spec.d_q) {
    fail("feature dimensions do not match the dataset header");
  }
}

}  // namespace detail

inline std::string sample_to_jsonl(const Sample& s) {
  std::string line = "{\"qtype\":" + std::to_string(s.qtype) + ",\"visual\":";
  detail::append_array(line, s.features.visual);
  line += ",\"question\":";
  detail::append_array(line, s.features.question);
  line += ",\"answer\":" + std::to_string(s.answer) +
          ",\"agreement\":" + std::to_string(s.agreement) + "}";
  return line;
}

inline void save_jsonl(const Dataset& ds, const std::string& path) {
  if (path.empty()) throw IoError("save_jsonl: empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_jsonl: cannot open '" + path + "' for writing");
  nlohmann::json header{{"spec", to_json(ds.spec)},
                        {"fingerprint", hex64(ds.spec_fingerprint)},
                        {"split", to_string(ds.split)}};
  out << header.dump() << '\n';
  for (const Sample& s : ds.samples) out << sample_to_jsonl(s) << '\n';
  out.flush();
  if (!out) throw IoError("save_jsonl: write to '" + path + "' failed");
}

/// Reads a dataset. The header line is optional for externally produced
/// files; without it the vocabulary and dimensions are inferred from the
/// records (answer blocks assumed contiguous and equal-sized). A fingerprint
/// mismatch is reported through `warnings` (or stderr) and does not fail.
inline Dataset load_jsonl(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_jsonl: cannot open '" + path + "'");

  auto warn = [&](const std::string& msg) {
    if (warnings) {
      warnings->push_back(msg);
    } else {
      std::cerr << "warning: " << msg << '\n';
    }
  };

  Dataset ds;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError(path + ": line " + std::to_string(lineno) + ": not an object");
    if (j.contains("spec")) {
      if (lineno != 1 && !ds.samples.empty()) {
        throw ParseError(path + ": line " + std::to_string(lineno) + ": header after records");
      }
      try {
        ds.spec = spec_from_json(j.at("spec"));
        ds.split = j.contains("split") ? parse_split(j.at("split").get<std::string>()) : Split::train;
        ds.spec_fingerprint = fingerprint(ds.spec);
        if (j.contains("fingerprint")) {
          const std::string recorded = j.at("fingerprint").get<std::string>();
          if (recorded != hex64(ds.spec_fingerprint)) {
            warn(path + ": fingerprint " + recorded + " does not match spec (" +
                 hex64(ds.spec_fingerprint) + ")");
          }
        }
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": line " + std::to_string(lineno) + ": " + e.what());
      } catch (const ConfigError& e) {
        throw ParseError(path + ": line " + std::to_string(lineno) + ": " + e.what());
      }
      have_header = true;
      continue;
    }
    Sample s;
    try {
      s.qtype = j.at("qtype").get<std::size_t>();
      s.features.visual = j.at("visual").get<Vector>();
      s.features.question = j.at("question").get<Vector>();
      s.answer = j.at("answer").get<std::size_t>();
      s.agreement = j.at("agreement").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
    if (have_header) {
      try {
        detail::check_sample(s, ds.spec, lineno);
      } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
      }
    }
    ds.samples.push_back(std::move(s));
  }

  if (ds.samples.empty()) throw ParseError(path + ": no records");

  if (!have_header) {
    SyntheticSpec inferred;
    std::size_t max_q = 0, max_a = 0, max_agree = 1;
    for (const Sample& s : ds.samples) {
      max_q = std::max(max_q, s.qtype);
      max_a = std::max(max_a, s.answer);
      max_agree = std::max(max_agree, s.agreement);
    }
    inferred.n_qtypes = max_q + 1;
    inferred.n_answers_per_type = (max_a + 1 + max_q) / (max_q + 1);
    inferred.d_v = ds.samples.front().features.visual.size();
    inferred.d_q = ds.samples.front().features.question.size();
    inferred.annotator_count_max = std::max<std::size_t>(10, max_agree);
    inferred.n_train = inferred.n_test = ds.samples.size();
    ds.spec = inferred;
    ds.spec_fingerprint = fingerprint(inferred);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      try {
        detail::check_sample(ds.samples[i], ds.spec, i + 1);
      } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
      }
    }
  }
  return ds;
}

}  // namespace kdar
