// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-branch answer classifier with hand-written backpropagation:
//
//   e_v = relu(W_v v + b_v)          visual encoder      d_v -> h
//   e_q = relu(W_q q + b_q)          question encoder    d_q -> h
//   f   = relu(W_f (e_v * e_q) + b_f) product fusion     h   -> h
//   z   = W_o f + b_o                classifier head     h   -> K
//
// plus a bias-corrected adaptive-moment optimizer over the same layout.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kdar/errors.hpp"
#include "kdar/numerics.hpp"
#include "kdar/random.hpp"

namespace kdar {

struct ModelDims {
  std::size_t visual = 16;
  std::size_t question = 16;
  std::size_t hidden = 64;
  std::size_t classes = 20;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;

  std::string to_string() const {
    return "{d_v=" + std::to_string(visual) + ", d_q=" + std::to_string(question) +
           ", h=" + std::to_string(hidden) + ", K=" + std::to_string(classes) + "}";
  }

  void validate() const {
    if (visual == 0 || question == 0 || hidden == 0 || classes == 0) {
      throw ConfigError("model dims must all be >= 1, got " + to_string());
    }
  }
};

struct FeaturePair {
  Vector visual;
  Vector question;

  friend bool operator==(const FeaturePair&, const FeaturePair&) = default;
};

/// Row-major matrix; a bias is a single-column tensor.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct MlpParams {
  ModelDims dims;
  std::uint64_t seed = 0;
  Tensor w_v, b_v, w_q, b_q, w_f, b_f, w_o, b_o;
  /// Bumped on every in-place update; forward caches remember it.
  std::uint64_t version = 0;

  static constexpr std::size_t kTensorCount = 8;
  static constexpr std::array<const char*, kTensorCount> kTensorNames = {
      "w_v", "b_v", "w_q", "b_q", "w_f", "b_f", "w_o", "b_o"};

  static MlpParams zeros(const ModelDims& d) {
    d.validate();
    MlpParams p;
    p.dims = d;
    p.w_v = Tensor(d.hidden, d.visual);
    p.b_v = Tensor(d.hidden, 1);
    p.w_q = Tensor(d.hidden, d.question);
    p.b_q = Tensor(d.hidden, 1);
    p.w_f = Tensor(d.hidden, d.hidden);
    p.b_f = Tensor(d.hidden, 1);
    p.w_o = Tensor(d.classes, d.hidden);
    p.b_o = Tensor(d.classes, 1);
    return p;
  }

  std::array<Tensor*, kTensorCount> tensors() {
    return {&w_v, &b_v, &w_q, &b_q, &w_f, &b_f, &w_o, &b_o};
  }
  std::array<const Tensor*, kTensorCount> tensors() const {
    return {&w_v, &b_v, &w_q, &b_q, &w_f, &b_f, &w_o, &b_o};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor* t : tensors()) n += t->data.size();
    return n;
  }

  /// Flat-index access across all tensors in declaration order.
  double& at(std::size_t flat) {
    for (Tensor* t : tensors()) {
      if (flat < t->data.size()) return t->data[flat];
      flat -= t->data.size();
    }
    throw DomainError("MlpParams::at: flat index out of range");
  }
  double at(std::size_t flat) const { return const_cast<MlpParams*>(this)->at(flat); }

  bool same_shape(const MlpParams& other) const {
    const auto a = tensors();
    const auto b = other.tensors();
    for (std::size_t i = 0; i < kTensorCount; ++i) {
      if (a[i]->rows != b[i]->rows || a[i]->cols != b[i]->cols) return false;
    }
    return true;
  }

  /// Parameter values equal; seed and version are bookkeeping and ignored.
  bool same_values(const MlpParams& other) const {
    return dims == other.dims && w_v == other.w_v && b_v == other.b_v && w_q == other.w_q &&
           b_q == other.b_q && w_f == other.w_f && b_f == other.b_f && w_o == other.w_o &&
           b_o == other.b_o;
  }
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. Deterministic per seed.
inline MlpParams init_params(std::uint64_t seed, const ModelDims& dims) {
  MlpParams p = MlpParams::zeros(dims);
  p.seed = seed;
  Rng rng(seed);
  for (Tensor* w : {&p.w_v, &p.w_q, &p.w_f, &p.w_o}) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w->cols));
    for (double& x : w->data) x = rng.uniform(-bound, bound);
  }
  return p;
}

/// Activations recorded by forward() for use by backward().
struct ForwardCache {
  const MlpParams* owner = nullptr;
  std::uint64_t owner_version = 0;
  Vector visual, question;
  Vector pre_v, enc_v, pre_q, enc_q, fused_in, pre_f, fused, logits;
};

namespace detail {

// out = W x + b
inline void affine(const Tensor& w, const Tensor& b, std::span<const double> x, Vector& out) {
  out.resize(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = &w.data[r * w.cols];
    double acc = b.data[r];
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

inline void relu(const Vector& in, Vector& out) {
  out.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

// dW += g x^T ; db += g
inline void accumulate_outer(Tensor& dw, Tensor& db, std::span<const double> g,
                             std::span<const double> x) {
  for (std::size_t r = 0; r < dw.rows; ++r) {
    const double gr = g[r];
    db.data[r] += gr;
    if (gr == 0.0) continue;
    double* row = &dw.data[r * dw.cols];
    for (std::size_t c = 0; c < dw.cols; ++c) row[c] += gr * x[c];
  }
}

// out = W^T g
inline void transpose_times(const Tensor& w, std::span<const double> g, Vector& out) {
  out.assign(w.cols, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    const double* row = &w.data[r * w.cols];
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += row[c] * gr;
  }
}

}  // namespace detail

/// Forward pass reusing the buffers in `cache`. Returns a view of the logits.
inline std::span<const double> forward(const MlpParams& params, std::span<const double> visual,
                                       std::span<const double> question, ForwardCache& cache) {
  const ModelDims& d = params.dims;
  if (visual.size() != d.visual || question.size() != d.question) {
    throw DomainError("forward: feature dims (" + std::to_string(visual.size()) + ", " +
                      std::to_string(question.size()) + ") do not match model " + d.to_string());
  }
  cache.owner = &params;
  cache.owner_version = params.version;
  cache.visual.assign(visual.begin(), visual.end());
  cache.question.assign(question.begin(), question.end());

  detail::affine(params.w_v, params.b_v, visual, cache.pre_v);
  detail::relu(cache.pre_v, cache.enc_v);
  detail::affine(params.w_q, params.b_q, question, cache.pre_q);
  detail::relu(cache.pre_q, cache.enc_q);
  cache.fused_in.resize(d.hidden);
  for (std::size_t i = 0; i < d.hidden; ++i) cache.fused_in[i] = cache.enc_v[i] * cache.enc_q[i];
  detail::affine(params.w_f, params.b_f, cache.fused_in, cache.pre_f);
  detail::relu(cache.pre_f, cache.fused);
  detail::affine(params.w_o, params.b_o, cache.fused, cache.logits);
  return cache.logits;
}

inline ForwardCache forward(const MlpParams& params, const FeaturePair& x) {
  ForwardCache cache;
  forward(params, x.visual, x.question, cache);
  return cache;
}

/// Adds d(logits . grad_logits)/d(theta) into `grads`.
inline void accumulate_backward(const MlpParams& params, const ForwardCache& cache,
                                std::span<const double> grad_logits, MlpParams& grads) {
  if (cache.owner != &params || cache.owner_version != params.version) {
    throw DomainError("backward: cache was produced by different or since-updated parameters");
  }
  if (grad_logits.size() != params.dims.classes) {
    throw DomainError("backward: grad_logits has " + std::to_string(grad_logits.size()) +
                      " entries, model has " + std::to_string(params.dims.classes) + " classes");
  }
  if (!grads.same_shape(params)) throw DomainError("backward: gradient buffer shape mismatch");

  const std::size_t h = params.dims.hidden;
  detail::accumulate_outer(grads.w_o, grads.b_o, grad_logits, cache.fused);

  Vector g;
  detail::transpose_times(params.w_o, grad_logits, g);
  for (std::size_t i = 0; i < h; ++i) {
    if (cache.pre_f[i] <= 0.0) g[i] = 0.0;
  }
  detail::accumulate_outer(grads.w_f, grads.b_f, g, cache.fused_in);

  Vector g_fused_in;
  detail::transpose_times(params.w_f, g, g_fused_in);
  Vector g_v(h), g_q(h);
  for (std::size_t i = 0; i < h; ++i) {
    g_v[i] = cache.pre_v[i] > 0.0 ? g_fused_in[i] * cache.enc_q[i] : 0.0;
    g_q[i] = cache.pre_q[i] > 0.0 ? g_fused_in[i] * cache.enc_v[i] : 0.0;
  }
  detail::accumulate_outer(grads.w_v, grads.b_v, g_v, cache.visual);
  detail::accumulate_outer(grads.w_q, grads.b_q, g_q, cache.question);
}

inline MlpParams backward(const MlpParams& params, const ForwardCache& cache,
                          std::span<const double> grad_logits) {
  MlpParams grads = MlpParams::zeros(params.dims);
  accumulate_backward(params, cache, grad_logits, grads);
  return grads;
}

struct OptimizerState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  MlpParams first_moment;
  MlpParams second_moment;

  static OptimizerState for_params(const MlpParams& params, double learning_rate = 1e-3) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    OptimizerState s;
    s.learning_rate = learning_rate;
    s.first_moment = MlpParams::zeros(params.dims);
    s.second_moment = MlpParams::zeros(params.dims);
    return s;
  }
};

inline void optimizer_step(MlpParams& params, const MlpParams& grads, OptimizerState& state) {
  if (!grads.same_shape(params) || !state.first_moment.same_shape(params) ||
      !state.second_moment.same_shape(params)) {
    throw DomainError("optimizer_step: parameter, gradient and moment shapes disagree");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t k = 0; k < MlpParams::kTensorCount; ++k) {
    for (std::size_t i = 0; i < p[k]->data.size(); ++i) {
      const double gi = g[k]->data[i];
      double& mi = m[k]->data[i];
      double& vi = v[k]->data[i];
      mi = state.beta1 * mi + (1.0 - state.beta1) * gi;
      vi = state.beta2 * vi + (1.0 - state.beta2) * gi * gi;
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      p[k]->data[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
  ++params.version;
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace kdar
