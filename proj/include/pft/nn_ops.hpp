#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pft/errors.hpp"
#include "pft/rng.hpp"
#include "pft/tape.hpp"
#include "pft/tensor.hpp"

namespace pft {

inline constexpr double kInitStd = 0.02;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr std::int64_t kFfnExpansion = 4;

// Weight matrices scale with fan-in so a block keeps O(1) gain at any width;
// a fixed small std would leave desk-width blocks as near-identity maps and
// collapse every image onto one feature direction.
inline double init_std(std::int64_t fan_in) {
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

template <typename T>
Tensor<T> random_normal(std::vector<std::int64_t> shape, SplitMix64& rng, double std_dev = kInitStd) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.next_normal() * std_dev);
  return t;
}

// ---- parameter bundles -----------------------------------------------

template <typename T>
struct AttentionParams {
  Parameter<T> wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams init(const std::string& prefix, std::int64_t dim, SplitMix64& rng,
                              bool trainable) {
    AttentionParams p;
    p.wq = Parameter<T>(prefix + ".wq", random_normal<T>({dim, dim}, rng, init_std(dim)), trainable);
    p.bq = Parameter<T>(prefix + ".bq", Tensor<T>({dim}), trainable);
    p.wk = Parameter<T>(prefix + ".wk", random_normal<T>({dim, dim}, rng, init_std(dim)), trainable);
    p.bk = Parameter<T>(prefix + ".bk", Tensor<T>({dim}), trainable);
    p.wv = Parameter<T>(prefix + ".wv", random_normal<T>({dim, dim}, rng, init_std(dim)), trainable);
    p.bv = Parameter<T>(prefix + ".bv", Tensor<T>({dim}), trainable);
    p.wo = Parameter<T>(prefix + ".wo", random_normal<T>({dim, dim}, rng, init_std(dim)), trainable);
    p.bo = Parameter<T>(prefix + ".bo", Tensor<T>({dim}), trainable);
    return p;
  }

  std::vector<Parameter<T>*> params() { return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}; }
};

template <typename T>
struct FeedForwardParams {
  Parameter<T> w1, b1, w2, b2;

  static FeedForwardParams init(const std::string& prefix, std::int64_t dim, std::int64_t hidden,
                                SplitMix64& rng, bool trainable) {
    FeedForwardParams p;
    p.w1 = Parameter<T>(prefix + ".w1", random_normal<T>({dim, hidden}, rng, init_std(dim)), trainable);
    p.b1 = Parameter<T>(prefix + ".b1", Tensor<T>({hidden}), trainable);
    p.w2 = Parameter<T>(prefix + ".w2", random_normal<T>({hidden, dim}, rng, init_std(hidden)), trainable);
    p.b2 = Parameter<T>(prefix + ".b2", Tensor<T>({dim}), trainable);
    return p;
  }

  std::vector<Parameter<T>*> params() { return {&w1, &b1, &w2, &b2}; }
};

template <typename T>
struct LayerNormParams {
  Parameter<T> gamma, beta;

  static LayerNormParams init(const std::string& prefix, std::int64_t dim, bool trainable) {
    LayerNormParams p;
    p.gamma = Parameter<T>(prefix + ".gamma", Tensor<T>::full({dim}, T(1)), trainable);
    p.beta = Parameter<T>(prefix + ".beta", Tensor<T>({dim}), trainable);
    return p;
  }

  std::vector<Parameter<T>*> params() { return {&gamma, &beta}; }
};

// ---- tape-level views of the bundles ---------------------------------

template <typename T>
struct AttentionVars {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  static AttentionVars bind(Tape<T>& t, AttentionParams<T>& p) {
    return {t.param(p.wq), t.param(p.bq), t.param(p.wk), t.param(p.bk),
            t.param(p.wv), t.param(p.bv), t.param(p.wo), t.param(p.bo)};
  }
};

template <typename T>
struct FeedForwardVars {
  Var w1, b1, w2, b2;
  static FeedForwardVars bind(Tape<T>& t, FeedForwardParams<T>& p) {
    return {t.param(p.w1), t.param(p.b1), t.param(p.w2), t.param(p.b2)};
  }
};

template <typename T>
struct LayerNormVars {
  Var gamma, beta;
  static LayerNormVars bind(Tape<T>& t, LayerNormParams<T>& p) {
    return {t.param(p.gamma), t.param(p.beta)};
  }
};

// Collects the per-head attention weight matrices of one attention call;
// used by the diagnostics module to export response maps.
template <typename T>
struct AttentionCapture {
  std::vector<Tensor<T>> head_weights;  // each [s_q x s_k], rows sum to 1
};

// Scaled dot-product attention with `heads` heads over row-major token
// sequences (rows = tokens). Scale is 1/sqrt(dim/heads); heads are
// concatenated and output-projected.
template <typename T>
Var multi_head_attention(Tape<T>& t, Var q, Var k, Var v, const AttentionVars<T>& w,
                         std::int64_t heads, AttentionCapture<T>* capture = nullptr) {
  const std::int64_t dim = t.value(q).cols();
  if (heads <= 0 || dim % heads != 0) {
    throw config_error("attention width " + std::to_string(dim) + " not divisible by " +
                       std::to_string(heads) + " heads");
  }
  const std::int64_t dh = dim / heads;
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));

  Var qp = t.add_rowwise(t.matmul(q, w.wq), w.bq);
  Var kp = t.add_rowwise(t.matmul(k, w.wk), w.bk);
  Var vp = t.add_rowwise(t.matmul(v, w.wv), w.bv);

  std::vector<Var> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (std::int64_t h = 0; h < heads; ++h) {
    Var qh = t.slice_cols(qp, h * dh, dh);
    Var kh = t.slice_cols(kp, h * dh, dh);
    Var vh = t.slice_cols(vp, h * dh, dh);
    Var scores = t.scale(t.matmul(qh, t.transpose(kh)), scale);
    Var weights = t.softmax(scores);
    if (capture) capture->head_weights.push_back(t.value(weights));
    head_outputs.push_back(t.matmul(weights, vh));
  }
  Var merged = heads == 1 ? head_outputs[0] : t.concat_cols(head_outputs);
  return t.add_rowwise(t.matmul(merged, w.wo), w.bo);
}

// linear -> gelu -> linear
template <typename T>
Var feed_forward(Tape<T>& t, Var x, const FeedForwardVars<T>& w) {
  Var h = t.gelu(t.add_rowwise(t.matmul(x, w.w1), w.b1));
  return t.add_rowwise(t.matmul(h, w.w2), w.b2);
}

template <typename T>
Var layer_norm(Tape<T>& t, Var x, const LayerNormVars<T>& w) {
  return t.layer_norm(x, w.gamma, w.beta, T(kLayerNormEps));
}

}  // namespace pft
