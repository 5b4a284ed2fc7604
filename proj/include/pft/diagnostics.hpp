#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pft/encoder.hpp"
#include "pft/errors.hpp"
#include "pft/prompts.hpp"
#include "pft/records.hpp"
#include "pft/tensor.hpp"
#include "pft/tensor_io.hpp"

namespace pft {

// ---- variance statistics -------------------------------------------------

// Population variance per dimension, scalarized by the mean over dimensions.
// var_v is the mean of var_c over classes; var_t is the same statistic over
// classifier columns. Variances are accumulated in double regardless of the
// feature element type.
struct VarianceReport {
  std::vector<double> var_c;
  double var_v = 0.0;
  double var_t = -1.0;  // negative until computed
  std::string dataset;
  std::string encoder_checksum;
  std::string scalarization = "mean-over-dims";
  std::string feature_space = "joint-l2";
};

namespace detail {

// rows: index list into `features`; returns mean-over-dims of the per-dim
// population variance.
template <typename T>
double population_variance_rows(const Tensor<T>& features, const std::vector<std::int64_t>& rows) {
  const std::int64_t d = features.cols();
  const auto n = static_cast<double>(rows.size());
  double total = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::int64_t r : rows) mean += static_cast<double>(features.at(r, j));
    mean /= n;
    double acc = 0.0;
    for (std::int64_t r : rows) {
      const double dev = static_cast<double>(features.at(r, j)) - mean;
      acc += dev * dev;
    }
    total += acc / n;
  }
  return total / static_cast<double>(d);
}

}  // namespace detail

// features: [N x d], one row per sample; labels in [0, k).
template <typename T>
VarianceReport intra_class_visual_variance(const Tensor<T>& features,
                                           const std::vector<std::int64_t>& labels,
                                           std::int64_t k) {
  if (features.rank() != 2) throw dimension_error("feature matrix must be rank 2");
  if (static_cast<std::int64_t>(labels.size()) != features.rows())
    throw dimension_error("label count " + std::to_string(labels.size()) + " != feature rows " +
                          std::to_string(features.rows()));
  if (k <= 0) throw data_error("class count must be positive");

  std::vector<std::vector<std::int64_t>> members(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < features.rows(); ++i) {
    const std::int64_t c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= k)
      throw data_error("label " + std::to_string(c) + " outside [0, " + std::to_string(k) + ")");
    members[static_cast<std::size_t>(c)].push_back(i);
  }

  VarianceReport report;
  report.var_c.reserve(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (std::int64_t c = 0; c < k; ++c) {
    const auto& rows = members[static_cast<std::size_t>(c)];
    if (rows.empty()) throw data_error("class " + std::to_string(c) + " has no samples");
    const double v = detail::population_variance_rows(features, rows);
    report.var_c.push_back(v);
    sum += v;
  }
  report.var_v = sum / static_cast<double>(k);
  return report;
}

// w: [d x k] unit classifier columns; population variance of columns around
// their mean, per dimension, then mean over dimensions.
template <typename T>
double inter_class_text_variance(const Tensor<T>& w) {
  if (w.rank() != 2) throw dimension_error("classifier matrix must be rank 2");
  const std::int64_t d = w.rows();
  const std::int64_t k = w.cols();
  if (k < 2) throw data_error("inter-class variance needs at least 2 classes, got " +
                              std::to_string(k));
  double total = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::int64_t c = 0; c < k; ++c) mean += static_cast<double>(w.at(j, c));
    mean /= static_cast<double>(k);
    double acc = 0.0;
    for (std::int64_t c = 0; c < k; ++c) {
      const double dev = static_cast<double>(w.at(j, c)) - mean;
      acc += dev * dev;
    }
    total += acc / static_cast<double>(k);
  }
  return total / static_cast<double>(d);
}

template <typename T>
double inter_class_text_variance(const ClassifierMatrix<T>& cm) {
  return inter_class_text_variance(cm.w);
}

// ---- gain-vs-variance scatter rows ----------------------------------------

struct GainRow {
  std::string dataset;
  double var_v = 0.0;
  double var_t = 0.0;
  std::string strategy;
  double accuracy = 0.0;
  double gain = 0.0;  // accuracy minus the dataset's zero-shot accuracy
};

std::vector<GainRow> gain_vs_variance_table(
    const std::vector<RunRecord>& records,
    const std::map<std::string, VarianceReport>& variance_by_dataset);

void write_gain_table_csv(const std::filesystem::path& path, const std::vector<GainRow>& rows);

// ---- sphere projection -----------------------------------------------------

// Principal components of the uncentered second-moment matrix of the pooled
// rows, so directions are measured from the origin the unit features live on.
struct SphereProjection {
  Tensor<double> points;  // [N x 3], rows unit-norm unless the input row is
                          // orthogonal to every kept component
  std::int64_t rank = 0;
  bool rank_deficient = false;
  std::string method = "uncentered-pca";
};

SphereProjection project_to_sphere(const Tensor<double>& rows);

namespace detail {
// Cyclic Jacobi eigensolver for a symmetric matrix held row-major in `a`
// (destroyed). Eigenvectors come back as columns of `v`.
void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, std::int64_t d);
}  // namespace detail

// ---- attention response maps ----------------------------------------------

// Rows are visual prompt positions, columns patch positions, taken from the
// softmax weights of one encoder block. full_rows keeps the complete softmax
// rows so distribution checks stay possible after slicing.
template <typename T>
struct AttentionMap {
  std::int64_t layer = 0;  // 1-based block index
  std::int64_t heads = 0;
  std::int64_t prompt_count = 0;
  std::int64_t patch_count = 0;
  std::int64_t grid = 0;
  std::int64_t sequence_length = 0;
  Tensor<T> per_head;   // [heads x prompts x patches]
  Tensor<T> head_mean;  // [prompts x patches]
  Tensor<T> full_rows;  // [heads x prompts x sequence_length]
};

template <typename T>
AttentionMap<T> attention_response_map(DualEncoder<T>& enc, PromptStrategy<T>& strategy,
                                       const Tensor<T>& image, std::int64_t layer) {
  if (layer < 1 || layer > enc.vision.layers)
    throw index_error("layer " + std::to_string(layer) + " outside [1, " +
                      std::to_string(enc.vision.layers) + "]");

  Tape<T> tape;
  auto plans = strategy.materialize(tape);
  if (!plans.has_visual || plans.visual.count <= 0)
    throw contract_error("strategy '" + std::string(to_string(strategy.kind())) +
                         "' places no visual prompts at layer " + std::to_string(layer));

  std::vector<AttentionCapture<T>> captures;
  encode_image(tape, enc, image, &plans.visual, &captures);

  const auto& cap = captures[static_cast<std::size_t>(layer - 1)];
  const std::int64_t heads = enc.vision.heads;
  if (static_cast<std::int64_t>(cap.head_weights.size()) != heads)
    throw contract_error("captured " + std::to_string(cap.head_weights.size()) +
                         " heads, expected " + std::to_string(heads));

  const std::int64_t n = plans.visual.count;
  const std::int64_t s = enc.vision.patch_tokens();
  const std::int64_t seq = cap.head_weights.front().rows();

  AttentionMap<T> map;
  map.layer = layer;
  map.heads = heads;
  map.prompt_count = n;
  map.patch_count = s;
  map.grid = enc.vision.grid();
  map.sequence_length = seq;
  map.per_head = Tensor<T>(std::vector<std::int64_t>{heads, n, s});
  map.head_mean = Tensor<T>(n, s);
  map.full_rows = Tensor<T>(std::vector<std::int64_t>{heads, n, seq});

  // sequence layout: [cls, prompts(n), patches(s)]
  for (std::int64_t h = 0; h < heads; ++h) {
    const auto& w = cap.head_weights[static_cast<std::size_t>(h)];
    for (std::int64_t p = 0; p < n; ++p) {
      for (std::int64_t c = 0; c < seq; ++c) map.full_rows.at(h, p, c) = w.at(1 + p, c);
      for (std::int64_t c = 0; c < s; ++c) {
        const T v = w.at(1 + p, 1 + n + c);
        map.per_head.at(h, p, c) = v;
        map.head_mean.at(p, c) += v / static_cast<T>(heads);
      }
    }
  }
  return map;
}

template <typename T>
void save_attention_map(const std::filesystem::path& dir, const AttentionMap<T>& map) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / "per_head.pft", map.per_head);
  save_tensor(dir / "head_mean.pft", map.head_mean);
  save_tensor(dir / "full_rows.pft", map.full_rows);
  nlohmann::json j;
  j["layer"] = map.layer;
  j["heads"] = map.heads;
  j["prompt_count"] = map.prompt_count;
  j["patch_count"] = map.patch_count;
  j["grid"] = map.grid;
  j["sequence_length"] = map.sequence_length;
  j["files"] = {{"per_head", "per_head.pft"},
                {"head_mean", "head_mean.pft"},
                {"full_rows", "full_rows.pft"}};
  std::ofstream out(dir / "map.json", std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + (dir / "map.json").string());
  out << j.dump(2) << '\n';
}

}  // namespace pft
