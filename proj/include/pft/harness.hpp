#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "pft/dataset.hpp"
#include "pft/encoder.hpp"
#include "pft/errors.hpp"
#include "pft/prompts.hpp"
#include "pft/records.hpp"
#include "pft/rng.hpp"
#include "pft/tokenizer.hpp"

namespace pft {

inline constexpr std::uint64_t kFewShotStream = 0x73686f74;  // "shot"
inline constexpr std::uint64_t kBatchStream = 0x62617463;    // "batc"

inline constexpr std::int64_t kAllowedShots[] = {1, 2, 4, 8, 16};

struct EpisodeSpec {
  std::int64_t shots = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainConfig {
  double initial_lr = 0.002;
  std::int64_t batch_size = 32;
  std::int64_t epochs = 50;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::filesystem::path dump_dir;  // when set, non-finite losses dump the batch here

  void validate() const;
};

// lr = lr0 * (1 + cos(pi*t/T)) / 2 over optimizer steps t in [0, T].
double cosine_lr(std::int64_t step, std::int64_t total_steps, double initial_lr);

// Seeded per (seed, class id); uniform without replacement within each class.
// Returns row indices into the split, grouped by class in class order.
std::vector<std::int64_t> sample_few_shot(const DatasetSplit& split, std::int64_t classes,
                                          const EpisodeSpec& spec);

// v = momentum*v + grad; p -= lr*v. Velocity is zero-initialized per parameter.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Parameter<T>*> params, double momentum)
      : params_(std::move(params)), momentum_(momentum) {
    velocity_.reserve(params_.size());
    for (auto* p : params_) velocity_.emplace_back(p->value.shape());
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      auto& v = velocity_[i].vec();
      const auto& g = p.grad.vec();
      auto& w = p.value.vec();
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = static_cast<T>(momentum_) * v[j] + g[j];
        w[j] -= static_cast<T>(lr) * v[j];
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> velocity_;
  double momentum_;
};

namespace detail {

template <typename T>
std::vector<std::vector<std::int64_t>> class_token_ids(const DualEncoder<T>& enc,
                                                       const std::vector<std::string>& names) {
  Tokenizer tok(enc.text.context_length);
  std::vector<std::vector<std::int64_t>> ids;
  ids.reserve(names.size());
  for (const auto& name : names) ids.push_back(tok.encode(std::string(kPromptTemplate) + " " + name));
  return ids;
}

// Classifier columns on the tape: text features per class stacked as rows,
// transposed to [d x k]. Gradients flow into the text prompt plan.
template <typename T>
Var prompted_classifier(Tape<T>& t, DualEncoder<T>& enc,
                        const std::vector<std::vector<std::int64_t>>& class_ids,
                        const TextPromptPlan* plan) {
  std::vector<Var> rows;
  rows.reserve(class_ids.size());
  for (const auto& ids : class_ids) rows.push_back(encode_text(t, enc, ids, plan));
  return t.transpose(t.concat_rows(rows));
}

inline std::int64_t argmax_lowest(const float* v, std::int64_t k) {
  std::int64_t best = 0;
  for (std::int64_t i = 1; i < k; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

template <typename T>
std::int64_t argmax_row(const Tensor<T>& logits, std::int64_t row) {
  std::int64_t best = 0;
  for (std::int64_t c = 1; c < logits.cols(); ++c)
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  return best;
}

void dump_bad_batch(const std::filesystem::path& dir, const DatasetSplit& split,
                    const std::vector<std::int64_t>& batch, std::int64_t epoch, std::int64_t step,
                    double loss_value);

}  // namespace detail

// Top-1 accuracy of the prompted pipeline over a split (or a subset of its
// rows). Ties at the argmax go to the lowest class index.
template <typename T>
double evaluate(PromptStrategy<T>& strategy, DualEncoder<T>& enc,
                const std::vector<std::string>& class_names, const DatasetSplit& split,
                const std::vector<std::int64_t>* subset = nullptr) {
  const std::int64_t total = subset ? static_cast<std::int64_t>(subset->size())
                                    : split.images.extent(0);
  if (total == 0) throw data_error("evaluation split is empty");
  const std::int64_t k = static_cast<std::int64_t>(class_names.size());

  // Classifier matrix with the strategy's text prompts applied (constant
  // zero-shot columns when the strategy has none).
  Tensor<T> w;
  {
    Tape<T> t;
    auto plans = strategy.materialize(t);
    if (plans.has_text) {
      auto ids = detail::class_token_ids(enc, class_names);
      w = t.value(detail::prompted_classifier(t, enc, ids, &plans.text));
    } else {
      w = build_zero_shot_classifier(enc, class_names).w;
    }
  }

  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < total; ++i) {
    const std::int64_t row = subset ? (*subset)[static_cast<std::size_t>(i)] : i;
    Tape<T> t;
    auto plans = strategy.materialize(t);
    Var z = encode_image(t, enc, image_at<T>(split, row),
                         plans.has_visual ? &plans.visual : nullptr);
    Tensor<T> logits = t.value(t.matmul(z, t.input(w)));
    if (detail::argmax_row(logits, 0) == split.labels[static_cast<std::size_t>(row)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

// Minibatch SGD over the strategy's trainable parameters only. The backbone
// stays frozen; its checksum is recorded before and after as evidence.
template <typename T>
RunRecord train(PromptStrategy<T>& strategy, DualEncoder<T>& enc, const Dataset& data,
                const EpisodeSpec& episode, const TrainConfig& cfg) {
  episode.validate();
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();

  const auto& train_split = data.split("train");
  const auto& test_split = data.split("test");
  const std::int64_t k = static_cast<std::int64_t>(data.class_names.size());
  const auto few = sample_few_shot(train_split, k, episode);
  const auto n = static_cast<std::int64_t>(few.size());

  RunRecord rec;
  rec.strategy = std::string(to_string(strategy.kind()));
  rec.dataset = data.name;
  rec.shots = episode.shots;
  rec.seed = episode.seed;
  rec.epochs = cfg.epochs;
  rec.initial_lr = cfg.initial_lr;
  rec.batch_size = cfg.batch_size;
  rec.momentum = cfg.momentum;
  rec.parameter_count = strategy.parameter_count();
  rec.backbone_checksum_before = backbone_checksum(enc);

  auto trainables = strategy.trainables();
  if (!trainables.empty()) {
    const auto class_ids = detail::class_token_ids(enc, data.class_names);
    const bool text_prompted = [&] {
      Tape<T> t;
      return strategy.materialize(t).has_text;
    }();
    Tensor<T> fixed_w;
    if (!text_prompted) fixed_w = build_zero_shot_classifier(enc, data.class_names).w;

    SgdMomentum<T> opt(trainables, cfg.momentum);
    opt.zero_grad();

    const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
    std::int64_t step = 0;

    std::vector<std::int64_t> order(few.begin(), few.end());
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      SplitMix64 rng(SplitMix64::derive(cfg.seed, kBatchStream ^ static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);

      double loss_sum = 0.0;
      std::int64_t hit = 0;
      for (std::int64_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
        const std::int64_t bsz = std::min(cfg.batch_size, n - b0);
        std::vector<std::int64_t> batch(order.begin() + b0, order.begin() + b0 + bsz);
        std::vector<std::int64_t> labels;
        labels.reserve(batch.size());
        for (std::int64_t row : batch) labels.push_back(train_split.labels[static_cast<std::size_t>(row)]);

        Tape<T> t;
        auto plans = strategy.materialize(t);
        Var w = plans.has_text ? detail::prompted_classifier(t, enc, class_ids, &plans.text)
                               : t.input(fixed_w);
        std::vector<Var> feats;
        feats.reserve(batch.size());
        for (std::int64_t row : batch)
          feats.push_back(encode_image(t, enc, image_at<T>(train_split, row),
                                       plans.has_visual ? &plans.visual : nullptr));
        Var logits = t.scale(t.matmul(t.concat_rows(feats), w), enc.logit_scale);
        Var loss = t.cross_entropy(logits, labels);

        const double loss_value = static_cast<double>(t.value(loss)[0]);
        if (!std::isfinite(loss_value)) {
          detail::dump_bad_batch(cfg.dump_dir, train_split, batch, epoch, step, loss_value);
          throw runtime_error("non-finite loss " + std::to_string(loss_value) + " at epoch " +
                              std::to_string(epoch) + " step " + std::to_string(step));
        }
        const Tensor<T>& lv = t.value(logits);
        for (std::size_t i = 0; i < batch.size(); ++i)
          if (detail::argmax_row(lv, static_cast<std::int64_t>(i)) == labels[i]) ++hit;

        t.backward(loss);
        opt.step(cosine_lr(step, total_steps, cfg.initial_lr));
        opt.zero_grad();
        ++step;
        loss_sum += loss_value * static_cast<double>(bsz);
      }
      rec.epoch_loss.push_back(loss_sum / static_cast<double>(n));
      rec.epoch_accuracy.push_back(static_cast<double>(hit) / static_cast<double>(n));
    }
  }

  rec.train_accuracy = evaluate(strategy, enc, data.class_names, train_split, &few);
  rec.test_accuracy = evaluate(strategy, enc, data.class_names, test_split);
  rec.backbone_checksum_after = backbone_checksum(enc);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// ---- domain shift ----------------------------------------------------------

struct ShiftTarget {
  std::string name;
  std::vector<std::string> class_names;
  DatasetSplit split;
};

struct ShiftReport {
  std::vector<std::pair<std::string, double>> per_target;
  double ood_average = 0.0;
};

template <typename T>
ShiftReport evaluate_shifted(PromptStrategy<T>& strategy, DualEncoder<T>& enc,
                             const std::vector<std::string>& source_classes,
                             const std::vector<ShiftTarget>& targets) {
  if (targets.empty()) throw data_error("no shift targets");
  ShiftReport report;
  double sum = 0.0;
  for (const auto& target : targets) {
    if (target.class_names != source_classes)
      throw data_error("shift target '" + target.name + "' class list differs from the source");
    const double acc = evaluate(strategy, enc, source_classes, target.split);
    report.per_target.emplace_back(target.name, acc);
    sum += acc;
  }
  report.ood_average = sum / static_cast<double>(targets.size());
  return report;
}

// ---- the strategies x shots x seeds grid -----------------------------------

struct MatrixSpec {
  std::vector<StrategyKind> strategies;
  std::vector<std::int64_t> shot_counts{1, 2, 4, 8, 16};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  StrategyConfig prompt;  // kind is overridden per cell
  TrainConfig train;
  int threads = 1;
};

// Runs every (strategy, shots, seed) cell, in parallel when asked, and
// aggregates in deterministic cell order no matter which thread finished
// first. A failed cell is recorded and the rest of the grid proceeds.
template <typename T>
std::vector<RunRecord> run_matrix(DualEncoder<T>& enc, const Dataset& data,
                                  const MatrixSpec& spec) {
  if (spec.strategies.empty()) throw config_error("matrix needs at least one strategy");
  if (spec.shot_counts.empty()) throw config_error("matrix needs at least one shot count");
  if (spec.seeds.empty()) throw config_error("matrix needs at least one seed");
  if (spec.threads < 1) throw config_error("thread count must be >= 1");

  struct Cell {
    StrategyKind kind;
    std::int64_t shots;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto kind : spec.strategies)
    for (auto shots : spec.shot_counts)
      for (auto seed : spec.seeds) cells.push_back({kind, shots, seed});

  std::vector<RunRecord> records(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& cell = cells[i];
      RunRecord& rec = records[i];
      try {
        StrategyConfig prompt_cfg = spec.prompt;
        prompt_cfg.kind = cell.kind;
        PromptStrategy<T> strategy(prompt_cfg, enc, cell.seed);
        if (cell.kind == StrategyKind::TextOnly || cell.kind == StrategyKind::Joint)
          strategy.init_text_from_template(enc);
        EpisodeSpec episode{cell.shots, cell.seed};
        TrainConfig train_cfg = spec.train;
        train_cfg.seed = cell.seed;
        rec = train(strategy, enc, data, episode, train_cfg);
      } catch (const std::exception& e) {
        rec = RunRecord{};
        rec.strategy = std::string(to_string(cell.kind));
        rec.dataset = data.name;
        rec.shots = cell.shots;
        rec.seed = cell.seed;
        rec.status = "failed";
        rec.error = e.what();
      }
    }
  };

  if (spec.threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(spec.threads));
    for (int i = 0; i < spec.threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return records;
}

// results.csv: one row per cell. summary.csv: mean over seeds per
// (strategy, shots), skipping failed cells.
void write_matrix_outputs(const std::filesystem::path& dir, const std::vector<RunRecord>& records);

}  // namespace pft
