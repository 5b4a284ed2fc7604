#include "pft/harness.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "pft/tensor_io.hpp"

namespace pft {

void EpisodeSpec::validate() const {
  for (std::int64_t allowed : kAllowedShots)
    if (shots == allowed) return;
  throw config_error("shots must be one of {1, 2, 4, 8, 16}, got " + std::to_string(shots));
}

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0)) throw config_error("initial_lr must be positive");
  if (batch_size < 1) throw config_error("batch_size must be >= 1");
  if (epochs < 1) throw config_error("epochs must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0)
    throw config_error("momentum must be in [0, 1), got " + std::to_string(momentum));
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double initial_lr) {
  if (total_steps < 1) throw config_error("cosine schedule needs total_steps >= 1");
  if (step < 0 || step > total_steps)
    throw contract_error("schedule step " + std::to_string(step) + " outside [0, " +
                         std::to_string(total_steps) + "]");
  const double phase = static_cast<double>(step) / static_cast<double>(total_steps);
  return initial_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * phase));
}

std::vector<std::int64_t> sample_few_shot(const DatasetSplit& split, std::int64_t classes,
                                          const EpisodeSpec& spec) {
  spec.validate();
  if (classes <= 0) throw data_error("class count must be positive");

  std::vector<std::vector<std::int64_t>> members(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < split.labels.size(); ++i) {
    const std::int64_t c = split.labels[i];
    if (c < 0 || c >= classes)
      throw data_error("label " + std::to_string(c) + " outside [0, " + std::to_string(classes) +
                       ")");
    members[static_cast<std::size_t>(c)].push_back(static_cast<std::int64_t>(i));
  }

  std::vector<std::int64_t> picked;
  picked.reserve(static_cast<std::size_t>(classes * spec.shots));
  for (std::int64_t c = 0; c < classes; ++c) {
    auto& rows = members[static_cast<std::size_t>(c)];
    if (static_cast<std::int64_t>(rows.size()) < spec.shots)
      throw data_error("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                       " examples, needs " + std::to_string(spec.shots));
    SplitMix64 rng(SplitMix64::derive(spec.seed, kFewShotStream ^ static_cast<std::uint64_t>(c)));
    rng.shuffle(rows);
    picked.insert(picked.end(), rows.begin(), rows.begin() + spec.shots);
  }
  return picked;
}

namespace detail {

void dump_bad_batch(const std::filesystem::path& dir, const DatasetSplit& split,
                    const std::vector<std::int64_t>& batch, std::int64_t epoch, std::int64_t step,
                    double loss_value) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  const std::int64_t h = split.images.extent(1), w = split.images.extent(2);
  Tensor<float> images({static_cast<std::int64_t>(batch.size()), h, w});
  Tensor<float> labels({static_cast<std::int64_t>(batch.size())});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const float* src = split.images.data() + batch[i] * h * w;
    std::copy_n(src, h * w, images.data() + static_cast<std::int64_t>(i) * h * w);
    labels[static_cast<std::int64_t>(i)] =
        static_cast<float>(split.labels[static_cast<std::size_t>(batch[i])]);
  }
  save_tensor(dir / "bad_batch_images.pft", images);
  save_tensor(dir / "bad_batch_labels.pft", labels);
  std::ofstream note(dir / "bad_batch.txt", std::ios::trunc);
  note << "loss " << loss_value << " epoch " << epoch << " step " << step << " rows";
  for (std::int64_t r : batch) note << ' ' << r;
  note << '\n';
}

}  // namespace detail

void write_matrix_outputs(const std::filesystem::path& dir, const std::vector<RunRecord>& records) {
  std::filesystem::create_directories(dir);

  const auto jsonl = dir / "runs.jsonl";
  std::error_code ec;
  std::filesystem::remove(jsonl, ec);
  for (const auto& rec : records) append_jsonl(jsonl, rec);

  std::vector<std::vector<std::string>> rows;
  rows.reserve(records.size());
  for (const auto& rec : records) {
    rows.push_back({rec.strategy, std::to_string(rec.shots), std::to_string(rec.seed),
                    rec.status == "ok" ? csv_number(rec.test_accuracy) : "",
                    rec.ood_average >= 0.0 ? csv_number(rec.ood_average) : "", rec.status});
  }
  write_csv(dir / "results.csv", {"strategy", "shots", "seed", "accuracy", "ood_average", "status"},
            rows);

  // mean over seeds, in first-appearance order of (strategy, shots)
  std::vector<std::pair<std::string, std::int64_t>> order;
  std::map<std::pair<std::string, std::int64_t>, std::pair<double, std::int64_t>> agg;
  for (const auto& rec : records) {
    const std::pair<std::string, std::int64_t> key{rec.strategy, rec.shots};
    if (agg.find(key) == agg.end()) order.push_back(key);
    if (rec.status != "ok") {
      agg.emplace(key, std::pair<double, std::int64_t>{0.0, 0});
      continue;
    }
    auto& cell = agg[key];
    cell.first += rec.test_accuracy;
    cell.second += 1;
  }
  std::vector<std::vector<std::string>> summary;
  summary.reserve(order.size());
  for (const auto& key : order) {
    const auto& cell = agg[key];
    summary.push_back({key.first, std::to_string(key.second),
                       cell.second > 0 ? csv_number(cell.first / static_cast<double>(cell.second))
                                       : "",
                       std::to_string(cell.second)});
  }
  write_csv(dir / "summary.csv", {"strategy", "shots", "mean_accuracy", "seeds"}, summary);
}

}  // namespace pft
