#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pft {

// One grid cell of training/evaluation. Every field that feeds the CSV
// exports is deterministic under (config, seed); wall_seconds is informative
// only and kept out of all comparisons and table exports.
struct RunRecord {
  std::string strategy;
  std::string dataset;
  std::int64_t shots = 0;
  std::uint64_t seed = 0;

  std::int64_t epochs = 0;
  double initial_lr = 0.0;
  std::int64_t batch_size = 0;
  double momentum = 0.0;
  std::int64_t parameter_count = 0;

  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;

  std::string backbone_checksum_before;
  std::string backbone_checksum_after;

  std::map<std::string, double> shifted_accuracy;  // target name -> accuracy
  double ood_average = -1.0;                       // mean over shifted targets, -1 when unused
  std::map<std::string, double> diagnostics;

  std::string status = "ok";  // "ok" | "failed"
  std::string error;
  double wall_seconds = 0.0;
};

std::string to_json_line(const RunRecord& r);
RunRecord run_record_from_json(const std::string& line);

void append_jsonl(const std::filesystem::path& path, const RunRecord& r);
std::vector<RunRecord> read_jsonl(const std::filesystem::path& path);

// RFC-4180: fields holding commas, quotes, or newlines are quoted, inner
// quotes doubled; rows end with \r\n.
std::string csv_escape(const std::string& field);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Number formatting for CSV cells: shortest round-trip form so outputs are
// byte-stable across runs and platforms.
std::string csv_number(double v);

}  // namespace pft
