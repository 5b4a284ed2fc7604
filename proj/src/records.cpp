#include "pft/records.hpp"

#include <charconv>
#include <fstream>

#include "nlohmann/json.hpp"
#include "pft/errors.hpp"

namespace pft {
namespace {

using nlohmann::json;

json record_to_json(const RunRecord& r) {
  json j;
  j["strategy"] = r.strategy;
  j["dataset"] = r.dataset;
  j["shots"] = r.shots;
  j["seed"] = r.seed;
  j["epochs"] = r.epochs;
  j["initial_lr"] = r.initial_lr;
  j["batch_size"] = r.batch_size;
  j["momentum"] = r.momentum;
  j["parameter_count"] = r.parameter_count;
  j["epoch_loss"] = r.epoch_loss;
  j["epoch_accuracy"] = r.epoch_accuracy;
  j["train_accuracy"] = r.train_accuracy;
  j["test_accuracy"] = r.test_accuracy;
  j["backbone_checksum_before"] = r.backbone_checksum_before;
  j["backbone_checksum_after"] = r.backbone_checksum_after;
  j["shifted_accuracy"] = r.shifted_accuracy;
  j["ood_average"] = r.ood_average;
  j["diagnostics"] = r.diagnostics;
  j["status"] = r.status;
  j["error"] = r.error;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

RunRecord record_from_json(const json& j) {
  RunRecord r;
  try {
    r.strategy = j.at("strategy").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.shots = j.at("shots").get<std::int64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.epochs = j.at("epochs").get<std::int64_t>();
    r.initial_lr = j.at("initial_lr").get<double>();
    r.batch_size = j.at("batch_size").get<std::int64_t>();
    r.momentum = j.at("momentum").get<double>();
    r.parameter_count = j.at("parameter_count").get<std::int64_t>();
    r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    r.epoch_accuracy = j.at("epoch_accuracy").get<std::vector<double>>();
    r.train_accuracy = j.at("train_accuracy").get<double>();
    r.test_accuracy = j.at("test_accuracy").get<double>();
    r.backbone_checksum_before = j.at("backbone_checksum_before").get<std::string>();
    r.backbone_checksum_after = j.at("backbone_checksum_after").get<std::string>();
    r.shifted_accuracy = j.at("shifted_accuracy").get<std::map<std::string, double>>();
    r.ood_average = j.at("ood_average").get<double>();
    r.diagnostics = j.at("diagnostics").get<std::map<std::string, double>>();
    r.status = j.at("status").get<std::string>();
    r.error = j.at("error").get<std::string>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
  } catch (const json::exception& e) {
    throw integrity_error(std::string("run record: ") + e.what());
  }
  return r;
}

}  // namespace

std::string to_json_line(const RunRecord& r) { return record_to_json(r).dump(); }

RunRecord run_record_from_json(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw integrity_error("run record: malformed JSON line");
  return record_from_json(j);
}

void append_jsonl(const std::filesystem::path& path, const RunRecord& r) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw io_error("cannot open for append: " + path.string());
  out << to_json_line(r) << '\n';
  if (!out) throw io_error("write failed: " + path.string());
}

std::vector<RunRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path.string());
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(run_record_from_json(line));
  }
  return out;
}

std::string csv_escape(const std::string& field) {
  bool needs_quote = field.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quote) return field;
  std::string out;
  out.reserve(field.size() + 2);
  out.push_back('"');
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open for write: " + path.string());
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << csv_escape(row[i]);
    }
    out << "\r\n";
  };
  write_row(header);
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw contract_error("csv row width " + std::to_string(row.size()) + " != header width " +
                           std::to_string(header.size()));
    write_row(row);
  }
  if (!out) throw io_error("write failed: " + path.string());
}

std::string csv_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace pft
