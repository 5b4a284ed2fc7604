#include "pft/experiment.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pft/diagnostics.hpp"
#include "pft/errors.hpp"
#include "pft/records.hpp"
#include "pft/rng.hpp"

namespace pft {
namespace {

using nlohmann::json;

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw config_error(std::string(where) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* a) { return it.key() == a; })) {
      throw config_error("unknown key '" + it.key() + "' in " + where);
    }
  }
}

SyntheticSpec synthetic_from_json(const json& j) {
  check_keys(j, "dataset.synthetic",
             {"name", "classes", "train_per_class", "test_per_class", "image_size", "name_words",
              "prototype_scale", "noise_sigma", "name_overlap", "seed"});
  SyntheticSpec s;
  s.name = j.value("name", s.name);
  s.classes = j.value("classes", s.classes);
  s.train_per_class = j.value("train_per_class", s.train_per_class);
  s.test_per_class = j.value("test_per_class", s.test_per_class);
  s.image_size = j.value("image_size", s.image_size);
  s.name_words = j.value("name_words", s.name_words);
  s.prototype_scale = j.value("prototype_scale", s.prototype_scale);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.name_overlap = j.value("name_overlap", s.name_overlap);
  s.seed = j.value("seed", s.seed);
  return s;
}

json synthetic_json(const SyntheticSpec& s) {
  return {{"name", s.name},
          {"classes", s.classes},
          {"train_per_class", s.train_per_class},
          {"test_per_class", s.test_per_class},
          {"image_size", s.image_size},
          {"name_words", s.name_words},
          {"prototype_scale", s.prototype_scale},
          {"noise_sigma", s.noise_sigma},
          {"name_overlap", s.name_overlap},
          {"seed", s.seed}};
}

VisionConfig vision_from_json(const json& j) {
  check_keys(j, "backbone.vision",
             {"image_size", "patch_size", "layers", "width", "heads", "joint_dim"});
  VisionConfig v;
  v.image_size = j.value("image_size", v.image_size);
  v.patch_size = j.value("patch_size", v.patch_size);
  v.layers = j.value("layers", v.layers);
  v.width = j.value("width", v.width);
  v.heads = j.value("heads", v.heads);
  v.joint_dim = j.value("joint_dim", v.joint_dim);
  return v;
}

json vision_json(const VisionConfig& v) {
  return {{"image_size", v.image_size}, {"patch_size", v.patch_size}, {"layers", v.layers},
          {"width", v.width},           {"heads", v.heads},           {"joint_dim", v.joint_dim}};
}

TextConfig text_from_json(const json& j) {
  check_keys(j, "backbone.text",
             {"vocab_size", "context_length", "layers", "width", "heads", "joint_dim"});
  TextConfig t;
  t.vocab_size = j.value("vocab_size", t.vocab_size);
  t.context_length = j.value("context_length", t.context_length);
  t.layers = j.value("layers", t.layers);
  t.width = j.value("width", t.width);
  t.heads = j.value("heads", t.heads);
  t.joint_dim = j.value("joint_dim", t.joint_dim);
  return t;
}

json text_json(const TextConfig& t) {
  return {{"vocab_size", t.vocab_size}, {"context_length", t.context_length},
          {"layers", t.layers},         {"width", t.width},
          {"heads", t.heads},           {"joint_dim", t.joint_dim}};
}

void strategy_from_json(const json& j, ExperimentConfig& cfg) {
  check_keys(j, "strategy",
             {"checkpoint", "kind", "text_len", "visual_len", "unified_len", "split_index",
              "unified_width", "transform_heads", "residual_ln", "seed"});
  cfg.strategy_checkpoint = j.value("checkpoint", std::string());
  StrategyConfig& s = cfg.strategy;
  if (j.contains("kind")) s.kind = strategy_from_string(j.at("kind").get<std::string>());
  s.text_len = j.value("text_len", s.text_len);
  s.visual_len = j.value("visual_len", s.visual_len);
  s.unified_len = j.value("unified_len", s.unified_len);
  s.split_index = j.value("split_index", s.split_index);
  s.unified_width = j.value("unified_width", s.unified_width);
  s.transform_heads = j.value("transform_heads", s.transform_heads);
  s.residual_ln = j.value("residual_ln", s.residual_ln);
  cfg.strategy_seed = j.value("seed", cfg.strategy_seed);
}

json strategy_json(const ExperimentConfig& cfg) {
  const StrategyConfig& s = cfg.strategy;
  return {{"checkpoint", cfg.strategy_checkpoint.string()},
          {"kind", to_string(s.kind)},
          {"text_len", s.text_len},
          {"visual_len", s.visual_len},
          {"unified_len", s.unified_len},
          {"split_index", s.split_index},
          {"unified_width", s.unified_width},
          {"transform_heads", s.transform_heads},
          {"residual_ln", s.residual_ln},
          {"seed", cfg.strategy_seed}};
}

TrainConfig train_from_json(const json& j) {
  check_keys(j, "train", {"initial_lr", "batch_size", "epochs", "momentum", "seed", "dump_dir"});
  TrainConfig t;
  t.initial_lr = j.value("initial_lr", t.initial_lr);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.epochs = j.value("epochs", t.epochs);
  t.momentum = j.value("momentum", t.momentum);
  t.seed = j.value("seed", t.seed);
  t.dump_dir = j.value("dump_dir", std::string());
  return t;
}

json train_json(const TrainConfig& t) {
  return {{"initial_lr", t.initial_lr}, {"batch_size", t.batch_size}, {"epochs", t.epochs},
          {"momentum", t.momentum},     {"seed", t.seed},             {"dump_dir", t.dump_dir.string()}};
}

EpisodeSpec episode_from_json(const json& j) {
  check_keys(j, "episode", {"shots", "seed"});
  EpisodeSpec e;
  e.shots = j.value("shots", e.shots);
  e.seed = j.value("seed", e.seed);
  return e;
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j, "config",
             {"schema_version", "output_dir", "precision", "threads", "dataset", "backbone",
              "strategy", "train", "episode", "matrix", "variance", "attn_map", "shift"});
  ExperimentConfig cfg;
  if (j.contains("schema_version")) {
    cfg.schema_version = j.at("schema_version").get<int>();
    if (cfg.schema_version != 1) {
      throw config_error("unsupported schema_version " + std::to_string(cfg.schema_version));
    }
  }
  cfg.output_dir = j.value("output_dir", std::string());
  cfg.precision = j.value("precision", cfg.precision);
  if (cfg.precision != "f32" && cfg.precision != "f64") {
    throw config_error("precision must be f32 or f64, got '" + cfg.precision + "'");
  }
  cfg.threads = j.value("threads", cfg.threads);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset", {"manifest", "synthetic"});
    cfg.dataset_manifest = d.value("manifest", std::string());
    if (d.contains("synthetic")) cfg.synthetic = synthetic_from_json(d.at("synthetic"));
  }
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    check_keys(b, "backbone", {"checkpoint", "vision", "text", "logit_scale", "seed"});
    cfg.backbone_checkpoint = b.value("checkpoint", std::string());
    if (b.contains("vision")) cfg.vision = vision_from_json(b.at("vision"));
    if (b.contains("text")) cfg.text = text_from_json(b.at("text"));
    cfg.logit_scale = b.value("logit_scale", cfg.logit_scale);
    cfg.backbone_seed = b.value("seed", cfg.backbone_seed);
  }
  if (j.contains("strategy")) strategy_from_json(j.at("strategy"), cfg);
  if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
  if (j.contains("episode")) cfg.episode = episode_from_json(j.at("episode"));

  if (j.contains("matrix")) {
    const json& m = j.at("matrix");
    check_keys(m, "matrix", {"strategies", "shots", "seeds"});
    if (m.contains("strategies")) {
      cfg.matrix_strategies.clear();
      for (const auto& name : m.at("strategies")) {
        cfg.matrix_strategies.push_back(strategy_from_string(name.get<std::string>()));
      }
    }
    if (m.contains("shots")) cfg.matrix_shots = m.at("shots").get<std::vector<std::int64_t>>();
    if (m.contains("seeds")) cfg.matrix_seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
  }
  if (j.contains("variance")) {
    const json& v = j.at("variance");
    check_keys(v, "variance", {"split", "runs"});
    cfg.variance_split = v.value("split", cfg.variance_split);
    if (v.contains("runs")) {
      for (const auto& r : v.at("runs")) cfg.gain_runs.emplace_back(r.get<std::string>());
    }
  }
  if (j.contains("attn_map")) {
    const json& a = j.at("attn_map");
    check_keys(a, "attn_map", {"layer", "image", "split"});
    cfg.map_layer = a.value("layer", cfg.map_layer);
    cfg.map_image = a.value("image", cfg.map_image);
    cfg.map_split = a.value("split", cfg.map_split);
  }
  if (j.contains("shift")) {
    const json& s = j.at("shift");
    check_keys(s, "shift", {"sigmas", "seed"});
    if (s.contains("sigmas")) cfg.shift_sigmas = s.at("sigmas").get<std::vector<double>>();
    cfg.shift_seed = s.value("seed", cfg.shift_seed);
  }

  if (cfg.train.dump_dir.empty() && !cfg.output_dir.empty()) {
    cfg.train.dump_dir = cfg.output_dir / "debug";
  }
  return cfg;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage:
      return 2;
    case ErrorKind::io:
    case ErrorKind::runtime:
      return 1;
    default:
      return 3;
  }
}

void check_referenced_paths(const ExperimentConfig& cfg) {
  auto need = [](const std::filesystem::path& p, const char* what) {
    if (!p.empty() && !std::filesystem::exists(p)) {
      throw config_error(std::string(what) + " does not exist: " + p.string());
    }
  };
  need(cfg.dataset_manifest, "dataset manifest");
  need(cfg.backbone_checkpoint, "backbone checkpoint");
  need(cfg.strategy_checkpoint, "strategy checkpoint");
  for (const auto& r : cfg.gain_runs) need(r, "runs file");
}

void apply_seed(ExperimentConfig& cfg, const std::string& cmd, std::uint64_t seed) {
  if (cmd == "gen-data") {
    cfg.synthetic.seed = seed;
  } else if (cmd == "init-backbone") {
    cfg.backbone_seed = seed;
  } else if (cmd == "matrix") {
    cfg.matrix_seeds = {seed};
  } else {
    cfg.strategy_seed = seed;
    cfg.train.seed = seed;
    cfg.episode.seed = seed;
  }
}

// ---- shared setup ----------------------------------------------------------

Dataset acquire_dataset(ExperimentConfig& cfg) {
  if (cfg.dataset_manifest.empty()) {
    const auto dir = cfg.output_dir / "data";
    generate_synthetic(cfg.synthetic, dir);
    cfg.dataset_manifest = dir / "manifest.json";
  }
  return load_dataset(cfg.dataset_manifest);
}

template <typename T>
DualEncoder<T> acquire_backbone(const ExperimentConfig& cfg) {
  if (!cfg.backbone_checkpoint.empty()) return load_backbone<T>(cfg.backbone_checkpoint);
  DualEncoder<T> enc = init_backbone<T>(cfg.vision, cfg.text, cfg.backbone_seed);
  enc.logit_scale = static_cast<T>(cfg.logit_scale);
  return enc;
}

template <typename T>
PromptStrategy<T> acquire_strategy(const ExperimentConfig& cfg, DualEncoder<T>& enc) {
  if (!cfg.strategy_checkpoint.empty()) return load_strategy<T>(cfg.strategy_checkpoint, enc);
  PromptStrategy<T> s(cfg.strategy, enc, cfg.strategy_seed);
  if (cfg.strategy.kind == StrategyKind::TextOnly || cfg.strategy.kind == StrategyKind::Joint) {
    s.init_text_from_template(enc);
  }
  return s;
}

void emit(std::ostream& out, const json& line) { out << line.dump() << "\n"; }

// ---- subcommands -----------------------------------------------------------

int cmd_gen_data(ExperimentConfig& cfg, std::ostream& out) {
  DatasetManifest manifest = generate_synthetic(cfg.synthetic, cfg.output_dir);
  cfg.dataset_manifest = cfg.output_dir / "manifest.json";
  write_effective_config(cfg);
  emit(out, {{"command", "gen-data"},
             {"manifest", cfg.dataset_manifest.string()},
             {"name", manifest.name},
             {"classes", manifest.classes()}});
  return 0;
}

template <typename T>
int cmd_init_backbone(ExperimentConfig& cfg, std::ostream& out) {
  write_effective_config(cfg);
  DualEncoder<T> enc = init_backbone<T>(cfg.vision, cfg.text, cfg.backbone_seed);
  enc.logit_scale = static_cast<T>(cfg.logit_scale);
  const auto dir = cfg.output_dir / "backbone";
  save_backbone(dir, enc);
  emit(out, {{"command", "init-backbone"},
             {"checkpoint", dir.string()},
             {"checksum", backbone_checksum(enc)}});
  return 0;
}

template <typename T>
int cmd_train(ExperimentConfig& cfg, std::ostream& out) {
  Dataset data = acquire_dataset(cfg);
  write_effective_config(cfg);
  DualEncoder<T> enc = acquire_backbone<T>(cfg);
  PromptStrategy<T> strategy = acquire_strategy<T>(cfg, enc);

  RunRecord rec = train(strategy, enc, data, cfg.episode, cfg.train);
  append_jsonl(cfg.output_dir / "runs.jsonl", rec);
  const auto ckpt = cfg.output_dir / "strategy";
  save_strategy(ckpt, strategy);
  emit(out, {{"command", "train"},
             {"strategy", rec.strategy},
             {"dataset", rec.dataset},
             {"shots", rec.shots},
             {"seed", rec.seed},
             {"parameter_count", rec.parameter_count},
             {"train_accuracy", rec.train_accuracy},
             {"test_accuracy", rec.test_accuracy},
             {"runs", (cfg.output_dir / "runs.jsonl").string()},
             {"checkpoint", ckpt.string()}});
  return 0;
}

template <typename T>
int cmd_eval(ExperimentConfig& cfg, std::ostream& out) {
  Dataset data = acquire_dataset(cfg);
  write_effective_config(cfg);
  DualEncoder<T> enc = acquire_backbone<T>(cfg);
  PromptStrategy<T> strategy = acquire_strategy<T>(cfg, enc);

  const double acc = evaluate(strategy, enc, data.class_names, data.split("test"));
  json line = {{"command", "eval"},
               {"strategy", to_string(strategy.kind())},
               {"dataset", data.name},
               {"split", "test"},
               {"accuracy", acc}};
  std::ofstream os(cfg.output_dir / "eval.json");
  if (!os) throw io_error("cannot write " + (cfg.output_dir / "eval.json").string());
  os << line.dump(2) << "\n";
  emit(out, line);
  return 0;
}

template <typename T>
int cmd_matrix(ExperimentConfig& cfg, std::ostream& out) {
  Dataset data = acquire_dataset(cfg);
  write_effective_config(cfg);
  DualEncoder<T> enc = acquire_backbone<T>(cfg);

  MatrixSpec spec;
  spec.strategies = cfg.matrix_strategies;
  spec.shot_counts = cfg.matrix_shots;
  spec.seeds = cfg.matrix_seeds;
  spec.prompt = cfg.strategy;
  spec.train = cfg.train;
  spec.threads = cfg.threads;
  std::vector<RunRecord> records = run_matrix(enc, data, spec);
  write_matrix_outputs(cfg.output_dir, records);

  std::int64_t failed = 0;
  for (const auto& r : records) {
    if (r.status != "ok") ++failed;
  }
  emit(out, {{"command", "matrix"},
             {"cells", records.size()},
             {"failed", failed},
             {"results", (cfg.output_dir / "results.csv").string()},
             {"summary", (cfg.output_dir / "summary.csv").string()},
             {"runs", (cfg.output_dir / "runs.jsonl").string()}});
  return 0;
}

template <typename T>
int cmd_variance(ExperimentConfig& cfg, std::ostream& out) {
  Dataset data = acquire_dataset(cfg);
  write_effective_config(cfg);
  DualEncoder<T> enc = acquire_backbone<T>(cfg);

  const DatasetSplit& split = data.split(cfg.variance_split);
  const std::int64_t n = split.images.extent(0);
  const std::int64_t d = enc.text.joint_dim;
  Tensor<T> features(n, d);
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor<T> z = encode_image_value(enc, image_at<T>(split, i));
    for (std::int64_t c = 0; c < d; ++c) features.at(i, c) = z[c];
  }
  VarianceReport report = intra_class_visual_variance(features, split.labels, data.classes());
  report.dataset = data.name;
  report.encoder_checksum = backbone_checksum(enc);
  ClassifierMatrix<T> cm = build_zero_shot_classifier(enc, data.class_names);
  report.var_t = inter_class_text_variance(cm);

  json rj = {{"dataset", report.dataset},
             {"split", cfg.variance_split},
             {"var_v", report.var_v},
             {"var_t", report.var_t},
             {"var_c", report.var_c},
             {"scalarization", report.scalarization},
             {"feature_space", report.feature_space},
             {"encoder_checksum", report.encoder_checksum}};
  std::ofstream os(cfg.output_dir / "variance.json");
  if (!os) throw io_error("cannot write " + (cfg.output_dir / "variance.json").string());
  os << rj.dump(2) << "\n";

  std::vector<std::vector<std::string>> rows;
  for (std::size_t c = 0; c < report.var_c.size(); ++c) {
    rows.push_back({data.class_names[c], csv_number(report.var_c[c])});
  }
  write_csv(cfg.output_dir / "variance.csv", {"class", "var_c"}, rows);

  json line = {{"command", "variance"},
               {"dataset", report.dataset},
               {"split", cfg.variance_split},
               {"var_v", report.var_v},
               {"var_t", report.var_t},
               {"report", (cfg.output_dir / "variance.json").string()}};
  if (!cfg.gain_runs.empty()) {
    std::vector<RunRecord> runs;
    for (const auto& path : cfg.gain_runs) {
      for (auto& r : read_jsonl(path)) runs.push_back(std::move(r));
    }
    std::map<std::string, VarianceReport> by_dataset{{report.dataset, report}};
    std::vector<GainRow> table = gain_vs_variance_table(runs, by_dataset);
    write_gain_table_csv(cfg.output_dir / "gain_table.csv", table);
    line["gain_table"] = (cfg.output_dir / "gain_table.csv").string();
  }
  emit(out, line);
  return 0;
}

template <typename T>
int cmd_attn_map(ExperimentConfig& cfg, std::ostream& out) {
  Dataset data = acquire_dataset(cfg);
  write_effective_config(cfg);
  DualEncoder<T> enc = acquire_backbone<T>(cfg);
  PromptStrategy<T> strategy = acquire_strategy<T>(cfg, enc);

  const DatasetSplit& split = data.split(cfg.map_split);
  const std::int64_t n = split.images.extent(0);
  if (cfg.map_image < 0 || cfg.map_image >= n) {
    throw index_error("image index " + std::to_string(cfg.map_image) + " out of range [0, " +
                      std::to_string(n) + ")");
  }
  Tensor<T> image = image_at<T>(split, cfg.map_image);
  AttentionMap<T> map = attention_response_map(enc, strategy, image, cfg.map_layer);
  const auto dir = cfg.output_dir / "attn_map";
  save_attention_map(dir, map);
  emit(out, {{"command", "attn-map"},
             {"layer", map.layer},
             {"heads", map.heads},
             {"prompt_rows", map.prompt_count},
             {"patch_cols", map.patch_count},
             {"grid", map.grid},
             {"dir", dir.string()}});
  return 0;
}

template <typename T>
int cmd_shift_eval(ExperimentConfig& cfg, std::ostream& out) {
  Dataset data = acquire_dataset(cfg);
  write_effective_config(cfg);
  DualEncoder<T> enc = acquire_backbone<T>(cfg);
  PromptStrategy<T> strategy = acquire_strategy<T>(cfg, enc);

  const bool fresh = cfg.strategy_checkpoint.empty();
  RunRecord rec;
  double source_acc = 0.0;
  if (fresh) {
    rec = train(strategy, enc, data, cfg.episode, cfg.train);
    source_acc = rec.test_accuracy;
  } else {
    source_acc = evaluate(strategy, enc, data.class_names, data.split("test"));
  }

  std::vector<ShiftTarget> targets;
  for (std::size_t i = 0; i < cfg.shift_sigmas.size(); ++i) {
    const double sigma = cfg.shift_sigmas[i];
    ShiftTarget target;
    target.name = "noise-" + csv_number(sigma);
    target.class_names = data.class_names;
    target.split = make_shifted_split(data.split("test"), sigma,
                                      SplitMix64::derive(cfg.shift_seed, i));
    targets.push_back(std::move(target));
  }
  ShiftReport report = evaluate_shifted(strategy, enc, data.class_names, targets);

  std::vector<std::vector<std::string>> rows;
  rows.push_back({"source", "0", csv_number(source_acc)});
  for (std::size_t i = 0; i < report.per_target.size(); ++i) {
    rows.push_back({report.per_target[i].first, csv_number(cfg.shift_sigmas[i]),
                    csv_number(report.per_target[i].second)});
  }
  rows.push_back({"ood-average", "", csv_number(report.ood_average)});
  write_csv(cfg.output_dir / "shift.csv", {"target", "sigma", "accuracy"}, rows);

  json targets_json = json::object();
  for (const auto& [name, acc] : report.per_target) targets_json[name] = acc;
  if (fresh) {
    for (const auto& [name, acc] : report.per_target) rec.shifted_accuracy[name] = acc;
    rec.ood_average = report.ood_average;
    append_jsonl(cfg.output_dir / "runs.jsonl", rec);
  }
  emit(out, {{"command", "shift-eval"},
             {"strategy", to_string(strategy.kind())},
             {"source_accuracy", source_acc},
             {"ood_average", report.ood_average},
             {"targets", targets_json},
             {"table", (cfg.output_dir / "shift.csv").string()}});
  return 0;
}

template <typename T>
int run_command(const std::string& cmd, ExperimentConfig& cfg, std::ostream& out) {
  if (cmd == "gen-data") return cmd_gen_data(cfg, out);
  if (cmd == "init-backbone") return cmd_init_backbone<T>(cfg, out);
  if (cmd == "train") return cmd_train<T>(cfg, out);
  if (cmd == "eval") return cmd_eval<T>(cfg, out);
  if (cmd == "matrix") return cmd_matrix<T>(cfg, out);
  if (cmd == "variance") return cmd_variance<T>(cfg, out);
  if (cmd == "attn-map") return cmd_attn_map<T>(cfg, out);
  if (cmd == "shift-eval") return cmd_shift_eval<T>(cfg, out);
  throw usage_error("unknown subcommand '" + cmd + "'");
}

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw config_error("cannot open config file " + file.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& ex) {
    throw config_error("config " + file.string() + ": " + ex.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& ex) {
    throw config_error("config " + file.string() + ": " + ex.what());
  }
}

nlohmann::json experiment_config_json(const ExperimentConfig& cfg) {
  json strategies = json::array();
  for (StrategyKind k : cfg.matrix_strategies) strategies.push_back(to_string(k));
  json runs = json::array();
  for (const auto& p : cfg.gain_runs) runs.push_back(p.string());
  return {{"schema_version", cfg.schema_version},
          {"output_dir", cfg.output_dir.string()},
          {"precision", cfg.precision},
          {"threads", cfg.threads},
          {"dataset",
           {{"manifest", cfg.dataset_manifest.string()}, {"synthetic", synthetic_json(cfg.synthetic)}}},
          {"backbone",
           {{"checkpoint", cfg.backbone_checkpoint.string()},
            {"vision", vision_json(cfg.vision)},
            {"text", text_json(cfg.text)},
            {"logit_scale", cfg.logit_scale},
            {"seed", cfg.backbone_seed}}},
          {"strategy", strategy_json(cfg)},
          {"train", train_json(cfg.train)},
          {"episode", {{"shots", cfg.episode.shots}, {"seed", cfg.episode.seed}}},
          {"matrix",
           {{"strategies", strategies}, {"shots", cfg.matrix_shots}, {"seeds", cfg.matrix_seeds}}},
          {"variance", {{"split", cfg.variance_split}, {"runs", runs}}},
          {"attn_map",
           {{"layer", cfg.map_layer}, {"image", cfg.map_image}, {"split", cfg.map_split}}},
          {"shift", {{"sigmas", cfg.shift_sigmas}, {"seed", cfg.shift_seed}}}};
}

void write_effective_config(const ExperimentConfig& cfg) {
  const auto path = cfg.output_dir / "effective_config.json";
  std::ofstream os(path);
  if (!os) throw io_error("cannot write " + path.string());
  os << experiment_config_json(cfg).dump(2) << "\n";
}

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"prompt-tuning experiments on a frozen dual encoder"};
  app.name("pft");

  std::uint64_t seed = 0;
  std::string precision;
  int threads = 0;
  auto* seed_opt = app.add_option("--seed", seed, "override the run-level seeds");
  auto* precision_opt = app.add_option("--precision", precision, "element type: f32 or f64");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads for grid cells");

  std::string config_path;
  const std::pair<const char*, const char*> commands[] = {
      {"gen-data", "generate a synthetic dataset"},
      {"init-backbone", "initialize and save a frozen backbone"},
      {"train", "train one strategy on a few-shot episode"},
      {"eval", "evaluate a strategy on the test split"},
      {"matrix", "run the strategies x shots x seeds grid"},
      {"variance", "measure visual/text variance statistics"},
      {"attn-map", "export prompt-to-patch attention maps"},
      {"shift-eval", "evaluate under additive-noise domain shift"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->fallthrough();
    sub->add_option("config", config_path, "experiment config JSON")->required();
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << json{{"error", "usage"}, {"message", ex.what()}}.dump() << "\n";
    return 2;
  }

  if (app.get_subcommands().empty()) {
    std::string names;
    for (const auto& [name, desc] : commands) {
      (void)desc;
      names += names.empty() ? name : std::string(", ") + name;
    }
    err << json{{"error", "usage"}, {"message", "expected one subcommand of: " + names}}.dump()
        << "\n";
    return 2;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (seed_opt->count() > 0) apply_seed(cfg, cmd, seed);
    if (precision_opt->count() > 0) {
      if (precision != "f32" && precision != "f64") {
        throw usage_error("precision must be f32 or f64, got '" + precision + "'");
      }
      cfg.precision = precision;
    }
    if (threads_opt->count() > 0) cfg.threads = threads;

    if (cfg.output_dir.empty()) throw config_error("output_dir is required");
    check_referenced_paths(cfg);
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw io_error("cannot create " + cfg.output_dir.string() + ": " + ec.message());

    if (cfg.precision == "f64") return run_command<double>(cmd, cfg, out);
    return run_command<float>(cmd, cfg, out);
  } catch (const Error& ex) {
    err << json{{"error", to_string(ex.kind())}, {"message", ex.what()}}.dump() << "\n";
    return exit_code(ex.kind());
  } catch (const std::exception& ex) {
    err << json{{"error", "runtime"}, {"message", ex.what()}}.dump() << "\n";
    return 1;
  }
}

}  // namespace pft
