#include "pft/dataset.hpp"

#include <fstream>

#include <json.hpp>

#include "pft/checksum.hpp"
#include "pft/errors.hpp"
#include "pft/rng.hpp"
#include "pft/tensor_io.hpp"
#include "pft/tokenizer.hpp"

namespace pft {

namespace {

constexpr std::uint64_t kNameStream = 0x6e616d65;
constexpr std::uint64_t kProtoStream = 0x70726f74;
constexpr std::uint64_t kSampleStream = 0x73616d70;
constexpr std::uint64_t kShiftStream = 0x73686676;

std::vector<std::string> build_class_names(const SyntheticSpec& spec) {
  const auto vocab = vocab_words();
  const std::int64_t shared =
      static_cast<std::int64_t>(std::llround(spec.name_overlap * static_cast<double>(spec.name_words)));
  const std::int64_t unique = spec.name_words - shared;
  const std::int64_t needed = shared + spec.classes * unique;
  if (needed > static_cast<std::int64_t>(vocab.size())) {
    throw config_error("class naming needs " + std::to_string(needed) +
                       " distinct words, vocabulary has " + std::to_string(vocab.size()));
  }

  std::vector<std::size_t> order(vocab.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 rng = SplitMix64::stream(spec.seed, kNameStream);
  rng.shuffle(order);

  std::size_t next = 0;
  std::vector<std::string> prefix_words;
  for (std::int64_t i = 0; i < shared; ++i) prefix_words.emplace_back(vocab[order[next++]]);

  std::vector<std::string> names;
  for (std::int64_t c = 0; c < spec.classes; ++c) {
    std::string name;
    for (const auto& w : prefix_words) {
      if (!name.empty()) name += ' ';
      name += w;
    }
    for (std::int64_t i = 0; i < unique; ++i) {
      if (!name.empty()) name += ' ';
      name += vocab[order[next++]];
    }
    names.push_back(std::move(name));
  }
  return names;
}

std::string file_checksum(const std::filesystem::path& p) { return sha256_hex_file(p); }

void write_split(const std::filesystem::path& dir, const std::string& which,
                 const SyntheticSpec& spec, const std::vector<TensorF>& prototypes,
                 std::int64_t per_class, std::uint64_t split_tag, DatasetManifest& manifest) {
  const std::int64_t hw = spec.image_size * spec.image_size;
  const std::int64_t count = per_class * spec.classes;
  TensorF images({count, spec.image_size, spec.image_size});
  TensorF labels({count});

  std::int64_t row = 0;
  for (std::int64_t c = 0; c < spec.classes; ++c) {
    SplitMix64 rng = SplitMix64::stream(spec.seed,
                                        kSampleStream ^ split_tag ^ static_cast<std::uint64_t>(c));
    const TensorF& proto = prototypes[static_cast<std::size_t>(c)];
    for (std::int64_t s = 0; s < per_class; ++s, ++row) {
      float* dst = images.data() + row * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        dst[i] = proto[i] + static_cast<float>(rng.next_normal() * spec.noise_sigma);
      }
      labels[row] = static_cast<float>(c);
    }
  }

  SplitRef ref;
  ref.images_file = which + "_images.pft";
  ref.labels_file = which + "_labels.pft";
  ref.count = count;
  save_tensor(dir / ref.images_file, images);
  save_tensor(dir / ref.labels_file, labels);
  ref.images_sha256 = file_checksum(dir / ref.images_file);
  ref.labels_sha256 = file_checksum(dir / ref.labels_file);
  manifest.splits[which] = ref;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (classes < 1) throw config_error("need at least one class");
  if (train_per_class < 1 || test_per_class < 1) {
    throw config_error("per-class sample counts must be >= 1");
  }
  if (image_size < 1) throw config_error("image_size must be >= 1");
  if (name_words < 1) throw config_error("name_words must be >= 1");
  if (noise_sigma < 0.0) throw config_error("noise_sigma must be >= 0");
  if (name_overlap < 0.0 || name_overlap > 1.0) {
    throw config_error("name_overlap must lie in [0, 1]");
  }
  if (prototype_scale <= 0.0) throw config_error("prototype_scale must be > 0");
}

const DatasetSplit& Dataset::split(const std::string& which) const {
  auto it = splits.find(which);
  if (it == splits.end()) throw data_error("dataset has no split '" + which + "'");
  return it->second;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  DatasetManifest manifest;
  manifest.name = spec.name;
  manifest.image_size = spec.image_size;
  manifest.class_names = build_class_names(spec);

  std::vector<TensorF> prototypes;
  for (std::int64_t c = 0; c < spec.classes; ++c) {
    SplitMix64 rng = SplitMix64::stream(spec.seed, kProtoStream ^ static_cast<std::uint64_t>(c));
    TensorF proto(spec.image_size, spec.image_size);
    for (std::int64_t i = 0; i < proto.numel(); ++i) {
      proto[i] = static_cast<float>(rng.next_normal() * spec.prototype_scale);
    }
    prototypes.push_back(std::move(proto));
  }

  write_split(dir, "train", spec, prototypes, spec.train_per_class, 0x7472, manifest);
  write_split(dir, "test", spec, prototypes, spec.test_per_class, 0x7465, manifest);

  nlohmann::json gen;
  gen["name"] = spec.name;
  gen["classes"] = spec.classes;
  gen["train_per_class"] = spec.train_per_class;
  gen["test_per_class"] = spec.test_per_class;
  gen["image_size"] = spec.image_size;
  gen["name_words"] = spec.name_words;
  gen["prototype_scale"] = spec.prototype_scale;
  gen["noise_sigma"] = spec.noise_sigma;
  gen["name_overlap"] = spec.name_overlap;
  gen["seed"] = spec.seed;
  manifest.generator_json = gen.dump();

  nlohmann::json j;
  j["schema_version"] = 1;
  j["name"] = manifest.name;
  j["image_size"] = manifest.image_size;
  j["class_names"] = manifest.class_names;
  j["generator"] = gen;
  for (const auto& [which, ref] : manifest.splits) {
    j["splits"][which] = {{"images", ref.images_file},
                          {"labels", ref.labels_file},
                          {"images_sha256", ref.images_sha256},
                          {"labels_sha256", ref.labels_sha256},
                          {"count", ref.count}};
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw io_error("cannot write " + (dir / "manifest.json").string());
  os << j.dump(2) << "\n";
  if (!os) throw io_error("write failed: " + (dir / "manifest.json").string());
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw io_error("cannot read " + manifest_path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw integrity_error("malformed manifest " + manifest_path.string() + ": " + ex.what());
  }
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.image_size = j.at("image_size").get<std::int64_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.contains("generator")) m.generator_json = j.at("generator").dump();
    for (const auto& [which, sj] : j.at("splits").items()) {
      SplitRef ref;
      ref.images_file = sj.at("images").get<std::string>();
      ref.labels_file = sj.at("labels").get<std::string>();
      ref.images_sha256 = sj.at("images_sha256").get<std::string>();
      ref.labels_sha256 = sj.at("labels_sha256").get<std::string>();
      ref.count = sj.at("count").get<std::int64_t>();
      m.splits[which] = ref;
    }
  } catch (const nlohmann::json::exception& ex) {
    throw integrity_error("manifest " + manifest_path.string() +
                          " missing required fields: " + ex.what());
  }
  if (m.class_names.empty()) throw data_error("manifest lists no classes");
  return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();

  Dataset ds;
  ds.name = m.name;
  ds.image_size = m.image_size;
  ds.class_names = m.class_names;

  for (const auto& [which, ref] : m.splits) {
    const auto images_path = dir / ref.images_file;
    const auto labels_path = dir / ref.labels_file;
    if (sha256_hex_file(images_path) != ref.images_sha256) {
      throw integrity_error("checksum mismatch for " + images_path.string());
    }
    if (sha256_hex_file(labels_path) != ref.labels_sha256) {
      throw integrity_error("checksum mismatch for " + labels_path.string());
    }
    DatasetSplit split;
    split.images = load_tensor<float>(images_path);
    TensorF labels = load_tensor<float>(labels_path);
    if (split.images.rank() != 3 || split.images.extent(0) != ref.count ||
        split.images.extent(1) != m.image_size || split.images.extent(2) != m.image_size) {
      throw data_error("split '" + which + "' images have shape " +
                       shape_to_string(split.images.shape()) + ", manifest says " +
                       std::to_string(ref.count) + "x" + std::to_string(m.image_size) + "x" +
                       std::to_string(m.image_size));
    }
    if (labels.rank() != 1 || labels.extent(0) != ref.count) {
      throw data_error("split '" + which + "' labels have shape " +
                       shape_to_string(labels.shape()) + ", manifest says " +
                       std::to_string(ref.count));
    }
    split.labels.resize(static_cast<std::size_t>(ref.count));
    for (std::int64_t i = 0; i < ref.count; ++i) {
      const auto label = static_cast<std::int64_t>(labels[i]);
      if (static_cast<float>(label) != labels[i] || label < 0 || label >= m.classes()) {
        throw data_error("split '" + which + "' label " + std::to_string(labels[i]) +
                         " at index " + std::to_string(i) + " is outside [0, " +
                         std::to_string(m.classes()) + ")");
      }
      split.labels[static_cast<std::size_t>(i)] = label;
    }
    ds.splits[which] = std::move(split);
  }
  return ds;
}

DatasetSplit make_shifted_split(const DatasetSplit& source, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw config_error("shift sigma must be >= 0");
  DatasetSplit out;
  out.labels = source.labels;
  out.images = source.images;
  SplitMix64 rng = SplitMix64::stream(seed, kShiftStream);
  for (std::int64_t i = 0; i < out.images.numel(); ++i) {
    out.images[i] += static_cast<float>(rng.next_normal() * sigma);
  }
  return out;
}

}  // namespace pft
