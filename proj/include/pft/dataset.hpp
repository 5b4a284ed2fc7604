#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pft/tensor.hpp"

namespace pft {

// Generator knobs. noise_sigma drives intra-class visual variance;
// name_overlap drives inter-class text variance (higher overlap -> class
// names share more words -> text embeddings collapse toward each other).
struct SyntheticSpec {
  std::string name = "synthetic";
  std::int64_t classes = 5;
  std::int64_t train_per_class = 32;
  std::int64_t test_per_class = 16;
  std::int64_t image_size = 32;
  std::int64_t name_words = 4;
  double prototype_scale = 1.0;
  double noise_sigma = 0.3;  // sigma_v
  double name_overlap = 0.0;  // rho in [0, 1]
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitRef {
  std::string images_file;
  std::string labels_file;
  std::string images_sha256;
  std::string labels_sha256;
  std::int64_t count = 0;
};

struct DatasetManifest {
  std::string name;
  std::int64_t image_size = 0;
  std::vector<std::string> class_names;
  std::map<std::string, SplitRef> splits;
  std::string generator_json;  // spec echo for synthetic sets, else empty

  std::int64_t classes() const { return static_cast<std::int64_t>(class_names.size()); }
};

struct DatasetSplit {
  TensorF images;  // [count x H x W]
  std::vector<std::int64_t> labels;
};

struct Dataset {
  std::string name;
  std::int64_t image_size = 0;
  std::vector<std::string> class_names;
  std::map<std::string, DatasetSplit> splits;

  std::int64_t classes() const { return static_cast<std::int64_t>(class_names.size()); }
  const DatasetSplit& split(const std::string& which) const;
};

// Copies one [H x W] image out of a split.
template <typename T>
Tensor<T> image_at(const DatasetSplit& split, std::int64_t index) {
  const std::int64_t h = split.images.extent(1), w = split.images.extent(2);
  Tensor<T> out(h, w);
  const float* src = split.images.data() + index * h * w;
  for (std::int64_t i = 0; i < h * w; ++i) out[i] = static_cast<T>(src[i]);
  return out;
}

// Writes images/labels/manifest.json under dir and returns the manifest.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

// Loads and checksum-verifies a generated dataset.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Additive-noise domain shift of a split, deterministic under seed.
DatasetSplit make_shifted_split(const DatasetSplit& source, double sigma, std::uint64_t seed);

}  // namespace pft
