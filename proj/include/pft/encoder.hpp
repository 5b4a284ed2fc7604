#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pft/checksum.hpp"
#include "pft/errors.hpp"
#include "pft/nn_ops.hpp"
#include "pft/rng.hpp"
#include "pft/tape.hpp"
#include "pft/tensor.hpp"
#include "pft/tensor_io.hpp"
#include "pft/tokenizer.hpp"

namespace pft {

struct VisionConfig {
  std::int64_t image_size = 32;
  std::int64_t patch_size = 8;
  std::int64_t layers = 4;
  std::int64_t width = 64;  // token width d_v
  std::int64_t heads = 4;
  std::int64_t joint_dim = 32;

  std::int64_t grid() const { return image_size / patch_size; }
  std::int64_t patch_tokens() const { return grid() * grid(); }
  std::int64_t patch_dim() const { return patch_size * patch_size; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || layers <= 0 || width <= 0 || heads <= 0 ||
        joint_dim <= 0) {
      throw config_error("vision config fields must be positive");
    }
    if (image_size % patch_size != 0) {
      throw config_error("image_size " + std::to_string(image_size) +
                         " not divisible by patch_size " + std::to_string(patch_size));
    }
    if (width % heads != 0) {
      throw config_error("vision width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
  }
};

struct TextConfig {
  std::int64_t vocab_size = 260;
  std::int64_t context_length = 16;
  std::int64_t layers = 4;
  std::int64_t width = 64;  // token width d_t
  std::int64_t heads = 4;
  std::int64_t joint_dim = 32;

  void validate() const {
    if (vocab_size <= 4 || context_length < 3 || layers <= 0 || width <= 0 || heads <= 0 ||
        joint_dim <= 0) {
      throw config_error("text config fields out of range");
    }
    if (width % heads != 0) {
      throw config_error("text width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
  }
};

// One pre-norm Transformer block: x += attn(ln1(x)); x += ffn(ln2(x)).
template <typename T>
struct EncoderBlock {
  LayerNormParams<T> ln1;
  AttentionParams<T> attn;
  LayerNormParams<T> ln2;
  FeedForwardParams<T> ffn;

  static EncoderBlock init(const std::string& prefix, std::int64_t dim, SplitMix64& rng,
                           bool trainable) {
    EncoderBlock b;
    b.ln1 = LayerNormParams<T>::init(prefix + ".ln1", dim, trainable);
    b.attn = AttentionParams<T>::init(prefix + ".attn", dim, rng, trainable);
    b.ln2 = LayerNormParams<T>::init(prefix + ".ln2", dim, trainable);
    b.ffn = FeedForwardParams<T>::init(prefix + ".ffn", dim, dim * kFfnExpansion, rng, trainable);
    return b;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    for (auto* p : ln1.params()) out.push_back(p);
    for (auto* p : attn.params()) out.push_back(p);
    for (auto* p : ln2.params()) out.push_back(p);
    for (auto* p : ffn.params()) out.push_back(p);
  }
};

// Frozen dual tower. Both encoders emit unit-norm vectors in a shared
// joint space; classification multiplies cosines by logit_scale before the
// softmax.
template <typename T>
struct DualEncoder {
  VisionConfig vision;
  TextConfig text;
  T logit_scale = T(100);

  Parameter<T> patch_weight;  // [patch_dim x d_v]
  Parameter<T> patch_bias;    // [d_v]
  Parameter<T> class_token;   // [1 x d_v]
  Parameter<T> vis_pos;       // [(1+s) x d_v]
  LayerNormParams<T> vis_ln_pre;
  std::vector<EncoderBlock<T>> vis_blocks;
  LayerNormParams<T> vis_ln_post;
  Parameter<T> vis_proj;  // [d_v x d]

  Parameter<T> token_embedding;  // [vocab x d_t]
  Parameter<T> txt_pos;          // [context x d_t]
  std::vector<EncoderBlock<T>> txt_blocks;
  LayerNormParams<T> txt_ln_final;
  Parameter<T> txt_proj;  // [d_t x d]

  // Fixed traversal order; drives checkpoints and the frozen checksum.
  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out{&patch_weight, &patch_bias, &class_token, &vis_pos};
    for (auto* p : vis_ln_pre.params()) out.push_back(p);
    for (auto& b : vis_blocks) b.collect(out);
    for (auto* p : vis_ln_post.params()) out.push_back(p);
    out.push_back(&vis_proj);
    out.push_back(&token_embedding);
    out.push_back(&txt_pos);
    for (auto& b : txt_blocks) b.collect(out);
    for (auto* p : txt_ln_final.params()) out.push_back(p);
    out.push_back(&txt_proj);
    return out;
  }
};

template <typename T>
DualEncoder<T> init_backbone(const VisionConfig& vision, const TextConfig& text,
                             std::uint64_t seed) {
  vision.validate();
  text.validate();
  if (vision.joint_dim != text.joint_dim) {
    throw config_error("vision and text joint_dim differ: " + std::to_string(vision.joint_dim) +
                       " vs " + std::to_string(text.joint_dim));
  }

  DualEncoder<T> e;
  e.vision = vision;
  e.text = text;

  SplitMix64 vrng = SplitMix64::stream(seed, 0x76697331);
  const std::int64_t dv = vision.width;
  e.patch_weight = Parameter<T>("visual.patch.w", random_normal<T>({vision.patch_dim(), dv}, vrng, init_std(vision.patch_dim())), false);
  e.patch_bias = Parameter<T>("visual.patch.b", Tensor<T>({dv}), false);
  e.class_token = Parameter<T>("visual.cls", random_normal<T>({1, dv}, vrng), false);
  e.vis_pos = Parameter<T>("visual.pos", random_normal<T>({1 + vision.patch_tokens(), dv}, vrng), false);
  e.vis_ln_pre = LayerNormParams<T>::init("visual.ln_pre", dv, false);
  for (std::int64_t i = 0; i < vision.layers; ++i) {
    e.vis_blocks.push_back(
        EncoderBlock<T>::init("visual.block" + std::to_string(i), dv, vrng, false));
  }
  e.vis_ln_post = LayerNormParams<T>::init("visual.ln_post", dv, false);
  e.vis_proj = Parameter<T>("visual.proj",
                             random_normal<T>({dv, vision.joint_dim}, vrng, init_std(dv)), false);

  SplitMix64 trng = SplitMix64::stream(seed, 0x74657874);
  const std::int64_t dt = text.width;
  e.token_embedding =
      Parameter<T>("text.token_embedding", random_normal<T>({text.vocab_size, dt}, trng), false);
  e.txt_pos = Parameter<T>("text.pos", random_normal<T>({text.context_length, dt}, trng), false);
  for (std::int64_t i = 0; i < text.layers; ++i) {
    e.txt_blocks.push_back(
        EncoderBlock<T>::init("text.block" + std::to_string(i), dt, trng, false));
  }
  e.txt_ln_final = LayerNormParams<T>::init("text.ln_final", dt, false);
  e.txt_proj = Parameter<T>("text.proj",
                             random_normal<T>({dt, text.joint_dim}, trng, init_std(dt)), false);
  return e;
}

// ---- prompt plans (materialized per tape by the strategy layer) --------

// Visual prompt rows, [n x d_v] each. Shallow: one tensor inserted between
// the class token and the patches at the first block; its outputs propagate.
// Deep: every block's input has its prompt rows replaced by that
// block's fresh tensor.
struct VisualPromptPlan {
  std::vector<Var> per_layer;
  bool deep = false;
  std::int64_t count = 0;
};

// Text prompt rows, [m x d_t] each. `embedding` replaces the template word
// embeddings before the positional add (input-layer prompting). `deep`, when
// non-empty, holds one tensor per block after the first whose input rows
// 1..m are replaced outright.
struct TextPromptPlan {
  Var embedding{};
  std::vector<Var> deep;
  std::int64_t length = 0;
};

// ---- image tower --------------------------------------------------------

// Flattens non-overlapping patches row-major, [s x patch*patch].
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, const VisionConfig& cfg) {
  if (image.rank() == 3 && image.extent(2) != 1) {
    throw dimension_error("expected a single-channel image, got " +
                          shape_to_string(image.shape()));
  }
  if (image.rank() < 2 || image.extent(0) != cfg.image_size || image.extent(1) != cfg.image_size) {
    throw dimension_error("expected a " + std::to_string(cfg.image_size) + "x" +
                          std::to_string(cfg.image_size) + " image, got " +
                          shape_to_string(image.shape()));
  }
  const std::int64_t g = cfg.grid(), p = cfg.patch_size;
  Tensor<T> out(cfg.patch_tokens(), cfg.patch_dim());
  for (std::int64_t py = 0; py < g; ++py) {
    for (std::int64_t px = 0; px < g; ++px) {
      T* dst = out.row_ptr(py * g + px);
      for (std::int64_t y = 0; y < p; ++y) {
        for (std::int64_t x = 0; x < p; ++x) {
          dst[y * p + x] = image[(py * p + y) * cfg.image_size + (px * p + x)];
        }
      }
    }
  }
  return out;
}

// Class token + linearly projected patches + positional embeddings,
// [1+s x d_v].
template <typename T>
Var patch_embed(Tape<T>& t, DualEncoder<T>& e, const Tensor<T>& image) {
  Var patches = t.input(extract_patches(image, e.vision));
  Var projected = t.add_rowwise(t.matmul(patches, t.param(e.patch_weight)), t.param(e.patch_bias));
  Var tokens = t.concat_rows({t.param(e.class_token), projected});
  return t.add(tokens, t.param(e.vis_pos));
}

template <typename T>
Var vit_layer_forward(Tape<T>& t, EncoderBlock<T>& block, Var x, std::int64_t heads,
                      AttentionCapture<T>* capture = nullptr) {
  Var normed = t.layer_norm(x, t.param(block.ln1.gamma), t.param(block.ln1.beta), T(kLayerNormEps));
  auto attn = AttentionVars<T>::bind(t, block.attn);
  x = t.add(x, multi_head_attention(t, normed, normed, normed, attn, heads, capture));
  Var normed2 =
      t.layer_norm(x, t.param(block.ln2.gamma), t.param(block.ln2.beta), T(kLayerNormEps));
  auto ffn = FeedForwardVars<T>::bind(t, block.ffn);
  return t.add(x, feed_forward(t, normed2, ffn));
}

namespace detail {

template <typename T>
void validate_visual_plan(const Tape<T>& t, const DualEncoder<T>& e, const VisualPromptPlan& plan) {
  if (plan.count < 0) throw config_error("visual prompt count must be >= 0");
  if (plan.count == 0) {
    if (!plan.per_layer.empty()) {
      throw config_error("visual prompt plan with count 0 must carry no tensors");
    }
    return;
  }
  const std::size_t want = plan.deep ? static_cast<std::size_t>(e.vision.layers) : 1u;
  if (plan.per_layer.size() != want) {
    throw config_error("visual prompt plan supplies " + std::to_string(plan.per_layer.size()) +
                       " tensors for " + std::to_string(want) + " insertion layers");
  }
  for (Var v : plan.per_layer) {
    const auto& pv = t.value(v);
    if (pv.rank() != 2 || pv.rows() != plan.count || pv.cols() != e.vision.width) {
      throw dimension_error("visual prompt tensor is " + shape_to_string(pv.shape()) +
                            ", expected [" + std::to_string(plan.count) + "x" +
                            std::to_string(e.vision.width) + "]");
    }
  }
}

template <typename T>
void validate_text_plan(const Tape<T>& t, const DualEncoder<T>& e, const TextPromptPlan& plan,
                        std::int64_t eos_pos) {
  if (plan.length < 1) throw config_error("text prompt length must be >= 1");
  if (!plan.embedding.valid()) throw config_error("text prompt plan missing embedding tensor");
  if (!plan.deep.empty() &&
      plan.deep.size() != static_cast<std::size_t>(e.text.layers) - 1) {
    throw config_error("deep text prompt plan supplies " + std::to_string(plan.deep.size()) +
                       " tensors for " + std::to_string(e.text.layers - 1) + " later blocks");
  }
  if (eos_pos < plan.length + 2) {
    throw length_error("prompt length " + std::to_string(plan.length) +
                       " leaves no class tokens before EOS at " + std::to_string(eos_pos));
  }
  std::vector<Var> all{plan.embedding};
  all.insert(all.end(), plan.deep.begin(), plan.deep.end());
  for (Var v : all) {
    const auto& pv = t.value(v);
    if (pv.rank() != 2 || pv.rows() != plan.length || pv.cols() != e.text.width) {
      throw dimension_error("text prompt tensor is " + shape_to_string(pv.shape()) +
                            ", expected [" + std::to_string(plan.length) + "x" +
                            std::to_string(e.text.width) + "]");
    }
  }
}

// Replaces rows [1, 1+count) of x.
template <typename T>
Var replace_rows_after_first(Tape<T>& t, Var x, Var rows, std::int64_t count) {
  const std::int64_t total = t.value(x).rows();
  return t.concat_rows({t.row(x, 0), rows, t.slice_rows(x, 1 + count, total - 1 - count)});
}

}  // namespace detail

// Full image tower: returns the unit-norm joint-space feature, [1 x d].
template <typename T>
Var encode_image(Tape<T>& t, DualEncoder<T>& e, const Tensor<T>& image,
                 const VisualPromptPlan* plan = nullptr,
                 std::vector<AttentionCapture<T>>* captures = nullptr) {
  if (plan) detail::validate_visual_plan(t, e, *plan);
  const bool prompted = plan && plan->count > 0;

  Var x = patch_embed(t, e, image);
  x = t.layer_norm(x, t.param(e.vis_ln_pre.gamma), t.param(e.vis_ln_pre.beta), T(kLayerNormEps));
  if (prompted) {
    const std::int64_t s = e.vision.patch_tokens();
    x = t.concat_rows({t.row(x, 0), plan->per_layer[0], t.slice_rows(x, 1, s)});
  }
  if (captures) captures->assign(static_cast<std::size_t>(e.vision.layers), {});
  for (std::int64_t i = 0; i < e.vision.layers; ++i) {
    if (prompted && plan->deep && i > 0) {
      x = detail::replace_rows_after_first(t, x, plan->per_layer[static_cast<std::size_t>(i)],
                                           plan->count);
    }
    x = vit_layer_forward(t, e.vis_blocks[static_cast<std::size_t>(i)], x, e.vision.heads,
                          captures ? &(*captures)[static_cast<std::size_t>(i)] : nullptr);
  }
  Var cls = t.row(x, 0);
  cls = t.layer_norm(cls, t.param(e.vis_ln_post.gamma), t.param(e.vis_ln_post.beta),
                     T(kLayerNormEps));
  return t.l2_normalize_rows(t.matmul(cls, t.param(e.vis_proj)));
}

// Full text tower: reads the representation at the EOS position, [1 x d].
template <typename T>
Var encode_text(Tape<T>& t, DualEncoder<T>& e, const std::vector<std::int64_t>& ids,
                const TextPromptPlan* plan = nullptr) {
  if (static_cast<std::int64_t>(ids.size()) != e.text.context_length) {
    throw dimension_error("token sequence length " + std::to_string(ids.size()) +
                          " != context_length " + std::to_string(e.text.context_length));
  }
  const std::int64_t eos = Tokenizer::eos_position(ids);
  if (plan) detail::validate_text_plan(t, e, *plan, eos);

  Var x = t.gather_rows(t.param(e.token_embedding), ids);
  if (plan) x = detail::replace_rows_after_first(t, x, plan->embedding, plan->length);
  x = t.add(x, t.param(e.txt_pos));
  for (std::int64_t i = 0; i < e.text.layers; ++i) {
    if (plan && !plan->deep.empty() && i > 0) {
      x = detail::replace_rows_after_first(t, x, plan->deep[static_cast<std::size_t>(i) - 1],
                                           plan->length);
    }
    x = vit_layer_forward(t, e.txt_blocks[static_cast<std::size_t>(i)], x, e.text.heads);
  }
  Var at_eos = t.row(x, eos);
  at_eos = t.layer_norm(at_eos, t.param(e.txt_ln_final.gamma), t.param(e.txt_ln_final.beta),
                        T(kLayerNormEps));
  return t.l2_normalize_rows(t.matmul(at_eos, t.param(e.txt_proj)));
}

// Value-only wrappers for callers that never backpropagate.
template <typename T>
Tensor<T> encode_image_value(DualEncoder<T>& e, const Tensor<T>& image) {
  Tape<T> t;
  return t.value(encode_image(t, e, image));
}

template <typename T>
Tensor<T> encode_text_value(DualEncoder<T>& e, const std::vector<std::int64_t>& ids) {
  Tape<T> t;
  return t.value(encode_text(t, e, ids));
}

// ---- classification -----------------------------------------------------

// Unit-norm text embedding per class as columns of W, [d x k].
template <typename T>
struct ClassifierMatrix {
  Tensor<T> w;
  std::vector<std::string> class_names;

  std::int64_t classes() const { return w.cols(); }
};

template <typename T>
ClassifierMatrix<T> build_zero_shot_classifier(DualEncoder<T>& e,
                                               const std::vector<std::string>& class_names) {
  if (class_names.empty()) throw data_error("no class names for the classifier");
  Tokenizer tok(e.text.context_length);
  const std::int64_t d = e.text.joint_dim;
  const std::int64_t k = static_cast<std::int64_t>(class_names.size());
  ClassifierMatrix<T> cm;
  cm.class_names = class_names;
  cm.w = Tensor<T>(d, k);
  for (std::int64_t c = 0; c < k; ++c) {
    auto ids = tok.encode(std::string(kPromptTemplate) + " " +
                          class_names[static_cast<std::size_t>(c)]);
    Tensor<T> w = encode_text_value(e, ids);
    for (std::int64_t i = 0; i < d; ++i) cm.w.at(i, c) = w[i];
  }
  return cm;
}

// probs = softmax(logit_scale * W^T z); z is a length-d unit vector.
template <typename T>
Tensor<T> cosine_classify(const Tensor<T>& z, const ClassifierMatrix<T>& cm, T logit_scale) {
  const std::int64_t d = cm.w.rows(), k = cm.w.cols();
  if (z.numel() != d) {
    throw dimension_error("feature length " + std::to_string(z.numel()) +
                          " != classifier dim " + std::to_string(d));
  }
  Tape<T> t;
  Tensor<T> logits(1, k);
  for (std::int64_t c = 0; c < k; ++c) {
    T s = 0;
    for (std::int64_t i = 0; i < d; ++i) s += z[i] * cm.w.at(i, c);
    logits.at(0, c) = s * logit_scale;
  }
  Tensor<T> probs = t.value(t.softmax(t.input(std::move(logits))));
  Tensor<T> out({k});
  for (std::int64_t c = 0; c < k; ++c) out[c] = probs.at(0, c);
  return out;
}

// ---- persistence and integrity ------------------------------------------

template <typename T>
std::string backbone_checksum(DualEncoder<T>& e) {
  Sha256Stream stream;
  for (Parameter<T>* p : e.parameters()) {
    stream.update(p->name.data(), p->name.size());
    stream.update(p->value.data(),
                  static_cast<std::size_t>(p->value.numel()) * sizeof(T));
  }
  return stream.finish_hex();
}

template <typename T>
void save_backbone(const std::filesystem::path& dir, DualEncoder<T>& e) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  nlohmann::json header;
  header["schema_version"] = 1;
  header["vision"] = {{"image_size", e.vision.image_size}, {"patch_size", e.vision.patch_size},
                      {"layers", e.vision.layers},         {"width", e.vision.width},
                      {"heads", e.vision.heads},           {"joint_dim", e.vision.joint_dim}};
  header["text"] = {{"vocab_size", e.text.vocab_size}, {"context_length", e.text.context_length},
                    {"layers", e.text.layers},         {"width", e.text.width},
                    {"heads", e.text.heads},           {"joint_dim", e.text.joint_dim}};
  header["logit_scale"] = static_cast<double>(e.logit_scale);
  header["element_width"] = sizeof(T);
  header["checksum"] = backbone_checksum(e);
  nlohmann::json params = nlohmann::json::array();
  for (Parameter<T>* p : e.parameters()) {
    params.push_back({{"name", p->name}, {"shape", p->value.shape()}});
    save_tensor(dir / (p->name + ".pft"), p->value);
  }
  header["parameters"] = params;
  std::ofstream os(dir / "backbone.json");
  if (!os) throw io_error("cannot write " + (dir / "backbone.json").string());
  os << header.dump(2) << "\n";
}

template <typename T>
DualEncoder<T> load_backbone(const std::filesystem::path& dir) {
  std::ifstream is(dir / "backbone.json");
  if (!is) throw io_error("cannot read " + (dir / "backbone.json").string());
  nlohmann::json header;
  try {
    is >> header;
  } catch (const nlohmann::json::exception& ex) {
    throw integrity_error("malformed backbone header: " + std::string(ex.what()));
  }

  VisionConfig v;
  const auto& hv = header.at("vision");
  v.image_size = hv.at("image_size");
  v.patch_size = hv.at("patch_size");
  v.layers = hv.at("layers");
  v.width = hv.at("width");
  v.heads = hv.at("heads");
  v.joint_dim = hv.at("joint_dim");
  TextConfig tc;
  const auto& ht = header.at("text");
  tc.vocab_size = ht.at("vocab_size");
  tc.context_length = ht.at("context_length");
  tc.layers = ht.at("layers");
  tc.width = ht.at("width");
  tc.heads = ht.at("heads");
  tc.joint_dim = ht.at("joint_dim");

  DualEncoder<T> e = init_backbone<T>(v, tc, 0);
  e.logit_scale = static_cast<T>(header.at("logit_scale").get<double>());
  for (Parameter<T>* p : e.parameters()) {
    Tensor<T> loaded = load_tensor<T>(dir / (p->name + ".pft"));
    if (!loaded.same_shape(p->value)) {
      throw integrity_error("checkpoint tensor " + p->name + " has shape " +
                            shape_to_string(loaded.shape()) + ", expected " +
                            shape_to_string(p->value.shape()));
    }
    p->value = std::move(loaded);
    p->zero_grad();
  }
  // The checksum covers raw element bytes, so it is only comparable when
  // the load width matches the stored width.
  if (header.at("element_width").get<std::size_t>() == sizeof(T)) {
    const std::string want = header.at("checksum").get<std::string>();
    const std::string got = backbone_checksum(e);
    if (want != got) {
      throw integrity_error("backbone checksum mismatch: header " + want + ", tensors " + got);
    }
  }
  return e;
}

}  // namespace pft
