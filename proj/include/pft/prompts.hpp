#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pft/encoder.hpp"
#include "pft/errors.hpp"
#include "pft/nn_ops.hpp"
#include "pft/tape.hpp"
#include "pft/tensor_io.hpp"

namespace pft {

enum class StrategyKind {
  ZeroShot,
  TextOnly,
  VptShallow,
  VptDeep,
  Joint,
  Shared,
  Mlp,
  Unified,
};

inline const char* to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::ZeroShot:   return "zero-shot";
    case StrategyKind::TextOnly:   return "text-only";
    case StrategyKind::VptShallow: return "vpt-shallow";
    case StrategyKind::VptDeep:    return "vpt-deep";
    case StrategyKind::Joint:      return "joint";
    case StrategyKind::Shared:     return "shared";
    case StrategyKind::Mlp:        return "mlp";
    case StrategyKind::Unified:    return "unified";
  }
  return "unknown";
}

inline StrategyKind strategy_from_string(const std::string& s) {
  for (StrategyKind k : {StrategyKind::ZeroShot, StrategyKind::TextOnly, StrategyKind::VptShallow,
                         StrategyKind::VptDeep, StrategyKind::Joint, StrategyKind::Shared,
                         StrategyKind::Mlp, StrategyKind::Unified}) {
    if (s == to_string(k)) return k;
  }
  throw config_error("unknown strategy '" + s + "'");
}

inline std::vector<StrategyKind> all_strategies() {
  return {StrategyKind::ZeroShot, StrategyKind::TextOnly, StrategyKind::VptShallow,
          StrategyKind::VptDeep,  StrategyKind::Joint,    StrategyKind::Shared,
          StrategyKind::Mlp,      StrategyKind::Unified};
}

inline std::vector<StrategyKind> trainable_strategies() {
  return {StrategyKind::TextOnly, StrategyKind::VptShallow, StrategyKind::VptDeep,
          StrategyKind::Joint,    StrategyKind::Shared,     StrategyKind::Mlp,
          StrategyKind::Unified};
}

struct StrategyConfig {
  StrategyKind kind = StrategyKind::ZeroShot;
  std::int64_t text_len = 4;     // m, text prompt rows
  std::int64_t visual_len = 4;   // n, visual prompt rows (also the shared length)
  std::int64_t unified_len = 8;  // n_u, unified prompt rows before the split
  std::int64_t split_index = 4;  // rows routed to the text side
  std::int64_t unified_width = 0;    // d_u; 0 means "text width"
  std::int64_t transform_heads = 1;  // heads of the lightweight transform
  bool residual_ln = true;     // residual-branch LN form (see unified_transform)
};

// The lightweight transform applied to each unified prompt set. With
// residual_ln (the default):
//   U' = SA(U) + LN1(U)
//   U_hat = FFN(LN2(U')) + LN2(U')
// with the LN2(U') value computed once and reused for both terms. The
// standard pre-norm alternative (flag off) is
//   U' = SA(LN1(U)) + U
//   U_hat = FFN(LN2(U')) + U'.
template <typename T>
struct PromptTransformer {
  AttentionParams<T> attn;
  LayerNormParams<T> ln1, ln2;
  FeedForwardParams<T> ffn;
  std::int64_t heads = 1;
  bool residual_ln = true;

  static PromptTransformer init(std::int64_t width, SplitMix64& rng, std::int64_t heads,
                                bool residual_ln) {
    if (heads <= 0 || width % heads != 0) {
      throw config_error("transform width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
    PromptTransformer p;
    p.heads = heads;
    p.residual_ln = residual_ln;
    p.attn = AttentionParams<T>::init("transform.attn", width, rng, true);
    p.ln1 = LayerNormParams<T>::init("transform.ln1", width, true);
    p.ln2 = LayerNormParams<T>::init("transform.ln2", width, true);
    p.ffn = FeedForwardParams<T>::init("transform.ffn", width, width * kFfnExpansion, rng, true);
    return p;
  }

  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> out;
    for (auto* p : attn.params()) out.push_back(p);
    for (auto* p : ln1.params()) out.push_back(p);
    for (auto* p : ln2.params()) out.push_back(p);
    for (auto* p : ffn.params()) out.push_back(p);
    return out;
  }
};

template <typename T>
Var unified_transform(Tape<T>& t, Var u, PromptTransformer<T>& theta) {
  const Tensor<T>& uv = t.value(u);
  if (uv.rank() != 2 || uv.cols() % theta.heads != 0) {
    throw dimension_error("unified prompt shape " + shape_to_string(uv.shape()) +
                          " does not fit the transform");
  }
  auto attn = AttentionVars<T>::bind(t, theta.attn);
  auto ln1 = LayerNormVars<T>::bind(t, theta.ln1);
  auto ln2 = LayerNormVars<T>::bind(t, theta.ln2);
  auto ffn = FeedForwardVars<T>::bind(t, theta.ffn);

  Var u_mid;
  if (theta.residual_ln) {
    u_mid = t.add(multi_head_attention(t, u, u, u, attn, theta.heads), layer_norm(t, u, ln1));
    Var normed = layer_norm(t, u_mid, ln2);
    return t.add(feed_forward(t, normed, ffn), normed);
  }
  Var normed1 = layer_norm(t, u, ln1);
  u_mid = t.add(multi_head_attention(t, normed1, normed1, normed1, attn, theta.heads), u);
  return t.add(feed_forward(t, layer_norm(t, u_mid, ln2), ffn), u_mid);
}

// First `split_index` rows to the text side, the rest to the visual side.
// The pieces are the un-projected halves; concatenated back they reproduce
// the input exactly.
template <typename T>
std::pair<Var, Var> split_unified(Tape<T>& t, Var u_hat, std::int64_t split_index) {
  const std::int64_t rows = t.value(u_hat).rows();
  if (split_index < 1 || split_index > rows - 1) {
    throw config_error("split_index " + std::to_string(split_index) + " outside [1, " +
                       std::to_string(rows - 1) + "]");
  }
  return {t.slice_rows(u_hat, 0, split_index),
          t.slice_rows(u_hat, split_index, rows - split_index)};
}

// Two affine layers around a GELU; the cheap stand-in for the transform.
template <typename T>
Var mlp_generate(Tape<T>& t, Var u, FeedForwardParams<T>& mlp) {
  auto vars = FeedForwardVars<T>::bind(t, mlp);
  return feed_forward(t, u, vars);
}

// A strategy owns its trainable prompt parameters and materializes encoder
// plans on a caller's tape.
template <typename T>
class PromptStrategy {
 public:
  struct Plans {
    bool has_text = false;
    bool has_visual = false;
    TextPromptPlan text;
    VisualPromptPlan visual;
  };

  PromptStrategy(const StrategyConfig& cfg, DualEncoder<T>& enc, std::uint64_t seed)
      : cfg_(cfg),
        layers_(enc.text.layers),
        text_width_(enc.text.width),
        visual_width_(enc.vision.width) {
    if (enc.text.layers != enc.vision.layers) {
      throw config_error("strategies assume equal tower depths, got " +
                         std::to_string(enc.text.layers) + " and " +
                         std::to_string(enc.vision.layers));
    }
    SplitMix64 rng = SplitMix64::stream(seed, 0x70726f6d);
    switch (cfg_.kind) {
      case StrategyKind::ZeroShot:
        break;
      case StrategyKind::TextOnly:
        init_text(rng);
        break;
      case StrategyKind::VptShallow:
        init_visual(rng, /*deep=*/false);
        break;
      case StrategyKind::VptDeep:
        init_visual(rng, /*deep=*/true);
        break;
      case StrategyKind::Joint:
        init_text(rng);
        init_visual(rng, /*deep=*/true);
        break;
      case StrategyKind::Shared:
        init_shared(rng);
        break;
      case StrategyKind::Mlp:
        init_unified_sets(rng);
        mlp_ = FeedForwardParams<T>::init("transform.mlp", unified_width(),
                                          unified_width() * kFfnExpansion, rng, true);
        has_mlp_ = true;
        init_projections(rng);
        break;
      case StrategyKind::Unified:
        init_unified_sets(rng);
        transform_ = PromptTransformer<T>::init(unified_width(), rng, cfg_.transform_heads,
                                                cfg_.residual_ln);
        has_transform_ = true;
        init_projections(rng);
        break;
    }
  }

  StrategyKind kind() const { return cfg_.kind; }
  const StrategyConfig& config() const { return cfg_; }

  std::vector<Parameter<T>*> trainables() {
    std::vector<Parameter<T>*> out;
    if (text_.value.numel() > 0) out.push_back(&text_);
    for (auto& v : visual_) out.push_back(&v);
    for (auto& u : unified_) out.push_back(&u);
    if (has_transform_) {
      for (auto* p : transform_.params()) out.push_back(p);
    }
    if (has_mlp_) {
      for (auto* p : mlp_.params()) out.push_back(p);
    }
    if (proj_text_.value.numel() > 0) out.push_back(&proj_text_);
    if (proj_visual_.value.numel() > 0) out.push_back(&proj_visual_);
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto* p : trainables()) n += p->value.numel();
    return n;
  }

  // Closed-form count, asserted against parameter_count() in tests.
  std::int64_t expected_parameter_count() const {
    const std::int64_t dt = text_width_, dv = visual_width_, du = unified_width();
    const std::int64_t attn = 4 * (du * du + du);
    const std::int64_t ffn = du * (du * kFfnExpansion) + du * kFfnExpansion +
                             (du * kFfnExpansion) * du + du;
    const std::int64_t lns = 4 * du;
    std::int64_t proj = 0;
    if (du != dt) proj += du * dt;
    if (du != dv) proj += du * dv;
    switch (cfg_.kind) {
      case StrategyKind::ZeroShot:   return 0;
      case StrategyKind::TextOnly:   return cfg_.text_len * dt;
      case StrategyKind::VptShallow: return cfg_.visual_len * dv;
      case StrategyKind::VptDeep:    return layers_ * cfg_.visual_len * dv;
      case StrategyKind::Joint:      return cfg_.text_len * dt + layers_ * cfg_.visual_len * dv;
      case StrategyKind::Shared:     return layers_ * cfg_.visual_len * dt;
      case StrategyKind::Mlp:        return layers_ * cfg_.unified_len * du + ffn + proj;
      case StrategyKind::Unified:    return layers_ * cfg_.unified_len * du + attn + lns + ffn + proj;
    }
    return 0;
  }

  // Copies the embeddings of the template words into the text prompt so an
  // untrained text-only strategy reproduces the zero-shot pipeline exactly.
  void init_text_from_template(DualEncoder<T>& enc) {
    if (text_.value.numel() == 0) {
      throw config_error("strategy has no text prompt to initialize");
    }
    Tokenizer tok(enc.text.context_length);
    auto ids = tok.word_ids(std::string(kPromptTemplate));
    if (static_cast<std::int64_t>(ids.size()) != cfg_.text_len) {
      throw config_error("text prompt length " + std::to_string(cfg_.text_len) +
                         " != template word count " + std::to_string(ids.size()));
    }
    for (std::size_t r = 0; r < ids.size(); ++r) {
      for (std::int64_t j = 0; j < text_width_; ++j) {
        text_.value.at(static_cast<std::int64_t>(r), j) = enc.token_embedding.value.at(ids[r], j);
      }
    }
  }

  Plans materialize(Tape<T>& t) {
    Plans plans;
    switch (cfg_.kind) {
      case StrategyKind::ZeroShot:
        break;
      case StrategyKind::TextOnly:
        plans.has_text = true;
        plans.text.length = cfg_.text_len;
        plans.text.embedding = t.param(text_);
        break;
      case StrategyKind::VptShallow:
      case StrategyKind::VptDeep:
        materialize_visual(t, plans);
        break;
      case StrategyKind::Joint:
        plans.has_text = true;
        plans.text.length = cfg_.text_len;
        plans.text.embedding = t.param(text_);
        materialize_visual(t, plans);
        break;
      case StrategyKind::Shared: {
        plans.has_text = plans.has_visual = true;
        plans.text.length = cfg_.visual_len;
        plans.visual.count = cfg_.visual_len;
        plans.visual.deep = true;
        for (std::int64_t i = 0; i < layers_; ++i) {
          Var u = t.param(unified_[static_cast<std::size_t>(i)]);
          plans.visual.per_layer.push_back(u);
          if (i == 0) {
            plans.text.embedding = u;
          } else {
            plans.text.deep.push_back(u);
          }
        }
        break;
      }
      case StrategyKind::Mlp:
      case StrategyKind::Unified: {
        plans.has_text = plans.has_visual = true;
        plans.text.length = cfg_.split_index;
        plans.visual.count = cfg_.unified_len - cfg_.split_index;
        plans.visual.deep = true;
        for (std::int64_t i = 0; i < layers_; ++i) {
          Var u = t.param(unified_[static_cast<std::size_t>(i)]);
          Var generated = cfg_.kind == StrategyKind::Unified ? unified_transform(t, u, transform_)
                                                             : mlp_generate(t, u, mlp_);
          auto [text_half, visual_half] = split_unified(t, generated, cfg_.split_index);
          if (proj_text_.value.numel() > 0) {
            text_half = t.matmul(text_half, t.param(proj_text_));
          }
          if (proj_visual_.value.numel() > 0) {
            visual_half = t.matmul(visual_half, t.param(proj_visual_));
          }
          plans.visual.per_layer.push_back(visual_half);
          if (i == 0) {
            plans.text.embedding = text_half;
          } else {
            plans.text.deep.push_back(text_half);
          }
        }
        break;
      }
    }
    return plans;
  }

 private:
  std::int64_t unified_width() const {
    return cfg_.unified_width > 0 ? cfg_.unified_width : text_width_;
  }

  void init_text(SplitMix64& rng) {
    if (cfg_.text_len < 1) throw config_error("text prompt length must be >= 1");
    text_ = Parameter<T>("prompt.text", random_normal<T>({cfg_.text_len, text_width_}, rng), true);
  }

  void init_visual(SplitMix64& rng, bool deep) {
    if (cfg_.visual_len < 0) throw config_error("visual prompt length must be >= 0");
    deep_visual_ = deep;
    if (cfg_.visual_len == 0) return;
    const std::int64_t sets = deep ? layers_ : 1;
    for (std::int64_t i = 0; i < sets; ++i) {
      visual_.emplace_back("prompt.visual." + std::to_string(i),
                           random_normal<T>({cfg_.visual_len, visual_width_}, rng), true);
    }
  }

  void init_shared(SplitMix64& rng) {
    if (text_width_ != visual_width_) {
      throw config_error("shared prompts need equal encoder widths, got text " +
                         std::to_string(text_width_) + " and visual " +
                         std::to_string(visual_width_));
    }
    if (cfg_.visual_len < 1) throw config_error("shared prompt length must be >= 1");
    for (std::int64_t i = 0; i < layers_; ++i) {
      unified_.emplace_back("prompt.shared." + std::to_string(i),
                            random_normal<T>({cfg_.visual_len, text_width_}, rng), true);
    }
  }

  void init_unified_sets(SplitMix64& rng) {
    if (cfg_.unified_len < 2) throw config_error("unified prompt length must be >= 2");
    if (cfg_.split_index < 1 || cfg_.split_index > cfg_.unified_len - 1) {
      throw config_error("split_index " + std::to_string(cfg_.split_index) + " outside [1, " +
                         std::to_string(cfg_.unified_len - 1) + "]");
    }
    for (std::int64_t i = 0; i < layers_; ++i) {
      unified_.emplace_back("prompt.unified." + std::to_string(i),
                            random_normal<T>({cfg_.unified_len, unified_width()}, rng), true);
    }
  }

  void init_projections(SplitMix64& rng) {
    if (unified_width() != text_width_) {
      proj_text_ = Parameter<T>("transform.proj_text",
                                random_normal<T>({unified_width(), text_width_}, rng), true);
    }
    if (unified_width() != visual_width_) {
      proj_visual_ = Parameter<T>("transform.proj_visual",
                                  random_normal<T>({unified_width(), visual_width_}, rng), true);
    }
  }

  void materialize_visual(Tape<T>& t, Plans& plans) {
    plans.has_visual = true;
    plans.visual.count = cfg_.visual_len;
    plans.visual.deep = deep_visual_;
    for (auto& v : visual_) plans.visual.per_layer.push_back(t.param(v));
  }

  StrategyConfig cfg_;
  std::int64_t layers_;
  std::int64_t text_width_;
  std::int64_t visual_width_;
  bool deep_visual_ = false;

  Parameter<T> text_;                  // [m x d_t]
  std::vector<Parameter<T>> visual_;   // each [n x d_v]
  std::vector<Parameter<T>> unified_;  // each [n_u x d_u] (or shared [n x d])
  PromptTransformer<T> transform_;
  bool has_transform_ = false;
  FeedForwardParams<T> mlp_;
  bool has_mlp_ = false;
  Parameter<T> proj_text_;
  Parameter<T> proj_visual_;
};

// ---- persistence ---------------------------------------------------------

template <typename T>
void save_strategy(const std::filesystem::path& dir, PromptStrategy<T>& strategy) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const StrategyConfig& cfg = strategy.config();
  nlohmann::json desc;
  desc["schema_version"] = 1;
  desc["kind"] = to_string(cfg.kind);
  desc["text_len"] = cfg.text_len;
  desc["visual_len"] = cfg.visual_len;
  desc["unified_len"] = cfg.unified_len;
  desc["split_index"] = cfg.split_index;
  desc["unified_width"] = cfg.unified_width;
  desc["transform_heads"] = cfg.transform_heads;
  desc["residual_ln"] = cfg.residual_ln;
  nlohmann::json params = nlohmann::json::array();
  for (Parameter<T>* p : strategy.trainables()) {
    params.push_back({{"name", p->name}, {"shape", p->value.shape()}});
    save_tensor(dir / (p->name + ".pft"), p->value);
  }
  desc["parameters"] = params;
  std::ofstream os(dir / "strategy.json");
  if (!os) throw io_error("cannot write " + (dir / "strategy.json").string());
  os << desc.dump(2) << "\n";
}

template <typename T>
StrategyConfig load_strategy_config(const std::filesystem::path& dir) {
  std::ifstream is(dir / "strategy.json");
  if (!is) throw io_error("cannot read " + (dir / "strategy.json").string());
  nlohmann::json desc;
  try {
    is >> desc;
  } catch (const nlohmann::json::exception& ex) {
    throw integrity_error("malformed strategy descriptor: " + std::string(ex.what()));
  }
  StrategyConfig cfg;
  cfg.kind = strategy_from_string(desc.at("kind").get<std::string>());
  cfg.text_len = desc.at("text_len");
  cfg.visual_len = desc.at("visual_len");
  cfg.unified_len = desc.at("unified_len");
  cfg.split_index = desc.at("split_index");
  cfg.unified_width = desc.at("unified_width");
  cfg.transform_heads = desc.at("transform_heads");
  cfg.residual_ln = desc.at("residual_ln");
  return cfg;
}

template <typename T>
PromptStrategy<T> load_strategy(const std::filesystem::path& dir, DualEncoder<T>& enc) {
  StrategyConfig cfg = load_strategy_config<T>(dir);
  PromptStrategy<T> strategy(cfg, enc, 0);
  for (Parameter<T>* p : strategy.trainables()) {
    Tensor<T> loaded = load_tensor<T>(dir / (p->name + ".pft"));
    if (!loaded.same_shape(p->value)) {
      throw integrity_error("strategy tensor " + p->name + " has shape " +
                            shape_to_string(loaded.shape()) + ", expected " +
                            shape_to_string(p->value.shape()));
    }
    p->value = std::move(loaded);
    p->zero_grad();
  }
  return strategy;
}

}  // namespace pft
