// End-to-end acceptance checks. Each test case verifies one release
// criterion and prints exactly one "criterion N: PASS|FAIL" line with the
// measured numbers, so a log scrape shows the whole gate at a glance.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pft/dataset.hpp"
#include "pft/diagnostics.hpp"
#include "pft/encoder.hpp"
#include "pft/harness.hpp"
#include "pft/prompts.hpp"
#include "pft/records.hpp"
#include "pft/rng.hpp"
#include "pft/tape.hpp"
#include "pft/tokenizer.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using namespace pft;

namespace {

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  CHECK_MESSAGE(pass, "criterion ", criterion, ": ", detail);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("pft_acceptance_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

VisionConfig desk_vision() {
  VisionConfig v;
  v.image_size = 32;
  v.patch_size = 8;
  v.layers = 4;
  v.width = 32;
  v.heads = 4;
  v.joint_dim = 32;
  return v;
}

TextConfig desk_text() {
  TextConfig t;
  t.context_length = 16;
  t.layers = 4;
  t.width = 32;
  t.heads = 4;
  t.joint_dim = 32;
  return t;
}

VisionConfig tiny_vision() {
  VisionConfig v;
  v.image_size = 16;
  v.patch_size = 8;
  v.layers = 2;
  v.width = 16;
  v.heads = 2;
  v.joint_dim = 8;
  return v;
}

TextConfig tiny_text() {
  TextConfig t;
  t.context_length = 12;
  t.layers = 2;
  t.width = 16;
  t.heads = 2;
  t.joint_dim = 8;
  return t;
}

VisionConfig bench_vision() {
  VisionConfig v;
  v.image_size = 32;
  v.patch_size = 8;
  v.layers = 2;
  v.width = 32;
  v.heads = 4;
  v.joint_dim = 16;
  return v;
}

TextConfig bench_text() {
  TextConfig t;
  t.context_length = 16;
  t.layers = 2;
  t.width = 32;
  t.heads = 4;
  t.joint_dim = 16;
  return t;
}

template <typename T>
Tensor<T> random_image(const VisionConfig& cfg, SplitMix64& rng) {
  Tensor<T> img(cfg.image_size, cfg.image_size);
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<T>(rng.next_normal());
  return img;
}

// logits row for one image against every class, built on one tape
template <typename T>
Tensor<T> pipeline_logits(DualEncoder<T>& enc, PromptStrategy<T>& strategy,
                          const Tensor<T>& image, const std::vector<std::string>& names) {
  Tokenizer tok(enc.text.context_length);
  Tape<T> t;
  auto plans = strategy.materialize(t);
  Var z = encode_image(t, enc, image, plans.has_visual ? &plans.visual : nullptr);
  std::vector<Var> ws;
  for (const auto& name : names) {
    auto ids = tok.encode(std::string(kPromptTemplate) + " " + name);
    ws.push_back(encode_text(t, enc, ids, plans.has_text ? &plans.text : nullptr));
  }
  Var w = t.concat_rows(ws);
  return t.value(t.scale(t.matmul(z, t.transpose(w)), enc.logit_scale));
}

Dataset generated_dataset(const SyntheticSpec& spec, const std::string& tag) {
  const fs::path dir = fresh_dir(tag);
  generate_synthetic(spec, dir);
  return load_dataset(dir / "manifest.json");
}

}  // namespace

// ---------------------------------------------------------------------------
// 1. Analytic gradients of every trainable strategy agree with central
//    differences on the full batch pipeline.

TEST_CASE("analytic gradients match central differences on the full pipeline") {
  const auto t0 = std::chrono::steady_clock::now();
  auto enc = init_backbone<double>(desk_vision(), desk_text(), 11);
  const std::vector<std::string> names{"glass", "wood", "silk"};
  const std::vector<std::int64_t> labels{0, 1, 2, 0};
  Tokenizer tok(enc.text.context_length);

  SplitMix64 rng(23);
  std::vector<TensorD> images;
  for (int i = 0; i < 4; ++i) images.push_back(random_image<double>(enc.vision, rng));

  double worst = 0.0;
  std::string worst_at;
  std::int64_t checked = 0;
  for (StrategyKind kind : trainable_strategies()) {
    StrategyConfig cfg;
    cfg.kind = kind;
    cfg.text_len = 4;
    cfg.visual_len = 2;
    cfg.unified_len = 4;
    cfg.split_index = 2;
    PromptStrategy<double> strategy(cfg, enc, 17);

    auto forward = [&](Tape<double>& t) {
      auto plans = strategy.materialize(t);
      std::vector<Var> zs;
      for (const auto& img : images)
        zs.push_back(encode_image(t, enc, img, plans.has_visual ? &plans.visual : nullptr));
      std::vector<Var> ws;
      for (const auto& name : names) {
        auto ids = tok.encode(std::string(kPromptTemplate) + " " + name);
        ws.push_back(encode_text(t, enc, ids, plans.has_text ? &plans.text : nullptr));
      }
      Var logits = t.scale(t.matmul(t.concat_rows(zs), t.transpose(t.concat_rows(ws))),
                           enc.logit_scale);
      return t.cross_entropy(logits, labels);
    };

    auto res = testutil::check_gradients(strategy.trainables(), forward, 1e-5, 6);
    checked += res.checked;
    if (res.max_rel_error > worst) {
      worst = res.max_rel_error;
      worst_at = std::string(to_string(kind)) + " " + res.worst;
    }
  }

  const double elapsed = seconds_since(t0);
  const bool pass = worst < 1e-4 && elapsed < 60.0;
  report(1, pass,
         fmt("7 strategies, %lld sampled entries, max rel err %.3g (%s), %.1fs (budget 60s)",
             static_cast<long long>(checked), worst, worst_at.c_str(), elapsed));
}

// ---------------------------------------------------------------------------
// 2. Configurations that should be inert reproduce zero-shot logits bit for
//    bit: template-initialized text prompts and zero-length visual prompts.

TEST_CASE("inert prompt configurations reproduce zero-shot logits bit for bit") {
  auto enc = init_backbone<double>(tiny_vision(), tiny_text(), 7);
  const std::vector<std::string> names{"glass", "wood", "silk"};

  StrategyConfig zcfg;
  PromptStrategy<double> zero(zcfg, enc, 1);

  StrategyConfig tcfg;
  tcfg.kind = StrategyKind::TextOnly;
  tcfg.text_len = 4;
  PromptStrategy<double> text(tcfg, enc, 1);
  text.init_text_from_template(enc);

  StrategyConfig vcfg;
  vcfg.kind = StrategyKind::VptShallow;
  vcfg.visual_len = 0;
  PromptStrategy<double> visual(vcfg, enc, 1);

  SplitMix64 rng(99);
  std::int64_t mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    TensorD img = random_image<double>(enc.vision, rng);
    TensorD a = pipeline_logits(enc, zero, img, names);
    TensorD b = pipeline_logits(enc, text, img, names);
    TensorD c = pipeline_logits(enc, visual, img, names);
    for (std::int64_t j = 0; j < a.numel(); ++j) {
      if (a[j] != b[j]) ++mismatches;
      if (a[j] != c[j]) ++mismatches;
    }
  }

  report(2, mismatches == 0,
         fmt("100 images x 3 classes, template text and n=0 visual vs zero-shot, "
             "%lld mismatched values",
             static_cast<long long>(mismatches)));
}

// ---------------------------------------------------------------------------
// 3. Training any strategy for 50 epochs never alters the backbone: its
//    checksum is identical before and after, for every strategy.

TEST_CASE("training never alters the frozen backbone") {
  auto enc = init_backbone<float>(tiny_vision(), tiny_text(), 5);
  const std::string pristine = backbone_checksum(enc);

  SyntheticSpec spec;
  spec.classes = 3;
  spec.train_per_class = 8;
  spec.test_per_class = 2;
  spec.image_size = 16;
  spec.name_words = 2;
  spec.noise_sigma = 0.25;
  spec.seed = 9;
  Dataset data = generated_dataset(spec, "c3_data");

  bool pass = true;
  std::string failed;
  for (StrategyKind kind : all_strategies()) {
    StrategyConfig cfg;
    cfg.kind = kind;
    cfg.text_len = 4;
    cfg.visual_len = 2;
    cfg.unified_len = 4;
    cfg.split_index = 2;
    PromptStrategy<float> strategy(cfg, enc, 3);
    if (kind == StrategyKind::TextOnly || kind == StrategyKind::Joint)
      strategy.init_text_from_template(enc);

    TrainConfig tc;
    tc.initial_lr = 0.01;
    tc.batch_size = 8;
    tc.epochs = 50;
    tc.momentum = 0.9;
    tc.seed = 3;
    RunRecord rec = train(strategy, enc, data, EpisodeSpec{4, 3}, tc);

    const bool ok = rec.status == "ok" && rec.backbone_checksum_before == pristine &&
                    rec.backbone_checksum_after == pristine && backbone_checksum(enc) == pristine;
    if (!ok) {
      pass = false;
      failed += std::string(failed.empty() ? "" : ", ") + to_string(kind);
    }
  }

  report(3, pass,
         pass ? fmt("8 strategies x 50 epochs, checksum stable at %s", pristine.substr(0, 12).c_str())
              : "checksum drifted for: " + failed);
}

// ---------------------------------------------------------------------------
// 4. Variance diagnostics match independent scalar oracles on randomized
//    instances, and doubling the features exactly quadruples the variance.

namespace {

double oracle_rows_variance(const TensorD& f, const std::vector<std::int64_t>& rows) {
  const std::int64_t d = f.cols();
  const double n = static_cast<double>(rows.size());
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (std::int64_t r : rows)
    for (std::int64_t j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += f.at(r, j);
  for (auto& m : mean) m /= n;
  double total = 0.0;
  for (std::int64_t r : rows)
    for (std::int64_t j = 0; j < d; ++j) {
      const double dev = f.at(r, j) - mean[static_cast<std::size_t>(j)];
      total += dev * dev;
    }
  return total / n / static_cast<double>(d);
}

double oracle_column_variance(const TensorD& w) {
  const std::int64_t d = w.rows(), k = w.cols();
  double total = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::int64_t c = 0; c < k; ++c) mean += w.at(j, c);
    mean /= static_cast<double>(k);
    for (std::int64_t c = 0; c < k; ++c) {
      const double dev = w.at(j, c) - mean;
      total += dev * dev / static_cast<double>(k);
    }
  }
  return total / static_cast<double>(d);
}

}  // namespace

TEST_CASE("variance diagnostics match independent scalar oracles") {
  SplitMix64 rng(404);
  double worst_v = 0.0, worst_t = 0.0, worst_scale = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::int64_t k = 2 + static_cast<std::int64_t>(rng.next_below(5));
    const std::int64_t d = 3 + static_cast<std::int64_t>(rng.next_below(8));
    const std::int64_t n = k + 5 + static_cast<std::int64_t>(rng.next_below(36));

    TensorD f(n, d);
    for (std::int64_t i = 0; i < f.numel(); ++i) f[i] = rng.next_normal();
    std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % k;
    for (std::int64_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
      std::swap(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(j)]);
    }

    auto rep = intra_class_visual_variance(f, labels, k);
    std::vector<std::vector<std::int64_t>> members(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < n; ++i)
      members[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
    double sum = 0.0;
    for (std::int64_t c = 0; c < k; ++c) {
      const double v = oracle_rows_variance(f, members[static_cast<std::size_t>(c)]);
      worst_v = std::max(worst_v, std::abs(rep.var_c[static_cast<std::size_t>(c)] - v));
      sum += v;
    }
    worst_v = std::max(worst_v, std::abs(rep.var_v - sum / static_cast<double>(k)));

    TensorD w(d, k);
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.next_normal();
    worst_t = std::max(worst_t, std::abs(inter_class_text_variance(w) - oracle_column_variance(w)));

    TensorD f2(n, d);
    for (std::int64_t i = 0; i < f.numel(); ++i) f2[i] = 2.0 * f[i];
    auto rep2 = intra_class_visual_variance(f2, labels, k);
    worst_scale = std::max(worst_scale, std::abs(rep2.var_v - 4.0 * rep.var_v));
  }

  const bool pass = worst_v < 1e-10 && worst_t < 1e-10 && worst_scale < 1e-8;
  report(4, pass,
         fmt("20 instances, max |diff| intra %.2e inter %.2e, 2x features vs 4x variance %.2e",
             worst_v, worst_t, worst_scale));
}

// ---------------------------------------------------------------------------
// 5. The unified prompt transform matches a scalar reference implementation
//    with hand-set weights on a 2-column toy input.

namespace {

void set_values(TensorD& dst, std::initializer_list<double> vals) {
  REQUIRE(dst.numel() == static_cast<std::int64_t>(vals.size()));
  std::int64_t i = 0;
  for (double v : vals) dst[i++] = v;
}

TensorD add_rowwise_oracle(TensorD m, const std::vector<double>& b) {
  for (std::int64_t i = 0; i < m.rows(); ++i)
    for (std::int64_t j = 0; j < m.cols(); ++j) m.at(i, j) += b[static_cast<std::size_t>(j)];
  return m;
}

std::vector<double> as_vector(const TensorD& t) {
  std::vector<double> v(static_cast<std::size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) v[static_cast<std::size_t>(i)] = t[i];
  return v;
}

}  // namespace

TEST_CASE("unified prompt transform matches a scalar reference") {
  SplitMix64 rng(1);
  auto theta = PromptTransformer<double>::init(2, rng, 1, true);

  set_values(theta.attn.wq.value, {0.30, -0.10, 0.20, 0.40});
  set_values(theta.attn.bq.value, {0.01, -0.02});
  set_values(theta.attn.wk.value, {-0.25, 0.15, 0.05, 0.35});
  set_values(theta.attn.bk.value, {0.03, 0.00});
  set_values(theta.attn.wv.value, {0.45, 0.05, -0.15, 0.25});
  set_values(theta.attn.bv.value, {-0.01, 0.02});
  set_values(theta.attn.wo.value, {0.20, -0.30, 0.10, 0.50});
  set_values(theta.attn.bo.value, {0.02, 0.01});
  set_values(theta.ln1.gamma.value, {1.10, 0.90});
  set_values(theta.ln1.beta.value, {0.05, -0.05});
  set_values(theta.ln2.gamma.value, {0.95, 1.05});
  set_values(theta.ln2.beta.value, {-0.02, 0.03});
  set_values(theta.ffn.w1.value, {0.12, -0.08, 0.20, 0.05, -0.15, 0.10, 0.02, -0.20,
                                  -0.05, 0.18, -0.12, 0.08, 0.16, -0.10, 0.22, 0.04});
  set_values(theta.ffn.b1.value, {0.01, -0.01, 0.02, 0.00, 0.03, -0.02, 0.01, 0.00});
  set_values(theta.ffn.w2.value, {0.10, -0.05, -0.08, 0.12, 0.06, 0.09, -0.11, 0.02,
                                  0.14, -0.07, 0.03, 0.13, -0.09, -0.04, 0.07, 0.11});
  set_values(theta.ffn.b2.value, {0.015, -0.025});

  TensorD u(3, 2);
  set_values(u, {0.5, -1.2, 1.5, 0.3, -0.7, 0.9});

  // scalar reference: U' = SA(U) + LN1(U); out = FFN(LN2(U')) + LN2(U')
  TensorD qp = add_rowwise_oracle(testutil::matmul_oracle(u, theta.attn.wq.value),
                                  as_vector(theta.attn.bq.value));
  TensorD kp = add_rowwise_oracle(testutil::matmul_oracle(u, theta.attn.wk.value),
                                  as_vector(theta.attn.bk.value));
  TensorD vp = add_rowwise_oracle(testutil::matmul_oracle(u, theta.attn.wv.value),
                                  as_vector(theta.attn.bv.value));
  TensorD kt(kp.cols(), kp.rows());
  for (std::int64_t i = 0; i < kp.rows(); ++i)
    for (std::int64_t j = 0; j < kp.cols(); ++j) kt.at(j, i) = kp.at(i, j);
  TensorD scores = testutil::matmul_oracle(qp, kt);
  for (std::int64_t i = 0; i < scores.numel(); ++i) scores[i] /= std::sqrt(2.0);
  TensorD merged = testutil::matmul_oracle(testutil::softmax_oracle(scores), vp);
  TensorD sa = add_rowwise_oracle(testutil::matmul_oracle(merged, theta.attn.wo.value),
                                  as_vector(theta.attn.bo.value));
  TensorD ln1u = testutil::layer_norm_oracle(u, as_vector(theta.ln1.gamma.value),
                                             as_vector(theta.ln1.beta.value), kLayerNormEps);
  TensorD mid(3, 2);
  for (std::int64_t i = 0; i < mid.numel(); ++i) mid[i] = sa[i] + ln1u[i];
  TensorD normed = testutil::layer_norm_oracle(mid, as_vector(theta.ln2.gamma.value),
                                               as_vector(theta.ln2.beta.value), kLayerNormEps);
  TensorD hidden = add_rowwise_oracle(testutil::matmul_oracle(normed, theta.ffn.w1.value),
                                      as_vector(theta.ffn.b1.value));
  for (std::int64_t i = 0; i < hidden.numel(); ++i) hidden[i] = testutil::gelu_oracle(hidden[i]);
  TensorD ff = add_rowwise_oracle(testutil::matmul_oracle(hidden, theta.ffn.w2.value),
                                  as_vector(theta.ffn.b2.value));
  TensorD expect(3, 2);
  for (std::int64_t i = 0; i < expect.numel(); ++i) expect[i] = ff[i] + normed[i];

  Tape<double> t;
  TensorD got = t.value(unified_transform(t, t.input(u), theta));

  REQUIRE(got.shape() == expect.shape());
  double worst = 0.0;
  for (std::int64_t i = 0; i < got.numel(); ++i)
    worst = std::max(worst, std::abs(got[i] - expect[i]));

  report(5, worst < 1e-6, fmt("3x2 toy, hand-set weights, max |diff| %.2e", worst));
}

// ---------------------------------------------------------------------------
// 6. On the default synthetic task every trainable strategy reaches at least
//    0.95 mean 16-shot train accuracy over 3 seeds and strictly beats the
//    zero-shot test accuracy. A plain softmax regression on the frozen joint
//    features certifies that every sampled support set is separable.

TEST_CASE("every trainable strategy learns the default few-shot task") {
  const auto t0 = std::chrono::steady_clock::now();

  SyntheticSpec spec;  // defaults: 5 classes, 32/16 per class, sigma 0.3, seed 0
  Dataset data = generated_dataset(spec, "c6_data");
  auto enc = init_backbone<float>(bench_vision(), bench_text(), 0);
  const std::int64_t k = data.classes();

  StrategyConfig zcfg;
  PromptStrategy<float> zero(zcfg, enc, 0);
  const double zs_test = evaluate(zero, enc, data.class_names, data.split("test"));

  // separability certificate: full-batch softmax regression on the frozen
  // features of each 16-shot support set
  const auto& train_split = data.split("train");
  const std::int64_t n_all = train_split.images.extent(0);
  const std::int64_t d = enc.text.joint_dim;
  std::vector<std::vector<double>> feats(static_cast<std::size_t>(n_all));
  for (std::int64_t i = 0; i < n_all; ++i) {
    auto z = encode_image_value(enc, image_at<float>(train_split, i));
    feats[static_cast<std::size_t>(i)] = std::vector<double>(z.numel());
    for (std::int64_t j = 0; j < z.numel(); ++j)
      feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = z[j];
  }

  double lr_oracle_min = 1.0;
  for (std::uint64_t s : {0, 1, 2}) {
    const auto rows = sample_few_shot(train_split, k, EpisodeSpec{16, s});
    const auto n = static_cast<std::int64_t>(rows.size());
    std::vector<double> w(static_cast<std::size_t>(d * k), 0.0);
    std::vector<double> b(static_cast<std::size_t>(k), 0.0);
    std::vector<double> p(static_cast<std::size_t>(k));
    for (int iter = 0; iter < 3000; ++iter) {
      std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
      for (std::int64_t r = 0; r < n; ++r) {
        const auto& x = feats[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
        const auto y = train_split.labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
        double mx = -1e300;
        for (std::int64_t c = 0; c < k; ++c) {
          double z = b[static_cast<std::size_t>(c)];
          for (std::int64_t j = 0; j < d; ++j)
            z += x[static_cast<std::size_t>(j)] * w[static_cast<std::size_t>(j * k + c)];
          p[static_cast<std::size_t>(c)] = z;
          mx = std::max(mx, z);
        }
        double zsum = 0.0;
        for (std::int64_t c = 0; c < k; ++c) {
          p[static_cast<std::size_t>(c)] = std::exp(p[static_cast<std::size_t>(c)] - mx);
          zsum += p[static_cast<std::size_t>(c)];
        }
        for (std::int64_t c = 0; c < k; ++c) {
          const double g = p[static_cast<std::size_t>(c)] / zsum - (c == y ? 1.0 : 0.0);
          gb[static_cast<std::size_t>(c)] += g / static_cast<double>(n);
          for (std::int64_t j = 0; j < d; ++j)
            gw[static_cast<std::size_t>(j * k + c)] +=
                g * x[static_cast<std::size_t>(j)] / static_cast<double>(n);
        }
      }
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= gw[i];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] -= gb[i];
    }
    std::int64_t correct = 0;
    for (std::int64_t r = 0; r < n; ++r) {
      const auto& x = feats[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
      std::int64_t best = 0;
      double best_z = -1e300;
      for (std::int64_t c = 0; c < k; ++c) {
        double z = b[static_cast<std::size_t>(c)];
        for (std::int64_t j = 0; j < d; ++j)
          z += x[static_cast<std::size_t>(j)] * w[static_cast<std::size_t>(j * k + c)];
        if (z > best_z) {
          best_z = z;
          best = c;
        }
      }
      if (best == train_split.labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])])
        ++correct;
    }
    lr_oracle_min = std::min(lr_oracle_min, static_cast<double>(correct) / static_cast<double>(n));
  }

  struct Recipe {
    StrategyKind kind;
    double lr;
    std::int64_t epochs;
    std::int64_t visual_len;
  };
  const std::vector<Recipe> recipes{
      {StrategyKind::TextOnly, 0.010, 120, 4},  {StrategyKind::VptShallow, 0.005, 200, 8},
      {StrategyKind::VptDeep, 0.005, 150, 8},   {StrategyKind::Joint, 0.005, 150, 8},
      {StrategyKind::Shared, 0.010, 120, 4},    {StrategyKind::Mlp, 0.050, 200, 4},
      {StrategyKind::Unified, 0.010, 60, 8},
  };

  bool pass = lr_oracle_min >= 0.95;
  std::string table = fmt("zs test %.3f, lr-oracle min %.3f", zs_test, lr_oracle_min);
  for (const auto& r : recipes) {
    double train_sum = 0.0, test_sum = 0.0;
    for (std::uint64_t s : {0, 1, 2}) {
      StrategyConfig cfg;
      cfg.kind = r.kind;
      cfg.text_len = 4;
      cfg.visual_len = r.visual_len;
      cfg.unified_len = 8;
      cfg.split_index = 4;
      PromptStrategy<float> strategy(cfg, enc, s);
      if (r.kind == StrategyKind::TextOnly || r.kind == StrategyKind::Joint)
        strategy.init_text_from_template(enc);
      TrainConfig tc;
      tc.initial_lr = r.lr;
      tc.batch_size = 16;
      tc.epochs = r.epochs;
      tc.momentum = 0.9;
      tc.seed = s;
      RunRecord rec = train(strategy, enc, data, EpisodeSpec{16, s}, tc);
      REQUIRE(rec.status == "ok");
      train_sum += rec.train_accuracy;
      test_sum += rec.test_accuracy;
    }
    const double mean_train = train_sum / 3.0, mean_test = test_sum / 3.0;
    pass = pass && mean_train >= 0.95 && mean_test > zs_test;
    table += fmt(", %s %.3f/%.3f", to_string(r.kind), mean_train, mean_test);
  }

  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 300.0;
  report(6, pass, table + fmt(", %.0fs (budget 300s)", elapsed));
}

// ---------------------------------------------------------------------------
// 7. The generator knobs move the diagnostics the way they should: more image
//    noise raises intra-class visual variance, more name overlap lowers
//    inter-class text variance. Means over 3 dataset seeds.

TEST_CASE("generator knobs move the variance diagnostics monotonically") {
  auto enc = init_backbone<float>(bench_vision(), bench_text(), 0);

  auto mean_var_v = [&](double sigma) {
    double sum = 0.0;
    for (std::uint64_t s : {0, 1, 2}) {
      SyntheticSpec spec;
      spec.classes = 5;
      spec.train_per_class = 8;
      spec.test_per_class = 2;
      spec.noise_sigma = sigma;
      spec.seed = s;
      Dataset data = generated_dataset(spec, fmt("c7_v_%g_%llu", sigma,
                                                 static_cast<unsigned long long>(s)));
      const auto& split = data.split("train");
      const std::int64_t n = split.images.extent(0);
      Tensor<float> feats(n, enc.text.joint_dim);
      for (std::int64_t i = 0; i < n; ++i) {
        auto z = encode_image_value(enc, image_at<float>(split, i));
        for (std::int64_t j = 0; j < z.numel(); ++j) feats.at(i, j) = z[j];
      }
      sum += intra_class_visual_variance(feats, split.labels, data.classes()).var_v;
    }
    return sum / 3.0;
  };

  auto mean_var_t = [&](double overlap) {
    double sum = 0.0;
    for (std::uint64_t s : {0, 1, 2}) {
      SyntheticSpec spec;
      spec.classes = 5;
      spec.train_per_class = 2;
      spec.test_per_class = 1;
      spec.name_overlap = overlap;
      spec.seed = s;
      Dataset data = generated_dataset(spec, fmt("c7_t_%g_%llu", overlap,
                                                 static_cast<unsigned long long>(s)));
      sum += inter_class_text_variance(build_zero_shot_classifier(enc, data.class_names));
    }
    return sum / 3.0;
  };

  const double v01 = mean_var_v(0.1), v05 = mean_var_v(0.5), v10 = mean_var_v(1.0);
  const double t00 = mean_var_t(0.0), t08 = mean_var_t(0.8);

  const bool pass = v01 < v05 && v05 < v10 && t08 < t00;
  report(7, pass,
         fmt("var_v(sigma 0.1/0.5/1.0) = %.4f/%.4f/%.4f, var_t(rho 0/0.8) = %.5f/%.5f",
             v01, v05, v10, t00, t08));
}

// ---------------------------------------------------------------------------
// 8. The run matrix covers exactly shots {1,2,4,8,16} x 3 seeds per strategy,
//    the summary means match the records, and shifted evaluation reports each
//    target plus their exact mean.

TEST_CASE("run matrix covers the grid and shift reports average exactly") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.train_per_class = 16;
  spec.test_per_class = 4;
  spec.image_size = 16;
  spec.name_words = 2;
  spec.seed = 11;
  Dataset data = generated_dataset(spec, "c8_data");
  auto enc = init_backbone<float>(tiny_vision(), tiny_text(), 5);

  MatrixSpec mspec;
  mspec.strategies = {StrategyKind::TextOnly, StrategyKind::VptShallow};
  mspec.prompt.text_len = 4;
  mspec.prompt.visual_len = 2;
  mspec.prompt.unified_len = 4;
  mspec.prompt.split_index = 2;
  mspec.train.initial_lr = 0.01;
  mspec.train.batch_size = 8;
  mspec.train.epochs = 1;
  auto records = run_matrix(enc, data, mspec);

  bool pass = records.size() == 30;
  std::map<std::pair<std::string, std::int64_t>, std::vector<std::uint64_t>> grid;
  for (const auto& r : records) {
    pass = pass && r.status == "ok";
    grid[{r.strategy, r.shots}].push_back(r.seed);
  }
  pass = pass && grid.size() == 10;
  for (const auto& kind : {"text-only", "vpt-shallow"}) {
    std::set<std::int64_t> shots;
    for (std::int64_t n : {1, 2, 4, 8, 16}) {
      auto it = grid.find({kind, n});
      if (it == grid.end() || it->second != std::vector<std::uint64_t>{0, 1, 2}) pass = false;
      shots.insert(n);
    }
    pass = pass && shots == std::set<std::int64_t>{1, 2, 4, 8, 16};
  }

  // summary means must equal the per-seed records
  const fs::path out = fresh_dir("c8_out");
  write_matrix_outputs(out, records);
  std::ifstream in(out / "summary.csv");
  std::string line;
  std::getline(in, line);
  pass = pass && line == "strategy,shots,mean_accuracy,seeds\r";
  std::int64_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    std::stringstream ss(line);
    std::string strategy, shots_s, mean_s, seeds_s;
    std::getline(ss, strategy, ',');
    std::getline(ss, shots_s, ',');
    std::getline(ss, mean_s, ',');
    std::getline(ss, seeds_s, ',');
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& r : records)
      if (r.strategy == strategy && r.shots == std::stoll(shots_s)) {
        sum += r.test_accuracy;
        ++count;
      }
    pass = pass && count == 3 && std::stod(mean_s) == sum / static_cast<double>(count);
  }
  pass = pass && rows == 10;

  // shifted evaluation: three noise targets, mean reported exactly
  StrategyConfig zcfg;
  PromptStrategy<float> zero(zcfg, enc, 1);
  SplitMix64 noise(77);
  std::vector<ShiftTarget> targets;
  for (double sigma : {0.2, 0.5, 1.0}) {
    ShiftTarget t;
    t.name = fmt("noise-%g", sigma);
    t.class_names = data.class_names;
    t.split = data.split("test");
    for (auto& v : t.split.images.vec())
      v += static_cast<float>(noise.next_normal() * sigma);
    targets.push_back(std::move(t));
  }
  auto shift = evaluate_shifted(zero, enc, data.class_names, targets);
  pass = pass && shift.per_target.size() == 3;
  double sum = 0.0;
  for (std::size_t i = 0; i < shift.per_target.size(); ++i) {
    pass = pass && shift.per_target[i].first == targets[i].name;
    const double direct = evaluate(zero, enc, data.class_names, targets[i].split);
    pass = pass && shift.per_target[i].second == direct;
    sum += shift.per_target[i].second;
  }
  pass = pass && shift.ood_average == sum / 3.0;

  report(8, pass,
         fmt("30 cells = 2 strategies x {1,2,4,8,16} x 3 seeds, 10 summary rows, "
             "3 shift targets, ood mean %.4f", shift.ood_average));
}

// ---------------------------------------------------------------------------
// 9. Two full matrix runs from the same config produce byte-identical result
//    tables.

TEST_CASE("matrix reruns produce byte-identical result tables") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.train_per_class = 16;
  spec.test_per_class = 4;
  spec.image_size = 16;
  spec.name_words = 2;
  spec.seed = 11;
  const fs::path data_dir = fresh_dir("c9_data");
  generate_synthetic(spec, data_dir);

  auto run_once = [&](const std::string& tag) {
    Dataset data = load_dataset(data_dir / "manifest.json");
    auto enc = init_backbone<float>(tiny_vision(), tiny_text(), 5);
    MatrixSpec mspec;
    mspec.strategies = {StrategyKind::TextOnly, StrategyKind::VptShallow};
    mspec.prompt.text_len = 4;
    mspec.prompt.visual_len = 2;
    mspec.prompt.unified_len = 4;
    mspec.prompt.split_index = 2;
    mspec.train.initial_lr = 0.01;
    mspec.train.batch_size = 8;
    mspec.train.epochs = 1;
    const fs::path out = fresh_dir(tag);
    write_matrix_outputs(out, run_matrix(enc, data, mspec));
    return out;
  };

  const fs::path a = run_once("c9_a");
  const fs::path b = run_once("c9_b");
  const std::string results_a = slurp(a / "results.csv"), results_b = slurp(b / "results.csv");
  const std::string summary_a = slurp(a / "summary.csv"), summary_b = slurp(b / "summary.csv");

  const bool pass = !results_a.empty() && results_a == results_b && !summary_a.empty() &&
                    summary_a == summary_b;
  report(9, pass,
         fmt("results.csv %zu bytes %s, summary.csv %zu bytes %s", results_a.size(),
             results_a == results_b ? "identical" : "DIFFER", summary_a.size(),
             summary_a == summary_b ? "identical" : "DIFFER"));
}

// ---------------------------------------------------------------------------
// 10. Attention response maps are row-stochastic and agree with a scalar
//     reconstruction of the hooked layer.

TEST_CASE("attention maps are row-stochastic and match a hooked reconstruction") {
  auto enc = init_backbone<double>(tiny_vision(), tiny_text(), 31);
  StrategyConfig cfg;
  cfg.kind = StrategyKind::VptDeep;
  cfg.visual_len = 2;
  PromptStrategy<double> strategy(cfg, enc, 77);

  const std::int64_t n = 2, s = enc.vision.patch_tokens(), seq = 1 + n + s;
  SplitMix64 rng(500);
  double worst_sum = 0.0, worst_diff = 0.0;
  for (int img_i = 0; img_i < 5; ++img_i) {
    TensorD image = random_image<double>(enc.vision, rng);
    for (std::int64_t layer = 1; layer <= enc.vision.layers; ++layer) {
      auto map = attention_response_map(enc, strategy, image, layer);
      for (std::int64_t h = 0; h < map.heads; ++h)
        for (std::int64_t p = 0; p < n; ++p) {
          double sum = 0.0;
          for (std::int64_t c = 0; c < seq; ++c) sum += map.full_rows.at(h, p, c);
          worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        }

      Tape<double> t;
      auto plans = strategy.materialize(t);
      Var x = patch_embed(t, enc, image);
      x = t.layer_norm(x, t.param(enc.vis_ln_pre.gamma), t.param(enc.vis_ln_pre.beta),
                       kLayerNormEps);
      x = t.concat_rows({t.row(x, 0), plans.visual.per_layer[0], t.slice_rows(x, 1, s)});
      for (std::int64_t i = 1; i < layer; ++i) {
        x = vit_layer_forward(t, enc.vis_blocks[static_cast<std::size_t>(i - 1)], x,
                              enc.vision.heads);
        x = t.concat_rows({t.row(x, 0), plans.visual.per_layer[static_cast<std::size_t>(i)],
                           t.slice_rows(x, 1 + n, s)});
      }
      std::vector<TensorD> heads;
      testutil::block_oracle(enc.vis_blocks[static_cast<std::size_t>(layer - 1)], t.value(x),
                             enc.vision.heads, &heads);
      for (std::int64_t h = 0; h < map.heads; ++h)
        for (std::int64_t p = 0; p < n; ++p)
          for (std::int64_t c = 0; c < seq; ++c)
            worst_diff = std::max(worst_diff,
                                  std::abs(map.full_rows.at(h, p, c) -
                                           heads[static_cast<std::size_t>(h)].at(1 + p, c)));
    }
  }

  const bool pass = worst_sum < 1e-6 && worst_diff < 1e-9;
  report(10, pass,
         fmt("5 images x %lld layers, worst row-sum dev %.2e, worst oracle diff %.2e",
             static_cast<long long>(enc.vision.layers), worst_sum, worst_diff));
}
