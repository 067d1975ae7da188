#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "../support/grad_check.hpp"
#include "pxiqa/checkpoint.hpp"
#include "pxiqa/trainer.hpp"

using namespace pxiqa;
using pxiqa::testing::check_gradients;
using pxiqa::testing::GraphBuilder;
using pxiqa::testing::random_tensor;

namespace {

const std::filesystem::path kTrain = std::filesystem::path(PXIQA_DATA_DIR) / "images" / "train";

const PatchStore& shared_store() {
  static const PatchStore store = [] {
    DatasetSpec spec;
    spec.source = kTrain;
    spec.crop = 64;
    spec.seed = 5;
    return prepare_training_set(spec);
  }();
  return store;
}

TrainConfig small_config(TrainMode mode, std::int64_t steps = 10) {
  TrainConfig c;
  c.mode = mode;
  c.batch = 4;
  c.patch = 16;
  c.codec = {8, 3};
  c.steps = steps;
  c.lambda = 64;
  c.lr_schedule = {{0, 1e-3}};
  c.proxy_warmup_steps = 5;
  c.proxy_pretrain_steps = 20;
  c.seed = 11;
  return c;
}

// A crop with texture, scaled to [0, 1], as a 1 x 3 x h x w tensor.
template <typename T>
Tensor<T> natural_patch(const std::string& name, Index size, Index y0 = 40, Index x0 = 60) {
  return to_tensor<T>(crop(read_image(kTrain / name), y0, x0, size, size));
}

class ThrowingOracle : public MetricOracle {
 public:
  std::string name() const override { return "broken"; }
  double max_score() const override { return 1.0; }
  double score(const Image&, const Image&) const override { throw Error("scorer crashed"); }
};

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean_std(a).mean, mb = mean_std(b).mean;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(TrainConfig, JsonRoundTripAndDefaults) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.alpha, 3e-3);
  EXPECT_DOUBLE_EQ(c.learning_rate(0), 1e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate(999999), 1e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate(1000000), 1e-5);
  EXPECT_EQ(c.proxy_steps_per_codec_step, 1);
  EXPECT_EQ(c.proxy_warmup_steps, 100);
  c.mode = TrainMode::direct_ssim;
  c.distance = PixelDistance::absolute;
  c.lambda = 1024;
  c.lr_schedule = {{0, 1e-3}, {50, 1e-4}};
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.mode, TrainMode::direct_ssim);
  EXPECT_DOUBLE_EQ(back.learning_rate(49), 1e-3);
  EXPECT_DOUBLE_EQ(back.learning_rate(50), 1e-4);
}

TEST(TrainConfig, RejectsInvalidSettings) {
  EXPECT_THROW(TrainConfig::from_json(R"({"alpha": 1.5})"), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(R"({"alpha": -0.1})"), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(R"({"lambda": 0})"), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(R"({"lr_schedule": [[0, 1e-4], [0, 1e-5]]})"), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(R"({"lr_schedule": [[5, 1e-4]]})"), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(R"({"patch": 20})"), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(R"({"mode": "sideways"})"), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(R"({"lamda": 5})"), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json(R"({"metric": "external"})"), InvalidArgument);
  EXPECT_THROW(TrainConfig::from_json("{not json"), FormatError);
}

TEST(PixelLoss, ClosedFormsAndMetricsOracle) {
  Tape<double> tape;
  std::mt19937_64 rng(3);
  const Tensor<double> a = random_tensor<double>(Shape{1, 3, 8, 8}, rng, 0.2, 0.8);
  Tensor<double> shifted = a;
  for (Index i = 0; i < shifted.size(); ++i) shifted[i] += 0.1;
  const auto va = tape.constant(a);
  EXPECT_EQ(pixel_loss(va, tape.constant(a), PixelDistance::squared).value()[0], 0.0);
  EXPECT_NEAR(pixel_loss(va, tape.constant(shifted), PixelDistance::squared).value()[0], 0.01, 1e-12);
  EXPECT_NEAR(pixel_loss(va, tape.constant(shifted), PixelDistance::absolute).value()[0], 0.1, 1e-12);

  // Cross-module: PSNR of each channel plane recovers the same MSE on the 0-255 scale.
  const Tensor<double> b = random_tensor<double>(Shape{1, 3, 8, 8}, rng, 0.0, 1.0);
  const double ours = pixel_loss(va, tape.constant(b), PixelDistance::squared).value()[0] * 255.0 * 255.0;
  const Image ia = from_tensor(a), ib = from_tensor(b);
  double total = 0;
  for (Index c = 0; c < 3; ++c) {
    Plane pa(8, 8), pb(8, 8);
    for (Index i = 0; i < 64; ++i) {
      pa.values[static_cast<std::size_t>(i)] = ia.values[static_cast<std::size_t>(i * 3 + c)];
      pb.values[static_cast<std::size_t>(i)] = ib.values[static_cast<std::size_t>(i * 3 + c)];
    }
    total += 255.0 * 255.0 / std::pow(10.0, psnr(pa, pb).value / 10.0);
  }
  EXPECT_NEAR(ours, total / 3.0, 1e-9 * total);
  EXPECT_THROW(pixel_loss(va, tape.constant(Tensor<double>(Shape{1, 3, 8, 4})), PixelDistance::squared), ShapeError);
}

TEST(ProxyLoss, BoundsAndFreezeContract) {
  auto params = init_proxy<double>(ProxyConfig{16, 16, 1.0}, 3);
  std::mt19937_64 rng(4);
  const Tensor<double> x = random_tensor<double>(Shape{2, 3, 16, 16}, rng, 0, 1);
  auto fill = [&](double bias) {
    auto& w = params.get("proxy.dense.weight");
    for (Index i = 0; i < w.size(); ++i) w[i] = 0;
    params.get("proxy.dense.bias")[0] = bias;
  };
  {
    fill(1.0);
    Tape<double> tape;
    BoundParameters<double> frozen(tape, params, false);
    EXPECT_DOUBLE_EQ(proxy_loss(tape.constant(x), tape.constant(x), frozen, 1.0).value()[0], 0.0);
  }
  {
    fill(0.0);
    Tape<double> tape;
    BoundParameters<double> frozen(tape, params, false);
    EXPECT_DOUBLE_EQ(proxy_loss(tape.constant(x), tape.constant(x), frozen, 1.0).value()[0], 1.0);
  }
  params = init_proxy<double>(ProxyConfig{16, 16, 1.0}, 3);
  Tape<double> tape;
  BoundParameters<double> frozen(tape, params, false);
  const auto xh = tape.leaf(random_tensor<double>(Shape{2, 3, 16, 16}, rng, 0, 1));
  tape.backward(proxy_loss(tape.constant(x), xh, frozen, 1.0));
  for (const auto& e : params) EXPECT_FALSE(e.tensor.has_grad()) << e.name;
  double norm = 0;
  for (double g : xh.grad()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
}

TEST(TotalLoss, AlphaZeroIsTheRdObjectiveBitwise) {
  std::mt19937_64 rng(5);
  const Tensor<double> r = random_tensor<double>(Shape{}, rng, 0.1, 1), d = random_tensor<double>(Shape{}, rng, 0, 1),
                       p = random_tensor<double>(Shape{}, rng, 0, 1);
  Tape<double> a, b;
  auto ra = a.leaf(r), da = a.leaf(d), pa = a.leaf(p);
  auto rb = b.leaf(r), db = b.leaf(d);
  auto ta = total_loss<double>(ra, da, pa, 300.0, 0.0);
  auto tb = total_loss<double>(rb, db, std::nullopt, 300.0, 0.0);
  EXPECT_EQ(ta.value()[0], tb.value()[0]);
  EXPECT_EQ(ta.value()[0], 300.0 * d[0] + r[0]);
  a.backward(ta);
  b.backward(tb);
  EXPECT_EQ(da.grad()[0], db.grad()[0]);
  EXPECT_EQ(ra.grad()[0], rb.grad()[0]);
  EXPECT_EQ(pa.grad()[0], 0.0);

  Tape<double> c;
  const double v = total_loss<double>(c.constant(r), c.constant(d), c.constant(p), 64.0, 0.25).value()[0];
  EXPECT_NEAR(v, 64.0 * (0.25 * p[0] + 0.75 * d[0]) + r[0], 1e-12);
}

// Finite differences of the full training objective (frozen proxy, fixed noise)
// with respect to sampled codec parameters.
TEST(TotalLoss, CodecGradientMatchesFiniteDifferences) {
  auto codec = init_codec<double>(CodecConfig{4, 3}, 21);
  auto proxy = init_proxy<double>(ProxyConfig{16, 16, 1.0}, 22);
  std::mt19937_64 data_rng(23);
  const Tensor<double> x = random_tensor<double>(Shape{2, 3, 16, 16}, data_rng, 0, 1);
  auto objective = [&](bool with_backward) {
    Tape<double> tape;
    BoundParameters<double> c(tape, codec, with_backward);
    BoundParameters<double> p(tape, proxy, false);
    std::mt19937_64 noise(24);
    const auto xv = tape.constant(x);
    const auto y = quantize_train(analyze(xv, c), noise);
    const auto xh = synthesize(y, c);
    const auto lt = total_loss<double>(rate_loss(y, c, 2 * 16 * 16), pixel_loss(xv, xh, PixelDistance::squared),
                                       proxy_loss(xv, xh, p, 1.0), 64.0, 0.3);
    if (with_backward) tape.backward(lt);
    return lt.value()[0];
  };
  codec.zero_grad();
  objective(true);
  std::mt19937_64 pick(25);
  const double eps = 1e-5;
  double worst = 0;
  for (const char* name : {"analysis.conv0.kernel", "analysis.gdn1.gamma", "synthesis.conv2.kernel",
                           "synthesis.igdn0.beta", "entropy.matrix1", "entropy.bias2", "synthesis.conv1.bias"}) {
    Tensor<double>& t = codec.get(name);
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (int trial = 0; trial < 4; ++trial) {
      const Index i = std::uniform_int_distribution<Index>(0, t.size() - 1)(pick);
      const double orig = t[i];
      t[i] = orig + eps;
      const double up = objective(false);
      t[i] = orig - eps;
      const double down = objective(false);
      t[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[static_cast<std::size_t>(i)];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-2) << name << "[" << i << "] analytic " << a << " numeric " << numeric;
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(SsimGraph, MatchesMetricsModule) {
  std::mt19937_64 rng(7);
  for (const char* name : {"astronaut.png", "brick.png", "coins.png", "grass.png"}) {
    const Tensor<double> x = natural_patch<double>(name, 32);
    Tensor<double> xh = x;
    std::normal_distribution<double> noise(0.0, 0.05);
    for (Index i = 0; i < xh.size(); ++i) xh[i] = std::clamp(xh[i] + noise(rng), 0.0, 1.0);
    Tape<double> tape;
    const double ours = ssim_graph(tape.constant(x), tape.constant(xh)).value()[0];
    const double ref = ssim(luma(from_tensor(x)), luma(from_tensor(xh))).value;
    EXPECT_NEAR(ours, ref, 1e-5) << name;
    EXPECT_NEAR(ssim_graph(tape.constant(x), tape.constant(x)).value()[0], 1.0, 1e-12);
  }
}

TEST(SsimGraph, PerSampleScores) {
  Tensor<double> pair(Shape{2, 3, 16, 16});
  const Tensor<double> a = natural_patch<double>("coffee.png", 16), b = natural_patch<double>("rocket.png", 16);
  std::copy(a.values().begin(), a.values().end(), pair.values().begin());
  std::copy(b.values().begin(), b.values().end(), pair.values().begin() + a.size());
  Tensor<double> noisy = pair;
  for (Index i = 0; i < noisy.size(); ++i) noisy[i] = 0.5 * noisy[i] + 0.25;
  Tape<double> tape;
  const auto s = ssim_graph(tape.constant(pair), tape.constant(noisy));
  ASSERT_EQ(s.shape(), (Shape{2}));
  const auto s0 = ssim_graph(tape.constant(a), tape.constant(Tensor<double>(Shape{1, 3, 16, 16}, Buffer<double>(noisy.values().begin(), noisy.values().begin() + a.size()))));
  EXPECT_DOUBLE_EQ(s.value()[0], s0.value()[0]);
  EXPECT_THROW(ssim_graph(tape.constant(Tensor<double>(Shape{1, 3, 8, 8})), tape.constant(Tensor<double>(Shape{1, 3, 8, 8}))),
               ShapeError);
}

TEST(SsimGraph, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + trial % 2, h = 11 + trial % 4, w = 11 + (trial / 4) % 3;
    const Tensor<double> x = random_tensor<double>(Shape{n, 3, h, w}, rng, 0, 1);
    const Tensor<double> xh = random_tensor<double>(Shape{n, 3, h, w}, rng, 0, 1);
    const GraphBuilder<double> g = [](Tape<double>&, const std::vector<Var<double>>& in) {
      return ssim_graph(in[0], in[1]);
    };
    const auto r = check_gradients<double>({x, xh}, g, 100 + trial, {}, 1e-4);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.describe();
  }
}

TEST(SyntheticDistortion, StaysInRangeAndSpreadsScores) {
  std::mt19937_64 rng(9);
  const Tensor<float> x = sample_batch(shared_store(), 64, 32, rng);
  const Tensor<float> d = synthetic_distortion(x, rng);
  for (Index i = 0; i < d.size(); ++i) ASSERT_TRUE(d[i] >= 0.0f && d[i] <= 1.0f);
  const auto oracle = make_oracle("ssim");
  const auto scores = oracle_scores(*oracle, x, d);
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  EXPECT_LT(*lo, 0.5);
  EXPECT_GT(*hi, 0.95);
}

TEST(Trainer, StepsAreBitReproducible) {
  Trainer a(small_config(TrainMode::alternating), shared_store());
  Trainer b(small_config(TrainMode::alternating), shared_store());
  for (int i = 0; i < 4; ++i) {
    a.step();
    b.step();
  }
  EXPECT_TRUE(a.codec_params().same_values(b.codec_params()));
  EXPECT_TRUE(a.proxy_params().same_values(b.proxy_params()));
  EXPECT_EQ(a.log().to_csv(), b.log().to_csv());
}

TEST(Trainer, ParameterIsolation) {
  Trainer t(small_config(TrainMode::alternating), shared_store());
  t.prepare();
  std::mt19937_64 rng(12);
  const Tensor<float> x = sample_batch(shared_store(), 4, 16, rng);
  const auto proxy_before = t.proxy_params().cast<float>();
  auto codec_before = t.codec_params().cast<float>();
  const auto cs = t.train_step_codec(x, 1e-3);
  EXPECT_TRUE(t.proxy_params().same_values(proxy_before));
  EXPECT_FALSE(t.codec_params().same_values(codec_before));

  codec_before = t.codec_params().cast<float>();
  ASSERT_TRUE(t.train_step_proxy(x, cs.x_hat, 1e-3));
  EXPECT_TRUE(t.codec_params().same_values(codec_before));
  EXPECT_FALSE(t.proxy_params().same_values(proxy_before));
}

TEST(Trainer, LoggedTotalsRecomposeInEveryMode) {
  for (TrainMode mode : {TrainMode::alternating, TrainMode::fixed_proxy, TrainMode::direct_ssim, TrainMode::mse_baseline}) {
    for (bool pure : {false, true}) {
      if (pure && mode != TrainMode::direct_ssim) continue;
      TrainConfig c = small_config(mode, 6);
      c.alpha = 0.3;
      c.pure_ssim = pure;
      Trainer t(c, shared_store());
      t.run();
      ASSERT_EQ(t.log().records.size(), 6u);
      for (const auto& r : t.log().records) {
        EXPECT_NEAR(recompose_total(r, c), r.lt, 1e-5 * std::abs(r.lt)) << to_string(mode) << " step " << r.step;
        EXPECT_EQ(r.m_true.size(), 4u);
        if (mode != TrainMode::mse_baseline) EXPECT_EQ(r.m_hat.size(), r.m_true.size());
      }
    }
  }
}

TEST(Trainer, AlphaZeroAlternatingMatchesMseBaseline) {
  TrainConfig alt = small_config(TrainMode::alternating, 12);
  alt.alpha = 0.0;
  TrainConfig base = alt;
  base.mode = TrainMode::mse_baseline;
  Trainer a(alt, shared_store()), b(base, shared_store());
  a.run();
  b.run();
  EXPECT_GT(a.log().proxy_steps, 0);
  EXPECT_EQ(b.log().proxy_steps, 0);
  EXPECT_TRUE(a.codec_params().same_values(b.codec_params()));
  for (std::size_t i = 0; i < a.log().records.size(); ++i) {
    EXPECT_EQ(a.log().records[i].lt, b.log().records[i].lt);
    EXPECT_EQ(a.log().records[i].m_true, b.log().records[i].m_true);
  }
}

TEST(Trainer, FixedProxyNeverChangesAfterPretraining) {
  Trainer t(small_config(TrainMode::fixed_proxy, 15), shared_store());
  const auto init = t.proxy_params().cast<float>();
  t.prepare();
  EXPECT_FALSE(t.proxy_params().same_values(init));
  EXPECT_EQ(t.log().proxy_steps, 20);
  const auto pretrained = t.proxy_params().cast<float>();
  t.run();
  EXPECT_TRUE(t.proxy_params().same_values(pretrained));
  EXPECT_EQ(t.log().proxy_steps, 20);
}

TEST(Trainer, MseDecreasesOnASingleImage) {
  PatchStore one;
  one.entries.push_back({"astronaut.png", 1.0, 0, 0, crop(read_image(kTrain / "astronaut.png"), 64, 64, 64, 64)});
  TrainConfig c = small_config(TrainMode::alternating, 500);
  c.alpha = 0.0;
  c.lambda = 1024;
  c.codec = {16, 3};
  Trainer t(c, one);
  t.run();
  std::vector<double> window;
  for (int w = 0; w < 5; ++w) {
    double acc = 0;
    for (int i = 0; i < 100; ++i) acc += t.log().records[static_cast<std::size_t>(w * 100 + i)].ld;
    window.push_back(acc / 100);
  }
  for (int w = 1; w < 5; ++w) EXPECT_LT(window[w], window[w - 1]) << "window " << w;
}

TEST(Trainer, ProxyLearnsAFrozenDistribution) {
  // Reconstructions of a briefly trained codec that then stays frozen.
  TrainConfig c = small_config(TrainMode::mse_baseline, 300);
  c.patch = 32;
  c.batch = 8;
  Trainer t(c, shared_store());
  t.run();
  const auto codec_before = t.codec_params().cast<float>();
  std::mt19937_64 rng(13), noise(14);
  std::vector<double> gaps;
  for (int s = 0; s < 1000; ++s) {
    const Tensor<float> x = sample_batch(shared_store(), 8, 32, rng);
    Tape<float> tape;
    BoundParameters<float> codec(tape, t.codec_params(), false);
    const Tensor<float> xh = synthesize(quantize_train(analyze(tape.constant(x), codec), noise), codec).value();
    if (s >= 950) {
      BoundParameters<float> frozen(tape, t.proxy_params(), false);
      const auto scores = proxy_score(tape.constant(x), tape.constant(xh), frozen);
      const auto truth = oracle_scores(*make_oracle("ssim"), x, xh);
      for (std::size_t i = 0; i < truth.size(); ++i) gaps.push_back(std::abs(truth[i] - scores.value()[static_cast<Index>(i)]));
    }
    ASSERT_TRUE(t.train_step_proxy(x, xh, 1e-3));
  }
  EXPECT_LT(mean_std(gaps).mean, 0.05 * c.m_max);
  EXPECT_TRUE(t.codec_params().same_values(codec_before));
}

TEST(Trainer, OracleFailureSkipsProxySteps) {
  Trainer t(small_config(TrainMode::alternating, 3), shared_store(), std::make_unique<ThrowingOracle>());
  t.run();
  EXPECT_EQ(t.log().proxy_steps, 0);
  EXPECT_EQ(t.log().proxy_steps_skipped, 5 + 3);
  EXPECT_EQ(t.log().records.size(), 3u);
  EXPECT_TRUE(t.log().records[0].m_true.empty());
}

TEST(Trainer, NonFiniteLossHalvesOnceThenAborts) {
  Trainer t(small_config(TrainMode::mse_baseline, 10), shared_store());
  auto& bias = t.codec_params().get("synthesis.conv2.bias");
  bias[0] = std::numeric_limits<float>::quiet_NaN();
  const auto before = t.codec_params().cast<float>();
  const TrainRecord& r = t.step();
  EXPECT_TRUE(r.skipped);
  EXPECT_DOUBLE_EQ(r.lr, 1e-3);
  EXPECT_THROW(t.step(), NumericError);
  bias[0] = 0;  // the first skipped step left every other parameter untouched
  auto restored = before.cast<float>();
  restored.get("synthesis.conv2.bias")[0] = 0;
  EXPECT_TRUE(t.codec_params().same_values(restored));
}

TEST(Trainer, RunWritesArtifacts) {
  const auto dir = std::filesystem::temp_directory_path() / "pxiqa_trainer_run";
  std::filesystem::remove_all(dir);
  TrainConfig c = small_config(TrainMode::alternating, 6);
  c.checkpoint_every = 3;
  Trainer t(c, shared_store());
  t.run(dir);
  for (const char* f : {"codec.ckpt", "manifest.json", "proxy.ckpt", "log.csv", "train_config.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "step_00000003" / "codec.ckpt"));
  const auto model = load_model(dir);
  EXPECT_TRUE(model.params.same_values(t.codec_params()));
  EXPECT_EQ(model.manifest.mode, "alternating");
  const std::string csv = read_text_file(dir / "log.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,lt,lr_bpp,ld,lp,m_true_mean,m_true_std,m_hat_mean,m_hat_std,lr");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(TrainConfig::load(dir / "train_config.json").to_json(), c.to_json());
  std::filesystem::remove_all(dir);
}

TEST(TrainLog, TailPairsAndStatistics) {
  TrainLog log;
  for (int i = 0; i < 10; ++i) log.records.push_back({i, 0, 0, 0, 0, {double(i), double(i) + 1}, {double(i), double(i) + 2}, 0, false});
  const auto [m, h] = log.tail_pairs(0.2);
  EXPECT_EQ(m, (std::vector<double>{8, 9, 9, 10}));
  EXPECT_EQ(h, (std::vector<double>{8, 10, 9, 11}));
  EXPECT_NEAR(pearson(m, h), pearson(h, m), 1e-15);
  const MeanStd s = mean_std({1, 3});
  EXPECT_DOUBLE_EQ(s.mean, 2);
  EXPECT_DOUBLE_EQ(s.std, 1);
  EXPECT_TRUE(std::isnan(mean_std({}).mean));
}
