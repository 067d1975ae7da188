#include "pxiqa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "pxiqa/checkpoint.hpp"
#include "pxiqa/ops.hpp"

namespace pxiqa {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Independent streams derived from one seed.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
  return std::mt19937_64(seq);
}

enum StreamId : std::uint32_t { kCodecInit = 1, kProxyInit, kBatches, kNoise, kAux };

bool all_finite(const ParameterSet<float>& params) {
  for (const auto& e : params) {
    if (!e.tensor.has_grad()) continue;
    for (float g : e.tensor.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

std::string first_nonfinite(const ParameterSet<float>& params) {
  for (const auto& e : params) {
    if (!e.tensor.has_grad()) continue;
    for (float g : e.tensor.grad()) {
      if (!std::isfinite(g)) return e.name;
    }
  }
  return "none";
}

template <typename T>
T scalar(Var<T> v) {
  return v.value()[0];
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::alternating: return "alternating";
    case TrainMode::fixed_proxy: return "fixed-proxy";
    case TrainMode::direct_ssim: return "direct-ssim";
    case TrainMode::mse_baseline: return "mse-baseline";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& text) {
  for (TrainMode m : {TrainMode::alternating, TrainMode::fixed_proxy, TrainMode::direct_ssim, TrainMode::mse_baseline}) {
    if (to_string(m) == text) return m;
  }
  throw InvalidArgument("unknown training mode '" + text +
                        "' (expected alternating, fixed-proxy, direct-ssim or mse-baseline)");
}

std::string to_string(PixelDistance distance) {
  return distance == PixelDistance::squared ? "squared" : "absolute";
}

PixelDistance parse_pixel_distance(const std::string& text) {
  if (text == "squared") return PixelDistance::squared;
  if (text == "absolute") return PixelDistance::absolute;
  throw InvalidArgument("unknown pixel distance '" + text + "' (expected squared or absolute)");
}

void TrainConfig::validate() const {
  if (!(lambda > 0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be positive and finite");
  if (!(alpha >= 0 && alpha <= 1)) throw InvalidArgument("alpha must lie in [0, 1]");
  if (!(m_max > 0)) throw InvalidArgument("m_max must be positive");
  if (batch <= 0 || patch <= 0 || patch % kCodecFactor != 0) {
    throw InvalidArgument("batch must be positive and patch a positive multiple of 8");
  }
  if (steps < 0 || proxy_warmup_steps < 0 || proxy_pretrain_steps < 0 || checkpoint_every < 0) {
    throw InvalidArgument("step counts must be non-negative");
  }
  if (proxy_steps_per_codec_step < 0) throw InvalidArgument("proxy cadence must be non-negative");
  if (codec.filters <= 0 || codec.kernel <= 0 || codec.kernel % 2 == 0) {
    throw InvalidArgument("codec filters must be positive and the kernel odd");
  }
  if (lr_schedule.empty() || lr_schedule.front().start != 0) {
    throw InvalidArgument("the learning-rate schedule must start at step 0");
  }
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].rate > 0)) throw InvalidArgument("learning rates must be positive");
    if (i > 0 && lr_schedule[i].start <= lr_schedule[i - 1].start) {
      throw InvalidArgument("learning-rate schedule steps must be strictly increasing");
    }
  }
  if (metric == "external" && external_scorer.empty()) {
    throw InvalidArgument("metric 'external' needs external_scorer");
  }
}

double TrainConfig::learning_rate(std::int64_t step) const {
  double rate = lr_schedule.front().rate;
  for (const auto& phase : lr_schedule) {
    if (step >= phase.start) rate = phase.rate;
  }
  return rate;
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["lambda"] = lambda;
  j["alpha"] = alpha;
  j["distance"] = to_string(distance);
  j["metric"] = metric;
  if (!external_scorer.empty()) j["external_scorer"] = external_scorer;
  j["m_max"] = m_max;
  j["batch"] = batch;
  j["patch"] = patch;
  j["filters"] = codec.filters;
  j["kernel"] = codec.kernel;
  j["steps"] = steps;
  auto& sched = j["lr_schedule"] = nlohmann::ordered_json::array();
  for (const auto& p : lr_schedule) sched.push_back({p.start, p.rate});
  j["seed"] = seed;
  j["mode"] = to_string(mode);
  j["pure_ssim"] = pure_ssim;
  j["proxy_steps_per_codec_step"] = proxy_steps_per_codec_step;
  j["proxy_warmup_steps"] = proxy_warmup_steps;
  j["proxy_pretrain_steps"] = proxy_pretrain_steps;
  j["checkpoint_every"] = checkpoint_every;
  return j.dump(2) + "\n";
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    static const char* known[] = {"lambda", "alpha", "distance", "metric", "external_scorer", "m_max", "batch",
                                  "patch", "filters", "kernel", "steps", "lr_schedule", "seed", "mode",
                                  "pure_ssim", "proxy_steps_per_codec_step", "proxy_warmup_steps",
                                  "proxy_pretrain_steps", "checkpoint_every"};
    for (const auto& [key, value] : j.items()) {
      if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
        throw InvalidArgument("unknown training config key '" + key + "'");
      }
    }
    c.lambda = j.value("lambda", c.lambda);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("distance")) c.distance = parse_pixel_distance(j["distance"].get<std::string>());
    c.metric = j.value("metric", c.metric);
    c.external_scorer = j.value("external_scorer", c.external_scorer);
    c.m_max = j.value("m_max", c.m_max);
    c.batch = j.value("batch", c.batch);
    c.patch = j.value("patch", c.patch);
    c.codec.filters = j.value("filters", c.codec.filters);
    c.codec.kernel = j.value("kernel", c.codec.kernel);
    c.steps = j.value("steps", c.steps);
    if (j.contains("lr_schedule")) {
      c.lr_schedule.clear();
      for (const auto& p : j["lr_schedule"]) c.lr_schedule.push_back({p.at(0).get<std::int64_t>(), p.at(1).get<double>()});
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) c.mode = parse_train_mode(j["mode"].get<std::string>());
    c.pure_ssim = j.value("pure_ssim", c.pure_ssim);
    c.proxy_steps_per_codec_step = j.value("proxy_steps_per_codec_step", c.proxy_steps_per_codec_step);
    c.proxy_warmup_steps = j.value("proxy_warmup_steps", c.proxy_warmup_steps);
    c.proxy_pretrain_steps = j.value("proxy_pretrain_steps", c.proxy_pretrain_steps);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) { return from_json(read_text_file(path)); }

double recompose_total(const TrainRecord& r, const TrainConfig& c) {
  switch (c.mode) {
    case TrainMode::mse_baseline: return c.lambda * r.ld + r.lr_bpp;
    case TrainMode::direct_ssim:
      if (c.pure_ssim) return c.lambda * r.lp + r.lr_bpp;
      [[fallthrough]];
    default: return c.lambda * (c.alpha * r.lp + (1 - c.alpha) * r.ld) + r.lr_bpp;
  }
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {kNaN, kNaN};
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "step,lt,lr_bpp,ld,lp,m_true_mean,m_true_std,m_hat_mean,m_hat_std,lr\n";
  for (const auto& r : records) {
    const MeanStd t = mean_std(r.m_true), h = mean_std(r.m_hat);
    os << r.step << ',' << r.lt << ',' << r.lr_bpp << ',' << r.ld << ',' << r.lp << ',' << t.mean << ',' << t.std
       << ',' << h.mean << ',' << h.std << ',' << r.lr << '\n';
  }
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const { write_text_file(path, to_csv()); }

std::pair<std::vector<double>, std::vector<double>> TrainLog::tail_pairs(double fraction) const {
  std::pair<std::vector<double>, std::vector<double>> out;
  const std::size_t count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(records.size())));
  for (std::size_t i = records.size() - std::min(count, records.size()); i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.m_true.size() != r.m_hat.size()) continue;
    out.first.insert(out.first.end(), r.m_true.begin(), r.m_true.end());
    out.second.insert(out.second.end(), r.m_hat.begin(), r.m_hat.end());
  }
  return out;
}

template <typename T>
Var<T> pixel_loss(Var<T> x, Var<T> x_hat, PixelDistance distance) {
  return distance == PixelDistance::squared ? mse(x, x_hat) : mae(x, x_hat);
}

template <typename T>
Var<T> proxy_loss(Var<T> x, Var<T> x_hat, const BoundParameters<T>& proxy, double m_max) {
  return add_scalar(scale(mean(proxy_score(x, x_hat, proxy)), T(-1)), static_cast<T>(m_max));
}

template <typename T>
Var<T> ssim_graph(Var<T> x, Var<T> x_hat) {
  const Shape& s = x.shape();
  if (s.rank() != 4 || s[1] != 3 || s != x_hat.shape()) {
    throw ShapeError("ssim_graph needs matching N x 3 x H x W inputs, got " + s.str() + " and " +
                     x_hat.shape().str());
  }
  const SsimConfig cfg;
  if (s[2] < cfg.window || s[3] < cfg.window) throw ShapeError("ssim_graph: image smaller than the window");
  Tape<T>& tape = x.tape();
  const Var<T> to_luma = tape.constant(Tensor<T>(Shape{1, 3, 1, 1}, {T(0.299), T(0.587), T(0.114)}));
  const std::vector<double> taps = gaussian_taps(cfg.window, cfg.sigma);
  Buffer<T> tv(taps.begin(), taps.end());
  const Var<T> gh = tape.constant(Tensor<T>(Shape{1, 1, 1, cfg.window}, tv));
  const Var<T> gv = tape.constant(Tensor<T>(Shape{1, 1, cfg.window, 1}, tv));
  auto blur = [&](Var<T> v) { return conv2d(conv2d(v, gh, 1, Padding::valid), gv, 1, Padding::valid); };

  const Var<T> a = conv2d(x, to_luma, 1, Padding::valid);
  const Var<T> b = conv2d(x_hat, to_luma, 1, Padding::valid);
  const Var<T> mu_a = blur(a), mu_b = blur(b);
  const Var<T> mu_ab = mul(mu_a, mu_b);
  const Var<T> var_a = sub(blur(square(a)), square(mu_a));
  const Var<T> var_b = sub(blur(square(b)), square(mu_b));
  const Var<T> cov = sub(blur(mul(a, b)), mu_ab);
  const T c1 = static_cast<T>((cfg.k1 * 1.0) * (cfg.k1 * 1.0));
  const T c2 = static_cast<T>((cfg.k2 * 1.0) * (cfg.k2 * 1.0));
  const Var<T> num = mul(add_scalar(scale(mu_ab, T(2)), c1), add_scalar(scale(cov, T(2)), c2));
  const Var<T> den = mul(add_scalar(add(square(mu_a), square(mu_b)), c1), add_scalar(add(var_a, var_b), c2));
  const Var<T> map = div(num, den);

  const Index n = s[0];
  const Index count = map.value().size() / n;
  Tensor<T> w(Shape{1, count});
  std::fill(w.values().begin(), w.values().end(), T(1) / static_cast<T>(count));
  const Var<T> per = dense(map, tape.constant(std::move(w)), tape.constant(Tensor<T>(Shape{1})));
  return reshape(per, Shape{n});
}

template <typename T>
Var<T> total_loss(Var<T> rate, Var<T> distortion, std::optional<Var<T>> perceptual, double lambda, double alpha) {
  if (!perceptual) return add(scale(distortion, static_cast<T>(lambda)), rate);
  const Var<T> mix = add(scale(*perceptual, static_cast<T>(alpha)), scale(distortion, static_cast<T>(1 - alpha)));
  return add(scale(mix, static_cast<T>(lambda)), rate);
}

std::vector<double> oracle_scores(MetricOracle& oracle, const Tensor<float>& x, const Tensor<float>& x_hat) {
  if (x.shape() != x_hat.shape() || x.rank() != 4) {
    throw ShapeError("oracle_scores: mismatched batches " + x.shape().str() + " and " + x_hat.shape().str());
  }
  std::vector<double> out;
  for (Index n = 0; n < x.dim(0); ++n) out.push_back(oracle.score(from_tensor(x, n), from_tensor(x_hat, n)));
  return out;
}

Tensor<float> synthetic_distortion(const Tensor<float>& x, std::mt19937_64& rng) {
  if (x.rank() != 4) throw ShapeError("synthetic_distortion needs N x C x H x W, got " + x.shape().str());
  const Index n_batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<float> out = x;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index n = 0; n < n_batch; ++n) {
    const int kind = std::uniform_int_distribution<int>(0, 3)(rng);
    const double u = unit(rng);
    const double mix = 0.8 * u * u;  // share of the clean image kept, biased toward strong distortion
    const double sigma = 0.005 + 0.245 * unit(rng);
    const int radius = std::uniform_int_distribution<int>(1, 3)(rng);
    const int levels = std::uniform_int_distribution<int>(3, 32)(rng);
    const Index block = Index{2} << std::uniform_int_distribution<int>(0, 2)(rng);
    std::normal_distribution<double> noise(0.0, sigma);
    for (Index c = 0; c < channels; ++c) {
      for (Index y = 0; y < h; ++y) {
        for (Index xx = 0; xx < w; ++xx) {
          const double v = x.at(n, c, y, xx);
          double d = v;
          switch (kind) {
            case 0: d = v + noise(rng); break;
            case 1: {
              double acc = 0;
              int cnt = 0;
              for (Index dy = -radius; dy <= radius; ++dy) {
                for (Index dx = -radius; dx <= radius; ++dx) {
                  acc += x.at(n, c, std::clamp<Index>(y + dy, 0, h - 1), std::clamp<Index>(xx + dx, 0, w - 1));
                  ++cnt;
                }
              }
              d = acc / cnt;
              break;
            }
            case 2: d = std::round(v * (levels - 1)) / (levels - 1); break;
            default: {
              const Index y0 = y / block * block, x0 = xx / block * block;
              double acc = 0;
              int cnt = 0;
              for (Index yy = y0; yy < std::min(h, y0 + block); ++yy) {
                for (Index xb = x0; xb < std::min(w, x0 + block); ++xb) {
                  acc += x.at(n, c, yy, xb);
                  ++cnt;
                }
              }
              d = acc / cnt;
            }
          }
          out.at(n, c, y, xx) = static_cast<float>(std::clamp(mix * v + (1 - mix) * d, 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

Trainer::Trainer(TrainConfig config, const PatchStore& store, std::unique_ptr<MetricOracle> oracle)
    : config_(std::move(config)), store_(store), oracle_(std::move(oracle)) {
  config_.validate();
  if (!oracle_) {
    oracle_ = config_.metric == "external"
                  ? std::make_unique<ExternalOracle>("external", config_.external_scorer, config_.m_max)
                  : make_oracle(config_.metric);
  }
  codec_ = init_codec<float>(config_.codec, stream(config_.seed, kCodecInit)());
  proxy_ = init_proxy<float>({config_.patch, config_.patch, config_.m_max}, stream(config_.seed, kProxyInit)());
  codec_adam_ = AdamState<float>(codec_);
  proxy_adam_ = AdamState<float>(proxy_);
  batch_rng_ = stream(config_.seed, kBatches);
  noise_rng_ = stream(config_.seed, kNoise);
  aux_rng_ = stream(config_.seed, kAux);
}

std::vector<double> Trainer::safe_oracle_scores(const Tensor<float>& x, const Tensor<float>& x_hat, bool* ok) {
  try {
    *ok = true;
    return oracle_scores(*oracle_, x, x_hat);
  } catch (const Error&) {
    *ok = false;
    return {};
  }
}

void Trainer::prepare() {
  if (prepared_) return;
  prepared_ = true;
  const double lr = config_.learning_rate(0);
  if (config_.mode == TrainMode::alternating) {
    for (std::int64_t i = 0; i < config_.proxy_warmup_steps; ++i) {
      const Tensor<float> x = sample_batch(store_, config_.batch, config_.patch, aux_rng_);
      Tape<float> tape;
      const BoundParameters<float> frozen(tape, codec_, false);
      const Var<float> x_hat = synthesize(quantize_train(analyze(tape.constant(x), frozen), aux_rng_), frozen);
      train_step_proxy(x, x_hat.value(), lr);
    }
  } else if (config_.mode == TrainMode::fixed_proxy) {
    for (std::int64_t i = 0; i < config_.proxy_pretrain_steps; ++i) {
      const Tensor<float> x = sample_batch(store_, config_.batch, config_.patch, aux_rng_);
      train_step_proxy(x, synthetic_distortion(x, aux_rng_), lr);
    }
  }
}

Trainer::CodecStep Trainer::train_step_codec(const Tensor<float>& x, double learning_rate) {
  codec_.zero_grad();
  Tape<float> tape;
  const BoundParameters<float> codec(tape, codec_, true);
  const Var<float> xv = tape.constant(x);
  const Var<float> y_tilde = quantize_train(analyze(xv, codec), noise_rng_);
  const Var<float> x_hat = synthesize(y_tilde, codec);
  const Var<float> rate = rate_loss(y_tilde, codec, x.dim(0) * x.dim(2) * x.dim(3));
  const Var<float> distortion = pixel_loss(xv, x_hat, config_.distance);

  CodecStep out;
  TrainRecord& r = out.record;
  std::optional<Var<float>> perceptual;
  if (config_.mode == TrainMode::alternating || config_.mode == TrainMode::fixed_proxy) {
    const BoundParameters<float> frozen(tape, proxy_, false);
    const Var<float> scores = proxy_score(xv, x_hat, frozen);
    perceptual = add_scalar(scale(mean(scores), -1.0f), static_cast<float>(config_.m_max));
    r.m_hat.assign(scores.value().values().begin(), scores.value().values().end());
  } else if (config_.mode == TrainMode::direct_ssim) {
    const Var<float> s = ssim_graph(xv, x_hat);
    perceptual = add_scalar(scale(mean(s), -1.0f), 1.0f);
    r.m_hat.assign(s.value().values().begin(), s.value().values().end());
  }
  const Var<float> total = (config_.mode == TrainMode::direct_ssim && config_.pure_ssim)
                               ? add(scale(*perceptual, static_cast<float>(config_.lambda)), rate)
                               : total_loss(rate, distortion, perceptual, config_.lambda, config_.alpha);
  r.step = step_;
  r.lt = scalar(total);
  r.lr_bpp = scalar(rate);
  r.ld = scalar(distortion);
  r.lp = perceptual ? scalar(*perceptual) : kNaN;
  r.lr = learning_rate;

  tape.backward(total);
  if (!std::isfinite(r.lt) || !all_finite(codec_)) {
    r.skipped = true;
    const std::string where = first_nonfinite(codec_);
    codec_.zero_grad();
    if (++nonfinite_ > 1) {
      throw NumericError("non-finite training loss at step " + std::to_string(step_) + " after halving the learning rate (lt=" +
                         std::to_string(r.lt) + ", rate=" + std::to_string(r.lr_bpp) + ", distortion=" +
                         std::to_string(r.ld) + ", first non-finite gradient: " + where + ")");
    }
    lr_scale_ *= 0.5;
  } else {
    codec_adam_.apply(codec_, learning_rate);
  }
  out.x_hat = x_hat.value();
  return out;
}

bool Trainer::train_step_proxy(const Tensor<float>& x, const Tensor<float>& x_hat, double learning_rate,
                               const std::vector<double>* m_true) {
  std::vector<double> scored;
  if (m_true == nullptr) {
    bool ok = false;
    scored = safe_oracle_scores(x, x_hat, &ok);
    if (!ok) {
      ++log_.proxy_steps_skipped;
      return false;
    }
    m_true = &scored;
  }
  proxy_.zero_grad();
  Tape<float> tape;
  const BoundParameters<float> proxy(tape, proxy_, true);
  const Var<float> loss = metric_loss(proxy_score(tape.constant(x), tape.constant(x_hat), proxy), *m_true);
  tape.backward(loss);
  if (!std::isfinite(loss.value()[0]) || !all_finite(proxy_)) {
    proxy_.zero_grad();
    ++log_.proxy_steps_skipped;
    return false;
  }
  proxy_adam_.apply(proxy_, learning_rate);
  ++log_.proxy_steps;
  return true;
}

const TrainRecord& Trainer::step() {
  prepare();
  const double lr = config_.learning_rate(step_) * lr_scale_;
  const Tensor<float> x = sample_batch(store_, config_.batch, config_.patch, batch_rng_);
  CodecStep cs = train_step_codec(x, lr);
  bool ok = false;
  cs.record.m_true = safe_oracle_scores(x, cs.x_hat, &ok);
  if (config_.mode == TrainMode::alternating) {
    for (int k = 0; k < config_.proxy_steps_per_codec_step; ++k) {
      if (ok) {
        train_step_proxy(x, cs.x_hat, lr, &cs.record.m_true);
      } else {
        ++log_.proxy_steps_skipped;
      }
    }
  }
  log_.records.push_back(std::move(cs.record));
  ++step_;
  return log_.records.back();
}

CodecManifest Trainer::manifest() const {
  return make_manifest(codec_, config_.codec, config_.lambda, config_.alpha, config_.metric, to_string(config_.mode));
}

void Trainer::save(const std::filesystem::path& dir) const {
  save_model(dir, codec_, manifest());
  save_checkpoint(dir / "proxy.ckpt", proxy_);
  write_text_file(dir / "train_config.json", config_.to_json());
  log_.write_csv(dir / "log.csv");
}

void Trainer::run(const std::filesystem::path& out_dir, const Progress& progress) {
  while (step_ < config_.steps) {
    const TrainRecord& r = step();
    if (progress) progress(r);
    if (!out_dir.empty() && config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0 &&
        step_ < config_.steps) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%08lld", static_cast<long long>(step_));
      save(out_dir / name);
    }
  }
  if (!out_dir.empty()) save(out_dir);
}

#define PXIQA_INSTANTIATE(T)                                                                            \
  template Var<T> pixel_loss(Var<T>, Var<T>, PixelDistance);                                            \
  template Var<T> proxy_loss(Var<T>, Var<T>, const BoundParameters<T>&, double);                        \
  template Var<T> ssim_graph(Var<T>, Var<T>);                                                           \
  template Var<T> total_loss(Var<T>, Var<T>, std::optional<Var<T>>, double, double);
PXIQA_INSTANTIATE(float)
PXIQA_INSTANTIATE(double)
#undef PXIQA_INSTANTIATE

}  // namespace pxiqa
