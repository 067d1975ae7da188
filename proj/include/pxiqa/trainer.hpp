#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pxiqa/adam.hpp"
#include "pxiqa/codec.hpp"
#include "pxiqa/dataset.hpp"
#include "pxiqa/metrics.hpp"
#include "pxiqa/proxy.hpp"

namespace pxiqa {

enum class TrainMode { alternating, fixed_proxy, direct_ssim, mse_baseline };
enum class PixelDistance { squared, absolute };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);
std::string to_string(PixelDistance distance);
PixelDistance parse_pixel_distance(const std::string& text);

// Piecewise-constant learning rate: `rate` applies from `start` until the next phase.
struct LrPhase {
  std::int64_t start = 0;
  double rate = 1e-4;
};

struct TrainConfig {
  double lambda = 256.0;
  double alpha = 3e-3;
  PixelDistance distance = PixelDistance::squared;
  std::string metric = "ssim";  // builtin oracle id, or "external" with external_scorer
  std::string external_scorer;   // executable taking ref.png dist.png
  double m_max = 1.0;
  Index batch = 8;
  Index patch = 32;
  CodecConfig codec;
  std::int64_t steps = 1000;
  std::vector<LrPhase> lr_schedule = {{0, 1e-4}, {1000000, 1e-5}};
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::alternating;
  bool pure_ssim = false;  // direct-ssim only: lambda * L_SSIM + L_r
  int proxy_steps_per_codec_step = 1;
  std::int64_t proxy_warmup_steps = 100;
  std::int64_t proxy_pretrain_steps = 2000;  // fixed-proxy: steps on synthetic distortions
  std::int64_t checkpoint_every = 0;         // 0: final checkpoint only

  // Throws InvalidArgument on lambda <= 0, alpha outside [0, 1], non-increasing
  // schedule starts, or non-positive sizes.
  void validate() const;
  double learning_rate(std::int64_t step) const;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

struct TrainRecord {
  std::int64_t step = 0;
  double lt = 0, lr_bpp = 0, ld = 0, lp = 0;
  std::vector<double> m_true;  // oracle scores of this step's reconstructions
  std::vector<double> m_hat;   // proxy (or in-graph SSIM) scores, same length when present
  double lr = 0;
  bool skipped = false;  // non-finite loss; no update applied
};

// The total implied by a record's components under `config`.
double recompose_total(const TrainRecord& record, const TrainConfig& config);

struct MeanStd {
  double mean = 0, std = 0;
};
// Population statistics; NaN for an empty series.
MeanStd mean_std(const std::vector<double>& values);

struct TrainLog {
  std::vector<TrainRecord> records;
  Index proxy_steps = 0;
  Index proxy_steps_skipped = 0;  // oracle failures

  // step,lt,lr_bpp,ld,lp,m_true_mean,m_true_std,m_hat_mean,m_hat_std,lr
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  // Pooled (M, M_hat) pairs over the last `fraction` of records.
  std::pair<std::vector<double>, std::vector<double>> tail_pairs(double fraction) const;
};

// Mean squared or mean absolute error.
template <typename T>
Var<T> pixel_loss(Var<T> x, Var<T> x_hat, PixelDistance distance);

// m_max - mean(proxy scores). Bind `proxy` frozen to honour the freeze contract.
template <typename T>
Var<T> proxy_loss(Var<T> x, Var<T> x_hat, const BoundParameters<T>& proxy, double m_max);

// Per-sample SSIM (N values) of BT.601 luma on [0, 1] inputs, 11x11 Gaussian
// window with sigma 1.5, valid region, dynamic range 1.
template <typename T>
Var<T> ssim_graph(Var<T> x, Var<T> x_hat);

// lambda * (alpha * lp + (1 - alpha) * ld) + lr; without lp, lambda * ld + lr.
// With alpha = 0 both forms give bitwise identical values and gradients.
template <typename T>
Var<T> total_loss(Var<T> rate, Var<T> distortion, std::optional<Var<T>> perceptual, double lambda, double alpha);

// Scores an N x 3 x H x W pair on [0, 1] per sample with the oracle (0-255 scale).
std::vector<double> oracle_scores(MetricOracle& oracle, const Tensor<float>& x, const Tensor<float>& x_hat);

// Noise, blur, posterization or contrast change at a random strength per sample.
Tensor<float> synthetic_distortion(const Tensor<float>& x, std::mt19937_64& rng);

class Trainer {
 public:
  // The oracle defaults to make_oracle(config.metric) (or the external scorer).
  Trainer(TrainConfig config, const PatchStore& store, std::unique_ptr<MetricOracle> oracle = nullptr);

  // Proxy warm-up (alternating) or pretraining then freezing (fixed-proxy). Runs
  // once; step() calls it on first use.
  void prepare();
  // One codec update then, in alternating mode, the configured proxy updates.
  const TrainRecord& step();
  using Progress = std::function<void(const TrainRecord&)>;
  // Runs the remaining steps; writes checkpoints, manifest and log.csv when `out_dir` is set.
  void run(const std::filesystem::path& out_dir = {}, const Progress& progress = {});

  struct CodecStep {
    TrainRecord record;
    Tensor<float> x_hat;
  };
  CodecStep train_step_codec(const Tensor<float>& x, double learning_rate);
  // Scores the detached pair with the oracle (unless `m_true` is given), then one Adam
  // step on the proxy. False when the oracle failed and the step was skipped.
  bool train_step_proxy(const Tensor<float>& x, const Tensor<float>& x_hat, double learning_rate,
                        const std::vector<double>* m_true = nullptr);

  const TrainConfig& config() const { return config_; }
  ParameterSet<float>& codec_params() { return codec_; }
  ParameterSet<float>& proxy_params() { return proxy_; }
  const TrainLog& log() const { return log_; }
  std::int64_t steps_done() const { return step_; }
  CodecManifest manifest() const;
  void save(const std::filesystem::path& dir) const;

 private:
  std::vector<double> safe_oracle_scores(const Tensor<float>& x, const Tensor<float>& x_hat, bool* ok);

  TrainConfig config_;
  const PatchStore& store_;
  std::unique_ptr<MetricOracle> oracle_;
  ParameterSet<float> codec_;
  ParameterSet<float> proxy_;
  AdamState<float> codec_adam_;
  AdamState<float> proxy_adam_;
  std::mt19937_64 batch_rng_, noise_rng_, aux_rng_;
  TrainLog log_;
  std::int64_t step_ = 0;
  bool prepared_ = false;
  double lr_scale_ = 1.0;
  int nonfinite_ = 0;
};

}  // namespace pxiqa
