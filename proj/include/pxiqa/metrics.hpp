#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pxiqa/image.hpp"

namespace pxiqa {

struct QualityScore {
  double value = 0.0;
  std::string metric;
  double peak = 0.0;  // PSNR only.
};

// Score reported for identical inputs, where MSE is zero.
inline constexpr double kPsnrCap = 100.0;

// BT.601 luma of a 3-channel image.
Plane luma(const Image& image);

QualityScore psnr(const Plane& ref, const Plane& dist, double peak = 255.0);
double psnr_avg(double psnr_y, double psnr_u, double psnr_v);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

// Means over the valid region of the luminance term l, the contrast-structure
// term cs, and their product (the SSIM map).
struct SsimTerms {
  double luminance = 0.0;
  double contrast_structure = 0.0;
  double ssim = 0.0;
};

SsimTerms ssim_terms(const Plane& ref, const Plane& dist, const SsimConfig& config = {});
QualityScore ssim(const Plane& ref, const Plane& dist, const SsimConfig& config = {});

inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

// 2x2 mean downsampling; an odd trailing row or column is dropped.
Plane downsample2(const Plane& plane);
// Contrast-structure at scales 1-4 and full SSIM at scale 5; negative factors
// are clamped to zero before exponentiation.
QualityScore ms_ssim(const Plane& ref, const Plane& dist, const SsimConfig& config = {});

// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
std::vector<double> gaussian_taps(int size, double sigma);

// A quality measure treated as a black box by training: deterministic, and
// score(x, x) == max_score().
class MetricOracle {
 public:
  virtual ~MetricOracle() = default;
  virtual std::string name() const = 0;
  virtual double max_score() const = 0;
  // Both images share geometry, on the [0, 255] scale.
  virtual double score(const Image& ref, const Image& dist) const = 0;
};

// "ssim", "msssim", "psnr". Throws InvalidArgument for unknown ids.
std::unique_ptr<MetricOracle> make_oracle(const std::string& id);
std::vector<std::string> builtin_oracle_ids();

// Runs `executable ref.png dist.png` and parses one decimal from its stdout.
class ExternalOracle : public MetricOracle {
 public:
  ExternalOracle(std::string name, std::filesystem::path executable, double max_score = 100.0,
                 std::filesystem::path scratch_dir = std::filesystem::temp_directory_path());
  std::string name() const override { return name_; }
  double max_score() const override { return max_score_; }
  double score(const Image& ref, const Image& dist) const override;

 private:
  std::string name_;
  std::filesystem::path executable_;
  double max_score_;
  std::filesystem::path scratch_dir_;
};

// Entry (i, j) counts how often stimulus i was preferred over j.
struct PairedComparisonMatrix {
  std::size_t n = 0;
  std::vector<double> wins;

  explicit PairedComparisonMatrix(std::size_t size = 0) : n(size), wins(size * size, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return wins[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return wins[i * n + j]; }
};

// Rows "i,j,count" with 0-based indices; an optional non-numeric header line is
// skipped and repeated pairs accumulate.
PairedComparisonMatrix read_pairs_csv(const std::filesystem::path& path);

struct BtOptions {
  double tolerance = 1e-8;  // on max |delta log pi|
  int max_iterations = 100000;
};

// Maximum-likelihood Bradley-Terry log-strengths via MM updates, normalized to
// zero mean (geometric-mean strength 1).
std::vector<double> bt_scores(const PairedComparisonMatrix& matrix, const BtOptions& options = {});

}  // namespace pxiqa
