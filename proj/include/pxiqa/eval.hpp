#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pxiqa/bitstream.hpp"
#include "pxiqa/trainer.hpp"

namespace pxiqa {

struct RDPoint {
  double bpp = 0;
  double quality = 0;
  std::string metric;
  std::string codec;
  std::string image;
};

// Points of one (codec, metric, image set), strictly increasing in bpp.
struct RDCurve {
  std::string codec;
  std::string metric;
  std::string image;  // image id, or the set name for averaged curves
  std::vector<RDPoint> points;

  // Throws InvalidArgument on non-positive bpp, unsorted or duplicate bpp, or mixed metrics.
  void validate() const;
  // Indices i with quality[i] <= quality[i - 1].
  std::vector<std::size_t> monotonicity_violations() const;
};

// Least-squares cubic p(q) ~ ln(bpp) on a shared affine quality scale.
struct LogRateFit {
  double center = 0, scale = 1;
  std::array<double, 4> coef{};  // in t = (q - center) / scale, ascending powers
  double operator()(double q) const;
  // Exact integral over [a, b] in quality units.
  double integral(double a, double b) const;
};
LogRateFit fit_log_rate(const RDCurve& curve, double center, double scale);

struct BdResult {
  double percent = 0;  // negative: the test curve needs fewer bits at equal quality
  double q_low = 0, q_high = 0;
};

// Bjontegaard delta rate of `test` against `reference`: cubic fits of ln(bpp) in
// quality, exact integration over the common quality interval, exp(mean) - 1.
// Throws InvalidArgument for fewer than 4 points, disjoint quality ranges, or
// quality that does not increase with bpp.
BdResult bd_rate(const RDCurve& reference, const RDCurve& test);

// CSV with header codec,image,bpp,metric,score. Rows are grouped into one curve per
// (codec, metric, image); errors name the offending line.
std::vector<RDCurve> ingest_external_rd(const std::filesystem::path& path);
std::vector<RDCurve> parse_rd_csv(const std::string& text, const std::string& source = "csv");
std::string rd_csv(const std::vector<RDCurve>& curves);

// Averages per-image curves of one (codec, metric) point by point (the k-th
// operating point of every image); all must have the same number of points.
RDCurve average_curves(const std::vector<RDCurve>& per_image, const std::string& set_name);

struct RdEvalOptions {
  std::vector<std::string> metrics = {"ssim", "msssim", "psnr"};
  std::string codec;  // defaults to the manifests' mode (+ metric for proxy modes)
  std::string set_name = "set";
  double tail_mass = kDefaultTailMass;
};

struct RdEvalResult {
  std::vector<RDCurve> per_image;  // one per (metric, image)
  std::vector<RDCurve> curves;     // set averages, one per metric
  std::vector<std::string> warnings;
  // Per model and image: payload bits and the model's bit estimate on the same rounded latents.
  struct RateCheck {
    std::string model, image;
    double payload_bits = 0, model_bits = 0;
  };
  std::vector<RateCheck> rate_checks;
};

// Encodes and decodes every image through the bitstream with every model
// (reflect-padded to a multiple of 8; bpp = payload bits / original pixels) and
// scores the decoded images on luma.
RdEvalResult rd_eval(const std::vector<std::filesystem::path>& model_dirs, const std::filesystem::path& image_dir,
                     const RdEvalOptions& options = {});

// Sum over the rounded latents of -log2 p (with the likelihood floor).
double model_bits(const Tensor<float>& rounded_latents, const ParameterSet<float>& params);

// Report directory: rd_table.csv, bd_matrix.json (codec x metric against `reference`),
// rd_<metric>.svg, and training_<name>.svg for each named training log.
struct ReportInputs {
  std::vector<RDCurve> curves;
  std::string reference = "mse-baseline";
  std::vector<std::pair<std::string, std::string>> training_logs;  // name, log CSV text
};
void write_report(const std::filesystem::path& dir, const ReportInputs& inputs);

// Collects every rd_curves.csv and log.csv below `dir`, sorted by path.
ReportInputs collect_report_inputs(const std::filesystem::path& dir);

// -10 log10(1 - ssim), for plots only.
double ssim_db(double ssim);

}  // namespace pxiqa
