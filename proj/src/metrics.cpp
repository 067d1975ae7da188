#include "pxiqa/metrics.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

extern char** environ;

namespace pxiqa {

namespace {

void require_same_plane(const Plane& a, const Plane& b, const char* op) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(op) + ": plane mismatch " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

// Valid-region separable filter.
Plane filter_valid(const Plane& in, const std::vector<double>& taps) {
  const Index k = static_cast<Index>(taps.size());
  const Index oh = in.height - k + 1, ow = in.width - k + 1;
  Plane rows(in.height, ow);
  for (Index y = 0; y < in.height; ++y) {
    const double* src = in.values.data() + y * in.width;
    for (Index x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (Index t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * src[x + t];
      rows.at(y, x) = acc;
    }
  }
  Plane out(oh, ow);
  for (Index y = 0; y < oh; ++y) {
    for (Index x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (Index t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * rows.at(y + t, x);
      out.at(y, x) = acc;
    }
  }
  return out;
}

Plane elementwise(const Plane& a, const Plane& b, const std::function<double(double, double)>& f) {
  Plane out(a.height, a.width);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = f(a.values[i], b.values[i]);
  return out;
}

std::atomic<unsigned long> scratch_counter{0};

}  // namespace

Plane luma(const Image& image) {
  if (image.channels != 3) {
    throw ShapeError("luma needs 3 channels, got " + std::to_string(image.channels));
  }
  Plane out(image.height, image.width);
  for (Index i = 0; i < image.pixel_count(); ++i) {
    const double* p = image.values.data() + i * 3;
    out.values[static_cast<std::size_t>(i)] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return out;
}

QualityScore psnr(const Plane& ref, const Plane& dist, double peak) {
  require_same_plane(ref, dist, "psnr");
  if (!(peak > 0.0)) throw InvalidArgument("psnr peak must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < ref.values.size(); ++i) {
    const double d = ref.values[i] - dist.values[i];
    acc += d * d;
  }
  const double mse = ref.values.empty() ? 0.0 : acc / static_cast<double>(ref.values.size());
  double value = kPsnrCap;
  if (mse > 0.0) value = std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
  return {value, "psnr", peak};
}

double psnr_avg(double psnr_y, double psnr_u, double psnr_v) { return (4.0 * psnr_y + psnr_u + psnr_v) / 6.0; }

std::vector<double> gaussian_taps(int size, double sigma) {
  if (size <= 0 || !(sigma > 0.0)) throw InvalidArgument("gaussian window needs positive size and sigma");
  std::vector<double> taps(static_cast<std::size_t>(size));
  const double center = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) taps[static_cast<std::size_t>(i)] = std::exp(-(i - center) * (i - center) / (2 * sigma * sigma));
  const double total = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (double& t : taps) t /= total;
  return taps;
}

SsimTerms ssim_terms(const Plane& ref, const Plane& dist, const SsimConfig& config) {
  require_same_plane(ref, dist, "ssim");
  if (ref.height < config.window || ref.width < config.window) {
    throw InvalidArgument("ssim: image " + std::to_string(ref.height) + "x" + std::to_string(ref.width) +
                          " smaller than the " + std::to_string(config.window) + "x" +
                          std::to_string(config.window) + " window");
  }
  const auto taps = gaussian_taps(config.window, config.sigma);
  const double c1 = std::pow(config.k1 * config.dynamic_range, 2);
  const double c2 = std::pow(config.k2 * config.dynamic_range, 2);
  const Plane mx = filter_valid(ref, taps);
  const Plane my = filter_valid(dist, taps);
  const Plane sxx = filter_valid(elementwise(ref, ref, std::multiplies<>()), taps);
  const Plane syy = filter_valid(elementwise(dist, dist, std::multiplies<>()), taps);
  const Plane sxy = filter_valid(elementwise(ref, dist, std::multiplies<>()), taps);
  SsimTerms terms;
  const std::size_t count = mx.values.size();
  for (std::size_t i = 0; i < count; ++i) {
    const double ux = mx.values[i], uy = my.values[i];
    const double vx = sxx.values[i] - ux * ux;
    const double vy = syy.values[i] - uy * uy;
    const double cxy = sxy.values[i] - ux * uy;
    const double l = (2 * (ux * uy) + c1) / (ux * ux + uy * uy + c1);
    const double cs = (2 * cxy + c2) / (vx + vy + c2);
    terms.luminance += l;
    terms.contrast_structure += cs;
    terms.ssim += l * cs;
  }
  const double total = static_cast<double>(count);
  terms.luminance /= total;
  terms.contrast_structure /= total;
  terms.ssim /= total;
  return terms;
}

QualityScore ssim(const Plane& ref, const Plane& dist, const SsimConfig& config) {
  return {ssim_terms(ref, dist, config).ssim, "ssim", 0.0};
}

Plane downsample2(const Plane& plane) {
  Plane out(plane.height / 2, plane.width / 2);
  for (Index y = 0; y < out.height; ++y) {
    for (Index x = 0; x < out.width; ++x) {
      out.at(y, x) = 0.25 * (plane.at(2 * y, 2 * x) + plane.at(2 * y, 2 * x + 1) + plane.at(2 * y + 1, 2 * x) +
                             plane.at(2 * y + 1, 2 * x + 1));
    }
  }
  return out;
}

QualityScore ms_ssim(const Plane& ref, const Plane& dist, const SsimConfig& config) {
  require_same_plane(ref, dist, "ms_ssim");
  const Index minimum = static_cast<Index>(config.window) << 4;
  if (ref.height < minimum || ref.width < minimum) {
    throw InvalidArgument("ms_ssim: image " + std::to_string(ref.height) + "x" + std::to_string(ref.width) +
                          " too small for 5 scales (needs " + std::to_string(minimum) + ")");
  }
  Plane a = ref, b = dist;
  double value = 1.0;
  for (int scale = 0; scale < 5; ++scale) {
    const SsimTerms t = ssim_terms(a, b, config);
    const double factor = scale < 4 ? t.contrast_structure : t.ssim;
    value *= std::pow(std::max(factor, 0.0), kMsSsimWeights[scale]);
    if (scale < 4) {
      a = downsample2(a);
      b = downsample2(b);
    }
  }
  return {value, "msssim", 0.0};
}

namespace {

class PlaneOracle : public MetricOracle {
 public:
  PlaneOracle(std::string name, double max_score, std::function<double(const Plane&, const Plane&)> fn)
      : name_(std::move(name)), max_score_(max_score), fn_(std::move(fn)) {}
  std::string name() const override { return name_; }
  double max_score() const override { return max_score_; }
  double score(const Image& ref, const Image& dist) const override {
    if (!ref.same_geometry(dist)) throw ShapeError(name_ + ": image geometry mismatch");
    return fn_(luma(ref), luma(dist));
  }

 private:
  std::string name_;
  double max_score_;
  std::function<double(const Plane&, const Plane&)> fn_;
};

}  // namespace

std::unique_ptr<MetricOracle> make_oracle(const std::string& id) {
  if (id == "ssim") {
    return std::make_unique<PlaneOracle>("ssim", 1.0, [](const Plane& a, const Plane& b) { return ssim(a, b).value; });
  }
  if (id == "msssim") {
    return std::make_unique<PlaneOracle>("msssim", 1.0,
                                         [](const Plane& a, const Plane& b) { return ms_ssim(a, b).value; });
  }
  if (id == "psnr") {
    return std::make_unique<PlaneOracle>("psnr", kPsnrCap,
                                         [](const Plane& a, const Plane& b) { return psnr(a, b).value; });
  }
  throw InvalidArgument("unknown metric '" + id + "' (known: ssim, msssim, psnr)");
}

std::vector<std::string> builtin_oracle_ids() { return {"ssim", "msssim", "psnr"}; }

ExternalOracle::ExternalOracle(std::string name, std::filesystem::path executable, double max_score,
                               std::filesystem::path scratch_dir)
    : name_(std::move(name)),
      executable_(std::move(executable)),
      max_score_(max_score),
      scratch_dir_(std::move(scratch_dir)) {}

double ExternalOracle::score(const Image& ref, const Image& dist) const {
  if (!ref.same_geometry(dist)) throw ShapeError(name_ + ": image geometry mismatch");
  const std::string stem =
      "pxiqa_" + std::to_string(::getpid()) + "_" + std::to_string(scratch_counter.fetch_add(1));
  const auto ref_path = scratch_dir_ / (stem + "_ref.png");
  const auto dist_path = scratch_dir_ / (stem + "_dist.png");
  write_png(ref_path, ref);
  write_png(dist_path, dist);

  int fds[2];
  if (::pipe(fds) != 0) throw Error("pipe failed: " + std::string(std::strerror(errno)));
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, fds[0]);
  posix_spawn_file_actions_addclose(&actions, fds[1]);
  std::string exe = executable_.string(), a1 = ref_path.string(), a2 = dist_path.string();
  char* argv[] = {exe.data(), a1.data(), a2.data(), nullptr};
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, exe.c_str(), &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(fds[1]);
  std::string output;
  if (rc == 0) {
    char buf[256];
    ssize_t got = 0;
    while ((got = ::read(fds[0], buf, sizeof buf)) > 0) output.append(buf, static_cast<std::size_t>(got));
  }
  ::close(fds[0]);
  int status = 0;
  if (rc == 0) ::waitpid(pid, &status, 0);
  std::error_code ignored;
  std::filesystem::remove(ref_path, ignored);
  std::filesystem::remove(dist_path, ignored);
  if (rc != 0) throw Error(name_ + ": cannot run " + exe + ": " + std::strerror(rc));
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error(name_ + ": scorer exited abnormally (status " + std::to_string(status) + ")");
  }
  std::istringstream in(output);
  double value = 0.0;
  std::string rest;
  if (!(in >> value) || (in >> rest) || !std::isfinite(value)) {
    throw FormatError(name_ + ": expected a single decimal from scorer, got '" + output + "'");
  }
  return value;
}

PairedComparisonMatrix read_pairs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  struct Row {
    std::size_t i, j;
    double count;
  };
  std::vector<Row> rows;
  std::size_t n = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    long long i = 0, j = 0;
    double count = 0;
    std::string extra;
    if (!(fields >> i >> j >> count) || (fields >> extra)) {
      if (line_no == 1 && rows.empty()) continue;
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected i,j,count");
    }
    if (i < 0 || j < 0 || count < 0 || count != std::floor(count)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": indices and counts must be non-negative integers");
    }
    if (i == j && count > 0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": self-comparison");
    }
    rows.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), count});
    n = std::max({n, rows.back().i + 1, rows.back().j + 1});
  }
  PairedComparisonMatrix m(n);
  for (const Row& r : rows) m(r.i, r.j) += r.count;
  return m;
}

namespace {

// Components of the graph with an edge i -> j whenever edge(i, j).
std::vector<std::vector<std::size_t>> reachable_sets(std::size_t n,
                                                     const std::function<bool(std::size_t, std::size_t)>& edge) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack{s};
    seen[s] = true;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t v = 0; v < n; ++v) {
        if (!seen[v] && edge(u, v)) {
          seen[v] = true;
          stack.push_back(v);
        }
      }
    }
    std::vector<std::size_t> reach;
    for (std::size_t v = 0; v < n; ++v) {
      if (seen[v]) reach.push_back(v);
    }
    out.push_back(std::move(reach));
  }
  return out;
}

std::string format_set(const std::vector<std::size_t>& items) {
  std::string s = "{";
  for (std::size_t k = 0; k < items.size(); ++k) s += (k ? "," : "") + std::to_string(items[k]);
  return s + "}";
}

}  // namespace

std::vector<double> bt_scores(const PairedComparisonMatrix& matrix, const BtOptions& options) {
  const std::size_t n = matrix.n;
  if (n == 0) return {};
  for (std::size_t i = 0; i < n; ++i) {
    if (matrix(i, i) != 0.0) throw InvalidArgument("bt_scores: diagonal entries must be zero");
    for (std::size_t j = 0; j < n; ++j) {
      if (matrix(i, j) < 0.0) throw InvalidArgument("bt_scores: negative count");
    }
  }
  if (n == 1) return {0.0};

  const auto undirected = reachable_sets(n, [&](std::size_t i, std::size_t j) { return matrix(i, j) + matrix(j, i) > 0; });
  if (undirected[0].size() != n) {
    std::vector<bool> listed(n, false);
    std::string parts;
    for (std::size_t s = 0; s < n; ++s) {
      if (listed[s]) continue;
      for (std::size_t v : undirected[s]) listed[v] = true;
      parts += (parts.empty() ? "" : " ") + format_set(undirected[s]);
    }
    throw InvalidArgument("bt_scores: comparison graph is disconnected: components " + parts);
  }
  const auto beats = reachable_sets(n, [&](std::size_t i, std::size_t j) { return matrix(i, j) > 0; });
  for (std::size_t s = 0; s < n; ++s) {
    if (beats[s].size() != n) {
      throw InvalidArgument("bt_scores: wins are one-sided; items " + format_set(beats[s]) +
                            " never beat the rest, so the maximum-likelihood estimate diverges");
    }
  }

  std::vector<double> wins(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) wins[i] += matrix(i, j);
  }
  std::vector<double> log_pi(n, 0.0), next(n);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double games = matrix(i, j) + matrix(j, i);
        if (j == i || games == 0.0) continue;
        // n_ij / (pi_i + pi_j) scaled by pi_i: n_ij / (1 + pi_j / pi_i).
        denom += games / (1.0 + std::exp(log_pi[j] - log_pi[i]));
      }
      next[i] = log_pi[i] + std::log(wins[i] / denom);
    }
    const double mean = std::accumulate(next.begin(), next.end(), 0.0) / static_cast<double>(n);
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] -= mean;
      delta = std::max(delta, std::abs(next[i] - log_pi[i]));
    }
    log_pi.swap(next);
    if (delta < options.tolerance) return log_pi;
  }
  throw NumericError("bt_scores: no convergence after " + std::to_string(options.max_iterations) + " iterations");
}

}  // namespace pxiqa
