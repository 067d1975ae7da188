#include "pxiqa/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "pxiqa/ops.hpp"

namespace pxiqa {

namespace {

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string describe_point(std::size_t i, const RDPoint& p) {
  return "#" + std::to_string(i) + " (bpp " + num(p.bpp) + ", quality " + num(p.quality) + ")";
}

// Worker count from PXIQA_THREADS (default 1).
unsigned thread_count() {
  if (const char* env = std::getenv("PXIQA_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return 1;
}

// Runs fn(i) for i in [0, n) on thread_count() workers; results must be written by index.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const unsigned workers = std::min<unsigned>(thread_count(), static_cast<unsigned>(std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Image as_rgb(const Image& image) {
  if (image.channels == 3) return image;
  Image out(image.height, image.width, 3);
  for (Index i = 0; i < image.pixel_count(); ++i) {
    for (Index c = 0; c < 3; ++c) out.values[static_cast<std::size_t>(i * 3 + c)] = image.values[static_cast<std::size_t>(i)];
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

struct Axis {
  double lo, hi;
};

Axis padded_axis(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

class SvgPlot {
 public:
  SvgPlot(std::string title, std::string xlabel, std::string ylabel, Axis x, Axis y)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)), x_(x), y_(y) {}

  double px(double v) const { return kLeft + (v - x_.lo) / (x_.hi - x_.lo) * (kWidth - kLeft - kRight); }
  double py(double v) const { return kHeight - kBottom - (v - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom); }

  void line(const std::vector<std::pair<double, double>>& pts, const std::string& color, bool markers) {
    std::string d;
    for (const auto& [a, b] : pts) d += fixed(px(a)) + "," + fixed(py(b)) + " ";
    body_ += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" + d + "\"/>\n";
    if (!markers) return;
    for (const auto& [a, b] : pts) {
      body_ += "<circle cx=\"" + fixed(px(a)) + "\" cy=\"" + fixed(py(b)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
  }
  // Shaded band between lower and upper along x.
  void band(const std::vector<double>& xs, const std::vector<double>& lower, const std::vector<double>& upper,
            const std::string& color) {
    std::string d;
    for (std::size_t i = 0; i < xs.size(); ++i) d += fixed(px(xs[i])) + "," + fixed(py(upper[i])) + " ";
    for (std::size_t i = xs.size(); i-- > 0;) d += fixed(px(xs[i])) + "," + fixed(py(lower[i])) + " ";
    body_ += "<polygon fill=\"" + color + "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"" + d + "\"/>\n";
  }
  void legend(const std::string& label, const std::string& color) {
    const double y = kTop + 14 + 16 * static_cast<double>(legend_++);
    body_ += "<rect x=\"" + fixed(kWidth - kRight - 170) + "\" y=\"" + fixed(y - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
             color + "\"/>\n<text x=\"" + fixed(kWidth - kRight - 155) + "\" y=\"" + fixed(y + 1) +
             "\" font-size=\"11\">" + label + "</text>\n";
  }

  std::string str() const {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(kWidth, 0) + "\" height=\"" +
                    fixed(kHeight, 0) + "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + fixed(kWidth / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + title_ + "</text>\n";
    s += "<rect x=\"" + fixed(kLeft) + "\" y=\"" + fixed(kTop) + "\" width=\"" + fixed(kWidth - kLeft - kRight) +
         "\" height=\"" + fixed(kHeight - kTop - kBottom) + "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x_.lo + (x_.hi - x_.lo) * i / 4, yv = y_.lo + (y_.hi - y_.lo) * i / 4;
      s += "<text x=\"" + fixed(px(xv)) + "\" y=\"" + fixed(kHeight - kBottom + 16) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + short_num(xv) + "</text>\n";
      s += "<text x=\"" + fixed(kLeft - 6) + "\" y=\"" + fixed(py(yv) + 3) + "\" text-anchor=\"end\" font-size=\"10\">" +
           short_num(yv) + "</text>\n";
    }
    s += "<text x=\"" + fixed(kWidth / 2) + "\" y=\"" + fixed(kHeight - 8) + "\" text-anchor=\"middle\" font-size=\"12\">" +
         xlabel_ + "</text>\n";
    s += "<text x=\"14\" y=\"" + fixed(kHeight / 2) + "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " +
         fixed(kHeight / 2) + ")\">" + ylabel_ + "</text>\n";
    return s + body_ + "</svg>\n";
  }

 private:
  static constexpr double kWidth = 640, kHeight = 420, kLeft = 64, kRight = 16, kTop = 32, kBottom = 48;
  std::string title_, xlabel_, ylabel_;
  Axis x_, y_;
  std::string body_;
  int legend_ = 0;
};

bool db_metric(const std::string& metric) { return metric == "ssim" || metric == "msssim"; }

void write_rd_plot(const std::filesystem::path& path, const std::string& metric, const std::vector<const RDCurve*>& curves) {
  auto yval = [&](double q) { return db_metric(metric) ? ssim_db(q) : q; };
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const RDCurve* c : curves) {
    for (const auto& p : c->points) {
      xlo = std::min(xlo, p.bpp);
      xhi = std::max(xhi, p.bpp);
      ylo = std::min(ylo, yval(p.quality));
      yhi = std::max(yhi, yval(p.quality));
    }
  }
  SvgPlot plot(metric + " rate-distortion", "bits per pixel", db_metric(metric) ? metric + " (dB)" : metric,
               padded_axis(xlo, xhi), padded_axis(ylo, yhi));
  for (std::size_t i = 0; i < curves.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : curves[i]->points) pts.emplace_back(p.bpp, yval(p.quality));
    const std::string color = kPalette[i % std::size(kPalette)];
    plot.line(pts, color, true);
    plot.legend(curves[i]->codec, color);
  }
  write_text_file(path, plot.str());
}

void write_training_plot(const std::filesystem::path& path, const std::string& name, const std::string& csv) {
  std::vector<double> steps, mt, st, mh, sh;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  const auto header = split(line, ',');
  auto col = [&](const std::string& key) {
    const auto it = std::find(header.begin(), header.end(), key);
    if (it == header.end()) throw FormatError("training log for " + name + " lacks column " + key);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_step = col("step"), c_mt = col("m_true_mean"), c_st = col("m_true_std"), c_mh = col("m_hat_mean"),
                    c_sh = col("m_hat_std");
  while (std::getline(is, line)) {
    const auto f = split(line, ',');
    double v[5];
    if (f.size() != header.size() || !parse_double(f[c_step], v[0]) || !parse_double(f[c_mt], v[1]) ||
        !parse_double(f[c_st], v[2]) || !parse_double(f[c_mh], v[3]) || !parse_double(f[c_sh], v[4])) {
      continue;  // rows without proxy scores
    }
    steps.push_back(v[0]);
    mt.push_back(v[1]);
    st.push_back(v[2]);
    mh.push_back(v[3]);
    sh.push_back(v[4]);
  }
  if (steps.empty()) return;
  // Mean and std over blocks of steps keep the plot small.
  const std::size_t block = std::max<std::size_t>(1, steps.size() / 400);
  std::vector<double> xs, a, al, ah, b, bl, bh;
  for (std::size_t i = 0; i < steps.size(); i += block) {
    const std::size_t e = std::min(steps.size(), i + block);
    auto avg = [&](const std::vector<double>& v) {
      double s = 0;
      for (std::size_t k = i; k < e; ++k) s += v[k];
      return s / static_cast<double>(e - i);
    };
    xs.push_back(avg(steps));
    const double m1 = avg(mt), s1 = avg(st), m2 = avg(mh), s2 = avg(sh);
    a.push_back(m1);
    al.push_back(m1 - s1);
    ah.push_back(m1 + s1);
    b.push_back(m2);
    bl.push_back(m2 - s2);
    bh.push_back(m2 + s2);
  }
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    lo = std::min({lo, al[i], bl[i]});
    hi = std::max({hi, ah[i], bh[i]});
  }
  SvgPlot plot(name + ": true vs proxy score", "step", "score", padded_axis(xs.front(), xs.back()), padded_axis(lo, hi));
  plot.band(xs, al, ah, kPalette[0]);
  plot.band(xs, bl, bh, kPalette[1]);
  std::vector<std::pair<double, double>> pa, pb;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    pa.emplace_back(xs[i], a[i]);
    pb.emplace_back(xs[i], b[i]);
  }
  plot.line(pa, kPalette[0], false);
  plot.line(pb, kPalette[1], false);
  plot.legend("true metric", kPalette[0]);
  plot.legend("proxy", kPalette[1]);
  write_text_file(path, plot.str());
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  }
  return s;
}

}  // namespace

double ssim_db(double ssim) { return -10.0 * std::log10(std::max(1.0 - ssim, 1e-12)); }

void RDCurve::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(p.bpp > 0) || !std::isfinite(p.bpp)) throw InvalidArgument("RD point " + describe_point(i, p) + " has non-positive bpp");
    if (!std::isfinite(p.quality)) throw InvalidArgument("RD point " + describe_point(i, p) + " has a non-finite score");
    if (p.metric != metric) throw InvalidArgument("RD curve for " + metric + " contains a " + p.metric + " point");
    if (i > 0 && !(p.bpp > points[i - 1].bpp)) {
      throw InvalidArgument("RD curve " + codec + "/" + metric + "/" + image + " is not strictly increasing in bpp at " +
                            describe_point(i, p));
    }
  }
}

std::vector<std::size_t> RDCurve::monotonicity_violations() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].quality <= points[i - 1].quality) out.push_back(i);
  }
  return out;
}

double LogRateFit::operator()(double q) const {
  const double t = (q - center) / scale;
  return coef[0] + t * (coef[1] + t * (coef[2] + t * coef[3]));
}

double LogRateFit::integral(double a, double b) const {
  const double ta = (a - center) / scale, tb = (b - center) / scale;
  auto anti = [&](double t) { return t * (coef[0] + t * (coef[1] / 2 + t * (coef[2] / 3 + t * coef[3] / 4))); };
  return scale * (anti(tb) - anti(ta));
}

LogRateFit fit_log_rate(const RDCurve& curve, double center, double scale) {
  const auto n = static_cast<Eigen::Index>(curve.points.size());
  if (n < 4) throw InvalidArgument("a cubic fit needs at least 4 RD points, got " + std::to_string(n));
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = (curve.points[static_cast<std::size_t>(i)].quality - center) / scale;
    a(i, 0) = 1;
    a(i, 1) = t;
    a(i, 2) = t * t;
    a(i, 3) = t * t * t;
    b(i) = std::log(curve.points[static_cast<std::size_t>(i)].bpp);
  }
  const Eigen::Vector4d x = a.colPivHouseholderQr().solve(b);
  LogRateFit fit;
  fit.center = center;
  fit.scale = scale;
  for (int k = 0; k < 4; ++k) fit.coef[static_cast<std::size_t>(k)] = x(k);
  return fit;
}

BdResult bd_rate(const RDCurve& reference, const RDCurve& test) {
  for (const RDCurve* c : {&reference, &test}) {
    c->validate();
    if (c->points.size() < 4) {
      throw InvalidArgument("BD-rate needs at least 4 points per curve; " + c->codec + " has " +
                            std::to_string(c->points.size()));
    }
    const auto bad = c->monotonicity_violations();
    if (!bad.empty()) {
      std::string list;
      for (std::size_t i : bad) list += " " + describe_point(i, c->points[i]);
      throw InvalidArgument("quality of " + c->codec + "/" + c->metric + " does not increase with bpp at" + list);
    }
  }
  if (reference.metric != test.metric) {
    throw InvalidArgument("BD-rate curves use different metrics: " + reference.metric + " vs " + test.metric);
  }
  const double r_lo = reference.points.front().quality, r_hi = reference.points.back().quality;
  const double t_lo = test.points.front().quality, t_hi = test.points.back().quality;
  const double lo = std::max(r_lo, t_lo), hi = std::min(r_hi, t_hi);
  if (!(hi > lo)) {
    throw InvalidArgument("quality ranges do not overlap: reference [" + num(r_lo) + ", " + num(r_hi) + "], test [" +
                          num(t_lo) + ", " + num(t_hi) + "]");
  }
  const double all_lo = std::min(r_lo, t_lo), all_hi = std::max(r_hi, t_hi);
  const double center = (all_lo + all_hi) / 2, scale = (all_hi - all_lo) / 2;
  const LogRateFit fr = fit_log_rate(reference, center, scale), ft = fit_log_rate(test, center, scale);
  const double mean_diff = (ft.integral(lo, hi) - fr.integral(lo, hi)) / (hi - lo);
  return {100.0 * std::expm1(mean_diff), lo, hi};
}

std::vector<RDCurve> parse_rd_csv(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) { throw FormatError(source + " line " + std::to_string(line_no) + ": " + msg); };
  std::map<std::tuple<std::string, std::string, std::string>, RDCurve> curves;
  std::map<std::tuple<std::string, std::string, std::string, std::string>, std::size_t> seen;
  bool header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "codec,image,bpp,metric,score") fail("expected header codec,image,bpp,metric,score");
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 5) fail("expected 5 fields, got " + std::to_string(f.size()));
    RDPoint p{0, 0, f[3], f[0], f[1]};
    if (p.codec.empty() || p.image.empty() || p.metric.empty()) fail("empty codec, image or metric");
    if (!parse_double(f[2], p.bpp) || !(p.bpp > 0)) fail("bpp must be a positive number, got '" + f[2] + "'");
    if (!parse_double(f[4], p.quality)) fail("score must be a finite number, got '" + f[4] + "'");
    const auto key = std::make_tuple(p.codec, p.image, f[2], p.metric);
    if (const auto it = seen.find(key); it != seen.end()) {
      fail("duplicate (codec, image, bpp, metric) row, first seen on line " + std::to_string(it->second));
    }
    seen.emplace(key, line_no);
    RDCurve& c = curves[{p.codec, p.metric, p.image}];
    c.codec = p.codec;
    c.metric = p.metric;
    c.image = p.image;
    c.points.push_back(std::move(p));
  }
  if (!header) throw FormatError(source + ": empty RD file");
  std::vector<RDCurve> out;
  for (auto& [key, c] : curves) {
    std::stable_sort(c.points.begin(), c.points.end(), [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
    try {
      c.validate();
    } catch (const InvalidArgument& e) {
      throw FormatError(source + ": " + e.what());
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<RDCurve> ingest_external_rd(const std::filesystem::path& path) {
  return parse_rd_csv(read_text_file(path), path.string());
}

std::string rd_csv(const std::vector<RDCurve>& curves) {
  std::string s = "codec,image,bpp,metric,score\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) s += p.codec + "," + p.image + "," + num(p.bpp) + "," + p.metric + "," + num(p.quality) + "\n";
  }
  return s;
}

RDCurve average_curves(const std::vector<RDCurve>& per_image, const std::string& set_name) {
  if (per_image.empty()) throw InvalidArgument("no curves to average");
  RDCurve out{per_image[0].codec, per_image[0].metric, set_name, {}};
  const std::size_t n = per_image[0].points.size();
  for (const auto& c : per_image) {
    if (c.codec != out.codec || c.metric != out.metric) throw InvalidArgument("averaged curves must share codec and metric");
    if (c.points.size() != n) {
      throw InvalidArgument("curve for image " + c.image + " has " + std::to_string(c.points.size()) + " points, expected " +
                            std::to_string(n));
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    double bpp = 0, q = 0;
    for (const auto& c : per_image) {
      bpp += c.points[k].bpp;
      q += c.points[k].quality;
    }
    const double m = static_cast<double>(per_image.size());
    out.points.push_back({bpp / m, q / m, out.metric, out.codec, set_name});
  }
  std::stable_sort(out.points.begin(), out.points.end(), [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
  out.validate();
  return out;
}

double model_bits(const Tensor<float>& rounded_latents, const ParameterSet<float>& params) {
  auto& p = const_cast<ParameterSet<float>&>(params);  // bound as constants: never written
  Tape<float> tape;
  const BoundParameters<float> frozen(tape, p, false);
  return static_cast<double>(likelihood_bits(tape.constant(rounded_latents), frozen).value()[0]);
}

RdEvalResult rd_eval(const std::vector<std::filesystem::path>& model_dirs, const std::filesystem::path& image_dir,
                     const RdEvalOptions& options) {
  if (model_dirs.size() < 4) {
    throw InvalidArgument("rd_eval needs at least 4 models (one per lambda), got " + std::to_string(model_dirs.size()));
  }
  std::vector<LoadedModel> models;
  for (const auto& d : model_dirs) models.push_back(load_model(d));
  const CodecManifest& first = models.front().manifest;
  for (std::size_t m = 1; m < models.size(); ++m) {
    const auto& mf = models[m].manifest;
    if (mf.mode != first.mode || mf.metric != first.metric || mf.alpha != first.alpha) {
      throw InvalidArgument("model " + model_dirs[m].string() + " (" + mf.mode + ", " + mf.metric +
                            ") does not belong to the same sweep as " + model_dirs[0].string() + " (" + first.mode +
                            ", " + first.metric + ")");
    }
  }
  std::string codec = options.codec;
  if (codec.empty()) {
    codec = first.mode;
    if (first.mode == "alternating" || first.mode == "fixed-proxy") codec += "-" + first.metric;
  }
  const auto paths = list_images(image_dir);
  if (paths.empty()) throw InvalidArgument("no images in " + image_dir.string());
  std::vector<Image> images;
  for (const auto& p : paths) images.push_back(as_rgb(read_image(p)));
  std::vector<std::unique_ptr<MetricOracle>> oracles;
  for (const auto& m : options.metrics) oracles.push_back(make_oracle(m));

  // scores[model][image][metric], bits[model][image]
  const std::size_t nm = models.size(), ni = images.size(), nq = oracles.size();
  std::vector<double> scores(nm * ni * nq), bpp(nm * ni);
  std::vector<RdEvalResult::RateCheck> checks(nm * ni);
  parallel_for(nm * ni, [&](std::size_t job) {
    const std::size_t m = job / ni, i = job % ni;
    const Image& img = images[i];
    const Bitstream s = encode_image(img, models[m], options.tail_mass);
    const Image decoded = decode_image(Bitstream::parse(s.serialize()), models[m], options.tail_mass);
    const double pixels = static_cast<double>(img.height * img.width);
    bpp[job] = 8.0 * static_cast<double>(s.payload.size()) / pixels;
    for (std::size_t q = 0; q < nq; ++q) scores[job * nq + q] = oracles[q]->score(img, decoded);
    checks[job] = {model_dirs[m].filename().string(), paths[i].filename().string(),
                   8.0 * static_cast<double>(s.payload.size()),
                   model_bits(encode_latents_real(img, models[m].params), models[m].params)};
  });

  RdEvalResult out;
  out.rate_checks = std::move(checks);
  for (std::size_t q = 0; q < nq; ++q) {
    const std::string& metric = options.metrics[q];
    RDCurve avg{codec, metric, options.set_name, {}};
    for (std::size_t i = 0; i < ni; ++i) {
      RDCurve c{codec, metric, paths[i].filename().string(), {}};
      for (std::size_t m = 0; m < nm; ++m) c.points.push_back({bpp[m * ni + i], scores[(m * ni + i) * nq + q], metric, codec, c.image});
      std::stable_sort(c.points.begin(), c.points.end(), [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
      c.validate();
      out.per_image.push_back(std::move(c));
    }
    for (std::size_t m = 0; m < nm; ++m) {
      double b = 0, s = 0;
      for (std::size_t i = 0; i < ni; ++i) {
        b += bpp[m * ni + i];
        s += scores[(m * ni + i) * nq + q];
      }
      avg.points.push_back({b / static_cast<double>(ni), s / static_cast<double>(ni), metric, codec, options.set_name});
    }
    std::stable_sort(avg.points.begin(), avg.points.end(), [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
    avg.validate();
    for (std::size_t k : avg.monotonicity_violations()) {
      out.warnings.push_back(codec + "/" + metric + ": quality does not increase at " + describe_point(k, avg.points[k]));
    }
    out.curves.push_back(std::move(avg));
  }
  return out;
}

void write_report(const std::filesystem::path& dir, const ReportInputs& inputs) {
  if (inputs.curves.empty() && inputs.training_logs.empty()) throw InvalidArgument("report has no inputs");
  std::filesystem::create_directories(dir);
  write_text_file(dir / "rd_table.csv", rd_csv(inputs.curves));

  std::vector<std::string> metrics, codecs;
  for (const auto& c : inputs.curves) {
    if (std::find(metrics.begin(), metrics.end(), c.metric) == metrics.end()) metrics.push_back(c.metric);
    if (std::find(codecs.begin(), codecs.end(), c.codec) == codecs.end()) codecs.push_back(c.codec);
  }
  auto find = [&](const std::string& codec, const std::string& metric) -> const RDCurve* {
    for (const auto& c : inputs.curves) {
      if (c.codec == codec && c.metric == metric) return &c;
    }
    return nullptr;
  };
  nlohmann::ordered_json j;
  j["reference"] = inputs.reference;
  j["metrics"] = metrics;
  auto& matrix = j["bd_rate_percent"] = nlohmann::ordered_json::object();
  auto& errors = j["errors"] = nlohmann::ordered_json::object();
  for (const auto& codec : codecs) {
    auto& row = matrix[codec] = nlohmann::ordered_json::object();
    for (const auto& metric : metrics) {
      const RDCurve* ref = find(inputs.reference, metric);
      const RDCurve* test = find(codec, metric);
      if (ref == nullptr || test == nullptr) {
        row[metric] = nullptr;
        continue;
      }
      try {
        row[metric] = bd_rate(*ref, *test).percent;
      } catch (const Error& e) {
        row[metric] = nullptr;
        errors[codec + "/" + metric] = e.what();
      }
    }
  }
  write_text_file(dir / "bd_matrix.json", j.dump(2) + "\n");

  for (const auto& metric : metrics) {
    std::vector<const RDCurve*> cs;
    for (const auto& c : inputs.curves) {
      if (c.metric == metric) cs.push_back(&c);
    }
    write_rd_plot(dir / ("rd_" + safe_name(metric) + ".svg"), metric, cs);
  }
  for (const auto& [name, csv] : inputs.training_logs) {
    write_training_plot(dir / ("training_" + safe_name(name) + ".svg"), name, csv);
  }
}

ReportInputs collect_report_inputs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InvalidArgument("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && (e.path().filename() == "rd_curves.csv" || e.path().filename() == "log.csv")) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  ReportInputs in;
  for (const auto& f : files) {
    if (f.filename() == "rd_curves.csv") {
      for (auto& c : ingest_external_rd(f)) in.curves.push_back(std::move(c));
    } else {
      std::string name = std::filesystem::relative(f.parent_path(), dir).generic_string();
      if (name == ".") name = "run";
      in.training_logs.emplace_back(name, read_text_file(f));
    }
  }
  return in;
}

}  // namespace pxiqa
