#include "pxiqa/codec.hpp"

#include <cmath>

#include "json.hpp"
#include "pxiqa/checkpoint.hpp"
#include "pxiqa/ops.hpp"

namespace pxiqa {

namespace {

std::string stage(const char* side, const char* layer, int i, const char* field) {
  return std::string(side) + "." + layer + std::to_string(i) + "." + field;
}

template <typename T>
Tensor<T> glorot(Shape shape, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> d(-limit, limit);
  Tensor<T> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d(rng));
  return t;
}

template <typename T>
void add_gdn(ParameterSet<T>& params, const std::string& prefix, Index channels) {
  params.add(prefix + ".beta", Tensor<T>(Shape{channels}, static_cast<T>(std::sqrt(1.0 - kGdnBetaFloor))));
  Tensor<T> gamma(Shape{channels, channels}, static_cast<T>(1e-3));
  for (Index c = 0; c < channels; ++c) gamma[c * channels + c] = static_cast<T>(std::sqrt(0.1));
  params.add(prefix + ".gamma", std::move(gamma));
}

template <typename T>
Var<T> apply_gdn(Var<T> x, const BoundParameters<T>& params, const std::string& prefix, bool inverse) {
  return gdn(x, square_plus(params[prefix + ".beta"], static_cast<T>(kGdnBetaFloor)),
             square_plus(params[prefix + ".gamma"], T(0)), inverse);
}

}  // namespace

template <typename T>
ParameterSet<T> init_codec(const CodecConfig& config, std::uint64_t seed) {
  if (config.filters <= 0 || config.kernel <= 0) throw InvalidArgument("codec needs filters > 0 and kernel > 0");
  std::mt19937_64 rng(seed);
  ParameterSet<T> params;
  const Index f = config.filters, k = config.kernel, area = k * k;
  for (int i = 0; i < kCodecStages; ++i) {
    const Index cin = i == 0 ? 3 : f;
    params.add(stage("analysis", "conv", i, "kernel"), glorot<T>(Shape{f, cin, k, k}, cin * area, f * area, rng));
    params.add(stage("analysis", "conv", i, "bias"), Tensor<T>(Shape{f}));
    add_gdn(params, "analysis.gdn" + std::to_string(i), f);
  }
  for (int i = 0; i < kCodecStages; ++i) {
    const Index cout = i + 1 == kCodecStages ? 3 : f;
    add_gdn(params, "synthesis.igdn" + std::to_string(i), f);
    params.add(stage("synthesis", "conv", i, "kernel"), glorot<T>(Shape{f, cout, k, k}, f * area, cout * area, rng));
    params.add(stage("synthesis", "conv", i, "bias"), Tensor<T>(Shape{cout}));
  }
  add_entropy_parameters(params, f, rng);
  return params;
}

template <typename T>
Var<T> analyze(Var<T> x, const BoundParameters<T>& params) {
  const Shape& s = x.shape();
  if (s.rank() != 4 || s[1] != 3) throw ShapeError("analyze expects N x 3 x H x W, got " + s.str());
  if (s[2] % kCodecFactor != 0 || s[3] % kCodecFactor != 0) {
    throw ShapeError("analyze needs spatial extents divisible by 8, got " + s.str() +
                     "; pad by reflection and keep the original size for cropping");
  }
  Var<T> h = x;
  for (int i = 0; i < kCodecStages; ++i) {
    h = conv2d(h, params[stage("analysis", "conv", i, "kernel")], 2, Padding::same);
    h = bias_add(h, params[stage("analysis", "conv", i, "bias")]);
    h = apply_gdn(h, params, "analysis.gdn" + std::to_string(i), false);
  }
  return h;
}

template <typename T>
Var<T> synthesize(Var<T> y, const BoundParameters<T>& params) {
  const Shape& s = y.shape();
  const Index f = params[stage("synthesis", "conv", 0, "kernel")].shape()[0];
  if (s.rank() != 4 || s[1] != f) {
    throw ShapeError("synthesize expects N x " + std::to_string(f) + " x h x w, got " + s.str());
  }
  Var<T> h = y;
  for (int i = 0; i < kCodecStages; ++i) {
    h = apply_gdn(h, params, "synthesis.igdn" + std::to_string(i), true);
    h = conv2d_up(h, params[stage("synthesis", "conv", i, "kernel")], 2);
    h = bias_add(h, params[stage("synthesis", "conv", i, "bias")]);
  }
  return h;
}

template <typename T>
Var<T> quantize_train(Var<T> y, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  Tensor<T> noise(y.shape());
  for (Index i = 0; i < noise.size(); ++i) noise[i] = static_cast<T>(d(rng));
  return add(y, y.tape().constant(std::move(noise)));
}

template <typename T>
Tensor<T> quantize_test(const Tensor<T>& y) {
  Tensor<T> out(y.shape());
  for (Index i = 0; i < y.size(); ++i) out[i] = std::round(y[i]);
  return out;
}

std::string CodecManifest::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "pxiqa-codec";
  j["filters"] = config.filters;
  j["kernel"] = config.kernel;
  j["stages"] = kCodecStages;
  j["stride"] = 2;
  j["lambda"] = lambda;
  j["alpha"] = alpha;
  j["metric"] = metric;
  j["mode"] = mode;
  j["entropy_hash"] = entropy_hash;
  j["params_hash"] = params_hash;
  return j.dump(2) + "\n";
}

CodecManifest CodecManifest::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "pxiqa-codec") throw FormatError("not a codec manifest");
    if (j.at("stages") != kCodecStages || j.at("stride") != 2) {
      throw FormatError("unsupported codec geometry in manifest");
    }
    CodecManifest m;
    m.config.filters = j.at("filters").get<Index>();
    m.config.kernel = j.at("kernel").get<int>();
    m.lambda = j.at("lambda").get<double>();
    m.alpha = j.at("alpha").get<double>();
    m.metric = j.at("metric").get<std::string>();
    m.mode = j.at("mode").get<std::string>();
    m.entropy_hash = j.at("entropy_hash").get<std::string>();
    m.params_hash = j.at("params_hash").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed codec manifest: ") + e.what());
  }
}

Digest CodecManifest::hash() const { return sha256(to_json()); }

template <typename T>
std::string parameters_hash(const ParameterSet<T>& params, const std::string& prefix) {
  ParameterSet<T> selected;
  for (const auto& e : params) {
    if (e.name.rfind(prefix, 0) == 0) selected.add(e.name, e.tensor);
  }
  const auto bytes = serialize_checkpoint(selected);
  return to_hex(sha256(std::span<const std::uint8_t>(bytes)));
}

CodecManifest make_manifest(const ParameterSet<float>& params, const CodecConfig& config, double lambda,
                            double alpha, const std::string& metric, const std::string& mode) {
  CodecManifest m;
  m.config = config;
  m.lambda = lambda;
  m.alpha = alpha;
  m.metric = metric;
  m.mode = mode;
  m.entropy_hash = parameters_hash(params, "entropy.");
  m.params_hash = parameters_hash(params);
  return m;
}

void save_model(const std::filesystem::path& dir, const ParameterSet<float>& params, const CodecManifest& manifest) {
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "codec.ckpt", params, manifest.to_json());
  write_text_file(dir / "manifest.json", manifest.to_json());
}

LoadedModel load_model(const std::filesystem::path& dir) {
  LoadedModel out;
  out.manifest = CodecManifest::from_json(read_text_file(dir / "manifest.json"));
  out.params = load_checkpoint<float>(dir / "codec.ckpt").params;
  if (parameters_hash(out.params) != out.manifest.params_hash ||
      parameters_hash(out.params, "entropy.") != out.manifest.entropy_hash) {
    throw FormatError(dir.string() + ": checkpoint does not match manifest hashes");
  }
  return out;
}

#define PXIQA_INSTANTIATE_CODEC(T)                                              \
  template ParameterSet<T> init_codec<T>(const CodecConfig&, std::uint64_t);    \
  template Var<T> analyze<T>(Var<T>, const BoundParameters<T>&);                \
  template Var<T> synthesize<T>(Var<T>, const BoundParameters<T>&);             \
  template Var<T> quantize_train<T>(Var<T>, std::mt19937_64&);                  \
  template Tensor<T> quantize_test<T>(const Tensor<T>&);                        \
  template std::string parameters_hash<T>(const ParameterSet<T>&, const std::string&);

PXIQA_INSTANTIATE_CODEC(float)
PXIQA_INSTANTIATE_CODEC(double)

#undef PXIQA_INSTANTIATE_CODEC

}  // namespace pxiqa
