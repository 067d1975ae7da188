#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pxiqa/checkpoint.hpp"
#include "pxiqa/eval.hpp"

using namespace pxiqa;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  const std::string s = read_text_file(path);
  return {s.begin(), s.end()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  write_text_file(path, std::string(bytes.begin(), bytes.end()));
}

// A prepared store (index.json) is loaded as is; an image directory is prepared in memory.
PatchStore open_training_data(const fs::path& data, std::uint64_t seed) {
  if (fs::exists(data / "index.json")) return load_patch_store(data);
  DatasetSpec spec;
  spec.source = data;
  spec.seed = seed;
  return prepare_training_set(spec);
}

std::vector<fs::path> model_dirs_in(const fs::path& dir) {
  std::vector<fs::path> out;
  if (fs::exists(dir / "manifest.json")) return {dir};
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_prepare(const fs::path& src, const fs::path& out, std::uint64_t seed, Index crop, int crops) {
  DatasetSpec spec;
  spec.source = src;
  spec.seed = seed;
  spec.crop = crop;
  spec.crops_per_image = crops;
  const PatchStore store = prepare_training_set(spec);
  save_patch_store(out, store);
  std::printf("%zu crops written to %s (%lld sources skipped as too small)\n", store.entries.size(), out.c_str(),
              static_cast<long long>(store.skipped));
  return 0;
}

// Config file: the training settings plus "data" (image or store directory) and "out".
int cmd_train(const fs::path& config_path, fs::path data, fs::path out) {
  auto j = nlohmann::ordered_json::parse(read_text_file(config_path));
  if (j.contains("data")) {
    if (data.empty()) data = config_path.parent_path() / j["data"].get<std::string>();
    j.erase("data");
  }
  if (j.contains("out")) {
    if (out.empty()) out = config_path.parent_path() / j["out"].get<std::string>();
    j.erase("out");
  }
  if (data.empty() || out.empty()) throw InvalidArgument("training needs a data directory and an output directory");
  const TrainConfig config = TrainConfig::from_json(j.dump());
  const PatchStore store = open_training_data(data, config.seed);
  Trainer trainer(config, store);
  const std::int64_t every = std::max<std::int64_t>(1, config.steps / 50);
  trainer.run(out, [&](const TrainRecord& r) {
    if (r.step % every != 0 && r.step + 1 != config.steps) return;
    const MeanStd m = mean_std(r.m_true), h = mean_std(r.m_hat);
    std::printf("step %lld lt %.5f bpp %.4f ld %.6f lp %.5f M %.4f M_hat %.4f lr %.2e%s\n",
                static_cast<long long>(r.step), r.lt, r.lr_bpp, r.ld, r.lp, m.mean, h.mean, r.lr,
                r.skipped ? " skipped" : "");
    std::fflush(stdout);
  });
  std::printf("model written to %s\n", out.c_str());
  return 0;
}

int cmd_encode(const fs::path& image, const fs::path& model_dir, const fs::path& out) {
  const LoadedModel model = load_model(model_dir);
  const Image img = read_image(image);
  const auto bytes = encode_image(img, model).serialize();
  write_bytes(out, bytes);
  std::printf("%zu bytes, %.4f bpp\n", bytes.size(),
              8.0 * static_cast<double>(bytes.size()) / static_cast<double>(img.height * img.width));
  return 0;
}

int cmd_decode(const fs::path& file, const fs::path& model_dir, const fs::path& out) {
  const LoadedModel model = load_model(model_dir);
  const auto bytes = read_bytes(file);
  write_image(out, decode_image(Bitstream::parse(bytes), model));
  return 0;
}

int cmd_eval(const fs::path& models, const fs::path& images, const std::string& metrics, const std::string& codec,
             const fs::path& out) {
  RdEvalOptions options;
  options.metrics = split_list(metrics);
  options.codec = codec;
  options.set_name = images.filename().empty() ? images.parent_path().filename().string() : images.filename().string();
  const RdEvalResult r = rd_eval(model_dirs_in(models), images, options);
  fs::create_directories(out);
  write_text_file(out / "rd_curves.csv", rd_csv(r.curves));
  write_text_file(out / "rd_per_image.csv", rd_csv(r.per_image));
  std::string checks = "model,image,payload_bits,model_bits\n";
  for (const auto& c : r.rate_checks) {
    checks += c.model + "," + c.image + "," + std::to_string(c.payload_bits) + "," + std::to_string(c.model_bits) + "\n";
  }
  write_text_file(out / "rate_checks.csv", checks);
  std::cout << rd_csv(r.curves);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_bdrate(const fs::path& ref_path, const fs::path& test_path) {
  const auto refs = ingest_external_rd(ref_path), tests = ingest_external_rd(test_path);
  int status = 0, pairs = 0;
  for (const auto& t : tests) {
    for (const auto& r : refs) {
      if (r.metric != t.metric || r.image != t.image) continue;
      ++pairs;
      try {
        const BdResult bd = bd_rate(r, t);
        std::printf("%s vs %s, %s, %s: %+.3f%% over [%.6g, %.6g]\n", t.codec.c_str(), r.codec.c_str(), t.metric.c_str(),
                    t.image.c_str(), bd.percent, bd.q_low, bd.q_high);
      } catch (const Error& e) {
        std::fprintf(stderr, "%s vs %s, %s, %s: %s\n", t.codec.c_str(), r.codec.c_str(), t.metric.c_str(),
                     t.image.c_str(), e.what());
        status = 1;
      }
    }
  }
  if (pairs == 0) throw InvalidArgument("no (metric, image) curve is present in both files");
  return status;
}

int cmd_bt_mos(const fs::path& pairs) {
  const auto scores = bt_scores(read_pairs_csv(pairs));
  std::printf("item,log_strength\n");
  for (std::size_t i = 0; i < scores.size(); ++i) std::printf("%zu,%.9f\n", i, scores[i]);
  return 0;
}

int cmd_report(const fs::path& in, const fs::path& out, const std::string& reference) {
  ReportInputs inputs = collect_report_inputs(in);
  inputs.reference = reference;
  write_report(out, inputs);
  std::printf("report written to %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned image codec trained against a proxy quality network"};
  app.require_subcommand(1);

  fs::path src, out, config, data, image, model, file, models, images, ref, test, pairs, in;
  std::uint64_t seed = 1;
  Index crop = 256;
  int crops = 1;
  std::string metrics = "ssim,msssim,psnr", codec, reference = "mse-baseline";

  auto* prepare = app.add_subcommand("prepare", "Prepare training crops from a directory of images");
  prepare->add_option("--src", src, "Source image directory")->required()->check(CLI::ExistingDirectory);
  prepare->add_option("--out", out, "Output store directory")->required();
  prepare->add_option("--seed", seed, "Random seed");
  prepare->add_option("--crop", crop, "Crop size")->check(CLI::PositiveNumber);
  prepare->add_option("--crops-per-image", crops, "Crops drawn per source image")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train a codec from a JSON configuration");
  train->add_option("--config", config, "Configuration file")->required()->check(CLI::ExistingFile);
  train->add_option("--data", data, "Prepared store or image directory (overrides the config)");
  train->add_option("--out", out, "Output model directory (overrides the config)");

  auto* encode = app.add_subcommand("encode", "Compress an image");
  encode->add_option("image", image)->required()->check(CLI::ExistingFile);
  encode->add_option("model", model)->required()->check(CLI::ExistingDirectory);
  encode->add_option("-o,--output", out)->required();

  auto* decode = app.add_subcommand("decode", "Decompress a bitstream to PNG or PPM");
  decode->add_option("file", file)->required()->check(CLI::ExistingFile);
  decode->add_option("model", model)->required()->check(CLI::ExistingDirectory);
  decode->add_option("-o,--output", out)->required();

  auto* eval = app.add_subcommand("eval", "Rate-distortion evaluation of a lambda sweep");
  eval->add_option("--models", models, "Directory of model directories")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--images", images, "Image directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--metrics", metrics, "Comma-separated metric ids");
  eval->add_option("--codec", codec, "Codec id for the curves");
  eval->add_option("-o,--output", out)->required();

  auto* bdrate = app.add_subcommand("bdrate", "BD-rate of matching curves in two RD CSV files");
  bdrate->add_option("--ref", ref)->required()->check(CLI::ExistingFile);
  bdrate->add_option("--test", test)->required()->check(CLI::ExistingFile);

  auto* bt = app.add_subcommand("bt-mos", "Bradley-Terry scores from paired comparisons");
  bt->add_option("--pairs", pairs, "CSV rows i,j,count")->required()->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "Tables and plots from eval outputs and training logs");
  report->add_option("--in", in)->required()->check(CLI::ExistingDirectory);
  report->add_option("-o,--output", out)->required();
  report->add_option("--reference", reference, "Reference codec id for BD-rate");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*prepare) return cmd_prepare(src, out, seed, crop, crops);
    if (*train) return cmd_train(config, data, out);
    if (*encode) return cmd_encode(image, model, out);
    if (*decode) return cmd_decode(file, model, out);
    if (*eval) return cmd_eval(models, images, metrics, codec, out);
    if (*bdrate) return cmd_bdrate(ref, test);
    if (*bt) return cmd_bt_mos(pairs);
    if (*report) return cmd_report(in, out, reference);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
