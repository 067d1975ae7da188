#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "pxiqa/metrics.hpp"

using namespace pxiqa;

namespace {

const std::filesystem::path kData = PXIQA_DATA_DIR;

Plane random_plane(Index h, Index w, std::mt19937_64& rng, double lo = 0, double hi = 255) {
  std::uniform_real_distribution<double> d(lo, hi);
  Plane p(h, w);
  for (double& v : p.values) v = d(rng);
  return p;
}

Image random_image(Index h, Index w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0, 255);
  Image im(h, w, 3);
  for (double& v : im.values) v = d(rng);
  return im;
}

// Direct 2-D windowed SSIM without separability or shared helpers.
struct BruteSsim {
  double l = 0, cs = 0, s = 0;
};
BruteSsim brute_ssim(const Plane& a, const Plane& b) {
  const int k = 11;
  const double sigma = 1.5, c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double w[k][k], total = 0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sigma * sigma));
      total += w[i][j];
    }
  }
  BruteSsim r;
  Index count = 0;
  for (Index y = 0; y + k <= a.height; ++y) {
    for (Index x = 0; x + k <= a.width; ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          ma += w[i][j] / total * a.at(y + i, x + j);
          mb += w[i][j] / total * b.at(y + i, x + j);
        }
      }
      double va = 0, vb = 0, cab = 0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          const double da = a.at(y + i, x + j) - ma, db = b.at(y + i, x + j) - mb;
          va += w[i][j] / total * da * da;
          vb += w[i][j] / total * db * db;
          cab += w[i][j] / total * da * db;
        }
      }
      const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
      const double cs = (2 * cab + c2) / (va + vb + c2);
      r.l += l;
      r.cs += cs;
      r.s += l * cs;
      ++count;
    }
  }
  r.l /= count;
  r.cs /= count;
  r.s /= count;
  return r;
}

Plane half(const Plane& p) {
  Plane out(p.height / 2, p.width / 2);
  for (Index y = 0; y < out.height; ++y) {
    for (Index x = 0; x < out.width; ++x) {
      double s = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) s += p.at(2 * y + dy, 2 * x + dx);
      }
      out.at(y, x) = s / 4;
    }
  }
  return out;
}

Plane box_blur(const Plane& p) {
  Plane out = p;
  for (Index y = 1; y + 1 < p.height; ++y) {
    for (Index x = 1; x + 1 < p.width; ++x) {
      double s = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) s += p.at(y + dy, x + dx);
      }
      out.at(y, x) = s / 9;
    }
  }
  return out;
}

std::vector<std::filesystem::path> natural_images() {
  std::vector<std::filesystem::path> paths;
  for (const char* dir : {"train", "test"}) {
    for (const auto& e : std::filesystem::directory_iterator(kData / "images" / dir)) paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

}  // namespace

TEST(Luma, Bt601Weights) {
  Image white(1, 1, 3, 255.0);
  EXPECT_DOUBLE_EQ(luma(white).at(0, 0), 255.0);
  Image red(1, 1, 3);
  red.at(0, 0, 0) = 255;
  EXPECT_NEAR(luma(red).at(0, 0), 76.245, 1e-12);
  std::mt19937_64 rng(1);
  Image gray(4, 5, 3);
  std::uniform_real_distribution<double> d(0, 255);
  for (Index i = 0; i < 20; ++i) {
    const double v = d(rng);
    for (int c = 0; c < 3; ++c) gray.values[static_cast<std::size_t>(i * 3 + c)] = v;
  }
  const Plane y = luma(gray);
  for (Index i = 0; i < 20; ++i) EXPECT_NEAR(y.values[static_cast<std::size_t>(i)], gray.values[static_cast<std::size_t>(i * 3)], 1e-12);
  EXPECT_THROW(luma(Image(2, 2, 1)), ShapeError);
}

TEST(Psnr, ClosedFormsAndCap) {
  Plane ref(8, 8, 100.0), dist(8, 8, 116.0);
  EXPECT_NEAR(psnr(ref, dist).value, 10 * std::log10(255.0 * 255.0 / 256.0), 1e-12);
  EXPECT_NEAR(psnr(ref, dist).value, 24.0484, 5e-5);
  EXPECT_EQ(psnr(ref, ref).value, 100.0);
  std::mt19937_64 rng(2);
  Plane base = random_plane(16, 16, rng, 50, 200);
  Plane e1 = base, e2 = base;
  std::uniform_real_distribution<double> d(-10, 10);
  for (std::size_t i = 0; i < base.values.size(); ++i) {
    const double err = d(rng);
    e1.values[i] += err;
    e2.values[i] += 2 * err;
  }
  EXPECT_NEAR(psnr(base, e1).value - psnr(base, e2).value, 20 * std::log10(2.0), 1e-9);
  EXPECT_NEAR(20 * std::log10(2.0), 6.0206, 5e-5);
  EXPECT_THROW(psnr(base, Plane(16, 15)), ShapeError);
}

TEST(Psnr, StrictlyDecreasesWithNestedError) {
  std::mt19937_64 rng(3);
  Plane ref = random_plane(32, 32, rng);
  Plane dist = ref;
  double previous = psnr(ref, dist).value;
  std::uniform_int_distribution<std::size_t> pick(0, ref.values.size() - 1);
  for (int k = 0; k < 50; ++k) {
    dist.values[pick(rng)] += 3.0;
    const double now = psnr(ref, dist).value;
    EXPECT_LT(now, previous);
    previous = now;
  }
}

TEST(PsnrAvg, MatchesWeightedMean) {
  EXPECT_NEAR(psnr_avg(40, 30, 30), 36.6667, 5e-5);
  EXPECT_DOUBLE_EQ(psnr_avg(33.5, 33.5, 33.5), 33.5);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(0, 60);
  for (int t = 0; t < 1000; ++t) {
    const double y = d(rng), u = d(rng), v = d(rng);
    const double terms[6] = {y, y, y, y, u, v};
    double s = 0;
    for (double x : terms) s += x;
    EXPECT_NEAR(psnr_avg(y, u, v), s / 6, 1e-12);
  }
}

TEST(Ssim, IdentityAndConstantClosedForm) {
  std::mt19937_64 rng(5);
  Plane p = random_plane(24, 30, rng);
  EXPECT_EQ(ssim(p, p).value, 1.0);
  Plane a(20, 20, 100.0), b(20, 20, 110.0);
  const double c1 = 6.5025;
  const double expected = (2 * 100.0 * 110.0 + c1) / (100.0 * 100 + 110.0 * 110 + c1);
  EXPECT_NEAR(ssim(a, b).value, expected, 1e-6);
  EXPECT_NEAR(expected, 0.99548, 5e-6);
  EXPECT_THROW(ssim(Plane(10, 20), Plane(10, 20)), InvalidArgument);
}

TEST(Ssim, MatchesBruteForceWindowedOracle) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 5; ++t) {
    Plane a = random_plane(17 + t, 19, rng);
    Plane b = a;
    std::normal_distribution<double> n(0, 5 + 10 * t);
    for (double& v : b.values) v += n(rng);
    const auto terms = ssim_terms(a, b);
    const auto brute = brute_ssim(a, b);
    EXPECT_NEAR(terms.ssim, brute.s, 1e-10);
    EXPECT_NEAR(terms.contrast_structure, brute.cs, 1e-10);
    EXPECT_NEAR(terms.luminance, brute.l, 1e-10);
  }
}

TEST(Ssim, SymmetricAndBounded) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    Plane a = random_plane(16, 16, rng), b = random_plane(16, 16, rng);
    if (t % 2) {
      for (double& v : b.values) v = 255 - v;
    }
    const double ab = ssim(a, b).value, ba = ssim(b, a).value;
    EXPECT_EQ(ab, ba);
    EXPECT_GE(ab, -1.0);
    EXPECT_LT(ab, 1.0);
  }
}

TEST(Ssim, MonotoneUnderIncreasingNoiseOnNaturalImages) {
  const auto paths = natural_images();
  ASSERT_GE(paths.size(), 10u);
  for (std::size_t k = 0; k < 10; ++k) {
    const Plane ref = luma(read_image(paths[k]));
    std::mt19937_64 rng(100 + k);
    std::normal_distribution<double> unit(0, 1);
    std::vector<double> noise(ref.values.size());
    for (double& v : noise) v = unit(rng);
    double previous = 1.0;
    for (double sigma : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
      Plane dist = ref;
      for (std::size_t i = 0; i < noise.size(); ++i) dist.values[i] += sigma * noise[i];
      const double s = ssim(ref, dist).value;
      const double ms = ms_ssim(ref, dist).value;
      EXPECT_LT(s, previous) << paths[k] << " sigma " << sigma;
      EXPECT_LT(ms, 1.0);
      previous = s;
    }
  }
}

TEST(MsSsim, IdentityAndSizeCheck) {
  std::mt19937_64 rng(8);
  Plane p = random_plane(176, 180, rng);
  EXPECT_EQ(ms_ssim(p, p).value, 1.0);
  EXPECT_THROW(ms_ssim(Plane(175, 200), Plane(175, 200)), InvalidArgument);
}

TEST(MsSsim, MatchesPerScaleOracle) {
  const Plane ref = luma(read_image(natural_images()[0]));
  Plane dist = box_blur(ref);
  Plane a = ref, b = dist;
  double expected = 1.0;
  for (int s = 0; s < 5; ++s) {
    const auto t = brute_ssim(a, b);
    expected *= std::pow(s < 4 ? t.cs : t.s, kMsSsimWeights[s]);
    a = half(a);
    b = half(b);
  }
  const double got = ms_ssim(ref, dist).value;
  EXPECT_NEAR(got, expected, 1e-9);
  EXPECT_LT(got, 1.0);
  EXPECT_GT(got, 0.0);
}

TEST(MsSsim, ShiftedConstantIsLuminanceOnly) {
  Plane a(176, 176, 60.0), b(176, 176, 75.0);
  const double c1 = std::pow(0.01 * 255, 2);
  const double l = (2 * 60.0 * 75.0 + c1) / (60.0 * 60 + 75.0 * 75 + c1);
  EXPECT_NEAR(ms_ssim(a, b).value, std::pow(l, 0.1333), 1e-12);
  EXPECT_EQ(ms_ssim(a, b).value, ms_ssim(b, a).value);
}

TEST(MetricOracle, SelfScoreIsMaxAcrossRandomSuite) {
  std::mt19937_64 rng(9);
  for (const auto& id : builtin_oracle_ids()) {
    auto oracle = make_oracle(id);
    EXPECT_EQ(oracle->name(), id);
    for (int t = 0; t < 5; ++t) {
      const Image im = random_image(176 + t, 176 + 2 * t, rng);
      EXPECT_DOUBLE_EQ(oracle->score(im, im), oracle->max_score()) << id;
    }
  }
  EXPECT_EQ(make_oracle("ssim")->max_score(), 1.0);
  EXPECT_THROW(make_oracle("vmaf"), InvalidArgument);
}

TEST(MetricOracle, DeterministicScores) {
  std::mt19937_64 rng(10);
  const Image a = random_image(32, 32, rng), b = random_image(32, 32, rng);
  auto oracle = make_oracle("ssim");
  EXPECT_EQ(oracle->score(a, b), oracle->score(a, b));
}

class ExternalOracleTest : public ::testing::Test {
 protected:
  std::filesystem::path dir;
  void SetUp() override {
    dir = std::filesystem::temp_directory_path() / ("pxiqa_ext_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
  }
  void TearDown() override { std::filesystem::remove_all(dir); }
  std::filesystem::path script(const std::string& name, const std::string& body) {
    const auto p = dir / name;
    std::ofstream(p) << "#!/bin/sh\n" << body << "\n";
    std::filesystem::permissions(p, std::filesystem::perms::owner_all);
    return p;
  }
};

TEST_F(ExternalOracleTest, ParsesScoreAndSeesBothImages) {
  const auto exe = script("scorer.sh", "test -s \"$1\" && test -s \"$2\" && echo ' 87.25'");
  ExternalOracle oracle("vmaf", exe, 100.0, dir);
  Image im(8, 8, 3, 10.0);
  EXPECT_DOUBLE_EQ(oracle.score(im, im), 87.25);
  EXPECT_EQ(oracle.max_score(), 100.0);
  std::size_t leftovers = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) leftovers += e.path().extension() == ".png";
  EXPECT_EQ(leftovers, 0u);
}

TEST_F(ExternalOracleTest, RejectsBadOutputAndFailures) {
  Image im(8, 8, 3, 10.0);
  EXPECT_THROW(ExternalOracle("x", script("words.sh", "echo not-a-number"), 100, dir).score(im, im), FormatError);
  EXPECT_THROW(ExternalOracle("x", script("two.sh", "echo 1 2"), 100, dir).score(im, im), FormatError);
  EXPECT_THROW(ExternalOracle("x", script("fail.sh", "echo 5; exit 3"), 100, dir).score(im, im), Error);
  EXPECT_THROW(ExternalOracle("x", dir / "missing", 100, dir).score(im, im), Error);
}

TEST(BradleyTerry, SymmetricMatrixGivesEqualScores) {
  PairedComparisonMatrix m(4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      if (i != j) m(i, j) = 7;
    }
  }
  for (double s : bt_scores(m)) EXPECT_NEAR(s, 0.0, 1e-12);
}

TEST(BradleyTerry, TwoItemClosedForm) {
  PairedComparisonMatrix m(2);
  m(0, 1) = 9;
  m(1, 0) = 1;
  const auto s = bt_scores(m);
  EXPECT_NEAR(std::exp(s[0] - s[1]), 9.0, 1e-6);
  EXPECT_NEAR(s[0] + s[1], 0.0, 1e-12);
}

TEST(BradleyTerry, RecoversGeneratingOrder) {
  const double strength[3] = {1, 2, 4};
  int correct = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(1000 + trial);
    PairedComparisonMatrix m(3);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = i + 1; j < 3; ++j) {
        std::bernoulli_distribution first(strength[i] / (strength[i] + strength[j]));
        for (int k = 0; k < 1000; ++k) (first(rng) ? m(i, j) : m(j, i)) += 1;
      }
    }
    const auto s = bt_scores(m);
    correct += s[0] < s[1] && s[1] < s[2];
  }
  EXPECT_GE(correct, 95);
}

TEST(BradleyTerry, InvariantToCountScaling) {
  PairedComparisonMatrix m(3);
  m(0, 1) = 3, m(1, 0) = 5, m(1, 2) = 2, m(2, 1) = 7, m(0, 2) = 1, m(2, 0) = 4;
  PairedComparisonMatrix scaled = m;
  for (double& w : scaled.wins) w *= 6;
  const auto a = bt_scores(m), b = bt_scores(scaled);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(i)], 1e-7);
}

TEST(BradleyTerry, DegenerateInputsAreRejected) {
  PairedComparisonMatrix split(4);
  split(0, 1) = 2, split(1, 0) = 1, split(2, 3) = 4, split(3, 2) = 1;
  try {
    bt_scores(split);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("{0,1} {2,3}"), std::string::npos) << e.what();
  }
  PairedComparisonMatrix one_sided(2);
  one_sided(0, 1) = 10;
  EXPECT_THROW(bt_scores(one_sided), InvalidArgument);
}

TEST(BradleyTerry, ReadsCsv) {
  const auto path = std::filesystem::temp_directory_path() / "pxiqa_pairs.csv";
  std::ofstream(path) << "i,j,count\n0,1,9\n1,0,1\n0,1,0\n";
  const auto m = read_pairs_csv(path);
  EXPECT_EQ(m.n, 2u);
  EXPECT_EQ(m(0, 1), 9);
  std::ofstream(path) << "0,1,9\n1,x,1\n";
  try {
    read_pairs_csv(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(ImageIo, PngAndPpmRoundTrip) {
  std::mt19937_64 rng(11);
  Image im = quantize_8bit(random_image(13, 17, rng));
  const auto dir = std::filesystem::temp_directory_path();
  for (const char* name : {"pxiqa_rt.png", "pxiqa_rt.ppm"}) {
    write_image(dir / name, im);
    const Image back = read_image(dir / name);
    EXPECT_TRUE(back.same_geometry(im));
    EXPECT_EQ(back.values, im.values) << name;
    std::filesystem::remove(dir / name);
  }
  EXPECT_THROW(read_image(dir / "nothing.bmp"), InvalidArgument);
}

TEST(ImageIo, ReflectPadAndCrop) {
  Image im(2, 3, 1);
  for (Index i = 0; i < 6; ++i) im.values[static_cast<std::size_t>(i)] = static_cast<double>(i);
  const Image p = pad_reflect(im, 3, 5);
  EXPECT_EQ(p.at(2, 0, 0), 0.0);  // row 2 mirrors row 0
  EXPECT_EQ(p.at(0, 3, 0), 1.0);  // column 3 mirrors column 1
  EXPECT_EQ(p.at(0, 4, 0), 0.0);
  const Image c = crop(p, 0, 0, 2, 3);
  EXPECT_EQ(c.values, im.values);
}
