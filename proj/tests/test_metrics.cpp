#include "test_util.hpp"

using namespace fclgan;

namespace {

Image random_image(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng, float lo = 0.0f,
                   float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Image img(c, h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

// Direct 2-D windowed SSIM on luma, one window at a time.
double ssim_oracle(const Image& x, const Image& y) {
  auto luma = [](const Image& im, std::size_t r, std::size_t c) {
    if (im.channels == 1) return double(im.at(0, r, c));
    return 0.299 * im.at(0, r, c) + 0.587 * im.at(1, r, c) + 0.114 * im.at(2, r, c);
  };
  double g[11][11], gs = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + 11 <= x.height; ++r)
    for (std::size_t c = 0; c + 11 <= x.width; ++c) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double w = g[i][j] / gs, a = luma(x, r + i, c + j), b = luma(y, r + i, c + j);
          mx += w * a;
          my += w * b;
          xx += w * a * a;
          yy += w * b * b;
          xy += w * a * b;
        }
      const double vx = xx - mx * mx, vy = yy - my * my, cv = xy - mx * my;
      total += (2 * mx * my + c1) * (2 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / double(count);
}

}  // namespace

TEST(Psnr, IdenticalImagesHitTheCap) {
  std::mt19937_64 rng(1);
  const Image x = random_image(3, 8, 8, rng);
  EXPECT_EQ(psnr(x, x), kPsnrCap);
  EXPECT_EQ(kPsnrCap, 100.0);
}

TEST(Psnr, ConstantOffsetOfOneGrayLevel) {
  const Image a(3, 16, 16, 100.0f / 255.0f), b(3, 16, 16, 101.0f / 255.0f);
  EXPECT_NEAR(psnr(a, b), 48.13, 1e-3);
  EXPECT_NEAR(psnr(a, b), 20 * std::log10(255.0), 1e-4);
}

TEST(Psnr, MatchesBruteForceMse) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 5; ++t) {
    const Image x = random_image(3, 9, 14, rng), y = random_image(3, 9, 14, rng);
    double se = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 14; ++j) se += std::pow(double(x.at(c, i, j)) - y.at(c, i, j), 2);
    EXPECT_NEAR(psnr(x, y), -10 * std::log10(se / (3 * 9 * 14)), 1e-10);
  }
}

TEST(Psnr, StrictlyDecreasesWithNoiseAmplitude) {
  std::mt19937_64 rng(3);
  const Image x = random_image(3, 32, 32, rng, 0.2f, 0.8f);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> noise(x.data.size());
  for (auto& v : noise) v = nd(rng);
  double prev = kPsnrCap + 1;
  for (float amp : {0.01f, 0.05f, 0.1f}) {
    Image y = x;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = std::clamp(y.data[i] + amp * noise[i], 0.0f, 1.0f);
    const double p = psnr(x, y);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Metrics, Symmetric) {
  std::mt19937_64 rng(4);
  const Image x = random_image(3, 20, 20, rng), y = random_image(3, 20, 20, rng);
  EXPECT_DOUBLE_EQ(psnr(x, y), psnr(y, x));
  EXPECT_NEAR(ssim(x, y), ssim(y, x), 1e-15);
  EXPECT_DOUBLE_EQ(cse_proxy(x, y), cse_proxy(y, x));
}

TEST(Metrics, ShapeMismatchIsRejected) {
  const Image a(3, 16, 16), b(3, 16, 15), g(1, 16, 16);
  EXPECT_THROW(psnr(a, b), ShapeError);
  EXPECT_THROW(ssim(a, b), ShapeError);
  EXPECT_THROW(cse_proxy(a, g), ShapeError);
}

TEST(Ssim, IdenticalImagesGiveOne) {
  std::mt19937_64 rng(5);
  const Image x = random_image(3, 24, 24, rng);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(Ssim, ConstantBlackVersusWhiteIsGovernedByStabilizers) {
  const Image x(1, 16, 16, 0.0f), y(1, 16, 16, 1.0f);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double expected = (2 * 0 * 1 + c1) * (0 + c2) / ((0 + 1 + c1) * (0 + 0 + c2));
  EXPECT_NEAR(ssim(x, y), expected, 1e-12);
  EXPECT_GT(ssim(x, y), 0.0);
}

TEST(Ssim, MatchesDirectWindowedEvaluation) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 3; ++t) {
    const Image x = random_image(3, 17 + t, 21, rng);
    Image y = x;
    std::normal_distribution<float> nd(0.0f, 0.1f);
    for (auto& v : y.data) v = std::clamp(v + nd(rng), 0.0f, 1.0f);
    EXPECT_NEAR(ssim(x, y), ssim_oracle(x, y), 1e-12);
  }
}

TEST(Ssim, MatchesScikitImageReference) {
  const auto j = nlohmann::json::parse(testutil::slurp(std::filesystem::path(FCLGAN_FIXTURE_DIR) / "ssim_reference.json"));
  ASSERT_EQ(j.at("cases").size(), 10u);
  for (const auto& c : j.at("cases")) {
    const std::size_t h = c.at("height"), w = c.at("width");
    Image x(1, h, w), y(1, h, w);
    const auto xv = c.at("x").get<std::vector<double>>(), yv = c.at("y").get<std::vector<double>>();
    for (std::size_t i = 0; i < h * w; ++i) {
      x.data[i] = static_cast<float>(xv[i]);
      y.data[i] = static_cast<float>(yv[i]);
    }
    EXPECT_NEAR(ssim(x, y), c.at("ssim").get<double>(), 1e-4);
  }
}

TEST(Ssim, BoundedOnRandomPairs) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    const double s = ssim(random_image(3, 16, 16, rng), random_image(3, 16, 16, rng));
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Ssim, ImageSmallerThanWindowIsShapeError) {
  const Image a(3, 10, 30);
  EXPECT_THROW(ssim(a, a), ShapeError);
}

TEST(CseProxy, Examples) {
  std::mt19937_64 rng(8);
  const Image x = random_image(3, 12, 12, rng, 0.0f, 0.9f);
  EXPECT_EQ(cse_proxy(x, x), 0.0);
  Image y = x;
  for (std::size_t i = 0; i < x.plane(); ++i) y.data[i] += 0.1f;
  EXPECT_NEAR(cse_proxy(x, y), 0.1 / 3, 1e-6);

  Image perm = x;
  std::vector<std::size_t> idx(x.plane());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < x.plane(); ++i) perm.data[c * x.plane() + i] = x.data[c * x.plane() + idx[i]];
  EXPECT_NEAR(cse_proxy(x, perm), 0.0, 1e-6);
  EXPECT_GE(cse_proxy(x, random_image(3, 12, 12, rng)), 0.0);
}

TEST(MetricReport, MeansAreArithmetic) {
  std::mt19937_64 rng(9);
  MetricReport rep;
  std::vector<double> p, s, c;
  for (int i = 0; i < 4; ++i) {
    const Image a = random_image(3, 16, 16, rng), b = random_image(3, 16, 16, rng);
    rep.add("img" + std::to_string(i), a, b);
    p.push_back(psnr(a, b));
    s.push_back(ssim(a, b));
    c.push_back(cse_proxy(a, b));
  }
  auto avg = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  EXPECT_EQ(rep.count(), 4u);
  EXPECT_NEAR(rep.mean().psnr, avg(p), 1e-12);
  EXPECT_NEAR(rep.mean().ssim, avg(s), 1e-12);
  EXPECT_NEAR(rep.mean().cse_proxy, avg(c), 1e-12);
  const auto j = rep.to_json();
  EXPECT_EQ(j.at("count"), 4);
  EXPECT_EQ(j.at("rows").size(), 4u);
  EXPECT_NEAR(j.at("mean").at("psnr").get<double>(), avg(p), 1e-12);
  const std::string t = rep.table();
  EXPECT_NE(t.find("cse_proxy"), std::string::npos);
  EXPECT_NE(t.find("capped at 100 dB"), std::string::npos);
  EXPECT_NE(t.find("img3"), std::string::npos);
}
