#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>

#include "doctest.h"
#include "oslo/error.h"
#include "oslo/healpix.h"
#include "oslo/metrics.h"

using namespace oslo;
using namespace oslo::metrics;

namespace {

constexpr double kPi = std::numbers::pi;

ErpImage field_image(int h, int channels, double (*f)(double theta, double phi, int c)) {
  ErpImage img(2 * h, h, channels);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < 2 * h; ++u) {
      const double theta = kPi * (v + 0.5) / h, phi = 2 * kPi * (u + 0.5) / (2 * h);
      for (int c = 0; c < channels; ++c) img.at(u, v, c) = f(theta, phi, c);
    }
  }
  return img;
}

double latitude_weighted_mean(const ErpImage& img, int c) {
  double num = 0.0, den = 0.0;
  for (int v = 0; v < img.height; ++v) {
    const double w = std::sin(kPi * (v + 0.5) / img.height);
    for (int u = 0; u < img.width; ++u) {
      num += w * img.at(u, v, c);
      den += w;
    }
  }
  return num / den;
}

RDCurve shifted(const RDCurve& c, double rate_factor) {
  RDCurve out = c;
  for (RDPoint& p : out) p.rate *= rate_factor;
  return out;
}

const RDCurve kCurve = {{0.1, 28.0}, {0.2, 30.5}, {0.4, 33.0}, {0.8, 35.2}, {1.6, 37.0}};

}  // namespace

TEST_CASE("erp dimensions") {
  CHECK_THROWS_AS(check_erp_dims(10, 4, 3), Error);
  CHECK_THROWS_AS(check_erp_dims(0, 0, 1), Error);
  CHECK_NOTHROW(check_erp_dims(8, 4, 1));
}

TEST_CASE("resampling preserves constants both ways") {
  const ErpImage img(64, 32, 3, 0.375);
  const SphereSignal s = erp_to_healpix(img, 8);
  CHECK(s.channels() == 3);
  for (int64_t p = 0; p < s.rows(); ++p) {
    for (int c = 0; c < 3; ++c) CHECK(s.at(p, c) == doctest::Approx(0.375).epsilon(1e-14));
  }
  for (ErpSampling mode : {ErpSampling::kNearestCell, ErpSampling::kNeighborAverage}) {
    const ErpImage back = healpix_to_erp(s, 64, 32, mode);
    for (double v : back.samples) CHECK(v == doctest::Approx(0.375).epsilon(1e-14));
  }
}

TEST_CASE("smooth field survives erp to healpix") {
  const ErpImage img = field_image(64, 1, [](double theta, double phi, int) {
    return std::sin(theta) * std::cos(phi);
  });
  const int n_side = 16;
  const SphereSignal s = erp_to_healpix(img, n_side);
  double worst = 0.0;
  for (int64_t p = 0; p < s.rows(); ++p) {
    const healpix::Angles a = healpix::pix2ang(n_side, p);
    worst = std::max(worst, std::abs(s.at(p, 0) - std::sin(a.theta) * std::cos(a.phi)));
  }
  CHECK(worst < 2e-2);
}

TEST_CASE("healpix to erp conserves the mean") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  const int n_side = 16;
  SphereSignal s(PatchFrame::full(n_side), 2);
  for (int64_t p = 0; p < s.rows(); ++p) {
    for (int c = 0; c < 2; ++c) s.at(p, c) = 0.5 + 0.1 * g(rng);
  }
  const ErpImage img = healpix_to_erp(s, 256, 128, ErpSampling::kNearestCell);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (int64_t p = 0; p < s.rows(); ++p) mean += s.at(p, c);
    mean /= s.rows();
    CHECK(std::abs(latitude_weighted_mean(img, c) - mean) < 1e-3);
  }
}

TEST_CASE("nearest-cell export picks the containing cell") {
  const int n_side = 4;
  SphereSignal s(PatchFrame::full(n_side), 1);
  for (int64_t p = 0; p < s.rows(); ++p) s.at(p, 0) = static_cast<double>(p);
  const ErpImage img = healpix_to_erp(s, 32, 16, ErpSampling::kNearestCell);
  for (int v = 0; v < 16; ++v) {
    for (int u = 0; u < 32; ++u) {
      const double theta = kPi * (v + 0.5) / 16, phi = 2 * kPi * (u + 0.5) / 32;
      CHECK(img.at(u, v, 0) == static_cast<double>(healpix::ang2pix(n_side, theta, phi)));
    }
  }
}

TEST_CASE("ws-psnr of a uniform error") {
  const ErpImage a(64, 32, 3, 0.5);
  ErpImage b = a;
  for (double& s : b.samples) s += 0.01;
  const double expected = 10.0 * std::log10(1.0 / 1e-4);
  CHECK(std::abs(ws_psnr(a, b) - expected) < 1e-9);
  CHECK(std::abs(psnr(a, b) - expected) < 1e-9);
  CHECK(std::abs(ws_psnr(a, b, 255.0) - (expected + 20 * std::log10(255.0))) < 1e-9);
  CHECK(ws_psnr(a, a) == kInfiniteDb);
  CHECK(format_db(ws_psnr(a, a)) == "inf");
}

TEST_CASE("ws-psnr weighs the equator above the poles") {
  const ErpImage ref(64, 32, 1, 0.5);
  ErpImage equator = ref, pole = ref;
  for (int u = 0; u < 64; ++u) {
    equator.at(u, 16, 0) += 0.2;
    pole.at(u, 0, 0) += 0.2;
  }
  CHECK(ws_psnr(ref, equator) < ws_psnr(ref, pole));
  CHECK(psnr(ref, equator) == doctest::Approx(psnr(ref, pole)));
  CHECK(ws_weight(0, 32) == doctest::Approx(std::cos(kPi * (0.5 / 32 - 0.5))));
  CHECK_THROWS_AS(ws_psnr(ref, ErpImage(32, 16, 1)), Error);
}

TEST_CASE("unit weights reduce ws-psnr to psnr") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  ErpImage a(32, 16, 3), b(32, 16, 3);
  double se = 0.0;
  for (size_t i = 0; i < a.samples.size(); ++i) {
    a.samples[i] = u(rng);
    b.samples[i] = u(rng);
    se += (a.samples[i] - b.samples[i]) * (a.samples[i] - b.samples[i]);
  }
  CHECK(weighted_mse(a, b, true) == doctest::Approx(se / a.samples.size()).epsilon(1e-12));
  CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(a.samples.size() / se)).epsilon(1e-12));
}

TEST_CASE("bd-rate basics") {
  CHECK(bd_rate(kCurve, kCurve) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(bd_rate(kCurve, shifted(kCurve, 2.0)) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(bd_rate(kCurve, shifted(kCurve, 0.5)) == doctest::Approx(-50.0).epsilon(1e-9));

  // Swapping the curves inverts the rate ratio.
  RDCurve other = {{0.12, 28.5}, {0.21, 30.4}, {0.37, 32.6}, {0.9, 35.9}, {1.5, 36.5}};
  const double forward = bd_rate(kCurve, other) / 100 + 1;
  const double backward = bd_rate(other, kCurve) / 100 + 1;
  CHECK(forward * backward == doctest::Approx(1.0).epsilon(1e-12));

  // Point order does not matter.
  RDCurve reversed(kCurve.rbegin(), kCurve.rend());
  CHECK(bd_rate(reversed, shifted(kCurve, 2.0)) == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("bd-rate errors") {
  const RDCurve three(kCurve.begin(), kCurve.begin() + 3);
  CHECK_THROWS_AS(bd_rate(three, kCurve), Error);
  RDCurve far = kCurve;
  for (RDPoint& p : far) p.quality += 20.0;
  try {
    bd_rate(kCurve, far);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIncomparableCurves);
  }
  RDCurve bad = kCurve;
  bad[2].rate = 0.0;
  CHECK_THROWS_AS(bd_rate(kCurve, bad), Error);
  bad = kCurve;
  bad[2].rate = bad[1].rate;
  CHECK_THROWS_AS(normalize_curve(bad), Error);
}

TEST_CASE("published rd curves reproduce their bd-rates") {
  const auto curves = read_rd_csv(std::filesystem::path(OSLO_DATA_DIR) / "fixtures/fig4_rd.csv");
  REQUIRE(curves.count("SH") == 1);
  const RDCurve& ref = curves.at("SH");
  const std::pair<const char*, double> expected[] = {{"SH_TConv", 1.3},
                                                     {"SH_Attn_RB", -9.9},
                                                     {"SH_Attn_RB_TConv", -8.9},
                                                     {"Proposed", -23.1},
                                                     {"Proposed_TConv", -23.0}};
  for (const auto& [name, value] : expected) {
    INFO(name);
    REQUIRE(curves.count(name) == 1);
    CHECK(std::abs(bd_rate(ref, curves.at(name)) - value) <= 2.0);
  }
}

TEST_CASE("rd csv roundtrip and rejection") {
  std::map<std::string, RDCurve> curves = {{"a", kCurve}, {"b", shifted(kCurve, 1.5)}};
  CHECK(parse_rd_csv(format_rd_csv(curves)) == curves);
  CHECK(parse_rd_csv("rate_bpp,quality_db\n0.4,33\n0.1,28\n").at("") ==
        RDCurve{{0.1, 28.0}, {0.4, 33.0}});
  CHECK_THROWS_AS(parse_rd_csv("bpp_x,db\n1,2\n"), Error);
  CHECK_THROWS_AS(parse_rd_csv("rate_bpp,quality_db\n0.1,abc\n"), Error);
}

TEST_CASE("pixmap and oerp roundtrips") {
  ErpImage img(16, 8, 3);
  for (size_t i = 0; i < img.samples.size(); ++i) img.samples[i] = static_cast<double>(i % 256) / 255.0;
  CHECK(parse_ppm(format_ppm(img, 8)) == img);
  const ErpImage back16 = parse_ppm(format_ppm(img, 16));
  for (size_t i = 0; i < img.samples.size(); ++i) {
    CHECK(std::abs(back16.samples[i] - img.samples[i]) <= 0.5 / 65535 + 1e-15);
  }
  ErpImage gray(8, 4, 1, 0.25);
  gray.samples[3] = 0.123456789;
  CHECK(parse_oerp(format_oerp(gray)) == gray);

  auto bytes = format_ppm(img, 8);
  bytes.resize(bytes.size() - 1);
  CHECK_THROWS_AS(parse_ppm(bytes), Error);
  const std::string commented = "P5\n# note\n4 2\n255\n\x01\x02\x03\x04\x05\x06\x07\x08";
  const ErpImage c = parse_ppm(std::vector<uint8_t>(commented.begin(), commented.end()));
  CHECK(c.width == 4);
  CHECK(c.at(3, 1, 0) == doctest::Approx(8.0 / 255));
  CHECK_THROWS_AS(format_ppm(ErpImage(4, 2, 2), 8), Error);

  const auto dir = std::filesystem::temp_directory_path();
  write_erp(img, dir / "oslo_metrics_test.ppm");
  CHECK(read_erp(dir / "oslo_metrics_test.ppm") == img);
  write_erp(gray, dir / "oslo_metrics_test.oerp");
  CHECK(read_erp(dir / "oslo_metrics_test.oerp") == gray);
}
