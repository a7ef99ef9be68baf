#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "oslo/entropy.h"
#include "oslo/error.h"
#include "oslo/gaussian.h"

using namespace oslo;
using namespace oslo::entropy;

namespace {

struct Draw {
  std::vector<int32_t> symbols;
  std::vector<GaussianEntropyParams> params;
};

Draw random_draw(size_t n, std::mt19937_64& rng, double sigma_lo, double sigma_hi) {
  std::uniform_real_distribution<double> us(sigma_lo, sigma_hi), um(-2.0, 2.0);
  Draw d;
  for (size_t i = 0; i < n; ++i) {
    const GaussianEntropyParams p{um(rng), us(rng)};
    std::normal_distribution<double> g(p.mu, std::max(p.sigma, kSigmaMin));
    d.params.push_back(p);
    d.symbols.push_back(static_cast<int32_t>(std::round(g(rng))));
  }
  return d;
}

ParamsProvider provider(const Draw& d) {
  return [&d](size_t i) { return d.params[i]; };
}

// Coded bytes must stay within 1% of the ideal information plus a small
// fixed overhead for the flush and the tensor header.
void check_rate(const Draw& d, const std::vector<uint8_t>& stream) {
  const double ideal_bytes = ideal_bits(d.symbols, provider(d)) / 8.0;
  CHECK(static_cast<double>(stream.size()) <= 1.01 * ideal_bytes + 32.0);
}

}  // namespace

TEST_CASE("cdf has positive bins and full mass") {
  for (double sigma : {0.01, 0.11, 0.5, 3.0, 40.0}) {
    for (double mu : {-3.2, 0.0, 0.49, 7.0}) {
      for (int support : {1, 2, 8, 64}) {
        const QuantizedCdf cdf = build_cdf(mu, sigma, support);
        CHECK(cdf.cumulative.front() == 0);
        CHECK(cdf.cumulative.back() == kTotalFrequency);
        for (int k = -support; k <= support; ++k) CHECK(cdf.frequency(k) >= 1);
      }
    }
  }
}

TEST_CASE("zero-mean cdf is symmetric") {
  for (double sigma : {0.2, 1.0, 5.5}) {
    const QuantizedCdf cdf = build_cdf(0.0, sigma, 10);
    for (int k = 1; k <= 10; ++k) CHECK(cdf.frequency(k) == cdf.frequency(-k));
  }
}

TEST_CASE("cdf frequencies track the Gaussian bin masses") {
  const QuantizedCdf cdf = build_cdf(0.3, 1.7, 20);
  for (int k = -19; k <= 19; ++k) {
    const double p = gaussian_bin_mass(k, 0.3, 1.7);
    CHECK(std::abs(cdf.frequency(k) / double(kTotalFrequency) - p) < 2e-3 * p + 1e-3);
  }
}

TEST_CASE("range coder roundtrips random sequences within the rate bound") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 1 + rng() % 5000;
    const Draw d = random_draw(n, rng, 0.05, 6.0);
    const auto stream = range_encode(d.symbols, provider(d));
    CHECK(range_decode(stream, provider(d), n) == d.symbols);
    check_rate(d, stream);
  }
}

TEST_CASE("low-entropy sequences stay close to their information content") {
  std::mt19937_64 rng(12);
  const Draw d = random_draw(20000, rng, 0.11, 0.3);
  const auto stream = range_encode(d.symbols, provider(d));
  CHECK(range_decode(stream, provider(d), d.symbols.size()) == d.symbols);
  check_rate(d, stream);
}

TEST_CASE("empty tensor is header only") {
  const ParamsProvider p = [](size_t) { return GaussianEntropyParams{}; };
  const auto stream = range_encode({}, p);
  CHECK(stream.size() == kTensorHeaderBytes);
  CHECK(range_decode(stream, p, 0).empty());
}

TEST_CASE("values beyond the support are escape coded") {
  std::vector<int32_t> symbols = {0, 1, -1, 5000, -70000, 2, 0, 123456789, -3};
  const ParamsProvider p = [](size_t) { return GaussianEntropyParams{0.0, 1.0}; };
  const auto stream = range_encode(symbols, p);
  CHECK(read_tensor_header(stream).support == kMaxSupport);
  CHECK(range_decode(stream, p, symbols.size()) == symbols);
}

TEST_CASE("symbols at the support edge roundtrip") {
  std::vector<int32_t> symbols = {-3, 3, 0, 1, -1, 2, -2};
  const ParamsProvider p = [](size_t) { return GaussianEntropyParams{0.0, 0.5}; };
  const auto stream = range_encode(symbols, p);
  CHECK(read_tensor_header(stream).support == 5);
  CHECK(range_decode(stream, p, symbols.size()) == symbols);
}

TEST_CASE("truncated streams and count mismatches raise corrupt-stream errors") {
  std::mt19937_64 rng(13);
  const Draw d = random_draw(2000, rng, 0.5, 3.0);
  const auto stream = range_encode(d.symbols, provider(d));
  for (size_t cut : {size_t{0}, size_t{5}, kTensorHeaderBytes + 2, stream.size() / 2, stream.size() - 1}) {
    const std::vector<uint8_t> part(stream.begin(), stream.begin() + cut);
    try {
      range_decode(part, provider(d), d.symbols.size());
      FAIL("truncated stream decoded");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kCorruptStream);
    }
  }
  try {
    range_decode(stream, provider(d), d.symbols.size() + 1);
    FAIL("count mismatch accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptStream);
  }
}

namespace {

// Toy autoregressive model: mu is half the mean of the decoded previous row,
// sigma grows with its magnitude.
class PreviousRowModel final : public RowModel {
 public:
  PreviousRowModel(PatchFrame frame, int channels) : frame_(frame), channels_(channels) {}
  const PatchFrame& frame() const override { return frame_; }
  int channels() const override { return channels_; }
  void predict(const SphereSignal& decoded, int64_t row, double* mu, double* sigma) const override {
    double acc = 0.0;
    if (row > 0) {
      for (int c = 0; c < channels_; ++c) acc += decoded.at(row - 1, c);
    }
    for (int c = 0; c < channels_; ++c) {
      mu[c] = 0.5 * acc / channels_ + 0.1 * c;
      sigma[c] = 0.3 + 0.2 * std::abs(acc);
    }
  }

 private:
  PatchFrame frame_;
  int channels_;
};

}  // namespace

TEST_CASE("sequential latent coding roundtrips and reproduces mu and sigma") {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> g(0.0, 2.0);
  const PatchFrame frame{8, 0, 768};
  SphereSignal y(frame, 3);
  for (double& v : y.values().data()) v = g(rng);
  const PreviousRowModel model(frame, 3);
  const SequentialLatents enc = quantize_latents_sequential(y, model);
  for (int64_t r = 0; r < frame.count; ++r) {
    for (int c = 0; c < 3; ++c) CHECK(std::abs(enc.yhat.at(r, c) - y.at(r, c)) <= 0.5);
  }
  const auto stream = encode_latents(enc);
  const SequentialLatents dec = decode_latents_sequential(stream, model);
  CHECK(dec.symbols == enc.symbols);
  CHECK(dec.yhat == enc.yhat);
  CHECK(dec.mu == enc.mu);
  CHECK(dec.sigma == enc.sigma);
}
