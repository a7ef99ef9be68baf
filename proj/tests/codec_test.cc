#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "oslo/codec.h"
#include "oslo/error.h"
#include "oslo/net.h"

using namespace oslo;
using namespace oslo::codec;
using net::Model;
using net::ModelConfig;

namespace {

ModelConfig small_config(const std::string& arch, int hops, net::UnpoolMode unpool, int channels) {
  ModelConfig c = ModelConfig::preset(arch, 4, 4);
  c.hops = hops;
  c.blocks = 1;
  c.unpool = unpool;
  c.image_channels = channels;
  c.rebuild();
  return c;
}

// Smooth content plus noise of a chosen amplitude.
SphereSignal test_image(int n_side, int channels, double amplitude, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  const double fx = 1 + 3 * u(rng), fy = 1 + 3 * u(rng);
  SphereSignal x(PatchFrame::full(n_side), channels);
  for (int64_t p = 0; p < x.rows(); ++p) {
    const double t = static_cast<double>(p) / x.rows();
    for (int c = 0; c < channels; ++c) {
      x.at(p, c) = 0.5 + 0.3 * std::sin(fx * 6.28 * t + c) * std::cos(fy * 3.14 * t) + amplitude * g(rng);
    }
  }
  return x;
}

void randomize(Model& model, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  for (Parameter* p : model.params().all()) {
    for (double& v : p->value.data()) v += scale * g(rng);
  }
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kUsage;
}

Container sample_container() {
  Container c;
  c.n_side = 32;
  c.channels = 3;
  for (int i = 0; i < 16; ++i) c.digest[i] = static_cast<uint8_t>(i * 17);
  c.lambda_id = 4;
  c.hyper = {1, 2, 3};
  c.main = {9, 8, 7, 6, 5};
  return c;
}

}  // namespace

TEST_CASE("container serialize and parse") {
  const Container c = sample_container();
  const auto bytes = serialize(c);
  CHECK(bytes.size() == kContainerOverhead + c.hyper.size() + c.main.size());
  CHECK(parse(bytes) == c);
  CHECK(bytes[0] == 'O');
  CHECK(bytes[4] == 1);  // little-endian version
  CHECK(bytes[5] == 0);
}

TEST_CASE("container rejects truncation, versions and tampering") {
  const auto bytes = serialize(sample_container());
  for (size_t len : {size_t{0}, size_t{3}, size_t{20}, bytes.size() - 1}) {
    try {
      parse(std::span(bytes).first(len));
      FAIL("truncated container accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kCorruptStream);
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
  auto bumped = bytes;
  bumped[4] = 2;
  CHECK(code_of([&] { parse(bumped); }) == ErrorCode::kUnsupportedVersion);

  for (size_t i = 0; i < bytes.size(); ++i) {
    if (i == 4 || i == 5) continue;
    auto tampered = bytes;
    tampered[i] ^= 0x40;
    CHECK_THROWS_AS(parse(tampered), Error);
  }
  auto longer = bytes;
  longer.push_back(0);
  CHECK(code_of([&] { parse(longer); }) == ErrorCode::kCorruptStream);
}

TEST_CASE("encode and decode agree") {
  const ModelConfig cfg = small_config("proposed", 2, net::UnpoolMode::kPixelShuffle, 3);
  Model model(cfg, 7);
  std::mt19937_64 rng(1);
  randomize(model, 0.05, rng);
  const SphereSignal x = test_image(32, 3, 0.05, 2);

  const Encoded e = encode_image(x, model);
  CHECK(e.bytes == serialize(e.container));
  CHECK(e.bpp == doctest::Approx(8.0 * e.bytes.size() / x.rows()));
  CHECK(e.container.lambda_id == net::lambda_id(cfg.lambda));
  CHECK(decode_image(e.bytes, model) == e.reconstruction);

  // Deterministic bytes.
  CHECK(encode_image(x, model).bytes == e.bytes);

  // The encoder's rate estimate and the real payload agree to within the
  // container and coder overhead.
  const double payload_bits = 8.0 * (e.bytes.size() - kContainerOverhead);
  CHECK(payload_bits / x.rows() >= e.model_bpp * 0.99);
}

TEST_CASE("decoder reproduces the encoder's latent statistics") {
  const ModelConfig cfg = small_config("proposed", 1, net::UnpoolMode::kTransposedConv, 2);
  Model model(cfg, 11);
  std::mt19937_64 rng(3);
  randomize(model, 0.1, rng);
  const SphereSignal x = test_image(32, 2, 0.1, 4);

  ad::Graph g(false);
  const net::ForwardResult r = net::forward_model(g, model, g.input(x), net::QuantMode::kRound);
  const auto predictor = net::make_row_model(model, g.signal(r.hyper_features));
  const auto stream = entropy::encode_latents(r.latents);
  const entropy::SequentialLatents d = entropy::decode_latents_sequential(stream, *predictor);
  CHECK(d.symbols == r.latents.symbols);
  CHECK(d.mu == r.latents.mu);
  CHECK(d.sigma == r.latents.sigma);
  CHECK(d.yhat == r.latents.yhat);
  CHECK(d.mu == g.value(r.mu));
}

TEST_CASE("decode errors") {
  const ModelConfig cfg = small_config("proposed", 1, net::UnpoolMode::kPixelShuffle, 3);
  Model model(cfg, 1), other(cfg, 2);
  const SphereSignal x = test_image(32, 3, 0.02, 5);
  const Encoded e = encode_image(x, model);
  CHECK(code_of([&] { decode_image(e.bytes, other); }) == ErrorCode::kWrongModel);

  // Any flipped payload byte is caught by the checksum, never decoded.
  for (size_t i = kContainerOverhead - 4; i < e.bytes.size(); i += 7) {
    auto tampered = e.bytes;
    tampered[i] ^= 0x01;
    CHECK_THROWS_AS(decode_image(tampered, model), Error);
  }

  CHECK(code_of([&] { encode_image(test_image(16, 3, 0.0, 1), model); }) == ErrorCode::kResolution);
  SphereSignal bad = x;
  bad.at(5, 1) = std::nan("");
  CHECK(code_of([&] { encode_image(bad, model); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([&] { encode_image(test_image(32, 2, 0.0, 1), model); }) == ErrorCode::kShape);
}

TEST_CASE("randomized roundtrips") {
  const char* archs[] = {"sh", "sh_attn_rb", "proposed"};
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    INFO("trial " << trial);
    const std::string arch = archs[trial % 3];
    const auto unpool = trial % 2 ? net::UnpoolMode::kTransposedConv : net::UnpoolMode::kPixelShuffle;
    const int channels = 1 + trial % 3;
    Model model(small_config(arch, 1 + (trial / 3) % 2, unpool, channels), 1000 + trial);
    randomize(model, 0.2 * u(rng), rng);
    // Large amplitudes push symbols past the table support into escapes.
    const double amplitude = trial % 10 == 0 ? 50.0 : 0.3 * u(rng);
    const SphereSignal x = test_image(32, channels, amplitude, 5000 + trial);
    const Encoded e = encode_image(x, model);
    CHECK(decode_image(e.bytes, model) == e.reconstruction);
  }
}
