#include "oslo/codec.h"

#include <zlib.h>

#include <cmath>
#include <string>

#include "oslo/byte_io.h"
#include "oslo/entropy.h"
#include "oslo/error.h"
#include "oslo/healpix.h"

namespace oslo::codec {
namespace {

constexpr uint8_t kMagic[4] = {'O', 'S', 'I', 'C'};

uint32_t crc32_of(std::span<const uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  size_t done = 0;
  while (done < bytes.size()) {
    const size_t chunk = std::min<size_t>(bytes.size() - done, 1u << 30);
    crc = crc32(crc, bytes.data() + done, static_cast<uInt>(chunk));
    done += chunk;
  }
  return static_cast<uint32_t>(crc);
}

void check_resolution(const net::Model& model, int64_t n_side) {
  const int levels = model.config().total_downsamplings();
  if (n_side < (int64_t{1} << levels) || n_side % (int64_t{1} << levels) != 0) {
    throw Error(ErrorCode::kResolution, "n_side " + std::to_string(n_side) +
                                            " is not a multiple of the model's downsampling factor " +
                                            std::to_string(1 << levels));
  }
}

// Per-channel prior of the hyper-latent over `frame`.
net::Model::Stats hyper_prior(ad::Graph& g, net::Model& model, const PatchFrame& frame) {
  return model.hyper_stats(g, frame);
}

entropy::ParamsProvider residual_params(const Matrix& sigma) {
  return [&sigma](size_t i) { return entropy::GaussianEntropyParams{0.0, sigma.data()[i]}; };
}

}  // namespace

std::vector<uint8_t> serialize(const Container& c) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u16(c.version);
  w.u32(c.n_side);
  w.u8(c.channels);
  w.bytes(c.digest);
  w.u8(c.lambda_id);
  w.u64(c.hyper.size());
  w.bytes(c.hyper);
  w.u64(c.main.size());
  w.bytes(c.main);
  std::vector<uint8_t> out = w.take();
  const uint32_t crc = crc32_of(out);
  ByteWriter tail;
  tail.u32(crc);
  const auto t = tail.take();
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

Container parse(std::span<const uint8_t> bytes) {
  Container c;
  try {
    ByteReader r(bytes);
    const auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kMagic)) {
      throw Error(ErrorCode::kCorruptStream, "not an .osic container");
    }
    c.version = r.u16();
    if (c.version != kContainerVersion) {
      throw Error(ErrorCode::kUnsupportedVersion,
                  "container version " + std::to_string(c.version) + " (supported: " +
                      std::to_string(kContainerVersion) + ")");
    }
    c.n_side = r.u32();
    c.channels = r.u8();
    for (uint8_t& b : c.digest) b = r.u8();
    c.lambda_id = r.u8();
    const uint64_t hyper_len = r.u64();
    const auto hyper = r.bytes(static_cast<size_t>(hyper_len));
    c.hyper.assign(hyper.begin(), hyper.end());
    const uint64_t main_len = r.u64();
    const auto main = r.bytes(static_cast<size_t>(main_len));
    c.main.assign(main.begin(), main.end());
    const size_t body = r.offset();
    const uint32_t stored = r.u32();
    if (r.offset() != bytes.size()) {
      throw Error(ErrorCode::kCorruptStream, std::to_string(bytes.size() - r.offset()) +
                                                 " trailing bytes after the checksum");
    }
    if (crc32_of(bytes.first(body)) != stored) throw Error(ErrorCode::kCorruptStream, "checksum mismatch");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kParse) throw Error(ErrorCode::kCorruptStream, e.what());
    throw;
  }
  return c;
}

Encoded encode_image(const SphereSignal& x, net::Model& model) {
  const net::ModelConfig& cfg = model.config();
  if (!x.frame().is_full()) throw Error(ErrorCode::kInvalidInput, "the codec works on full-sphere images");
  if (x.channels() != cfg.image_channels) {
    throw Error(ErrorCode::kShape, "image has " + std::to_string(x.channels()) + " channels, model expects " +
                                       std::to_string(cfg.image_channels));
  }
  if (!x.all_finite()) throw Error(ErrorCode::kInvalidInput, "image contains non-finite samples");
  check_resolution(model, x.n_side());

  ad::Graph g(false);
  const net::ForwardResult r = net::forward_model(g, model, g.input(x), net::QuantMode::kRound);

  // Hyper-latent residual symbols; the graph computed nu_hat = k + mu.
  const Matrix& nu = g.value(r.nu);
  const Matrix& nu_mu = g.value(r.nu_mu);
  std::vector<int32_t> nu_symbols(nu.size());
  for (int64_t i = 0; i < nu.size(); ++i) {
    const double k = std::round(nu.data()[i] - nu_mu.data()[i]);
    if (std::abs(k) > 1e9) throw Error(ErrorCode::kInvalidInput, "hyper-latent out of codable range");
    nu_symbols[i] = static_cast<int32_t>(k);
  }

  Encoded e;
  Container& c = e.container;
  c.n_side = static_cast<uint32_t>(x.n_side());
  c.channels = static_cast<uint8_t>(x.channels());
  c.digest = model.digest();
  const int id = net::lambda_id(cfg.lambda);
  c.lambda_id = id < 0 ? kNoLambdaId : static_cast<uint8_t>(id);
  c.hyper = entropy::range_encode(nu_symbols, residual_params(g.value(r.nu_sigma)));
  c.main = entropy::encode_latents(r.latents);
  e.bytes = serialize(c);
  e.reconstruction = g.signal(r.x_hat);
  e.bpp = 8.0 * static_cast<double>(e.bytes.size()) / static_cast<double>(x.rows());
  e.model_bpp = g.scalar(r.rate);
  return e;
}

SphereSignal decode_image(const Container& c, net::Model& model) {
  const net::ModelConfig& cfg = model.config();
  if (c.digest != model.digest()) {
    throw Error(ErrorCode::kWrongModel, "stream was encoded with model " + net::digest_hex(c.digest) +
                                            ", loaded model is " + net::digest_hex(model.digest()));
  }
  if (c.channels != cfg.image_channels) {
    throw Error(ErrorCode::kCorruptStream, "channel count does not match the model");
  }
  if (!healpix::is_valid_nside(c.n_side)) throw Error(ErrorCode::kCorruptStream, "invalid n_side in container");
  check_resolution(model, c.n_side);

  const PatchFrame latent = PatchFrame::full(static_cast<int>(c.n_side >> cfg.image_downsamplings()));
  const PatchFrame hyper = PatchFrame::full(static_cast<int>(c.n_side >> cfg.total_downsamplings()));

  ad::Graph g(false);
  const net::Model::Stats prior = hyper_prior(g, model, hyper);
  const Matrix& nu_mu = g.value(prior.mu);
  const auto symbols = entropy::range_decode(c.hyper, residual_params(g.value(prior.sigma)),
                                             static_cast<uint64_t>(nu_mu.size()));
  Matrix nu_hat(nu_mu.rows(), nu_mu.cols());
  for (int64_t i = 0; i < nu_hat.size(); ++i) nu_hat.data()[i] = symbols[i] + nu_mu.data()[i];

  const ad::Var features = model.hyper_decode(g, g.constant(std::move(nu_hat), hyper));
  if (!(g.frame(features) == latent)) throw Error(ErrorCode::kGrid, "hyper decoder produced the wrong grid");
  const auto row_model = net::make_row_model(model, g.signal(features));
  const entropy::SequentialLatents latents = entropy::decode_latents_sequential(c.main, *row_model);
  return g.signal(model.decode(g, g.input(latents.yhat)));
}

SphereSignal decode_image(std::span<const uint8_t> bytes, net::Model& model) {
  return decode_image(parse(bytes), model);
}

}  // namespace oslo::codec
