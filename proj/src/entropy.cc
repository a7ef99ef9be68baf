#include "oslo/entropy.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "oslo/byte_io.h"
#include "oslo/error.h"
#include "oslo/gaussian.h"

namespace oslo::entropy {
namespace {

constexpr uint32_t kTopValue = 1u << 24;
constexpr int kEscapeLengthBits = 5;

[[noreturn]] void corrupt(const std::string& what) { throw Error(ErrorCode::kCorruptStream, what); }

void encode_escape(RangeEncoder& enc, uint32_t excess) {
  // Bit length of excess + 1, then its low bits.
  const uint64_t v = uint64_t{excess} + 1;
  int n = 0;
  while ((v >> n) > 1) ++n;
  enc.encode_bits(static_cast<uint32_t>(n), kEscapeLengthBits);
  for (int done = 0; done < n;) {
    const int chunk = std::min(16, n - done);
    enc.encode_bits(static_cast<uint32_t>((v >> done) & ((1u << chunk) - 1)), chunk);
    done += chunk;
  }
}

uint32_t decode_escape(RangeDecoder& dec) {
  const int n = static_cast<int>(dec.decode_bits(kEscapeLengthBits));
  uint64_t v = uint64_t{1} << n;
  for (int done = 0; done < n;) {
    const int chunk = std::min(16, n - done);
    v |= uint64_t{dec.decode_bits(chunk)} << done;
    done += chunk;
  }
  if (v - 1 > 0x7fffffffULL) corrupt("escape value out of range");
  return static_cast<uint32_t>(v - 1);
}

void write_header(ByteWriter& w, int support, uint64_t count) {
  w.u16(static_cast<uint16_t>(support));
  w.u64(count);
}

}  // namespace

QuantizedCdf build_cdf(double mu, double sigma, int support) {
  if (!std::isfinite(mu) || !std::isfinite(sigma)) {
    throw Error(ErrorCode::kInvalidInput, "entropy parameters must be finite");
  }
  if (support < 1 || support > kMaxSupport) {
    throw Error(ErrorCode::kInvalidInput, "support out of range: " + std::to_string(support));
  }
  const double s = std::max(sigma, kSigmaMin);
  QuantizedCdf cdf;
  cdf.support = support;
  const int bins = cdf.bins();
  std::vector<double> mass(bins);
  for (int b = 0; b < bins; ++b) {
    const int k = b - support;
    if (k == -support) {
      mass[b] = gaussian_lower_tail(k + 0.5, mu, s);
    } else if (k == support) {
      mass[b] = gaussian_upper_tail(k - 0.5, mu, s);
    } else {
      mass[b] = gaussian_bin_mass(k, mu, s);
    }
  }
  const double spread = static_cast<double>(kTotalFrequency - bins);
  std::vector<uint32_t> freq(bins);
  uint64_t used = 0;
  int peak = 0;
  for (int b = 0; b < bins; ++b) {
    freq[b] = 1 + static_cast<uint32_t>(std::floor(std::clamp(mass[b], 0.0, 1.0) * spread));
    used += freq[b];
    if (mass[b] > mass[peak]) peak = b;
  }
  if (used > kTotalFrequency) {
    // Only reachable through rounding of masses summing above one.
    freq[peak] -= static_cast<uint32_t>(used - kTotalFrequency);
  } else {
    freq[peak] += static_cast<uint32_t>(kTotalFrequency - used);
  }
  cdf.cumulative.assign(bins + 1, 0);
  for (int b = 0; b < bins; ++b) cdf.cumulative[b + 1] = cdf.cumulative[b] + freq[b];
  return cdf;
}

void RangeEncoder::shift_low() {
  if (static_cast<uint32_t>(low_) < 0xff000000u || (low_ >> 32) != 0) {
    const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
    uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<uint8_t>(temp + carry));
      temp = 0xff;
    } while (--cache_size_ != 0);
    cache_ = static_cast<uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00ffffffULL) << 8;
}

void RangeEncoder::encode(uint32_t low, uint32_t frequency) {
  const uint32_t r = range_ >> kPrecisionBits;
  low_ += static_cast<uint64_t>(r) * low;
  range_ = r * frequency;
  while (range_ < kTopValue) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bits(uint32_t value, int bits) {
  const uint32_t r = range_ >> bits;
  low_ += static_cast<uint64_t>(r) * value;
  range_ = r;
  while (range_ < kTopValue) {
    range_ <<= 8;
    shift_low();
  }
}

std::vector<uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  if (pos_ >= bytes_.size()) corrupt("range decoder ran past the end of the stream");
  return bytes_[pos_++];
}

void RangeDecoder::normalize() {
  while (range_ < kTopValue) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

uint32_t RangeDecoder::peek() {
  step_ = range_ >> kPrecisionBits;
  return std::min<uint32_t>(code_ / step_, kTotalFrequency - 1);
}

void RangeDecoder::consume(uint32_t low, uint32_t frequency) {
  code_ -= step_ * low;
  range_ = step_ * frequency;
  normalize();
}

uint32_t RangeDecoder::decode_bits(int bits) {
  const uint32_t r = range_ >> bits;
  const uint32_t v = std::min<uint32_t>(code_ / r, (1u << bits) - 1);
  code_ -= r * v;
  range_ = r;
  normalize();
  return v;
}

void encode_symbol(RangeEncoder& enc, const QuantizedCdf& cdf, int32_t symbol) {
  const int s = cdf.support;
  const int clamped = std::clamp<int32_t>(symbol, -s, s);
  enc.encode(cdf.low(clamped), cdf.frequency(clamped));
  if (clamped == s || clamped == -s) {
    encode_escape(enc, static_cast<uint32_t>(std::abs(int64_t{symbol}) - s));
  }
}

int32_t decode_symbol(RangeDecoder& dec, const QuantizedCdf& cdf) {
  const uint32_t target = dec.peek();
  const auto it = std::upper_bound(cdf.cumulative.begin(), cdf.cumulative.end(), target);
  const int bin = static_cast<int>(it - cdf.cumulative.begin()) - 1;
  const int symbol = bin - cdf.support;
  dec.consume(cdf.low(symbol), cdf.frequency(symbol));
  if (symbol == cdf.support || symbol == -cdf.support) {
    const int32_t magnitude = cdf.support + static_cast<int32_t>(decode_escape(dec));
    return symbol < 0 ? -magnitude : magnitude;
  }
  return symbol;
}

int choose_support(std::span<const int32_t> symbols) {
  int64_t peak = 0;
  for (int32_t s : symbols) peak = std::max<int64_t>(peak, std::abs(int64_t{s}));
  return static_cast<int>(std::min<int64_t>(peak + 2, kMaxSupport));
}

std::vector<uint8_t> range_encode(std::span<const int32_t> symbols, const ParamsProvider& params) {
  ByteWriter w;
  const int support = choose_support(symbols);
  write_header(w, support, symbols.size());
  if (symbols.empty()) return w.take();
  RangeEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const auto p = params(i);
    encode_symbol(enc, build_cdf(p.mu, p.sigma, support), symbols[i]);
  }
  w.bytes(enc.finish());
  return w.take();
}

TensorHeader read_tensor_header(std::span<const uint8_t> stream) {
  if (stream.size() < kTensorHeaderBytes) corrupt("tensor stream shorter than its header");
  ByteReader r(stream);
  TensorHeader h;
  h.support = r.u16();
  h.count = r.u64();
  if (h.support < 1 || h.support > kMaxSupport) corrupt("bad tensor support");
  return h;
}

std::vector<int32_t> range_decode(std::span<const uint8_t> stream, const ParamsProvider& params,
                                  uint64_t count) {
  const TensorHeader h = read_tensor_header(stream);
  if (h.count != count) {
    corrupt("tensor holds " + std::to_string(h.count) + " symbols, expected " + std::to_string(count));
  }
  std::vector<int32_t> out;
  if (count == 0) return out;
  out.reserve(count);
  RangeDecoder dec(stream.subspan(kTensorHeaderBytes));
  for (uint64_t i = 0; i < count; ++i) {
    const auto p = params(i);
    out.push_back(decode_symbol(dec, build_cdf(p.mu, p.sigma, h.support)));
  }
  return out;
}

double ideal_bits(std::span<const int32_t> symbols, const ParamsProvider& params) {
  double bits = 0.0;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const auto p = params(i);
    bits += gaussian_bin_bits(symbols[i], p.mu, p.sigma).bits;
  }
  return bits;
}

SequentialLatents quantize_latents_sequential(const SphereSignal& y, const RowModel& model) {
  if (!(y.frame() == model.frame()) || y.channels() != model.channels()) {
    throw Error(ErrorCode::kShape, "latents do not match the context model");
  }
  const int ch = y.channels();
  SequentialLatents out;
  out.yhat = SphereSignal(y.frame(), ch);
  out.mu = Matrix(y.rows(), ch);
  out.sigma = Matrix(y.rows(), ch);
  out.symbols.resize(static_cast<size_t>(y.rows() * ch));
  for (int64_t r = 0; r < y.rows(); ++r) {
    model.predict(out.yhat, r, out.mu.row(r), out.sigma.row(r));
    for (int c = 0; c < ch; ++c) {
      const double mu = out.mu(r, c);
      const double k = std::round(y.at(r, c) - mu);
      if (!std::isfinite(k) || std::abs(k) > 1e9) {
        throw Error(ErrorCode::kInvalidInput, "latent value out of codable range");
      }
      out.symbols[r * ch + c] = static_cast<int32_t>(k);
      out.yhat.at(r, c) = k + mu;
    }
  }
  return out;
}

std::vector<uint8_t> encode_latents(const SequentialLatents& latents) {
  const auto& sigma = latents.sigma;
  return range_encode(latents.symbols, [&sigma](size_t i) {
    return GaussianEntropyParams{0.0, sigma.data()[i]};
  });
}

SequentialLatents decode_latents_sequential(std::span<const uint8_t> stream, const RowModel& model) {
  const PatchFrame& frame = model.frame();
  const int ch = model.channels();
  const TensorHeader h = read_tensor_header(stream);
  const uint64_t count = static_cast<uint64_t>(frame.count) * ch;
  if (h.count != count) corrupt("latent stream element count does not match the model");
  SequentialLatents out;
  out.yhat = SphereSignal(frame, ch);
  out.mu = Matrix(frame.count, ch);
  out.sigma = Matrix(frame.count, ch);
  out.symbols.resize(count);
  if (count == 0) return out;
  RangeDecoder dec(stream.subspan(kTensorHeaderBytes));
  for (int64_t r = 0; r < frame.count; ++r) {
    model.predict(out.yhat, r, out.mu.row(r), out.sigma.row(r));
    for (int c = 0; c < ch; ++c) {
      const int32_t k = decode_symbol(dec, build_cdf(0.0, out.sigma(r, c), h.support));
      out.symbols[r * ch + c] = k;
      out.yhat.at(r, c) = k + out.mu(r, c);
    }
  }
  return out;
}

}  // namespace oslo::entropy
