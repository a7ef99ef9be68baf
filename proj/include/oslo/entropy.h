#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "oslo/matrix.h"
#include "oslo/sphere_signal.h"

namespace oslo::entropy {

inline constexpr int kPrecisionBits = 16;
inline constexpr uint32_t kTotalFrequency = 1u << kPrecisionBits;
// Largest per-tensor support; symbols beyond it are escape coded.
inline constexpr int kMaxSupport = 512;

struct GaussianEntropyParams {
  double mu = 0.0;
  double sigma = 1.0;
};

// Cumulative 16-bit frequencies over the symbols [-S, S]. The edge bins also
// carry the Gaussian tails; every bin has frequency >= 1.
struct QuantizedCdf {
  int support = 0;
  std::vector<uint32_t> cumulative;  // 2S + 2 entries, 0 ... kTotalFrequency

  int bins() const { return 2 * support + 1; }
  uint32_t low(int symbol) const { return cumulative[symbol + support]; }
  uint32_t frequency(int symbol) const {
    return cumulative[symbol + support + 1] - cumulative[symbol + support];
  }
};

// sigma is clamped to kSigmaMin first.
QuantizedCdf build_cdf(double mu, double sigma, int support);

// Carry-propagating range encoder: 32-bit range, 64-bit low, one byte out
// per renormalization.
class RangeEncoder {
 public:
  void encode(uint32_t low, uint32_t frequency);  // out of kTotalFrequency
  void encode_bits(uint32_t value, int bits);     // bits <= 16, flat model
  std::vector<uint8_t> finish();

 private:
  void shift_low();

  uint64_t low_ = 0;
  uint32_t range_ = 0xffffffffu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> bytes);

  // Frequency slot of the next symbol; follow with consume().
  uint32_t peek();
  void consume(uint32_t low, uint32_t frequency);
  uint32_t decode_bits(int bits);

  // Bytes read so far; throws kCorruptStream if a read passed the end.
  size_t position() const { return pos_; }

 private:
  uint8_t next_byte();
  void normalize();

  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
  uint32_t range_ = 0xffffffffu;
  uint32_t code_ = 0;
  uint32_t step_ = 0;
};

// Codes one symbol (escape-coding values outside [-S, S]).
void encode_symbol(RangeEncoder& enc, const QuantizedCdf& cdf, int32_t symbol);
int32_t decode_symbol(RangeDecoder& dec, const QuantizedCdf& cdf);

// Per-tensor stream: support S (u16), element count (u64), coded bytes.
// An empty tensor is just the header.
using ParamsProvider = std::function<GaussianEntropyParams(size_t index)>;

struct TensorHeader {
  int support = 0;
  uint64_t count = 0;
};
inline constexpr size_t kTensorHeaderBytes = 10;

int choose_support(std::span<const int32_t> symbols);

std::vector<uint8_t> range_encode(std::span<const int32_t> symbols, const ParamsProvider& params);
// Throws kCorruptStream on a truncated stream or a count mismatch.
std::vector<int32_t> range_decode(std::span<const uint8_t> stream, const ParamsProvider& params,
                                  uint64_t count);
TensorHeader read_tensor_header(std::span<const uint8_t> stream);

// Information content of the symbols under the exact discretized Gaussian.
double ideal_bits(std::span<const int32_t> symbols, const ParamsProvider& params);

// Predicts (mu, sigma) for every channel of one latent row from already
// decoded rows < row of `decoded`.
class RowModel {
 public:
  virtual ~RowModel() = default;
  virtual const PatchFrame& frame() const = 0;
  virtual int channels() const = 0;
  virtual void predict(const SphereSignal& decoded, int64_t row, double* mu, double* sigma) const = 0;
};

struct SequentialLatents {
  SphereSignal yhat;
  std::vector<int32_t> symbols;  // round(y - mu), row-major
  Matrix mu;
  Matrix sigma;
};

// Decoder-order quantization: row by row, mu from the already quantized past,
// symbol = round(y - mu), yhat = symbol + mu.
SequentialLatents quantize_latents_sequential(const SphereSignal& y, const RowModel& model);

std::vector<uint8_t> encode_latents(const SequentialLatents& latents);

// Interleaves prediction and symbol decoding in nested order.
SequentialLatents decode_latents_sequential(std::span<const uint8_t> stream, const RowModel& model);

}  // namespace oslo::entropy
