#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "oslo/net.h"
#include "oslo/sphere_signal.h"

namespace oslo::codec {

inline constexpr uint16_t kContainerVersion = 1;
inline constexpr uint8_t kNoLambdaId = 0xff;

// .osic layout, little-endian: "OSIC", version u16, n_side u32, channels u8,
// model digest (16 bytes), lambda id u8, hyper length u64 + bytes, main
// length u64 + bytes, CRC-32 (u32) of everything before it.
struct Container {
  uint16_t version = kContainerVersion;
  uint32_t n_side = 0;
  uint8_t channels = 0;
  net::Digest digest{};
  uint8_t lambda_id = kNoLambdaId;
  std::vector<uint8_t> hyper;
  std::vector<uint8_t> main;

  friend bool operator==(const Container&, const Container&) = default;
};

// Fixed bytes around the two streams.
inline constexpr size_t kContainerOverhead = 4 + 2 + 4 + 1 + 16 + 1 + 8 + 8 + 4;

std::vector<uint8_t> serialize(const Container& c);
// Throws kCorruptStream (truncation, with offset; CRC mismatch; length
// inconsistency) or kUnsupportedVersion.
Container parse(std::span<const uint8_t> bytes);

struct Encoded {
  Container container;
  std::vector<uint8_t> bytes;
  SphereSignal reconstruction;  // what decode_image will return
  double bpp = 0.0;             // 8 * file bytes / n_pix
  double model_bpp = 0.0;       // estimated rate from the entropy model
};

// x: full-sphere image with the model's channel count; n_side divisible by
// 2^(total downsamplings).
Encoded encode_image(const SphereSignal& x, net::Model& model);

// Throws kWrongModel if the container was made with another checkpoint.
SphereSignal decode_image(const Container& c, net::Model& model);
SphereSignal decode_image(std::span<const uint8_t> bytes, net::Model& model);

}  // namespace oslo::codec
