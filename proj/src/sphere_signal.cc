#include "oslo/sphere_signal.h"

#include <cmath>
#include <istream>
#include <iterator>
#include <ostream>
#include <vector>

#include "oslo/byte_io.h"
#include "oslo/error.h"
#include "oslo/healpix.h"

namespace oslo {
namespace {

constexpr char kMagic[4] = {'O', 'S', 'P', 'H'};
constexpr uint16_t kVersion = 1;
constexpr uint8_t kDtypeF64 = 1;

}  // namespace

PatchFrame PatchFrame::full(int n_side) { return PatchFrame{n_side, 0, healpix::npix(n_side)}; }

bool PatchFrame::is_full() const { return first == 0 && count == healpix::npix(n_side); }

PatchFrame PatchFrame::coarser() const {
  if (n_side < 2) throw Error(ErrorCode::kResolution, "cannot go below n_side 1");
  if (first % 4 != 0 || count % 4 != 0) {
    throw Error(ErrorCode::kResolution, "patch does not cover whole parent pixels");
  }
  return PatchFrame{n_side / 2, first / 4, count / 4};
}

PatchFrame PatchFrame::finer() const { return PatchFrame{n_side * 2, first * 4, count * 4}; }

SphereSignal::SphereSignal(const PatchFrame& frame, int channels)
    : frame_(frame), values_(frame.count, channels) {
  if (channels <= 0) throw Error(ErrorCode::kShape, "channel count must be positive");
}

SphereSignal::SphereSignal(const PatchFrame& frame, Matrix values)
    : frame_(frame), values_(std::move(values)) {
  if (values_.rows() != frame_.count) {
    throw Error(ErrorCode::kShape, "row count " + std::to_string(values_.rows()) +
                                       " does not match frame pixel count " +
                                       std::to_string(frame_.count));
  }
}

SphereSignal SphereSignal::zeros(int n_side, int channels) {
  return SphereSignal(PatchFrame::full(n_side), channels);
}

bool SphereSignal::all_finite() const {
  for (double v : values_.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void write_sphere_signal(std::ostream& os, const SphereSignal& x) {
  if (!x.frame().is_full()) throw Error(ErrorCode::kUsage, "only full-sphere signals serialize");
  ByteWriter w;
  w.bytes({reinterpret_cast<const uint8_t*>(kMagic), 4});
  w.u16(kVersion);
  w.u32(static_cast<uint32_t>(x.n_side()));
  w.u32(static_cast<uint32_t>(x.channels()));
  w.u8(kDtypeF64);
  for (double v : x.values().data()) w.f64(v);
  const auto& buf = w.buffer();
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

SphereSignal read_sphere_signal(std::istream& is) {
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ByteReader r(data);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) {
    throw Error(ErrorCode::kParse, "bad OSPH magic");
  }
  const uint16_t version = r.u16();
  if (version != kVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "OSPH version " + std::to_string(version));
  }
  const uint32_t n_side = r.u32();
  const uint32_t channels = r.u32();
  const uint8_t dtype = r.u8();
  if (dtype != kDtypeF64) throw Error(ErrorCode::kParse, "unsupported OSPH dtype");
  if (!healpix::is_valid_nside(n_side) || channels == 0) {
    throw Error(ErrorCode::kParse, "bad OSPH header");
  }
  SphereSignal x(PatchFrame::full(static_cast<int>(n_side)), static_cast<int>(channels));
  for (double& v : x.values().data()) v = r.f64();
  return x;
}

}  // namespace oslo
