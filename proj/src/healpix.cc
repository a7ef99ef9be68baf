#include "oslo/healpix.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <ostream>
#include <string>

#include "oslo/error.h"

namespace oslo::healpix {
namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Ring number of the southern corner and longitude offset of each base face.
constexpr int kFaceRing[12] = {2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4};
constexpr int kFacePhi[12] = {1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7};

// Neighbor offsets in (x, y) for slots SW, W, NW, N, NE, E, SE, S.
constexpr int kOffsetX[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kOffsetY[8] = {0, 1, 1, 1, 0, -1, -1, -1};

// Face reached when leaving a face across an edge or corner, indexed by a
// 3x3 direction code (4 = stay). -1: no face there (the corner where only
// three faces meet).
constexpr int kFaceAdjacency[9][12] = {
    {8, 9, 10, 11, -1, -1, -1, -1, 10, 11, 8, 9},  // S
    {5, 6, 7, 4, 8, 9, 10, 11, 9, 10, 11, 8},      // SE
    {-1, -1, -1, -1, 5, 6, 7, 4, -1, -1, -1, -1},  // E
    {4, 5, 6, 7, 11, 8, 9, 10, 11, 8, 9, 10},      // SW
    {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11},        // center
    {1, 2, 3, 0, 0, 1, 2, 3, 5, 6, 7, 4},          // NE
    {-1, -1, -1, -1, 7, 4, 5, 6, -1, -1, -1, -1},  // W
    {3, 0, 1, 2, 3, 0, 1, 2, 4, 5, 6, 7},          // NW
    {2, 3, 0, 1, -1, -1, -1, -1, 0, 1, 2, 3},      // N
};

// Coordinate transform after the crossing, per direction code and face row
// (north, equator, south). Bit 0: flip x, bit 1: flip y, bit 2: swap.
constexpr int kCrossingBits[9][3] = {
    {0, 0, 3}, {0, 0, 6}, {0, 0, 0}, {0, 0, 5}, {0, 0, 0},
    {5, 0, 0}, {0, 0, 0}, {6, 0, 0}, {3, 0, 0},
};

int log2_exact(int n_side) {
  int order = 0;
  while ((1 << order) < n_side) ++order;
  return order;
}

void check_nside(int64_t n_side) {
  if (!is_valid_nside(n_side)) {
    throw Error(ErrorCode::kInvalidResolution,
                "n_side must be a positive power of two, got " + std::to_string(n_side));
  }
}

void check_pixel(int n_side, int64_t ipix) {
  if (ipix < 0 || ipix >= npix(n_side)) {
    throw Error(ErrorCode::kIndex, "pixel " + std::to_string(ipix) + " out of range for n_side " +
                                       std::to_string(n_side));
  }
}

// Spreads the low 32 bits of v onto even bit positions.
uint64_t spread_bits(uint64_t v) {
  v &= 0xffffffffULL;
  v = (v | (v << 16)) & 0x0000ffff0000ffffULL;
  v = (v | (v << 8)) & 0x00ff00ff00ff00ffULL;
  v = (v | (v << 4)) & 0x0f0f0f0f0f0f0f0fULL;
  v = (v | (v << 2)) & 0x3333333333333333ULL;
  v = (v | (v << 1)) & 0x5555555555555555ULL;
  return v;
}

uint64_t compress_bits(uint64_t v) {
  v &= 0x5555555555555555ULL;
  v = (v | (v >> 1)) & 0x3333333333333333ULL;
  v = (v | (v >> 2)) & 0x0f0f0f0f0f0f0f0fULL;
  v = (v | (v >> 4)) & 0x00ff00ff00ff00ffULL;
  v = (v | (v >> 8)) & 0x0000ffff0000ffffULL;
  v = (v | (v >> 16)) & 0x00000000ffffffffULL;
  return v;
}

int64_t xyf_to_nest_unchecked(int n_side, int x, int y, int face) {
  const int64_t face_size = static_cast<int64_t>(n_side) * n_side;
  return face * face_size + static_cast<int64_t>(spread_bits(x) | (spread_bits(y) << 1));
}

}  // namespace

bool is_valid_nside(int64_t n_side) {
  return n_side > 0 && n_side <= (1 << 29) && (n_side & (n_side - 1)) == 0;
}

int64_t npix(int n_side) {
  check_nside(n_side);
  return 12 * static_cast<int64_t>(n_side) * n_side;
}

FaceCoord nest_to_face_xy(int n_side, int64_t ipix) {
  check_pixel(n_side, ipix);
  const int64_t face_size = static_cast<int64_t>(n_side) * n_side;
  const uint64_t offset = static_cast<uint64_t>(ipix % face_size);
  return FaceCoord{static_cast<int>(ipix / face_size), static_cast<int>(compress_bits(offset)),
                   static_cast<int>(compress_bits(offset >> 1))};
}

int64_t face_xy_to_nest(int n_side, const FaceCoord& fc) {
  check_nside(n_side);
  if (fc.face < 0 || fc.face >= 12 || fc.x < 0 || fc.x >= n_side || fc.y < 0 || fc.y >= n_side) {
    throw Error(ErrorCode::kIndex, "face coordinate out of range");
  }
  return xyf_to_nest_unchecked(n_side, fc.x, fc.y, fc.face);
}

int64_t parent(int64_t ipix) {
  if (ipix < 0) throw Error(ErrorCode::kIndex, "negative pixel index");
  return ipix >> 2;
}

std::array<int64_t, 4> children(int64_t ipix) {
  if (ipix < 0) throw Error(ErrorCode::kIndex, "negative pixel index");
  const int64_t base = ipix << 2;
  return {base, base + 1, base + 2, base + 3};
}

Angles pix2ang(int n_side, int64_t ipix) {
  const FaceCoord fc = nest_to_face_xy(n_side, ipix);
  const int64_t nl4 = 4 * static_cast<int64_t>(n_side);
  const int64_t jr = static_cast<int64_t>(kFaceRing[fc.face]) * n_side - fc.x - fc.y - 1;

  int64_t nr;
  int64_t kshift;
  double z;
  const double fact2 = 4.0 / static_cast<double>(npix(n_side));
  if (jr < n_side) {
    nr = jr;
    z = 1.0 - static_cast<double>(nr * nr) * fact2;
    kshift = 0;
  } else if (jr > 3 * static_cast<int64_t>(n_side)) {
    nr = nl4 - jr;
    z = static_cast<double>(nr * nr) * fact2 - 1.0;
    kshift = 0;
  } else {
    const double fact1 = 2.0 * n_side * fact2;
    nr = n_side;
    z = static_cast<double>(2 * static_cast<int64_t>(n_side) - jr) * fact1;
    kshift = (jr - n_side) & 1;
  }

  int64_t jp = (static_cast<int64_t>(kFacePhi[fc.face]) * nr + fc.x - fc.y + 1 + kshift) / 2;
  if (jp > nl4) jp -= nl4;
  if (jp < 1) jp += nl4;
  const double phi = (static_cast<double>(jp) - static_cast<double>(kshift + 1) * 0.5) *
                     (kHalfPi / static_cast<double>(nr));
  return Angles{std::acos(std::clamp(z, -1.0, 1.0)), phi};
}

int64_t ang2pix(int n_side, double theta, double phi) {
  check_nside(n_side);
  if (!std::isfinite(theta) || !std::isfinite(phi) || theta < 0.0 || theta > std::numbers::pi) {
    throw Error(ErrorCode::kInvalidInput, "angles must be finite with theta in [0, pi]");
  }
  const double z = std::cos(theta);
  const double za = std::abs(z);
  double wrapped = std::fmod(phi, kTwoPi);
  if (wrapped < 0.0) wrapped += kTwoPi;
  double tt = wrapped / kHalfPi;  // in [0, 4)
  if (tt >= 4.0) tt = 0.0;
  const int order = log2_exact(n_side);
  const int64_t ns = n_side;

  int face;
  int64_t ix;
  int64_t iy;
  if (za <= 2.0 / 3.0) {
    const double temp1 = ns * (0.5 + tt);
    const double temp2 = ns * (z * 0.75);
    const int64_t jp = static_cast<int64_t>(temp1 - temp2);  // ascending edge line
    const int64_t jm = static_cast<int64_t>(temp1 + temp2);  // descending edge line
    const int64_t ifp = jp >> order;
    const int64_t ifm = jm >> order;
    face = static_cast<int>(ifp == ifm ? (ifp | 4) : (ifp < ifm ? ifp : ifm + 8));
    ix = jm & (ns - 1);
    iy = ns - (jp & (ns - 1)) - 1;
  } else {
    const int ntt = std::min(3, static_cast<int>(tt));
    const double tp = tt - ntt;
    // sqrt(3(1-|z|)) written via sin(theta) to stay accurate near the poles.
    const double s = std::sin(theta);
    const double tmp = ns * s * std::sqrt(3.0 / (1.0 + za));
    int64_t jp = static_cast<int64_t>(tp * tmp);
    int64_t jm = static_cast<int64_t>((1.0 - tp) * tmp);
    jp = std::min(jp, ns - 1);
    jm = std::min(jm, ns - 1);
    if (z >= 0) {
      face = ntt;
      ix = ns - jm - 1;
      iy = ns - jp - 1;
    } else {
      face = ntt + 8;
      ix = jp;
      iy = jm;
    }
  }
  return xyf_to_nest_unchecked(n_side, static_cast<int>(ix), static_cast<int>(iy), face);
}

std::array<int64_t, kNeighborSlots> compute_neighbors(int n_side, int64_t ipix) {
  const FaceCoord fc = nest_to_face_xy(n_side, ipix);
  std::array<int64_t, kNeighborSlots> out{};
  const int ns = n_side;
  for (int slot = 0; slot < kNeighborSlots; ++slot) {
    int x = fc.x + kOffsetX[slot];
    int y = fc.y + kOffsetY[slot];
    int direction = 4;
    if (x < 0) {
      x += ns;
      direction -= 1;
    } else if (x >= ns) {
      x -= ns;
      direction += 1;
    }
    if (y < 0) {
      y += ns;
      direction -= 3;
    } else if (y >= ns) {
      y -= ns;
      direction += 3;
    }
    const int face = kFaceAdjacency[direction][fc.face];
    if (face < 0) {
      out[slot] = kMissing;
      continue;
    }
    const int bits = kCrossingBits[direction][fc.face >> 2];
    if (bits & 1) x = ns - x - 1;
    if (bits & 2) y = ns - y - 1;
    if (bits & 4) std::swap(x, y);
    out[slot] = xyf_to_nest_unchecked(n_side, x, y, face);
  }
  // At n_side == 1 a corner step can land on a face already reached through
  // an edge; keep the first occurrence only.
  for (int a = 0; a < kNeighborSlots; ++a) {
    if (out[a] == kMissing) continue;
    for (int b = 0; b < a; ++b) {
      if (out[b] == out[a]) {
        out[a] = kMissing;
        break;
      }
    }
  }
  return out;
}

HealpixGrid::HealpixGrid(int n_side) : n_side_(n_side), n_pix_(npix(n_side)) {
  table_.resize(static_cast<size_t>(n_pix_ * kNeighborSlots));
  centers_.resize(static_cast<size_t>(n_pix_));
  for (int64_t p = 0; p < n_pix_; ++p) {
    const auto nb = compute_neighbors(n_side_, p);
    std::copy(nb.begin(), nb.end(), table_.begin() + p * kNeighborSlots);
    centers_[p] = pix2ang(n_side_, p);
  }
}

void HealpixGrid::check(int64_t ipix) const {
  if (ipix < 0 || ipix >= n_pix_) {
    throw Error(ErrorCode::kIndex, "pixel " + std::to_string(ipix) + " out of range");
  }
}

std::span<const int64_t, kNeighborSlots> HealpixGrid::neighbors(int64_t ipix) const {
  check(ipix);
  return std::span<const int64_t, kNeighborSlots>(table_.data() + ipix * kNeighborSlots,
                                                  kNeighborSlots);
}

int HealpixGrid::valid_neighbor_count(int64_t ipix) const {
  const auto nb = neighbors(ipix);
  return static_cast<int>(std::count_if(nb.begin(), nb.end(), [](int64_t j) { return j != kMissing; }));
}

Angles HealpixGrid::center(int64_t ipix) const {
  check(ipix);
  return centers_[ipix];
}

void HealpixGrid::write_neighbor_csv(std::ostream& os) const {
  os << "ipix,sw,w,nw,n,ne,e,se,s\n";
  for (int64_t p = 0; p < n_pix_; ++p) {
    os << p;
    for (int s = 0; s < kNeighborSlots; ++s) os << ',' << table_[p * kNeighborSlots + s];
    os << '\n';
  }
}

const HealpixGrid& grid_for(int n_side) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<HealpixGrid>> cache;
  check_nside(n_side);
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n_side];
  if (!slot) slot = std::make_unique<HealpixGrid>(n_side);
  return *slot;
}

}  // namespace oslo::healpix
