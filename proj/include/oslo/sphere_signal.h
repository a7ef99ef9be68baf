#pragma once

#include <cstdint>
#include <iosfwd>

#include "oslo/matrix.h"

namespace oslo {

// Contiguous nested-index range [first, first + count) of a grid at n_side.
// The full sphere is {n_side, 0, 12 n_side^2}. Pixels outside the range are
// treated like missing neighbors by every operator.
struct PatchFrame {
  int n_side = 1;
  int64_t first = 0;
  int64_t count = 0;

  static PatchFrame full(int n_side);
  bool is_full() const;
  bool contains(int64_t ipix) const { return ipix >= first && ipix < first + count; }

  // Same pixels one level coarser / finer in the nested hierarchy.
  PatchFrame coarser() const;
  PatchFrame finer() const;

  friend bool operator==(const PatchFrame&, const PatchFrame&) = default;
};

// Per-pixel feature vectors in nested row order.
class SphereSignal {
 public:
  SphereSignal() = default;
  SphereSignal(const PatchFrame& frame, int channels);
  SphereSignal(const PatchFrame& frame, Matrix values);
  static SphereSignal zeros(int n_side, int channels);

  const PatchFrame& frame() const { return frame_; }
  int n_side() const { return frame_.n_side; }
  int64_t rows() const { return values_.rows(); }
  int channels() const { return static_cast<int>(values_.cols()); }

  Matrix& values() { return values_; }
  const Matrix& values() const { return values_; }
  double& at(int64_t row, int c) { return values_(row, c); }
  double at(int64_t row, int c) const { return values_(row, c); }
  double* row(int64_t r) { return values_.row(r); }
  const double* row(int64_t r) const { return values_.row(r); }

  bool all_finite() const;

  friend bool operator==(const SphereSignal&, const SphereSignal&) = default;

 private:
  PatchFrame frame_;
  Matrix values_;
};

// Little-endian "OSPH" file: magic, version u16, n_side u32, channels u32,
// dtype u8 (1 = float64), then n_pix x channels row-major values.
void write_sphere_signal(std::ostream& os, const SphereSignal& x);
SphereSignal read_sphere_signal(std::istream& is);

}  // namespace oslo
