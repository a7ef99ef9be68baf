#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "oslo/sphere_signal.h"

namespace oslo {

// Every spherical linear operator here has the form
//   out[o] = bias + sum over (r, t) in S(o) of x[r] * W_t
// where W_t is the t-th (in x out) block of a stacked weight matrix and S(o)
// is a fixed list of (input row, tap) pairs derived from the neighbor table.
// A Stencil stores S in CSR form plus its transpose for input gradients.
enum class StencilKind {
  kCenter,       // 0-hop: (o, 0)
  kOneHop,       // (o, 0) and (N_o(k), 1 + k)
  kStridedDown,  // fine -> coarse: (4o, 0) and (N_4o(k), 1 + k)
  kMasked,       // (N_o(k), k) for N_o(k) < o; eight neighbor taps only
  kScatterUp,    // coarse -> fine: transpose of kStridedDown's pattern
};

inline constexpr int kCenterTap = 0;
inline constexpr int kTapCount = 9;

struct Stencil {
  StencilKind kind;
  PatchFrame in_frame;
  PatchFrame out_frame;
  std::vector<int64_t> offsets;  // out rows + 1
  std::vector<int32_t> in_rows;  // local input row per entry
  std::vector<uint8_t> taps;     // tap per entry
  // Input-major transpose of the entry list.
  std::vector<int64_t> t_offsets;  // in rows + 1
  std::vector<int32_t> t_out_rows;
  std::vector<uint8_t> t_taps;

  int64_t entry_count() const { return static_cast<int64_t>(in_rows.size()); }
};

// Cached per (kind, input frame); safe to call concurrently.
std::shared_ptr<const Stencil> get_stencil(StencilKind kind, const PatchFrame& in_frame);

// Number of stacked weight blocks the kind reads.
int stencil_tap_count(StencilKind kind);

// Frame of the output for a given input frame.
PatchFrame stencil_out_frame(StencilKind kind, const PatchFrame& in_frame);

// weights: (taps * in) x out row-major, bias: empty or out entries.
void stencil_forward(const Stencil& s, const double* x, int in, const double* weights,
                     std::span<const double> bias, int out, double* y);

// y_row[l] += sum_c x_row[c] * w[c * out + l], c ascending. The only
// accumulation kernel; anything that must reproduce a stencil row exactly
// calls this.
inline void accumulate_tap(const double* x_row, int in, const double* w, int out, double* y_row) {
  for (int c = 0; c < in; ++c) {
    const double xv = x_row[c];
    const double* wr = w + static_cast<int64_t>(c) * out;
    for (int l = 0; l < out; ++l) y_row[l] += xv * wr[l];
  }
}

// Single output row, same arithmetic order as stencil_forward.
void stencil_forward_row(const Stencil& s, int64_t o, const double* x, int in,
                         const double* weights, std::span<const double> bias, int out,
                         double* y_row);

// Accumulates into grad_x / grad_weights / grad_bias; pass nullptr to skip one.
void stencil_backward(const Stencil& s, const double* x, int in, const double* weights, int out,
                      const double* grad_y, double* grad_x, double* grad_weights,
                      double* grad_bias);

}  // namespace oslo
