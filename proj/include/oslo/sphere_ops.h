#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "oslo/matrix.h"
#include "oslo/sphere_signal.h"
#include "oslo/stencil.h"

namespace oslo {

// Nine stacked in x out weight matrices: tap 0 is the center, tap 1 + k the
// neighbor in slot k (SW, W, NW, N, NE, E, SE, S), plus an optional bias.
struct SphericalKernel {
  int in_channels = 0;
  int out_channels = 0;
  Matrix weights;             // (9 * in) x out
  std::vector<double> bias;   // empty or out entries

  SphericalKernel() = default;
  SphericalKernel(int in, int out, bool with_bias = true);

  static SphericalKernel random(int in, int out, std::mt19937_64& rng, double stddev,
                                bool with_bias = true);

  double& tap(int t, int c, int l) { return weights(static_cast<int64_t>(t) * in_channels + c, l); }
  double tap(int t, int c, int l) const {
    return weights(static_cast<int64_t>(t) * in_channels + c, l);
  }
  const double* tap_data(int t) const {
    return weights.row(static_cast<int64_t>(t) * in_channels);
  }

  int64_t parameter_count() const { return weights.size() + static_cast<int64_t>(bias.size()); }
};

enum class DownsampleMode {
  kStrided,      // evaluate at child-0 pixels 4i of the fine grid
  kAveragePool,  // full-resolution convolution, then mean over the 4 children
};

// 0-hop: rowwise x * theta0 + bias.
SphereSignal conv_h0(const SphereSignal& x, const Matrix& theta0, std::span<const double> bias = {});

SphereSignal conv_h1(const SphereSignal& x, const SphericalKernel& k);

// n chained 1-hop convolutions with summed outputs; kernels[0] maps in -> out,
// the rest out -> out.
SphereSignal conv_hn(const SphereSignal& x, std::span<const SphericalKernel> kernels);

SphereSignal conv_down4(const SphereSignal& x, const SphericalKernel& k,
                        DownsampleMode mode = DownsampleMode::kStrided);

// n-hop variant: kernels[0..n-2] run at the fine resolution, the last one is
// the downsampling step; every stage's output is brought to the coarse grid
// and summed.
SphereSignal conv_down4(const SphereSignal& x, std::span<const SphericalKernel> kernels,
                        DownsampleMode mode = DownsampleMode::kStrided);

// Causal convolution: out_i only reads x_j for neighbors j < i. The center
// tap is never used.
SphereSignal masked_conv_h1(const SphereSignal& x, const SphericalKernel& k);

// One output row of masked_conv_h1, bit-identical to the full operator.
// Only rows below `row` of x are read.
void masked_conv_h1_row(const SphereSignal& x, const SphericalKernel& k, int64_t row,
                        std::span<double> out);

// Transposed convolution: each coarse pixel i adds x_i * Theta_0 at fine pixel
// 4i and x_i * Theta_k at the k-th fine neighbor of 4i.
SphereSignal tconv_up4(const SphereSignal& x, const SphericalKernel& k);

// 1-hop convolution to 4 * L channels, then channel group c of pixel i goes to
// fine pixel 4i + c.
SphereSignal shuffle_up4(const SphereSignal& x, const SphericalKernel& k);

// Channel-group rearrangement used by shuffle_up4, and its inverse.
SphereSignal pixel_shuffle(const SphereSignal& coarse);
SphereSignal pixel_unshuffle(const SphereSignal& fine);

SphereSignal subsample4(const SphereSignal& fine);
SphereSignal average_pool4(const SphereSignal& fine);

// Pixels [root * 4^depth, (root + 1) * 4^depth) of x; root indexes the grid
// at resolution n_side / 2^depth.
SphereSignal extract_patch(const SphereSignal& x, int64_t root, int depth);

// Parameter counts of one unpooling layer (with bias).
int64_t tconv_parameter_count(int64_t in, int64_t out);
int64_t shuffle_parameter_count(int64_t in, int64_t out);

// Applies a stencil operator with an explicit kernel; shared by all of the above.
SphereSignal apply_stencil(StencilKind kind, const SphereSignal& x, const SphericalKernel& k);

}  // namespace oslo
