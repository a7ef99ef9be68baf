#include "oslo/sphere_ops.h"

#include <string>

#include "oslo/error.h"

namespace oslo {
namespace {

void check_kernel(const SphereSignal& x, const SphericalKernel& k) {
  if (x.channels() != k.in_channels) {
    throw Error(ErrorCode::kShape, "kernel expects " + std::to_string(k.in_channels) +
                                       " input channels, signal has " +
                                       std::to_string(x.channels()));
  }
  if (k.weights.rows() != static_cast<int64_t>(kTapCount) * k.in_channels ||
      k.weights.cols() != k.out_channels) {
    throw Error(ErrorCode::kShape, "kernel weight matrix has wrong dimensions");
  }
  if (!k.bias.empty() && static_cast<int>(k.bias.size()) != k.out_channels) {
    throw Error(ErrorCode::kShape, "bias length does not match output channels");
  }
}

void add_into(SphereSignal& acc, const SphereSignal& term) {
  auto a = acc.values().data();
  auto b = term.values().data();
  for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

SphericalKernel::SphericalKernel(int in, int out, bool with_bias)
    : in_channels(in), out_channels(out), weights(static_cast<int64_t>(kTapCount) * in, out) {
  if (in <= 0 || out <= 0) throw Error(ErrorCode::kShape, "kernel channels must be positive");
  if (with_bias) bias.assign(out, 0.0);
}

SphericalKernel SphericalKernel::random(int in, int out, std::mt19937_64& rng, double stddev,
                                        bool with_bias) {
  SphericalKernel k(in, out, with_bias);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& w : k.weights.data()) w = dist(rng);
  for (double& b : k.bias) b = dist(rng);
  return k;
}

SphereSignal apply_stencil(StencilKind kind, const SphereSignal& x, const SphericalKernel& k) {
  check_kernel(x, k);
  auto s = get_stencil(kind, x.frame());
  SphereSignal y(s->out_frame, k.out_channels);
  // The masked stencil indexes neighbor taps from 0.
  const double* w = kind == StencilKind::kMasked ? k.tap_data(1) : k.weights.row(0);
  stencil_forward(*s, x.values().row(0), k.in_channels, w, k.bias, k.out_channels,
                  y.values().row(0));
  return y;
}

SphereSignal conv_h0(const SphereSignal& x, const Matrix& theta0, std::span<const double> bias) {
  if (theta0.rows() != x.channels()) {
    throw Error(ErrorCode::kShape, "0-hop weight rows must equal input channels");
  }
  if (!bias.empty() && static_cast<int64_t>(bias.size()) != theta0.cols()) {
    throw Error(ErrorCode::kShape, "bias length does not match output channels");
  }
  auto s = get_stencil(StencilKind::kCenter, x.frame());
  SphereSignal y(x.frame(), static_cast<int>(theta0.cols()));
  stencil_forward(*s, x.values().row(0), x.channels(), theta0.row(0), bias,
                  static_cast<int>(theta0.cols()), y.values().row(0));
  return y;
}

SphereSignal conv_h1(const SphereSignal& x, const SphericalKernel& k) {
  return apply_stencil(StencilKind::kOneHop, x, k);
}

SphereSignal conv_hn(const SphereSignal& x, std::span<const SphericalKernel> kernels) {
  if (kernels.empty()) throw Error(ErrorCode::kShape, "n-hop convolution needs n >= 1 kernels");
  SphereSignal stage = conv_h1(x, kernels[0]);
  SphereSignal sum = stage;
  for (size_t h = 1; h < kernels.size(); ++h) {
    stage = conv_h1(stage, kernels[h]);
    add_into(sum, stage);
  }
  return sum;
}

SphereSignal conv_down4(const SphereSignal& x, const SphericalKernel& k, DownsampleMode mode) {
  return conv_down4(x, std::span<const SphericalKernel>(&k, 1), mode);
}

SphereSignal conv_down4(const SphereSignal& x, std::span<const SphericalKernel> kernels,
                        DownsampleMode mode) {
  if (kernels.empty()) throw Error(ErrorCode::kShape, "downsampling needs at least one kernel");
  if (x.n_side() < 2) throw Error(ErrorCode::kResolution, "downsampling needs n_side >= 2");
  auto to_coarse = [mode](const SphereSignal& s) {
    return mode == DownsampleMode::kStrided ? subsample4(s) : average_pool4(s);
  };
  SphereSignal stage = x;
  SphereSignal sum;
  for (size_t h = 0; h + 1 < kernels.size(); ++h) {
    stage = conv_h1(stage, kernels[h]);
    SphereSignal coarse = to_coarse(stage);
    if (h == 0) {
      sum = std::move(coarse);
    } else {
      add_into(sum, coarse);
    }
  }
  SphereSignal last = mode == DownsampleMode::kStrided
                          ? apply_stencil(StencilKind::kStridedDown, stage, kernels.back())
                          : average_pool4(conv_h1(stage, kernels.back()));
  if (kernels.size() == 1) return last;
  add_into(sum, last);
  return sum;
}

SphereSignal masked_conv_h1(const SphereSignal& x, const SphericalKernel& k) {
  return apply_stencil(StencilKind::kMasked, x, k);
}

void masked_conv_h1_row(const SphereSignal& x, const SphericalKernel& k, int64_t row,
                        std::span<double> out) {
  check_kernel(x, k);
  if (row < 0 || row >= x.rows()) throw Error(ErrorCode::kIndex, "row out of range");
  if (static_cast<int>(out.size()) != k.out_channels) {
    throw Error(ErrorCode::kShape, "output row has wrong length");
  }
  auto s = get_stencil(StencilKind::kMasked, x.frame());
  stencil_forward_row(*s, row, x.values().row(0), k.in_channels, k.tap_data(1), k.bias,
                      k.out_channels, out.data());
}

SphereSignal tconv_up4(const SphereSignal& x, const SphericalKernel& k) {
  return apply_stencil(StencilKind::kScatterUp, x, k);
}

SphereSignal shuffle_up4(const SphereSignal& x, const SphericalKernel& k) {
  if (k.out_channels % 4 != 0) {
    throw Error(ErrorCode::kShape, "pixel shuffle needs output channels divisible by 4");
  }
  return pixel_shuffle(conv_h1(x, k));
}

SphereSignal pixel_shuffle(const SphereSignal& coarse) {
  if (coarse.channels() % 4 != 0) {
    throw Error(ErrorCode::kShape, "pixel shuffle needs channels divisible by 4");
  }
  const int out_ch = coarse.channels() / 4;
  SphereSignal fine(coarse.frame().finer(), out_ch);
  for (int64_t r = 0; r < coarse.rows(); ++r) {
    const double* src = coarse.row(r);
    for (int c = 0; c < 4; ++c) {
      std::copy(src + c * out_ch, src + (c + 1) * out_ch, fine.row(4 * r + c));
    }
  }
  return fine;
}

SphereSignal pixel_unshuffle(const SphereSignal& fine) {
  const int ch = fine.channels();
  SphereSignal coarse(fine.frame().coarser(), 4 * ch);
  for (int64_t r = 0; r < coarse.rows(); ++r) {
    double* dst = coarse.row(r);
    for (int c = 0; c < 4; ++c) {
      const double* src = fine.row(4 * r + c);
      std::copy(src, src + ch, dst + c * ch);
    }
  }
  return coarse;
}

SphereSignal subsample4(const SphereSignal& fine) {
  SphereSignal coarse(fine.frame().coarser(), fine.channels());
  for (int64_t r = 0; r < coarse.rows(); ++r) {
    std::copy(fine.row(4 * r), fine.row(4 * r) + fine.channels(), coarse.row(r));
  }
  return coarse;
}

SphereSignal average_pool4(const SphereSignal& fine) {
  SphereSignal coarse(fine.frame().coarser(), fine.channels());
  const int ch = fine.channels();
  for (int64_t r = 0; r < coarse.rows(); ++r) {
    double* dst = coarse.row(r);
    for (int c = 0; c < 4; ++c) {
      const double* src = fine.row(4 * r + c);
      for (int l = 0; l < ch; ++l) dst[l] += src[l];
    }
    for (int l = 0; l < ch; ++l) dst[l] *= 0.25;
  }
  return coarse;
}

SphereSignal extract_patch(const SphereSignal& x, int64_t root, int depth) {
  if (depth < 0 || (int64_t{1} << depth) > x.n_side()) {
    throw Error(ErrorCode::kIndex, "patch depth exceeds grid resolution");
  }
  const int64_t size = int64_t{1} << (2 * depth);
  const int64_t first = root * size;
  if (root < 0 || first < x.frame().first || first + size > x.frame().first + x.rows()) {
    throw Error(ErrorCode::kIndex, "patch range outside the signal");
  }
  SphereSignal patch(PatchFrame{x.n_side(), first, size}, x.channels());
  const int64_t local = first - x.frame().first;
  std::copy(x.row(local), x.row(local) + size * x.channels(), patch.row(0));
  return patch;
}

int64_t tconv_parameter_count(int64_t in, int64_t out) { return (9 * in + 1) * out; }

int64_t shuffle_parameter_count(int64_t in, int64_t out) { return (9 * in + 1) * 4 * out; }

}  // namespace oslo
