#include "oslo/stencil.h"

#include <algorithm>
#include <map>
#include <mutex>
#include <numeric>
#include <tuple>

#include "oslo/error.h"
#include "oslo/healpix.h"
#include "oslo/parallel.h"

namespace oslo {
namespace {

using Entry = std::pair<int64_t, int>;  // (global input pixel, tap)

void append_valid(const PatchFrame& in, int64_t pixel, int tap, std::vector<Entry>& row) {
  if (pixel != healpix::kMissing && in.contains(pixel)) row.emplace_back(pixel, tap);
}

void add_neighborhood(const healpix::HealpixGrid& grid, const PatchFrame& in, int64_t center,
                      bool with_center, std::vector<Entry>& row) {
  if (with_center) append_valid(in, center, kCenterTap, row);
  const auto nb = grid.neighbors(center);
  for (int k = 0; k < healpix::kNeighborSlots; ++k) append_valid(in, nb[k], 1 + k, row);
}

std::shared_ptr<Stencil> build(StencilKind kind, const PatchFrame& in) {
  auto s = std::make_shared<Stencil>();
  s->kind = kind;
  s->in_frame = in;
  s->out_frame = stencil_out_frame(kind, in);
  const PatchFrame& out = s->out_frame;

  std::vector<std::vector<Entry>> rows(static_cast<size_t>(out.count));
  switch (kind) {
    case StencilKind::kCenter:
      for (int64_t o = 0; o < out.count; ++o) rows[o].emplace_back(out.first + o, kCenterTap);
      break;
    case StencilKind::kOneHop: {
      const auto& grid = healpix::grid_for(in.n_side);
      for (int64_t o = 0; o < out.count; ++o) add_neighborhood(grid, in, out.first + o, true, rows[o]);
      break;
    }
    case StencilKind::kStridedDown: {
      const auto& grid = healpix::grid_for(in.n_side);
      for (int64_t o = 0; o < out.count; ++o) {
        add_neighborhood(grid, in, 4 * (out.first + o), true, rows[o]);
      }
      break;
    }
    case StencilKind::kMasked: {
      const auto& grid = healpix::grid_for(in.n_side);
      for (int64_t o = 0; o < out.count; ++o) {
        const int64_t i = out.first + o;
        const auto nb = grid.neighbors(i);
        for (int k = 0; k < healpix::kNeighborSlots; ++k) {
          if (nb[k] != healpix::kMissing && nb[k] < i) append_valid(in, nb[k], k, rows[o]);
        }
      }
      break;
    }
    case StencilKind::kScatterUp: {
      // Coarse pixel i drops its kernel centered on fine pixel 4i.
      const auto& fine = healpix::grid_for(out.n_side);
      for (int64_t r = 0; r < in.count; ++r) {
        const int64_t i = in.first + r;
        const int64_t c = 4 * i;
        if (out.contains(c)) rows[c - out.first].emplace_back(i, kCenterTap);
        const auto nb = fine.neighbors(c);
        for (int k = 0; k < healpix::kNeighborSlots; ++k) {
          if (nb[k] != healpix::kMissing && out.contains(nb[k])) {
            rows[nb[k] - out.first].emplace_back(i, 1 + k);
          }
        }
      }
      break;
    }
  }

  s->offsets.assign(static_cast<size_t>(out.count + 1), 0);
  for (int64_t o = 0; o < out.count; ++o) s->offsets[o + 1] = s->offsets[o] + rows[o].size();
  s->in_rows.reserve(s->offsets.back());
  s->taps.reserve(s->offsets.back());
  for (const auto& row : rows) {
    for (const auto& [pixel, tap] : row) {
      s->in_rows.push_back(static_cast<int32_t>(pixel - in.first));
      s->taps.push_back(static_cast<uint8_t>(tap));
    }
  }

  // Transpose, entries within an input row ordered by output row.
  s->t_offsets.assign(static_cast<size_t>(in.count + 1), 0);
  for (int32_t r : s->in_rows) ++s->t_offsets[r + 1];
  std::partial_sum(s->t_offsets.begin(), s->t_offsets.end(), s->t_offsets.begin());
  std::vector<int64_t> fill(s->t_offsets.begin(), s->t_offsets.end() - 1);
  s->t_out_rows.resize(s->in_rows.size());
  s->t_taps.resize(s->in_rows.size());
  for (int64_t o = 0; o < out.count; ++o) {
    for (int64_t e = s->offsets[o]; e < s->offsets[o + 1]; ++e) {
      const int64_t pos = fill[s->in_rows[e]]++;
      s->t_out_rows[pos] = static_cast<int32_t>(o);
      s->t_taps[pos] = s->taps[e];
    }
  }
  return s;
}

}  // namespace

int stencil_tap_count(StencilKind kind) {
  switch (kind) {
    case StencilKind::kCenter: return 1;
    case StencilKind::kMasked: return kTapCount - 1;
    default: return kTapCount;
  }
}

PatchFrame stencil_out_frame(StencilKind kind, const PatchFrame& in) {
  switch (kind) {
    case StencilKind::kStridedDown:
      if (in.n_side < 2) throw Error(ErrorCode::kResolution, "downsampling needs n_side >= 2");
      return in.coarser();
    case StencilKind::kScatterUp:
      return in.finer();
    default:
      return in;
  }
}

std::shared_ptr<const Stencil> get_stencil(StencilKind kind, const PatchFrame& in_frame) {
  using Key = std::tuple<int, int, int64_t, int64_t>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const Stencil>> cache;
  const Key key{static_cast<int>(kind), in_frame.n_side, in_frame.first, in_frame.count};
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto built = build(kind, in_frame);
  std::lock_guard<std::mutex> lock(mu);
  return cache.emplace(key, std::move(built)).first->second;
}

void stencil_forward_row(const Stencil& s, int64_t o, const double* x, int in,
                         const double* weights, std::span<const double> bias, int out,
                         double* y_row) {
  if (bias.empty()) {
    std::fill(y_row, y_row + out, 0.0);
  } else {
    std::copy(bias.begin(), bias.end(), y_row);
  }
  for (int64_t e = s.offsets[o]; e < s.offsets[o + 1]; ++e) {
    const double* xr = x + static_cast<int64_t>(s.in_rows[e]) * in;
    accumulate_tap(xr, in, weights + static_cast<int64_t>(s.taps[e]) * in * out, out, y_row);
  }
}

void stencil_forward(const Stencil& s, const double* x, int in, const double* weights,
                     std::span<const double> bias, int out, double* y) {
  parallel_for(s.out_frame.count, [&](int64_t begin, int64_t end) {
    for (int64_t o = begin; o < end; ++o) {
      stencil_forward_row(s, o, x, in, weights, bias, out, y + o * out);
    }
  });
}

void stencil_backward(const Stencil& s, const double* x, int in, const double* weights, int out,
                      const double* grad_y, double* grad_x, double* grad_weights,
                      double* grad_bias) {
  if (grad_x != nullptr) {
    parallel_for(s.in_frame.count, [&](int64_t begin, int64_t end) {
      for (int64_t r = begin; r < end; ++r) {
        double* gx = grad_x + r * in;
        for (int64_t e = s.t_offsets[r]; e < s.t_offsets[r + 1]; ++e) {
          const double* g = grad_y + static_cast<int64_t>(s.t_out_rows[e]) * out;
          const double* w = weights + static_cast<int64_t>(s.t_taps[e]) * in * out;
          for (int c = 0; c < in; ++c) {
            const double* wr = w + static_cast<int64_t>(c) * out;
            double acc = 0.0;
            for (int l = 0; l < out; ++l) acc += g[l] * wr[l];
            gx[c] += acc;
          }
        }
      }
    });
  }
  if (grad_weights != nullptr) {
    for (int64_t o = 0; o < s.out_frame.count; ++o) {
      const double* g = grad_y + o * out;
      for (int64_t e = s.offsets[o]; e < s.offsets[o + 1]; ++e) {
        const double* xr = x + static_cast<int64_t>(s.in_rows[e]) * in;
        double* gw = grad_weights + static_cast<int64_t>(s.taps[e]) * in * out;
        for (int c = 0; c < in; ++c) {
          const double xv = xr[c];
          double* gwr = gw + static_cast<int64_t>(c) * out;
          for (int l = 0; l < out; ++l) gwr[l] += xv * g[l];
        }
      }
    }
  }
  if (grad_bias != nullptr) {
    for (int64_t o = 0; o < s.out_frame.count; ++o) {
      const double* g = grad_y + o * out;
      for (int l = 0; l < out; ++l) grad_bias[l] += g[l];
    }
  }
}

}  // namespace oslo
