#include "oslo/train.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "oslo/codec.h"
#include "oslo/error.h"
#include "oslo/healpix.h"
#include "oslo/metrics.h"
#include "oslo/sphere_ops.h"

namespace oslo::train {

std::vector<SphereSignal> synthetic_images(int count, int n_side, int channels, uint64_t seed) {
  constexpr int kTerms = 6;
  const auto& grid = healpix::grid_for(n_side);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<SphereSignal> images;
  for (int k = 0; k < count; ++k) {
    std::vector<std::array<double, 4>> waves(static_cast<size_t>(channels) * kTerms);
    for (auto& w : waves) w = {3 * g(rng), 3 * g(rng), 3 * g(rng), g(rng)};
    SphereSignal x(PatchFrame::full(n_side), channels);
    for (int64_t p = 0; p < x.rows(); ++p) {
      const healpix::Angles a = grid.center(p);
      const double v[3] = {std::sin(a.theta) * std::cos(a.phi), std::sin(a.theta) * std::sin(a.phi),
                           std::cos(a.theta)};
      for (int c = 0; c < channels; ++c) {
        double s = 0.5;
        for (int t = 0; t < kTerms; ++t) {
          const auto& w = waves[static_cast<size_t>(c) * kTerms + t];
          s += 0.15 * std::sin(w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3]);
        }
        x.at(p, c) = std::clamp(s, 0.0, 1.0);
      }
    }
    images.push_back(std::move(x));
  }
  return images;
}

std::vector<SphereSignal> load_image_dir(const std::filesystem::path& dir, int n_side) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::kIo, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".oerp")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::kIo, "no .ppm/.pgm/.oerp images in " + dir.string());
  std::vector<SphereSignal> images;
  for (const auto& f : files) images.push_back(metrics::erp_to_healpix(metrics::read_erp(f), n_side));
  return images;
}

int64_t patches_per_image(int n_side, int patch_depth) {
  if (patch_depth <= 0 || (n_side >> patch_depth) == 0) return 1;  // whole image
  const int64_t root_side = n_side >> patch_depth;
  return 12 * root_side * root_side;
}

bool strictly_decreasing(std::span<const double> values) {
  for (size_t i = 1; i < values.size(); ++i) {
    if (!(values[i] < values[i - 1])) return false;
  }
  return true;
}

TrainResult train(net::Model& model, std::span<const SphereSignal> images, const TrainOptions& opts,
                  const std::function<void(const StepLog&)>& on_step) {
  if (images.empty()) throw Error(ErrorCode::kInvalidInput, "training needs at least one image");
  if (opts.steps < 0 || opts.batch < 1 || !(opts.lr > 0.0) || opts.epochs_per_window < 1) {
    throw Error(ErrorCode::kInvalidInput, "steps >= 0, batch >= 1, lr > 0 and a positive window are required");
  }
  if (!(opts.lr_decay > 0.0) || !(opts.lr_decay_at >= 0.0)) {
    throw Error(ErrorCode::kInvalidInput, "lr decay factor must be positive and start at a fraction >= 0");
  }
  const int n_side = images.front().n_side();
  for (const SphereSignal& x : images) {
    if (!x.frame().is_full() || x.n_side() != n_side) {
      throw Error(ErrorCode::kInvalidInput, "training images must be full spheres of one resolution");
    }
  }
  const int64_t per_image = patches_per_image(n_side, opts.patch_depth);
  const bool whole = opts.patch_depth <= 0 || (n_side >> opts.patch_depth) == 0;

  // Epoch order over (image, patch root) pairs.
  std::vector<std::pair<int, int64_t>> order;
  for (size_t i = 0; i < images.size(); ++i) {
    for (int64_t r = 0; r < per_image; ++r) order.emplace_back(static_cast<int>(i), r);
  }
  std::mt19937_64 rng(opts.seed);
  std::mt19937_64 noise_rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
  net::AdamConfig adam;
  adam.lr = opts.lr;

  TrainResult result;
  size_t cursor = order.size();
  int epoch = -1;
  const int64_t epoch_steps = (static_cast<int64_t>(order.size()) + opts.batch - 1) / opts.batch;
  const int decay_step = static_cast<int>(std::ceil(opts.lr_decay_at * opts.steps));
  for (int step = 0; step < opts.steps; ++step) {
    adam.lr = step < decay_step ? opts.lr : opts.lr * opts.lr_decay;
    std::vector<SphereSignal> batch;
    for (int b = 0; b < opts.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
        ++epoch;
      }
      const auto [img, root] = order[cursor++];
      batch.push_back(whole ? images[img] : extract_patch(images[img], root, opts.patch_depth));
      // An epoch boundary never splits a batch.
      if (cursor == order.size()) break;
    }
    StepLog log;
    log.step = step;
    log.epoch = epoch;
    try {
      log.stats = net::train_step(model, batch, adam, noise_rng);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDiverged) throw;
      result.diverged = true;
      break;
    }
    result.steps.push_back(log);
    if (on_step) on_step(log);
  }

  const int64_t window = epoch_steps * opts.epochs_per_window;
  for (size_t start = 0; start + window <= result.steps.size(); start += window) {
    double sum = 0.0;
    for (size_t i = start; i < start + window; ++i) sum += result.steps[i].stats.loss;
    result.smoothed_loss.push_back(sum / static_cast<double>(window));
  }
  return result;
}

Evaluation evaluate(net::Model& model, const SphereSignal& x, int erp_width) {
  const codec::Encoded e = codec::encode_image(x, model);
  const SphereSignal decoded = codec::decode_image(e.bytes, model);
  if (erp_width <= 0) erp_width = 4 * x.n_side();
  const auto ref = metrics::healpix_to_erp(x, erp_width, erp_width / 2, metrics::ErpSampling::kNearestCell);
  const auto test = metrics::healpix_to_erp(decoded, erp_width, erp_width / 2, metrics::ErpSampling::kNearestCell);
  Evaluation ev;
  ev.bpp = e.bpp;
  ev.model_bpp = e.model_bpp;
  ev.psnr = metrics::psnr(ref, test);
  ev.ws_psnr = metrics::ws_psnr(ref, test);
  return ev;
}

}  // namespace oslo::train
