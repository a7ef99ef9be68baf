#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "oslo/net.h"
#include "oslo/sphere_signal.h"

namespace oslo::train {

// Smooth random test images: each channel is 0.5 plus a few sinusoids of the
// unit direction vector, clamped to [0, 1]. Deterministic in seed.
std::vector<SphereSignal> synthetic_images(int count, int n_side, int channels, uint64_t seed);

// Every .ppm/.pgm/.oerp file in dir (sorted by name), resampled to n_side.
std::vector<SphereSignal> load_image_dir(const std::filesystem::path& dir, int n_side);

struct TrainOptions {
  int steps = 2000;
  double lr = 1e-4;
  // Step decay: lr * lr_decay from step lr_decay_at * steps on.
  double lr_decay_at = 0.8;
  double lr_decay = 0.1;
  int batch = 1;        // patches per step
  int patch_depth = 6;  // 4^depth pixels per patch; full images if too coarse
  uint64_t seed = 1;
  int epochs_per_window = 4;  // smoothing window, in passes over all patches
};

struct StepLog {
  int step = 0;
  int epoch = 0;
  net::StepStats stats;
};

struct TrainResult {
  std::vector<StepLog> steps;
  // Mean loss over consecutive windows of whole epochs (complete windows
  // only), so every window sees every patch equally often.
  std::vector<double> smoothed_loss;
  bool diverged = false;
};

// Trains in place. Patches are visited in a fresh random order every epoch.
// On divergence the model keeps the last good parameters and training stops.
TrainResult train(net::Model& model, std::span<const SphereSignal> images, const TrainOptions& opts,
                  const std::function<void(const StepLog&)>& on_step = {});

int64_t patches_per_image(int n_side, int patch_depth);

bool strictly_decreasing(std::span<const double> values);

struct Evaluation {
  double bpp = 0.0;        // coded file size
  double model_bpp = 0.0;  // entropy model estimate
  double psnr = 0.0;       // on the ERP rendering, dB
  double ws_psnr = 0.0;
};

// Encodes and decodes x, then compares ERP renderings of x and the decoded
// image (nearest cell, width 4 n_side unless given).
Evaluation evaluate(net::Model& model, const SphereSignal& x, int erp_width = 0);

}  // namespace oslo::train
