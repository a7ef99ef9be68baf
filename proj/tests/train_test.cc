#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "oslo/error.h"
#include "oslo/net.h"
#include "oslo/train.h"

using namespace oslo;
using net::Model;
using net::ModelConfig;

namespace {

ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::preset("proposed", 4, 4);
  c.hops = 1;
  c.blocks = 1;
  c.rebuild();
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kUsage;
}

}  // namespace

TEST_CASE("synthetic images are deterministic and bounded") {
  const auto a = train::synthetic_images(3, 16, 3, 42);
  const auto b = train::synthetic_images(3, 16, 3, 42);
  const auto c = train::synthetic_images(3, 16, 3, 43);
  REQUIRE(a.size() == 3);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].n_side() == 16);
    CHECK(a[i].channels() == 3);
    for (int64_t p = 0; p < a[i].rows(); ++p) {
      for (int ch = 0; ch < 3; ++ch) {
        CHECK(a[i].at(p, ch) == b[i].at(p, ch));
        CHECK(a[i].at(p, ch) >= 0.0);
        CHECK(a[i].at(p, ch) <= 1.0);
        differs |= a[i].at(p, ch) != c[i].at(p, ch);
      }
    }
  }
  CHECK(differs);
}

TEST_CASE("patch counts") {
  CHECK(train::patches_per_image(64, 6) == 12);
  CHECK(train::patches_per_image(64, 5) == 48);
  CHECK(train::patches_per_image(32, 2) == 12 * 64);
  // Patches coarser than a base face fall back to whole images.
  CHECK(train::patches_per_image(16, 6) == 1);
}

TEST_CASE("strictly decreasing") {
  const std::vector<double> down = {3.0, 2.0, 1.5};
  const std::vector<double> flat = {3.0, 3.0, 1.0};
  const std::vector<double> up = {3.0, 2.0, 2.5};
  const std::vector<double> nan = {3.0, std::nan(""), 1.0};
  CHECK(train::strictly_decreasing(down));
  CHECK_FALSE(train::strictly_decreasing(flat));
  CHECK_FALSE(train::strictly_decreasing(up));
  CHECK_FALSE(train::strictly_decreasing(nan));
  CHECK(train::strictly_decreasing(std::vector<double>{}));
}

TEST_CASE("training is deterministic and windows cover whole epochs") {
  const auto images = train::synthetic_images(1, 32, 3, 7);
  train::TrainOptions opts;
  opts.steps = 30;
  opts.lr = 1e-3;
  opts.patch_depth = 5;
  opts.epochs_per_window = 1;
  opts.seed = 3;

  Model a(tiny_config(), 5), b(tiny_config(), 5);
  int calls = 0;
  const auto ra = train::train(a, images, opts, [&](const train::StepLog&) { ++calls; });
  const auto rb = train::train(b, images, opts);
  CHECK(calls == 30);
  REQUIRE(ra.steps.size() == 30);
  REQUIRE(rb.steps.size() == 30);
  CHECK_FALSE(ra.diverged);
  for (size_t i = 0; i < ra.steps.size(); ++i) {
    CHECK(ra.steps[i].step == static_cast<int>(i));
    CHECK(ra.steps[i].epoch == static_cast<int>(i / 12));
    CHECK(ra.steps[i].stats.loss == rb.steps[i].stats.loss);
    CHECK(std::isfinite(ra.steps[i].stats.loss));
  }
  // 12 patches per epoch, so 30 steps hold two complete windows.
  REQUIRE(ra.smoothed_loss.size() == 2);
  double first = 0.0;
  for (int i = 0; i < 12; ++i) first += ra.steps[i].stats.loss;
  CHECK(ra.smoothed_loss[0] == doctest::Approx(first / 12).epsilon(1e-12));

  const auto pa = a.params().all();
  const auto pb = b.params().all();
  REQUIRE(pa.size() == pb.size());
  bool same = true;
  for (size_t i = 0; i < pa.size(); ++i) same &= pa[i]->value == pb[i]->value;
  CHECK(same);
}

TEST_CASE("invalid training options") {
  const auto images = train::synthetic_images(1, 32, 3, 7);
  Model m(tiny_config(), 1);
  train::TrainOptions opts;
  opts.steps = 1;
  opts.lr = 0.0;
  CHECK(code_of([&] { train::train(m, images, opts); }) == ErrorCode::kInvalidInput);
  opts.lr = 1e-4;
  opts.lr_decay = 0.0;
  CHECK(code_of([&] { train::train(m, images, opts); }) == ErrorCode::kInvalidInput);
  opts.lr_decay = 0.1;
  CHECK(code_of([&] { train::train(m, {}, opts); }) == ErrorCode::kInvalidInput);
  std::vector<SphereSignal> mixed = {images[0], train::synthetic_images(1, 16, 3, 1)[0]};
  CHECK(code_of([&] { train::train(m, mixed, opts); }) == ErrorCode::kInvalidInput);
}
