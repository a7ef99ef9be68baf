#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oslo/autodiff.h"
#include "oslo/entropy.h"
#include "oslo/matrix.h"
#include "oslo/sphere_ops.h"
#include "oslo/sphere_signal.h"

namespace oslo::net {

enum class UnpoolMode { kPixelShuffle, kTransposedConv };
enum class QuantMode { kNoise, kRound };

enum class LayerKind {
  kConv,        // hops 0: conv_h0, else n-hop cascade
  kConvDown,    // n-hop downsampling by 4
  kUnpool,      // upsampling by 4, then hops - 1 refining 1-hop convs
  kResBlocks,   // `blocks` residual blocks
  kAttention,   // x + f1(x) * sigmoid(h0(f2(x))), f1/f2 residual stacks
  kReLU,
};

struct LayerDef {
  LayerKind kind = LayerKind::kConv;
  int in = 0;
  int out = 0;
  int hops = 1;
  int blocks = 3;
};

// Architecture presets: "sh" (plain ReLU backbone, no context), "sh_attn_rb"
// (residual blocks and attention, no context), "proposed" (sh_attn_rb plus
// masked-convolution context and parameter aggregation).
struct ModelConfig {
  std::string arch = "proposed";
  int n = 32;  // backbone width N
  int m = 48;  // latent width M
  int hops = 2;
  int blocks = 3;
  UnpoolMode unpool = UnpoolMode::kPixelShuffle;
  DownsampleMode downsample = DownsampleMode::kStrided;
  bool context = true;
  double lambda = 0.0018;
  double distortion_scale = 255.0 * 255.0;
  int image_channels = 3;

  // Derived by rebuild() from the fields above.
  std::vector<LayerDef> encoder;
  std::vector<LayerDef> decoder;
  std::vector<LayerDef> hyper_encoder;
  std::vector<LayerDef> hyper_decoder;
  std::vector<LayerDef> aggregation;  // 0-hop stack after the context model

  // Scalar fields set, layer lists built.
  static ModelConfig preset(const std::string& arch = "proposed", int n = 32, int m = 48);

  void rebuild();
  // Throws kConfig on any inconsistency.
  void validate() const;

  // Total factor-of-two reductions of n_side from image to hyper-latent.
  int image_downsamplings() const;
  int total_downsamplings() const;

  // Flat "key = value" text; '#' starts a comment.
  std::string to_text() const;
  static ModelConfig parse(const std::string& text);
  static ModelConfig load(const std::filesystem::path& path);
};

const char* unpool_name(UnpoolMode mode);
UnpoolMode parse_unpool(const std::string& name);

// Standard lambda ladder, index = lambda id.
inline constexpr std::array<double, 8> kLambdaLadder = {0.0005, 0.0018, 0.0067, 0.0130,
                                                        0.025,  0.0483, 0.0932, 0.18};
int lambda_id(double lambda);  // -1 if not on the ladder

using Digest = std::array<uint8_t, 16>;
// FNV-1a, 128 bit.
Digest fnv1a128(std::span<const uint8_t> bytes, Digest seed = {});
std::string digest_hex(const Digest& d);

class Model {
 public:
  Model(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Binds config text and every tensor; codec streams carry it.
  Digest digest() const;

  ad::Var encode(ad::Graph& g, ad::Var x);
  ad::Var decode(ad::Graph& g, ad::Var y_hat);
  ad::Var hyper_encode(ad::Graph& g, ad::Var y);
  // Output: 2M features.
  ad::Var hyper_decode(ad::Graph& g, ad::Var nu_hat);

  struct Stats {
    ad::Var mu;
    ad::Var sigma;  // softplus output, before the sigma_min clamp
  };
  // Latent (mu, sigma) from hyper features and, with context, the masked
  // convolution of y_hat (all pixels in parallel).
  Stats latent_stats(ad::Graph& g, ad::Var hyper_features, ad::Var y_hat);
  // Per-channel hyper-latent prior broadcast over `frame`.
  Stats hyper_stats(ad::Graph& g, const PatchFrame& frame);

  void apply_layer(ad::Graph& g, const LayerDef& layer, const std::string& name, ad::Var& x);

 private:
  void add_layer_params(const LayerDef& layer, const std::string& name, std::mt19937_64& rng);
  void add_kernel(const std::string& name, int taps, int in, int out, std::mt19937_64& rng,
                  double gain);
  void add_res_blocks(const std::string& name, int channels, int blocks, std::mt19937_64& rng);
  ad::Var kernel_op(ad::Graph& g, StencilKind kind, const std::string& name, ad::Var x);
  ad::Var res_blocks(ad::Graph& g, const std::string& name, int blocks, ad::Var x);
  ad::Var run_stack(ad::Graph& g, const std::vector<LayerDef>& stack, const std::string& prefix,
                    ad::Var x);

  ModelConfig config_;
  ParamStore params_;
};

// Decoder-side context model: evaluates the masked convolution and the
// aggregation stack for one latent row with the same per-row kernels the
// parallel path uses, so both produce bit-identical (mu, sigma).
class ContextPredictor final : public entropy::RowModel {
 public:
  // hyper_features: d_s output (2M channels) on the latent frame.
  ContextPredictor(const Model& model, SphereSignal hyper_features);

  const PatchFrame& frame() const override { return hyper_.frame(); }
  int channels() const override { return m_; }
  void predict(const SphereSignal& decoded, int64_t row, double* mu, double* sigma) const override;

 private:
  const Model& model_;
  SphereSignal hyper_;
  int m_;
};

// Row model used for coding: the context predictor when the config has a
// context model, otherwise (mu, sigma) taken directly from the hyper features.
std::unique_ptr<entropy::RowModel> make_row_model(const Model& model, SphereSignal hyper_features);

// Standalone primitives.
SphereSignal quantize(const SphereSignal& y, QuantMode mode, std::mt19937_64* rng = nullptr,
                      const Matrix* mu = nullptr);
double gaussian_rate_bits(const Matrix& y_hat, const Matrix& mu, const Matrix& sigma);

struct RateDistortionLoss {
  double rate = 0.0;        // bits per input pixel
  double distortion = 0.0;  // distortion_scale * MSE
  double lambda = 0.0;
  double total = 0.0;
};
RateDistortionLoss rd_loss(const SphereSignal& x, const SphereSignal& x_hat, double total_bits,
                           double lambda, double distortion_scale = 1.0);

struct ForwardResult {
  ad::Var x_hat, y, y_hat, nu, nu_hat, hyper_features;
  ad::Var mu, sigma, nu_mu, nu_sigma;
  ad::Var bits_y, bits_nu, rate, distortion, loss;
  int64_t pixels = 0;
  // Round mode only: decoder-order quantization of y.
  entropy::SequentialLatents latents;
};

// Noise mode trains with additive U(-0.5, 0.5); round mode reproduces the
// codec exactly (straight-through gradients). rng is required for noise.
ForwardResult forward_model(ad::Graph& g, Model& model, ad::Var x, QuantMode mode,
                            std::mt19937_64* rng = nullptr);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};
void adam_step(ParamStore& params, const AdamConfig& cfg);

struct StepStats {
  double loss = 0.0;
  double rate = 0.0;
  double distortion = 0.0;
};
// Mean loss over the batch, one Adam update. Throws kDiverged (parameters
// untouched) if the loss or a gradient is not finite.
StepStats train_step(Model& model, std::span<const SphereSignal> batch, const AdamConfig& cfg,
                     std::mt19937_64& rng);

struct LayerParamCount {
  std::string name;
  std::string kind;
  int in = 0;
  int out = 0;
  int64_t params = 0;
};
struct ParamReport {
  std::vector<LayerParamCount> layers;
  int64_t total = 0;
};
ParamReport count_params(const ModelConfig& config);

// "OSCK" archive: version, config digest, config text, named f64 tensors.
std::vector<uint8_t> checkpoint_bytes(const Model& model);
Model model_from_checkpoint(std::span<const uint8_t> bytes);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace oslo::net
