#include "oslo/net.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "oslo/byte_io.h"
#include "oslo/error.h"
#include "oslo/gaussian.h"
#include "oslo/stencil.h"

namespace oslo::net {
namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::kConfig, what); }

LayerDef layer(LayerKind kind, int in, int out, int hops = 0, int blocks = 0) {
  return LayerDef{kind, in, out, hops, blocks};
}

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kConvDown: return "conv_down4";
    case LayerKind::kUnpool: return "unpool";
    case LayerKind::kResBlocks: return "res_blocks";
    case LayerKind::kAttention: return "attention";
    case LayerKind::kReLU: return "relu";
  }
  return "?";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used == v.size()) return r;
  } catch (const std::exception&) {
  }
  config_error("bad integer for " + key + ": '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double r = std::stod(v, &used);
    if (used == v.size()) return r;
  } catch (const std::exception&) {
  }
  config_error("bad number for " + key + ": '" + v + "'");
}

// Parameter names of one convolution-like kernel.
std::string weight_name(const std::string& k) { return k + ".w"; }
std::string bias_name(const std::string& k) { return k + ".b"; }
std::string hop_name(const std::string& layer, int h) { return layer + ".hop" + std::to_string(h); }

constexpr double kResidualGain = 0.1;
const double kUnitScaleInit = std::log(std::expm1(1.0));  // softplus^-1(1)

// Arithmetic-only parameter counting; Model construction must agree.
int64_t kernel_count(int taps, int64_t in, int64_t out) { return taps * in * out + out; }

int64_t res_block_count(int64_t c) {
  const int64_t h = c / 2;
  return kernel_count(1, c, h) + kernel_count(9, h, h) + kernel_count(1, h, c);
}

void count_layer(const ModelConfig& cfg, const LayerDef& s, const std::string& name,
                 std::vector<LayerParamCount>& out) {
  auto push = [&](const std::string& n, const std::string& kind, int in, int o, int64_t p) {
    out.push_back(LayerParamCount{n, kind, in, o, p});
  };
  switch (s.kind) {
    case LayerKind::kConv:
      if (s.hops == 0) {
        push(name, "conv_h0", s.in, s.out, kernel_count(1, s.in, s.out));
      } else {
        push(name, "conv_h" + std::to_string(s.hops), s.in, s.out,
             kernel_count(9, s.in, s.out) + (s.hops - 1) * kernel_count(9, s.out, s.out));
      }
      break;
    case LayerKind::kConvDown:
      push(name, "conv_down4_h" + std::to_string(s.hops), s.in, s.out,
           kernel_count(9, s.in, s.out) + (s.hops - 1) * kernel_count(9, s.out, s.out));
      break;
    case LayerKind::kUnpool:
      if (cfg.unpool == UnpoolMode::kPixelShuffle) {
        push(name, "unpool_shuffle", s.in, s.out, shuffle_parameter_count(s.in, s.out));
      } else {
        push(name, "unpool_tconv", s.in, s.out, tconv_parameter_count(s.in, s.out));
      }
      if (s.hops > 1) {
        push(name + ".refine", "conv_h" + std::to_string(s.hops - 1), s.out, s.out,
             (s.hops - 1) * kernel_count(9, s.out, s.out));
      }
      break;
    case LayerKind::kResBlocks:
      push(name, "res_blocks", s.in, s.out, s.blocks * res_block_count(s.in));
      break;
    case LayerKind::kAttention:
      push(name, "attention", s.in, s.out,
           2 * s.blocks * res_block_count(s.in) + kernel_count(1, s.in, s.in));
      break;
    case LayerKind::kReLU:
      break;
  }
}

void validate_stack(const std::vector<LayerDef>& stack, const std::string& label, int in, int out) {
  if (stack.empty()) config_error(label + " has no layers");
  int c = in;
  for (size_t i = 0; i < stack.size(); ++i) {
    const LayerDef& s = stack[i];
    const std::string where = label + "[" + std::to_string(i) + "] (" + kind_name(s.kind) + ")";
    if (s.in != c) {
      config_error(where + " expects " + std::to_string(s.in) + " channels, gets " + std::to_string(c));
    }
    if (s.in < 1 || s.out < 1) config_error(where + " has a non-positive width");
    switch (s.kind) {
      case LayerKind::kConv:
        if (s.hops < 0) config_error(where + " has negative hops");
        break;
      case LayerKind::kConvDown:
      case LayerKind::kUnpool:
        if (s.hops < 1) config_error(where + " needs hops >= 1");
        break;
      case LayerKind::kResBlocks:
      case LayerKind::kAttention:
        if (s.in != s.out) config_error(where + " must preserve the channel count");
        if (s.in % 2 != 0) config_error(where + " needs an even channel count, got " + std::to_string(s.in));
        if (s.blocks < 0) config_error(where + " has a negative block count");
        break;
      case LayerKind::kReLU:
        if (s.in != s.out) config_error(where + " must preserve the channel count");
        break;
    }
    c = s.out;
  }
  if (c != out) {
    config_error(label + " ends with " + std::to_string(c) + " channels, expected " + std::to_string(out));
  }
}

int count_kind(const std::vector<LayerDef>& stack, LayerKind kind) {
  return static_cast<int>(std::count_if(stack.begin(), stack.end(),
                                        [kind](const LayerDef& s) { return s.kind == kind; }));
}

Matrix uniform_noise(int64_t rows, int64_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = u(rng);
  return m;
}

// Aggregation stack evaluated on one row with the shared accumulation
// kernel, mirroring stencil_op(kCenter) + relu in the graph.
void aggregate_row(const ModelConfig& cfg, const ParamStore& params, std::vector<double>& h) {
  std::vector<double> next;
  for (size_t i = 0; i < cfg.aggregation.size(); ++i) {
    const LayerDef& s = cfg.aggregation[i];
    if (s.kind == LayerKind::kReLU) {
      for (double& v : h) v = v > 0 ? v : 0.0;
      continue;
    }
    const std::string k = "pa." + std::to_string(i) + ".h0";
    const Matrix& w = params.get(weight_name(k)).value;
    const Matrix& b = params.get(bias_name(k)).value;
    next.assign(b.row(0), b.row(0) + s.out);
    accumulate_tap(h.data(), s.in, w.row(0), s.out, next.data());
    h.swap(next);
  }
}

class HyperOnlyModel final : public entropy::RowModel {
 public:
  HyperOnlyModel(SphereSignal hyper, int m) : hyper_(std::move(hyper)), m_(m) {}
  const PatchFrame& frame() const override { return hyper_.frame(); }
  int channels() const override { return m_; }
  void predict(const SphereSignal&, int64_t row, double* mu, double* sigma) const override {
    const double* h = hyper_.row(row);
    for (int c = 0; c < m_; ++c) {
      mu[c] = h[c];
      sigma[c] = oslo::softplus(h[m_ + c]);
    }
  }

 private:
  SphereSignal hyper_;
  int m_;
};

}  // namespace

const char* unpool_name(UnpoolMode mode) {
  return mode == UnpoolMode::kPixelShuffle ? "shuffle" : "tconv";
}

UnpoolMode parse_unpool(const std::string& name) {
  if (name == "shuffle" || name == "pixel_shuffle") return UnpoolMode::kPixelShuffle;
  if (name == "tconv" || name == "transposed_conv") return UnpoolMode::kTransposedConv;
  config_error("unknown unpool mode '" + name + "' (expected shuffle or tconv)");
}

int lambda_id(double lambda) {
  for (size_t i = 0; i < kLambdaLadder.size(); ++i) {
    if (std::abs(kLambdaLadder[i] - lambda) <= 1e-12) return static_cast<int>(i);
  }
  return -1;
}

Digest fnv1a128(std::span<const uint8_t> bytes, Digest seed) {
  using u128 = unsigned __int128;
  const u128 prime = (u128{0x0000000001000000ULL} << 64) | 0x000000000000013BULL;
  u128 h = (u128{0x6c62272e07bb0142ULL} << 64) | 0x62b821756295c58dULL;
  for (uint8_t b : seed) h = (h ^ b) * prime;
  for (uint8_t b : bytes) h = (h ^ b) * prime;
  Digest d;
  for (int i = 0; i < 16; ++i) d[i] = static_cast<uint8_t>(h >> (8 * (15 - i)));
  return d;
}

std::string digest_hex(const Digest& d) {
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (uint8_t b : d) {
    s += hex[b >> 4];
    s += hex[b & 15];
  }
  return s;
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::preset(const std::string& arch, int n, int m) {
  ModelConfig c;
  c.arch = arch;
  c.n = n;
  c.m = m;
  c.rebuild();
  return c;
}

void ModelConfig::rebuild() {
  const int N = n, M = m, C = image_channels, h = hops;
  auto down = [&](int in, int out) { return layer(LayerKind::kConvDown, in, out, h); };
  auto up = [&](int in, int out) { return layer(LayerKind::kUnpool, in, out, h); };
  auto conv = [&](int in, int out) { return layer(LayerKind::kConv, in, out, h); };
  auto relu = [](int c) { return layer(LayerKind::kReLU, c, c); };
  auto rbs = [&](int c) { return layer(LayerKind::kResBlocks, c, c, 0, blocks); };
  auto attn = [&](int c) { return layer(LayerKind::kAttention, c, c, 0, blocks); };

  if (arch == "sh") {
    encoder = {down(C, N), relu(N), down(N, N), relu(N), down(N, N), relu(N), down(N, M)};
    decoder = {up(M, N), relu(N), up(N, N), relu(N), up(N, N), relu(N), up(N, C)};
  } else if (arch == "sh_attn_rb" || arch == "proposed") {
    encoder = {down(C, N), rbs(N), down(N, N), rbs(N), attn(N), down(N, N), rbs(N), down(N, M), attn(M)};
    decoder = {attn(M), up(M, N), rbs(N), up(N, N), attn(N), rbs(N), up(N, N), rbs(N), up(N, C)};
  } else {
    config_error("unknown arch '" + arch + "' (expected sh, sh_attn_rb or proposed)");
  }
  context = arch == "proposed";
  hyper_encoder = {conv(M, N), relu(N), down(N, N), relu(N), conv(N, N)};
  hyper_decoder = {conv(N, N), relu(N), up(N, N), relu(N), conv(N, 2 * M)};
  aggregation.clear();
  if (context) {
    aggregation = {layer(LayerKind::kConv, 4 * M, 3 * M), relu(3 * M),
                   layer(LayerKind::kConv, 3 * M, 2 * M), relu(2 * M),
                   layer(LayerKind::kConv, 2 * M, 2 * M)};
  }
}

void ModelConfig::validate() const {
  if (n < 1 || m < 1 || image_channels < 1) config_error("N, M and image_channels must be positive");
  if (hops < 1) config_error("hops must be >= 1");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) config_error("lambda must be positive");
  if (!(distortion_scale > 0.0) || !std::isfinite(distortion_scale)) {
    config_error("distortion_scale must be positive");
  }
  validate_stack(encoder, "encoder", image_channels, m);
  validate_stack(decoder, "decoder", m, image_channels);
  validate_stack(hyper_encoder, "hyper_encoder", m, n);
  validate_stack(hyper_decoder, "hyper_decoder", n, 2 * m);
  if (count_kind(encoder, LayerKind::kConvDown) != count_kind(decoder, LayerKind::kUnpool)) {
    config_error("decoder must mirror the encoder's resolution schedule");
  }
  if (count_kind(hyper_encoder, LayerKind::kConvDown) != count_kind(hyper_decoder, LayerKind::kUnpool)) {
    config_error("hyper decoder must mirror the hyper encoder's resolution schedule");
  }
  if (count_kind(encoder, LayerKind::kUnpool) + count_kind(decoder, LayerKind::kConvDown) +
          count_kind(hyper_encoder, LayerKind::kUnpool) + count_kind(hyper_decoder, LayerKind::kConvDown) !=
      0) {
    config_error("encoders may only downsample and decoders only upsample");
  }
  if (context) {
    validate_stack(aggregation, "aggregation", 4 * m, 2 * m);
    for (const LayerDef& s : aggregation) {
      if (!(s.kind == LayerKind::kReLU || (s.kind == LayerKind::kConv && s.hops == 0))) {
        config_error("parameter aggregation may only use 0-hop convolutions");
      }
    }
  }
}

int ModelConfig::image_downsamplings() const { return count_kind(encoder, LayerKind::kConvDown); }

int ModelConfig::total_downsamplings() const {
  return image_downsamplings() + count_kind(hyper_encoder, LayerKind::kConvDown);
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "arch = " << arch << "\n"
     << "N = " << n << "\n"
     << "M = " << m << "\n"
     << "hops = " << hops << "\n"
     << "blocks = " << blocks << "\n"
     << "unpool = " << unpool_name(unpool) << "\n"
     << "downsample = " << (downsample == DownsampleMode::kStrided ? "strided" : "avgpool") << "\n"
     << "lambda = " << format_double(lambda) << "\n"
     << "distortion_scale = " << format_double(distortion_scale) << "\n"
     << "image_channels = " << image_channels << "\n";
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kParse, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "arch") {
      c.arch = value;
    } else if (key == "N") {
      c.n = parse_int(key, value);
    } else if (key == "M") {
      c.m = parse_int(key, value);
    } else if (key == "hops") {
      c.hops = parse_int(key, value);
    } else if (key == "blocks") {
      c.blocks = parse_int(key, value);
    } else if (key == "unpool") {
      c.unpool = parse_unpool(value);
    } else if (key == "downsample") {
      if (value == "strided") {
        c.downsample = DownsampleMode::kStrided;
      } else if (value == "avgpool") {
        c.downsample = DownsampleMode::kAveragePool;
      } else {
        config_error("unknown downsample mode '" + value + "'");
      }
    } else if (key == "lambda") {
      c.lambda = parse_double(key, value);
    } else if (key == "distortion_scale") {
      c.distortion_scale = parse_double(key, value);
    } else if (key == "image_channels") {
      c.image_channels = parse_int(key, value);
    } else {
      config_error("unknown config key '" + key + "'");
    }
  }
  c.rebuild();
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse(std::string(bytes.begin(), bytes.end()));
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  auto add_stack = [&](const std::vector<LayerDef>& stack, const std::string& prefix) {
    for (size_t i = 0; i < stack.size(); ++i) add_layer_params(stack[i], prefix + "." + std::to_string(i), rng);
  };
  add_stack(config_.encoder, "e");
  add_stack(config_.hyper_encoder, "es");
  add_stack(config_.hyper_decoder, "ds");
  add_stack(config_.decoder, "d");
  if (config_.context) {
    add_kernel("ctx.masked", 8, config_.m, 2 * config_.m, rng, 1.0);
    add_stack(config_.aggregation, "pa");
  }
  params_.add("hyper.prior.mu", Matrix(1, config_.n, 0.0));
  params_.add("hyper.prior.scale", Matrix(1, config_.n, kUnitScaleInit));
}

void Model::add_kernel(const std::string& name, int taps, int in, int out, std::mt19937_64& rng,
                       double gain) {
  std::normal_distribution<double> nd(0.0, gain / std::sqrt(static_cast<double>(taps) * in));
  Matrix w(static_cast<int64_t>(taps) * in, out);
  for (double& v : w.data()) v = nd(rng);
  params_.add(weight_name(name), std::move(w));
  params_.add(bias_name(name), Matrix(1, out, 0.0));
}

void Model::add_res_blocks(const std::string& name, int channels, int blocks, std::mt19937_64& rng) {
  const int half = channels / 2;
  for (int j = 0; j < blocks; ++j) {
    const std::string rb = name + ".rb" + std::to_string(j);
    add_kernel(rb + ".a", 1, channels, half, rng, 1.0);
    add_kernel(rb + ".b", 9, half, half, rng, 1.0);
    add_kernel(rb + ".c", 1, half, channels, rng, kResidualGain);
  }
}

void Model::add_layer_params(const LayerDef& s, const std::string& name, std::mt19937_64& rng) {
  switch (s.kind) {
    case LayerKind::kConv:
      if (s.hops == 0) {
        add_kernel(name + ".h0", 1, s.in, s.out, rng, 1.0);
      } else {
        for (int h = 0; h < s.hops; ++h) {
          add_kernel(hop_name(name, h), 9, h == 0 ? s.in : s.out, s.out, rng, 1.0 / s.hops);
        }
      }
      break;
    case LayerKind::kConvDown:
      for (int h = 0; h < s.hops; ++h) {
        add_kernel(hop_name(name, h), 9, h == 0 ? s.in : s.out, s.out, rng, 1.0 / s.hops);
      }
      break;
    case LayerKind::kUnpool:
      if (config_.unpool == UnpoolMode::kPixelShuffle) {
        add_kernel(name + ".up", 9, s.in, 4 * s.out, rng, 1.0);
      } else {
        add_kernel(name + ".up", 9, s.in, s.out, rng, 1.0);
      }
      for (int h = 1; h < s.hops; ++h) {
        add_kernel(name + ".refine" + std::to_string(h), 9, s.out, s.out, rng, 1.0 / s.hops);
      }
      break;
    case LayerKind::kResBlocks:
      add_res_blocks(name, s.in, s.blocks, rng);
      break;
    case LayerKind::kAttention:
      add_res_blocks(name + ".f1", s.in, s.blocks, rng);
      add_res_blocks(name + ".f2", s.in, s.blocks, rng);
      add_kernel(name + ".mask", 1, s.in, s.in, rng, 1.0);
      break;
    case LayerKind::kReLU:
      break;
  }
}

ad::Var Model::kernel_op(ad::Graph& g, StencilKind kind, const std::string& name, ad::Var x) {
  return ad::stencil_op(g, kind, x, g.param(params_.get(weight_name(name))),
                        g.param(params_.get(bias_name(name))));
}

ad::Var Model::res_blocks(ad::Graph& g, const std::string& name, int blocks, ad::Var x) {
  for (int j = 0; j < blocks; ++j) {
    const std::string rb = name + ".rb" + std::to_string(j);
    ad::Var t = ad::relu(g, kernel_op(g, StencilKind::kCenter, rb + ".a", x));
    t = ad::relu(g, kernel_op(g, StencilKind::kOneHop, rb + ".b", t));
    t = kernel_op(g, StencilKind::kCenter, rb + ".c", t);
    x = ad::add(g, x, t);
  }
  return x;
}

void Model::apply_layer(ad::Graph& g, const LayerDef& s, const std::string& name, ad::Var& x) {
  const int64_t channels = g.value(x).cols();
  if (channels != s.in) {
    throw Error(ErrorCode::kShape, name + " expects " + std::to_string(s.in) + " channels, got " +
                                       std::to_string(channels));
  }
  switch (s.kind) {
    case LayerKind::kConv: {
      if (s.hops == 0) {
        x = kernel_op(g, StencilKind::kCenter, name + ".h0", x);
        return;
      }
      ad::Var stage = x, sum;
      for (int h = 0; h < s.hops; ++h) {
        stage = kernel_op(g, StencilKind::kOneHop, hop_name(name, h), stage);
        sum = h == 0 ? stage : ad::add(g, sum, stage);
      }
      x = sum;
      return;
    }
    case LayerKind::kConvDown: {
      if (g.frame(x).n_side < 2) throw Error(ErrorCode::kResolution, name + ": downsampling needs n_side >= 2");
      const bool strided = config_.downsample == DownsampleMode::kStrided;
      ad::Var stage = x, sum;
      for (int h = 0; h + 1 < s.hops; ++h) {
        stage = kernel_op(g, StencilKind::kOneHop, hop_name(name, h), stage);
        const ad::Var coarse = strided ? ad::subsample4(g, stage) : ad::average_pool4(g, stage);
        sum = h == 0 ? coarse : ad::add(g, sum, coarse);
      }
      const std::string last = hop_name(name, s.hops - 1);
      const ad::Var out = strided ? kernel_op(g, StencilKind::kStridedDown, last, stage)
                                  : ad::average_pool4(g, kernel_op(g, StencilKind::kOneHop, last, stage));
      x = s.hops == 1 ? out : ad::add(g, sum, out);
      return;
    }
    case LayerKind::kUnpool: {
      ad::Var stage = config_.unpool == UnpoolMode::kPixelShuffle
                          ? ad::pixel_shuffle(g, kernel_op(g, StencilKind::kOneHop, name + ".up", x))
                          : kernel_op(g, StencilKind::kScatterUp, name + ".up", x);
      ad::Var sum = stage;
      for (int h = 1; h < s.hops; ++h) {
        stage = kernel_op(g, StencilKind::kOneHop, name + ".refine" + std::to_string(h), stage);
        sum = ad::add(g, sum, stage);
      }
      x = sum;
      return;
    }
    case LayerKind::kResBlocks:
      x = res_blocks(g, name, s.blocks, x);
      return;
    case LayerKind::kAttention: {
      const ad::Var trunk = res_blocks(g, name + ".f1", s.blocks, x);
      const ad::Var gate = ad::sigmoid(
          g, kernel_op(g, StencilKind::kCenter, name + ".mask", res_blocks(g, name + ".f2", s.blocks, x)));
      x = ad::add(g, x, ad::mul(g, trunk, gate));
      return;
    }
    case LayerKind::kReLU:
      x = ad::relu(g, x);
      return;
  }
}

ad::Var Model::run_stack(ad::Graph& g, const std::vector<LayerDef>& stack, const std::string& prefix,
                         ad::Var x) {
  for (size_t i = 0; i < stack.size(); ++i) apply_layer(g, stack[i], prefix + "." + std::to_string(i), x);
  return x;
}

ad::Var Model::encode(ad::Graph& g, ad::Var x) {
  const PatchFrame& f = g.frame(x);
  const int levels = config_.image_downsamplings();
  if (f.n_side % (1 << levels) != 0 || (!f.is_full() && f.count % (int64_t{1} << (2 * levels)) != 0)) {
    throw Error(ErrorCode::kResolution, "input n_side " + std::to_string(f.n_side) +
                                            " is not divisible by the encoder's downsampling 2^" +
                                            std::to_string(levels));
  }
  return run_stack(g, config_.encoder, "e", x);
}

ad::Var Model::decode(ad::Graph& g, ad::Var y_hat) { return run_stack(g, config_.decoder, "d", y_hat); }
ad::Var Model::hyper_encode(ad::Graph& g, ad::Var y) { return run_stack(g, config_.hyper_encoder, "es", y); }
ad::Var Model::hyper_decode(ad::Graph& g, ad::Var nu_hat) {
  return run_stack(g, config_.hyper_decoder, "ds", nu_hat);
}

Model::Stats Model::latent_stats(ad::Graph& g, ad::Var hyper_features, ad::Var y_hat) {
  const int m = config_.m;
  ad::Var h = hyper_features;
  if (config_.context) {
    const ad::Var ctx = kernel_op(g, StencilKind::kMasked, "ctx.masked", y_hat);
    h = run_stack(g, config_.aggregation, "pa", ad::concat_channels(g, hyper_features, ctx));
  }
  return Stats{ad::slice_channels(g, h, 0, m), ad::softplus(g, ad::slice_channels(g, h, m, m))};
}

Model::Stats Model::hyper_stats(ad::Graph& g, const PatchFrame& frame) {
  const ad::Var mu = g.param(params_.get("hyper.prior.mu"));
  const ad::Var raw = g.param(params_.get("hyper.prior.scale"));
  return Stats{ad::broadcast_rows(g, mu, frame), ad::broadcast_rows(g, ad::softplus(g, raw), frame)};
}

Digest Model::digest() const {
  ByteWriter w;
  w.text(config_.to_text());
  for (const Parameter* p : params_.all()) {
    w.text(p->name);
    w.u64(static_cast<uint64_t>(p->value.rows()));
    w.u64(static_cast<uint64_t>(p->value.cols()));
    for (double v : p->value.data()) w.f64(v);
  }
  const auto bytes = w.take();
  return fnv1a128(bytes);
}

// ---------------------------------------------------------------------------
// Context prediction

ContextPredictor::ContextPredictor(const Model& model, SphereSignal hyper_features)
    : model_(model), hyper_(std::move(hyper_features)), m_(model.config().m) {
  if (!model.config().context) throw Error(ErrorCode::kUsage, "model has no context model");
  if (hyper_.channels() != 2 * m_) throw Error(ErrorCode::kShape, "hyper features must have 2M channels");
}

void ContextPredictor::predict(const SphereSignal& decoded, int64_t row, double* mu,
                               double* sigma) const {
  const ParamStore& ps = model_.params();
  const Matrix& w = ps.get("ctx.masked.w").value;
  const Matrix& b = ps.get("ctx.masked.b").value;
  const auto stencil = get_stencil(StencilKind::kMasked, hyper_.frame());
  std::vector<double> h(4 * m_);
  std::copy(hyper_.row(row), hyper_.row(row) + 2 * m_, h.begin());
  stencil_forward_row(*stencil, row, decoded.values().data().data(), m_, w.row(0),
                      std::span<const double>(b.row(0), 2 * m_), 2 * m_, h.data() + 2 * m_);
  aggregate_row(model_.config(), ps, h);
  for (int c = 0; c < m_; ++c) {
    mu[c] = h[c];
    sigma[c] = oslo::softplus(h[m_ + c]);
  }
}

std::unique_ptr<entropy::RowModel> make_row_model(const Model& model, SphereSignal hyper_features) {
  if (model.config().context) return std::make_unique<ContextPredictor>(model, std::move(hyper_features));
  if (hyper_features.channels() != 2 * model.config().m) {
    throw Error(ErrorCode::kShape, "hyper features must have 2M channels");
  }
  return std::make_unique<HyperOnlyModel>(std::move(hyper_features), model.config().m);
}

// ---------------------------------------------------------------------------
// Primitives, forward pass, training

SphereSignal quantize(const SphereSignal& y, QuantMode mode, std::mt19937_64* rng, const Matrix* mu) {
  SphereSignal out = y;
  if (mode == QuantMode::kNoise) {
    if (rng == nullptr) throw Error(ErrorCode::kUsage, "noise quantization needs a random generator");
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (double& v : out.values().data()) v += u(*rng);
    return out;
  }
  if (mu != nullptr && !mu->same_shape(y.values())) throw Error(ErrorCode::kShape, "quantize: mu shape");
  const auto src = y.values().data();
  const auto dst = out.values().data();
  for (size_t i = 0; i < dst.size(); ++i) {
    const double offset = mu ? mu->data()[i] : 0.0;
    dst[i] = std::round(src[i] - offset) + offset;
  }
  return out;
}

double gaussian_rate_bits(const Matrix& y_hat, const Matrix& mu, const Matrix& sigma) {
  if (!y_hat.same_shape(mu) || !y_hat.same_shape(sigma)) {
    throw Error(ErrorCode::kShape, "gaussian_rate_bits: shape mismatch");
  }
  double bits = 0.0;
  for (int64_t i = 0; i < y_hat.size(); ++i) {
    bits += gaussian_bin_bits(y_hat.data()[i], mu.data()[i], sigma.data()[i]).bits;
  }
  return bits;
}

RateDistortionLoss rd_loss(const SphereSignal& x, const SphereSignal& x_hat, double total_bits,
                           double lambda, double distortion_scale) {
  if (!(lambda > 0.0)) config_error("lambda must be positive");
  if (!(x.frame() == x_hat.frame()) || x.channels() != x_hat.channels()) {
    throw Error(ErrorCode::kShape, "rd_loss: shape mismatch");
  }
  double se = 0.0;
  const auto a = x.values().data();
  const auto b = x_hat.values().data();
  for (size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  RateDistortionLoss l;
  l.rate = total_bits / static_cast<double>(x.rows());
  l.distortion = distortion_scale * se / static_cast<double>(a.size());
  l.lambda = lambda;
  l.total = l.rate + lambda * l.distortion;
  return l;
}

ForwardResult forward_model(ad::Graph& g, Model& model, ad::Var x, QuantMode mode,
                            std::mt19937_64* rng) {
  const ModelConfig& cfg = model.config();
  if (mode == QuantMode::kNoise && rng == nullptr) {
    throw Error(ErrorCode::kUsage, "noise quantization needs a random generator");
  }
  if (g.value(x).cols() != cfg.image_channels) {
    throw Error(ErrorCode::kShape, "image has " + std::to_string(g.value(x).cols()) +
                                       " channels, model expects " + std::to_string(cfg.image_channels));
  }
  ForwardResult r;
  r.pixels = g.value(x).rows();
  r.y = model.encode(g, x);
  r.nu = model.hyper_encode(g, r.y);
  const Model::Stats prior = model.hyper_stats(g, g.frame(r.nu));
  r.nu_mu = prior.mu;
  r.nu_sigma = prior.sigma;
  if (mode == QuantMode::kNoise) {
    const Matrix& nv = g.value(r.nu);
    r.nu_hat = ad::add_constant(g, r.nu, uniform_noise(nv.rows(), nv.cols(), *rng));
  } else {
    r.nu_hat = ad::round_ste(g, r.nu, prior.mu);
  }
  r.hyper_features = model.hyper_decode(g, r.nu_hat);
  if (mode == QuantMode::kNoise) {
    const Matrix& yv = g.value(r.y);
    r.y_hat = ad::add_constant(g, r.y, uniform_noise(yv.rows(), yv.cols(), *rng));
  } else {
    const auto row_model = make_row_model(model, g.signal(r.hyper_features));
    r.latents = entropy::quantize_latents_sequential(g.signal(r.y), *row_model);
    r.y_hat = ad::straight_through(g, r.y, r.latents.yhat.values());
  }
  const Model::Stats stats = model.latent_stats(g, r.hyper_features, r.y_hat);
  r.mu = stats.mu;
  r.sigma = stats.sigma;
  r.bits_y = ad::gaussian_bits(g, r.y_hat, r.mu, r.sigma);
  r.bits_nu = ad::gaussian_bits(g, r.nu_hat, r.nu_mu, r.nu_sigma);
  r.x_hat = model.decode(g, r.y_hat);
  r.rate = ad::scale(g, ad::add(g, r.bits_y, r.bits_nu), 1.0 / static_cast<double>(r.pixels));
  r.distortion = ad::scale(g, ad::mean_squared_error(g, x, r.x_hat), cfg.distortion_scale);
  r.loss = ad::add(g, r.rate, ad::scale(g, r.distortion, cfg.lambda));
  return r;
}

void adam_step(ParamStore& params, const AdamConfig& cfg) {
  const int64_t t = ++params.adam_steps;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (Parameter* p : params.all()) {
    if (!p->grad.same_shape(p->value)) throw Error(ErrorCode::kShape, "gradient shape of " + p->name);
    if (p->adam_m.empty()) {
      p->adam_m = Matrix(p->value.rows(), p->value.cols());
      p->adam_v = Matrix(p->value.rows(), p->value.cols());
    }
    const auto g = p->grad.data();
    const auto m = p->adam_m.data();
    const auto v = p->adam_v.data();
    const auto w = p->value.data();
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

StepStats train_step(Model& model, std::span<const SphereSignal> batch, const AdamConfig& cfg,
                     std::mt19937_64& rng) {
  if (batch.empty()) throw Error(ErrorCode::kUsage, "empty training batch");
  ParamStore& ps = model.params();
  ps.zero_grad();
  StepStats stats;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const SphereSignal& x : batch) {
    ad::Graph g;
    const ForwardResult r = forward_model(g, model, g.input(x), QuantMode::kNoise, &rng);
    g.backward(ad::scale(g, r.loss, inv));
    stats.loss += inv * g.scalar(r.loss);
    stats.rate += inv * g.scalar(r.rate);
    stats.distortion += inv * g.scalar(r.distortion);
  }
  bool finite = std::isfinite(stats.loss);
  for (const Parameter* p : ps.all()) {
    for (double v : p->grad.data()) finite = finite && std::isfinite(v);
  }
  if (!finite) throw Error(ErrorCode::kDiverged, "non-finite loss or gradient");
  adam_step(ps, cfg);
  return stats;
}

ParamReport count_params(const ModelConfig& config) {
  ParamReport rep;
  auto stack = [&](const std::vector<LayerDef>& layers, const std::string& prefix) {
    for (size_t i = 0; i < layers.size(); ++i) count_layer(config, layers[i], prefix + "." + std::to_string(i), rep.layers);
  };
  stack(config.encoder, "e");
  stack(config.hyper_encoder, "es");
  stack(config.hyper_decoder, "ds");
  stack(config.decoder, "d");
  if (config.context) {
    rep.layers.push_back(LayerParamCount{"ctx.masked", "masked_conv_h1", config.m, 2 * config.m,
                                         kernel_count(8, config.m, 2 * config.m)});
    stack(config.aggregation, "pa");
  }
  if (!config.encoder.empty()) {
    rep.layers.push_back(LayerParamCount{"hyper.prior", "prior", config.n, config.n, 2 * int64_t{config.n}});
  }
  for (const auto& l : rep.layers) rep.total += l.params;
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kCheckpointMagic[4] = {'O', 'S', 'C', 'K'};
constexpr uint16_t kCheckpointVersion = 1;

Digest config_digest(const std::string& text) {
  return fnv1a128(std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}
}  // namespace

std::vector<uint8_t> checkpoint_bytes(const Model& model) {
  ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const uint8_t*>(kCheckpointMagic), 4));
  w.u16(kCheckpointVersion);
  const std::string text = model.config().to_text();
  w.bytes(config_digest(text));
  w.u32(static_cast<uint32_t>(text.size()));
  w.text(text);
  const auto params = model.params().all();
  w.u32(static_cast<uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.u16(static_cast<uint16_t>(p->name.size()));
    w.text(p->name);
    w.u32(static_cast<uint32_t>(p->value.rows()));
    w.u32(static_cast<uint32_t>(p->value.cols()));
    for (double v : p->value.data()) w.f64(v);
  }
  return w.take();
}

Model model_from_checkpoint(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) throw Error(ErrorCode::kParse, "not a model checkpoint");
  const uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "checkpoint version " + std::to_string(version));
  }
  Digest stored;
  for (uint8_t& b : stored) b = r.u8();
  const uint32_t text_len = r.u32();
  const auto text_bytes = r.bytes(text_len);
  const std::string text(text_bytes.begin(), text_bytes.end());
  if (config_digest(text) != stored) throw Error(ErrorCode::kParse, "checkpoint config digest mismatch");
  Model model(ModelConfig::parse(text), 0);
  const uint32_t count = r.u32();
  if (count != model.params().size()) {
    throw Error(ErrorCode::kParse, "checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                                       std::to_string(model.params().size()));
  }
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    const auto name_bytes = r.bytes(name_len);
    const std::string name(name_bytes.begin(), name_bytes.end());
    if (!model.params().contains(name)) throw Error(ErrorCode::kParse, "unexpected tensor " + name);
    Parameter& p = model.params().get(name);
    const uint32_t rows = r.u32(), cols = r.u32();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw Error(ErrorCode::kParse, "tensor " + name + " has the wrong shape");
    }
    for (double& v : p.value.data()) v = r.f64();
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_bytes(path, checkpoint_bytes(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return model_from_checkpoint(bytes);
}

}  // namespace oslo::net
