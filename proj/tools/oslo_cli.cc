// Command line front end: encode, decode, eval, rd-curve, bench-params,
// train-toy. CSV goes to stdout, progress and reports to stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oslo/byte_io.h"
#include "oslo/codec.h"
#include "oslo/error.h"
#include "oslo/metrics.h"
#include "oslo/net.h"
#include "oslo/sphere_signal.h"
#include "oslo/train.h"

namespace fs = std::filesystem;
using namespace oslo;

namespace {

constexpr int kExitError = 1;
constexpr int kExitInput = 2;    // missing model or input, incompatible resolution
constexpr int kExitStream = 3;   // wrong model, corrupt or unsupported stream
constexpr int kExitDiverged = 4;

// Error carrying its own exit status.
struct Exit {
  int code;
  std::string message;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kResolution:
    case ErrorCode::kIo:
      return kExitInput;
    case ErrorCode::kWrongModel:
    case ErrorCode::kCorruptStream:
    case ErrorCode::kUnsupportedVersion:
      return kExitStream;
    case ErrorCode::kDiverged:
      return kExitDiverged;
    default:
      return kExitError;
  }
}

bool is_sphere_file(const fs::path& p) { return p.extension() == ".osph"; }

SphereSignal read_sphere_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + p.string());
  return read_sphere_signal(in);
}

void write_sphere_file(const SphereSignal& x, const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  write_sphere_signal(out, x);
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Exit{kExitInput, what + " not found: " + p.string()};
}

// A checkpoint file, or a directory of checkpoints searched for `lambda`.
net::Model load_model(const fs::path& path, std::optional<double> lambda) {
  require_file(path, "model");
  if (!fs::is_directory(path)) return net::load_checkpoint(path);
  if (!lambda) throw Exit{kExitInput, "--lambda is required when --model is a directory"};
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.path().extension() == ".osck") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    net::Model m = net::load_checkpoint(f);
    if (m.config().lambda == *lambda) return m;
  }
  throw Exit{kExitInput, "model not found for lambda " + std::to_string(*lambda) + " in " + path.string()};
}

SphereSignal read_image(const fs::path& p, int n_side) {
  require_file(p, "input");
  if (is_sphere_file(p)) return read_sphere_file(p);
  return metrics::erp_to_healpix(metrics::read_erp(p), n_side);
}

metrics::ErpImage as_erp(const fs::path& p, int width) {
  require_file(p, "input");
  if (!is_sphere_file(p)) return metrics::read_erp(p);
  const SphereSignal x = read_sphere_file(p);
  if (width <= 0) width = 4 * x.n_side();
  return metrics::healpix_to_erp(x, width, width / 2);
}

std::vector<SphereSignal> image_set(const std::string& dir, int synthetic, int n_side, int channels,
                                    uint64_t seed) {
  if (!dir.empty()) return train::load_image_dir(dir, n_side);
  return train::synthetic_images(synthetic, n_side, channels, seed);
}

net::ModelConfig model_config(const std::string& config_path, const std::string& arch, int n, int m, int hops,
                              const std::string& unpool) {
  net::ModelConfig cfg;
  if (!config_path.empty()) {
    require_file(config_path, "config");
    cfg = net::ModelConfig::load(config_path);
  } else {
    cfg = net::ModelConfig::preset(arch, n, m);
    cfg.hops = hops;
  }
  if (!unpool.empty()) cfg.unpool = net::parse_unpool(unpool);
  cfg.rebuild();
  cfg.validate();
  return cfg;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"On-the-sphere learned image codec toolkit"};
  app.require_subcommand(1);

  std::string in, out, model_path, config_path, unpool, arch = "proposed", data_dir, reference, name = "model",
                                                        from_csv, test;
  int n_side = 64, width = 0, n = 32, m = 48, hops = 2, steps = 2000, batch = 1, patch_depth = 6, synthetic = 8,
      channels = 3;
  double lr = 1e-4, lr_decay_at = 0.8, lr_decay = 0.1, peak = 1.0;
  std::optional<double> lambda;
  uint64_t seed = 1;

  auto* enc = app.add_subcommand("encode", "Encode an ERP image or .osph sphere file");
  enc->add_option("input", in, "Input image")->required();
  enc->add_option("--model", model_path, "Checkpoint file or directory")->required();
  enc->add_option("--out", out, "Output .osic file")->required();
  enc->add_option("--nside", n_side, "HEALPix resolution for ERP input");
  enc->add_option("--lambda", lambda, "Pick the checkpoint with this lambda from a directory");

  auto* dec = app.add_subcommand("decode", "Decode an .osic file");
  dec->add_option("input", in, "Input .osic")->required();
  dec->add_option("--model", model_path, "Checkpoint file or directory")->required();
  dec->add_option("--out", out, "Output: .osph keeps the sphere, .ppm/.pgm/.oerp render ERP")->required();
  dec->add_option("--width", width, "ERP width (height is width / 2), default 4 n_side");
  dec->add_option("--lambda", lambda, "Pick the checkpoint with this lambda from a directory");

  auto* ev = app.add_subcommand("eval", "PSNR and WS-PSNR of a test image (or directory) against a reference");
  ev->add_option("reference", reference, "Reference image or directory")->required();
  ev->add_option("test", test, "Test image or directory")->required();
  ev->add_option("--width", width, "ERP width used for .osph inputs");
  ev->add_option("--peak", peak, "Peak signal value");

  auto* rd = app.add_subcommand("rd-curve", "RD points of a model directory, or BD-rates of an RD CSV");
  rd->add_option("--model", model_path, "Directory of checkpoints (one per lambda)");
  rd->add_option("--images", data_dir, "Directory of ERP test images (default: synthetic set)");
  rd->add_option("--synthetic", synthetic, "Number of synthetic test images");
  rd->add_option("--nside", n_side, "Test resolution");
  rd->add_option("--seed", seed, "Synthetic image seed");
  rd->add_option("--name", name, "Model name in the CSV");
  rd->add_option("--from-csv", from_csv, "Existing RD CSV to compare instead of evaluating models");
  rd->add_option("--reference", reference, "Reference curve: a model name in the CSV, or another CSV file");
  rd->add_option("--width", width, "ERP width for quality measurement");

  auto* bp = app.add_subcommand("bench-params", "Per-layer parameter counts, pixel shuffle vs transposed conv");
  bp->add_option("--config", config_path, "Model config file");
  bp->add_option("--arch", arch, "Preset: sh, sh_attn_rb, proposed");
  bp->add_option("--N", n, "Backbone width");
  bp->add_option("--M", m, "Latent width");
  bp->add_option("--hops", hops, "Hops per convolution");

  auto* tr = app.add_subcommand("train-toy", "Train a small model and write a checkpoint");
  tr->add_option("--data", data_dir, "Directory of ERP training images (default: synthetic set)");
  tr->add_option("--synthetic", synthetic, "Number of synthetic training images");
  tr->add_option("--channels", channels, "Channels of synthetic images");
  tr->add_option("--config", config_path, "Model config file");
  tr->add_option("--arch", arch, "Preset: sh, sh_attn_rb, proposed");
  tr->add_option("--N", n, "Backbone width");
  tr->add_option("--M", m, "Latent width");
  tr->add_option("--hops", hops, "Hops per convolution");
  tr->add_option("--unpool", unpool, "shuffle or tconv")->check(CLI::IsMember({"shuffle", "tconv"}));
  tr->add_option("--lambda", lambda, "Rate-distortion trade-off");
  tr->add_option("--nside", n_side, "Training resolution");
  tr->add_option("--steps", steps, "Optimizer steps");
  tr->add_option("--lr", lr, "Adam learning rate");
  tr->add_option("--lr-decay-at", lr_decay_at, "Fraction of steps after which the learning rate drops");
  tr->add_option("--lr-decay", lr_decay, "Learning rate factor after the drop");
  tr->add_option("--batch", batch, "Patches per step");
  tr->add_option("--patch-depth", patch_depth, "Patch size 4^depth pixels");
  tr->add_option("--seed", seed, "Initialization and sampling seed");
  tr->add_option("--out", out, "Output checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*enc) {
      net::Model model = load_model(model_path, lambda);
      const SphereSignal x = read_image(in, n_side);
      const codec::Encoded e = codec::encode_image(x, model);
      write_file_bytes(out, e.bytes);
      std::cerr << ".osic written, R=" << fmt(e.bpp) << " bpp\n";
      std::cout << "file,n_side,bytes,bpp,model_bpp\n"
                << out << "," << x.n_side() << "," << e.bytes.size() << "," << fmt(e.bpp) << ","
                << fmt(e.model_bpp) << "\n";
    } else if (*dec) {
      net::Model model = load_model(model_path, lambda);
      require_file(in, "input");
      const SphereSignal x = codec::decode_image(read_file_bytes(in), model);
      if (is_sphere_file(out)) {
        write_sphere_file(x, out);
      } else {
        const int w = width > 0 ? width : 4 * x.n_side();
        metrics::write_erp(metrics::healpix_to_erp(x, w, w / 2), out);
      }
      std::cerr << "decoded n_side " << x.n_side() << " to " << out << "\n";
    } else if (*ev) {
      std::vector<std::pair<std::string, std::string>> pairs;
      if (fs::is_directory(reference)) {
        for (const auto& e : fs::directory_iterator(reference)) {
          const fs::path other = fs::path(test) / e.path().filename();
          if (e.is_regular_file() && fs::exists(other)) pairs.emplace_back(e.path().string(), other.string());
        }
        std::sort(pairs.begin(), pairs.end());
        if (pairs.empty()) throw Exit{kExitInput, "no matching file names in " + reference + " and " + test};
      } else {
        pairs.emplace_back(reference, test);
      }
      std::cout << "image,psnr_db,wspsnr_db\n";
      double sum_psnr = 0.0, sum_ws = 0.0;
      for (const auto& [a, b] : pairs) {
        const auto ra = as_erp(a, width), rb = as_erp(b, width);
        const double p = metrics::psnr(ra, rb, peak), w = metrics::ws_psnr(ra, rb, peak);
        sum_psnr += p;
        sum_ws += w;
        std::cout << fs::path(b).filename().string() << "," << metrics::format_db(p) << ","
                  << metrics::format_db(w) << "\n";
      }
      if (pairs.size() > 1) {
        std::cout << "mean," << metrics::format_db(sum_psnr / pairs.size()) << ","
                  << metrics::format_db(sum_ws / pairs.size()) << "\n";
      }
    } else if (*rd) {
      std::map<std::string, metrics::RDCurve> curves;
      if (!from_csv.empty()) {
        require_file(from_csv, "RD CSV");
        curves = metrics::read_rd_csv(from_csv);
      } else {
        if (model_path.empty()) throw Exit{kExitError, "rd-curve needs --model or --from-csv"};
        require_file(model_path, "model");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(model_path)) {
          if (e.path().extension() == ".osck") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.size() < 2) throw Exit{kExitError, "an RD curve needs at least two checkpoints"};
        metrics::RDCurve curve;
        for (const auto& f : files) {
          net::Model model = net::load_checkpoint(f);
          const auto images = image_set(data_dir, synthetic, n_side, model.config().image_channels, seed);
          double rate = 0.0, quality = 0.0;
          for (const SphereSignal& x : images) {
            const train::Evaluation e = train::evaluate(model, x, width);
            rate += e.bpp;
            quality += e.ws_psnr;
          }
          curve.push_back({rate / images.size(), quality / images.size()});
          std::cerr << f.filename().string() << ": lambda " << model.config().lambda << ", R=" << fmt(curve.back().rate)
                    << " bpp, WS-PSNR=" << fmt(curve.back().quality) << " dB\n";
        }
        curves[name] = metrics::normalize_curve(curve);
      }
      if (reference.empty()) {
        std::cout << metrics::format_rd_csv(curves);
      } else {
        metrics::RDCurve ref;
        std::map<std::string, metrics::RDCurve> others = curves;
        if (curves.count(reference)) {
          ref = curves.at(reference);
          others.erase(reference);
        } else {
          require_file(reference, "reference");
          const auto ref_curves = metrics::read_rd_csv(reference);
          if (ref_curves.size() != 1) throw Exit{kExitError, "reference CSV must hold exactly one curve"};
          ref = ref_curves.begin()->second;
        }
        std::cout << "model,bd_rate_pct\n";
        for (const auto& [model_name, c] : others) {
          std::cout << model_name << "," << fmt(metrics::bd_rate(ref, c)) << "\n";
        }
      }
    } else if (*bp) {
      net::ModelConfig cfg = model_config(config_path, arch, n, m, hops, "");
      net::ModelConfig shuffle = cfg, tconv = cfg;
      shuffle.unpool = net::UnpoolMode::kPixelShuffle;
      tconv.unpool = net::UnpoolMode::kTransposedConv;
      shuffle.rebuild();
      tconv.rebuild();
      const net::ParamReport a = net::count_params(shuffle), b = net::count_params(tconv);
      if (a.layers.size() != b.layers.size()) throw Exit{kExitError, "layer lists differ between unpool modes"};
      std::cout << "layer,kind,in,out,shuffle_params,tconv_params,ratio\n";
      for (size_t i = 0; i < a.layers.size(); ++i) {
        const auto& la = a.layers[i];
        const auto& lb = b.layers[i];
        const bool unpool_row = la.kind == "unpool_shuffle";
        std::cout << la.name << "," << (unpool_row ? "unpool" : la.kind) << "," << la.in << "," << la.out << ","
                  << la.params << "," << lb.params << ","
                  << (unpool_row ? fmt(static_cast<double>(la.params) / lb.params) : "") << "\n";
      }
      if (a.total > 0) {
        std::cerr << "total: shuffle " << a.total << ", tconv " << b.total << ", ratio "
                  << fmt(static_cast<double>(a.total) / b.total) << "\n";
      }
    } else if (*tr) {
      net::ModelConfig cfg = model_config(config_path, arch, n, m, hops, unpool);
      if (lambda) cfg.lambda = *lambda;
      if (!(cfg.lambda > 0.0)) throw Exit{kExitError, "lambda must be positive"};
      const auto images = image_set(data_dir, synthetic, n_side, cfg.image_channels, seed);
      net::Model model(cfg, seed);
      train::TrainOptions opts;
      opts.steps = steps;
      opts.lr = lr;
      opts.lr_decay_at = lr_decay_at;
      opts.lr_decay = lr_decay;
      opts.batch = batch;
      opts.patch_depth = patch_depth;
      opts.seed = seed;
      std::cout << "step,epoch,loss,rate_bpp,distortion\n";
      const train::TrainResult r = train::train(model, images, opts, [](const train::StepLog& s) {
        std::cout << s.step << "," << s.epoch << "," << fmt(s.stats.loss) << "," << fmt(s.stats.rate) << ","
                  << fmt(s.stats.distortion) << "\n";
      });
      net::save_checkpoint(model, out);
      if (r.diverged) {
        std::cerr << "training diverged at step " << r.steps.size() << "; last good checkpoint written to " << out
                  << "\n";
        return kExitDiverged;
      }
      std::cerr << "checkpoint written to " << out << " (digest " << net::digest_hex(model.digest()) << ")\n";
    }
  } catch (const Exit& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
