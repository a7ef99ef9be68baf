#include "oslo/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "oslo/byte_io.h"
#include "oslo/error.h"
#include "oslo/healpix.h"
#include "oslo/parallel.h"

namespace oslo::metrics {
namespace {

constexpr double kPi = std::numbers::pi;

void check_same_dims(const ErpImage& a, const ErpImage& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw Error(ErrorCode::kShape, "images differ in size or channel count");
  }
}

// Least-squares cubic in t = (q - center) / scale, coefficients low to high.
struct Cubic {
  std::array<double, 4> a{};
  double center = 0.0;
  double scale = 1.0;

  // Antiderivative in q.
  double integral(double q) const {
    const double t = (q - center) / scale;
    double s = 0.0, p = t;
    for (int k = 0; k < 4; ++k) {
      s += a[k] * p / (k + 1);
      p *= t;
    }
    return s * scale;
  }
};

Cubic fit_cubic(const RDCurve& c) {
  Cubic f;
  double lo = c.front().quality, hi = lo, sum = 0.0;
  for (const RDPoint& p : c) {
    lo = std::min(lo, p.quality);
    hi = std::max(hi, p.quality);
    sum += p.quality;
  }
  f.center = sum / c.size();
  f.scale = std::max(hi - lo, 1e-12) / 2;
  // Normal equations, 4x4 with partial pivoting.
  double m[4][5] = {};
  for (const RDPoint& p : c) {
    const double t = (p.quality - f.center) / f.scale;
    double pw[7] = {1};
    for (int k = 1; k < 7; ++k) pw[k] = pw[k - 1] * t;
    const double y = std::log(p.rate);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) m[i][j] += pw[i + j];
      m[i][4] += pw[i] * y;
    }
  }
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    }
    std::swap(m[col], m[piv]);
    if (std::abs(m[col][col]) < 1e-300) throw Error(ErrorCode::kInvalidInput, "degenerate RD curve");
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double k = m[r][col] / m[col][col];
      for (int j = col; j < 5; ++j) m[r][j] -= k * m[col][j];
    }
  }
  for (int i = 0; i < 4; ++i) f.a[i] = m[i][4] / m[i][i];
  return f;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  return out;
}

int find_column(const std::vector<std::string>& header, std::initializer_list<const char*> names) {
  for (size_t i = 0; i < header.size(); ++i) {
    for (const char* n : names) {
      if (header[i] == n) return static_cast<int>(i);
    }
  }
  return -1;
}

// PPM header token reader (whitespace and '#' comments).
class PnmHeader {
 public:
  explicit PnmHeader(const std::vector<uint8_t>& b) : b_(b) {}
  std::string token() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
    std::string t;
    while (pos_ < b_.size() && !std::isspace(b_[pos_]) && b_[pos_] != '#') t += static_cast<char>(b_[pos_++]);
    if (t.empty()) throw Error(ErrorCode::kParse, "truncated pixmap header at offset " + std::to_string(pos_));
    return t;
  }
  int number() {
    const std::string t = token();
    if (t.find_first_not_of("0123456789") != std::string::npos || t.size() > 9) {
      throw Error(ErrorCode::kParse, "bad pixmap header value '" + t + "'");
    }
    return std::stoi(t);
  }
  // Exactly one whitespace byte separates the header from the raster.
  size_t raster_start() const { return pos_ + 1; }

 private:
  const std::vector<uint8_t>& b_;
  size_t pos_ = 0;
};

constexpr char kOerpMagic[4] = {'O', 'E', 'R', 'P'};
constexpr uint16_t kOerpVersion = 1;

}  // namespace

ErpImage::ErpImage(int w, int h, int c, double fill)
    : width(w), height(h), channels(c), samples(static_cast<size_t>(w) * h * c, fill) {
  check_erp_dims(w, h, c);
}

void check_erp_dims(int width, int height, int channels) {
  if (height <= 0 || width != 2 * height || channels <= 0) {
    throw Error(ErrorCode::kShape, "ERP images need W = 2H > 0 and channels > 0, got " +
                                       std::to_string(width) + "x" + std::to_string(height) + "x" +
                                       std::to_string(channels));
  }
}

SphereSignal erp_to_healpix(const ErpImage& erp, int n_side) {
  check_erp_dims(erp.width, erp.height, erp.channels);
  if (static_cast<int64_t>(erp.samples.size()) != int64_t{erp.width} * erp.height * erp.channels) {
    throw Error(ErrorCode::kShape, "ERP sample count does not match its dimensions");
  }
  const auto& grid = healpix::grid_for(n_side);
  SphereSignal out(PatchFrame::full(n_side), erp.channels);
  const int W = erp.width, H = erp.height, C = erp.channels;
  parallel_for(out.rows(), [&](int64_t begin, int64_t end) {
    for (int64_t p = begin; p < end; ++p) {
      const healpix::Angles a = grid.center(p);
      const double fu = a.phi * W / (2 * kPi) - 0.5;
      const double fv = a.theta * H / kPi - 0.5;
      const double u0f = std::floor(fu);
      const double du = fu - u0f;
      const int u0 = ((static_cast<int>(u0f) % W) + W) % W;
      const int u1 = (u0 + 1) % W;
      int v0, v1;
      double dv;
      if (fv <= 0.0) {
        v0 = v1 = 0;
        dv = 0.0;
      } else if (fv >= H - 1) {
        v0 = v1 = H - 1;
        dv = 0.0;
      } else {
        v0 = static_cast<int>(std::floor(fv));
        v1 = v0 + 1;
        dv = fv - v0;
      }
      for (int c = 0; c < C; ++c) {
        const double top = (1 - du) * erp.at(u0, v0, c) + du * erp.at(u1, v0, c);
        const double bottom = (1 - du) * erp.at(u0, v1, c) + du * erp.at(u1, v1, c);
        out.at(p, c) = (1 - dv) * top + dv * bottom;
      }
    }
  });
  return out;
}

ErpImage healpix_to_erp(const SphereSignal& x, int width, int height, ErpSampling sampling) {
  if (!x.frame().is_full()) throw Error(ErrorCode::kInvalidInput, "ERP export needs a full-sphere signal");
  ErpImage out(width, height, x.channels());
  const int n_side = x.n_side();
  const auto& grid = healpix::grid_for(n_side);
  const int C = x.channels();
  parallel_for(height, [&](int64_t vb, int64_t ve) {
    for (int v = static_cast<int>(vb); v < ve; ++v) {
      const double theta = kPi * (v + 0.5) / height;
      for (int u = 0; u < width; ++u) {
        const double phi = 2 * kPi * (u + 0.5) / width;
        const int64_t p = healpix::ang2pix(n_side, theta, phi);
        if (sampling == ErpSampling::kNearestCell) {
          for (int c = 0; c < C; ++c) out.at(u, v, c) = x.at(p, c);
          continue;
        }
        const double s = std::sin(theta);
        const std::array<double, 3> dir = {s * std::cos(phi), s * std::sin(phi), std::cos(theta)};
        double wsum = 0.0;
        std::vector<double> acc(C, 0.0);
        auto blend = [&](int64_t q) {
          const healpix::Angles a = grid.center(q);
          const double sq = std::sin(a.theta);
          const double dot = dir[0] * sq * std::cos(a.phi) + dir[1] * sq * std::sin(a.phi) +
                             dir[2] * std::cos(a.theta);
          const double w = 1.0 / (std::acos(std::clamp(dot, -1.0, 1.0)) + 1e-9);
          wsum += w;
          for (int c = 0; c < C; ++c) acc[c] += w * x.at(q, c);
        };
        blend(p);
        for (int64_t q : grid.neighbors(p)) {
          if (q != healpix::kMissing) blend(q);
        }
        for (int c = 0; c < C; ++c) out.at(u, v, c) = acc[c] / wsum;
      }
    }
  });
  return out;
}

double ws_weight(int v, int height) { return std::cos(((v + 0.5) / height - 0.5) * kPi); }

double weighted_mse(const ErpImage& a, const ErpImage& b, bool uniform_weights) {
  check_same_dims(a, b);
  double num = 0.0, den = 0.0;
  for (int v = 0; v < a.height; ++v) {
    const double w = uniform_weights ? 1.0 : ws_weight(v, a.height);
    double row = 0.0;
    for (int u = 0; u < a.width; ++u) {
      for (int c = 0; c < a.channels; ++c) {
        const double d = a.at(u, v, c) - b.at(u, v, c);
        row += d * d;
      }
    }
    num += w * row;
    den += w * a.width * a.channels;
  }
  return num / den;
}

namespace {
double to_db(double mse, double peak) {
  if (!(peak > 0.0)) throw Error(ErrorCode::kInvalidInput, "peak must be positive");
  if (mse == 0.0) return kInfiniteDb;
  return 10.0 * std::log10(peak * peak / mse);
}
}  // namespace

double psnr(const ErpImage& a, const ErpImage& b, double peak) { return to_db(weighted_mse(a, b, true), peak); }

double ws_psnr(const ErpImage& a, const ErpImage& b, double peak) {
  return to_db(weighted_mse(a, b, false), peak);
}

std::string format_db(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", db);
  return buf;
}

RDCurve normalize_curve(RDCurve curve) {
  for (const RDPoint& p : curve) {
    if (!(p.rate > 0.0) || !std::isfinite(p.rate) || !std::isfinite(p.quality)) {
      throw Error(ErrorCode::kInvalidInput, "RD points need a positive rate and finite quality");
    }
  }
  std::sort(curve.begin(), curve.end(), [](const RDPoint& a, const RDPoint& b) { return a.rate < b.rate; });
  for (size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].rate == curve[i - 1].rate) throw Error(ErrorCode::kInvalidInput, "repeated rate in RD curve");
  }
  return curve;
}

double bd_rate(const RDCurve& reference, const RDCurve& test) {
  if (reference.size() < 4 || test.size() < 4) {
    throw Error(ErrorCode::kInvalidInput, "BD-rate needs at least 4 points per curve");
  }
  const RDCurve ref = normalize_curve(reference);
  const RDCurve tst = normalize_curve(test);
  auto range = [](const RDCurve& c) {
    double lo = c.front().quality, hi = lo;
    for (const RDPoint& p : c) {
      lo = std::min(lo, p.quality);
      hi = std::max(hi, p.quality);
    }
    return std::make_pair(lo, hi);
  };
  const auto [rlo, rhi] = range(ref);
  const auto [tlo, thi] = range(tst);
  const double lo = std::max(rlo, tlo), hi = std::min(rhi, thi);
  if (!(hi > lo)) throw Error(ErrorCode::kIncomparableCurves, "quality ranges do not overlap");
  const Cubic fr = fit_cubic(ref), ft = fit_cubic(tst);
  const double avg_ref = (fr.integral(hi) - fr.integral(lo)) / (hi - lo);
  const double avg_tst = (ft.integral(hi) - ft.integral(lo)) / (hi - lo);
  return (std::exp(avg_tst - avg_ref) - 1.0) * 100.0;
}

std::map<std::string, RDCurve> parse_rd_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> header;
  while (header.empty() && std::getline(is, line)) {
    if (!trim(line).empty()) header = split_csv(line);
  }
  const int rate_col = find_column(header, {"rate_bpp", "rate", "bpp"});
  const int quality_col = find_column(header, {"quality_db", "quality", "wspsnr_db", "ws_psnr"});
  const int model_col = find_column(header, {"model", "name"});
  if (rate_col < 0 || quality_col < 0) {
    throw Error(ErrorCode::kParse, "RD CSV needs rate_bpp and quality_db columns");
  }
  std::map<std::string, RDCurve> curves;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    const size_t need = static_cast<size_t>(std::max({rate_col, quality_col, model_col})) + 1;
    if (cells.size() < need) throw Error(ErrorCode::kParse, "short RD CSV row at line " + std::to_string(line_no));
    try {
      RDPoint p{std::stod(cells[rate_col]), std::stod(cells[quality_col])};
      curves[model_col >= 0 ? cells[model_col] : ""].push_back(p);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kParse, "bad number in RD CSV at line " + std::to_string(line_no));
    }
  }
  for (auto& [name, c] : curves) c = normalize_curve(std::move(c));
  return curves;
}

std::map<std::string, RDCurve> read_rd_csv(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_rd_csv(std::string(bytes.begin(), bytes.end()));
}

std::string format_rd_csv(const std::map<std::string, RDCurve>& curves) {
  std::string out = "model,rate_bpp,quality_db\n";
  char buf[128];
  for (const auto& [name, c] : curves) {
    for (const RDPoint& p : normalize_curve(c)) {
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", p.rate, p.quality);
      out += name + buf;
    }
  }
  return out;
}

ErpImage parse_ppm(const std::vector<uint8_t>& bytes) {
  PnmHeader h(bytes);
  const std::string magic = h.token();
  int channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw Error(ErrorCode::kParse, "unsupported pixmap type '" + magic + "' (P5 or P6 expected)");
  }
  const int w = h.number(), hh = h.number(), maxval = h.number();
  if (maxval < 1 || maxval > 65535) throw Error(ErrorCode::kParse, "pixmap maxval out of range");
  ErpImage img(w, hh, channels);
  const int bps = maxval > 255 ? 2 : 1;
  const size_t start = h.raster_start();
  const size_t need = img.samples.size() * bps;
  if (start > bytes.size() || bytes.size() - start < need) {
    throw Error(ErrorCode::kParse, "truncated pixmap raster at offset " + std::to_string(bytes.size()));
  }
  for (size_t i = 0; i < img.samples.size(); ++i) {
    const uint8_t* p = bytes.data() + start + i * bps;
    const int v = bps == 2 ? (p[0] << 8) | p[1] : p[0];
    img.samples[i] = static_cast<double>(v) / maxval;
  }
  return img;
}

std::vector<uint8_t> format_ppm(const ErpImage& img, int bits) {
  if (bits != 8 && bits != 16) throw Error(ErrorCode::kInvalidInput, "pixmaps are 8 or 16 bit");
  if (img.channels != 1 && img.channels != 3) {
    throw Error(ErrorCode::kShape, "pixmaps hold 1 or 3 channels, image has " + std::to_string(img.channels));
  }
  const int maxval = bits == 8 ? 255 : 65535;
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) +
                             " " + std::to_string(img.height) + "\n" + std::to_string(maxval) + "\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  for (double s : img.samples) {
    const int v = static_cast<int>(std::lround(std::clamp(s, 0.0, 1.0) * maxval));
    if (bits == 16) out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v & 0xff));
  }
  return out;
}

ErpImage parse_oerp(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kOerpMagic)) throw Error(ErrorCode::kParse, "not an OERP file");
  const uint16_t version = r.u16();
  if (version != kOerpVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "OERP version " + std::to_string(version));
  }
  const uint32_t w = r.u32(), h = r.u32(), c = r.u32();
  if (w > (1u << 20) || h > (1u << 20) || c > 64) throw Error(ErrorCode::kParse, "OERP dimensions out of range");
  ErpImage img(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  for (double& s : img.samples) s = r.f64();
  return img;
}

std::vector<uint8_t> format_oerp(const ErpImage& img) {
  ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const uint8_t*>(kOerpMagic), 4));
  w.u16(kOerpVersion);
  w.u32(static_cast<uint32_t>(img.width));
  w.u32(static_cast<uint32_t>(img.height));
  w.u32(static_cast<uint32_t>(img.channels));
  for (double s : img.samples) w.f64(s);
  return w.take();
}

ErpImage read_erp(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, kOerpMagic)) return parse_oerp(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P') return parse_ppm(bytes);
  throw Error(ErrorCode::kParse, path.string() + ": unrecognized image format");
}

void write_erp(const ErpImage& img, const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
    write_file_bytes(path, format_ppm(img, 8));
  } else {
    write_file_bytes(path, format_oerp(img));
  }
}

}  // namespace oslo::metrics
