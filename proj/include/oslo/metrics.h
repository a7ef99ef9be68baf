#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "oslo/sphere_signal.h"

namespace oslo::metrics {

// Equirectangular image, row-major, channels interleaved. Pixel (u, v) has
// its center at phi = 2 pi (u + 1/2) / W, theta = pi (v + 1/2) / H.
struct ErpImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> samples;

  ErpImage() = default;
  ErpImage(int w, int h, int c, double fill = 0.0);

  double& at(int u, int v, int c) { return samples[(static_cast<size_t>(v) * width + u) * channels + c]; }
  double at(int u, int v, int c) const {
    return samples[(static_cast<size_t>(v) * width + u) * channels + c];
  }
  friend bool operator==(const ErpImage&, const ErpImage&) = default;
};

// Throws kShape unless W = 2H > 0 and channels > 0.
void check_erp_dims(int width, int height, int channels);

// Bilinear in (u, v) with wraparound in longitude and clamping at the poles.
SphereSignal erp_to_healpix(const ErpImage& erp, int n_side);

enum class ErpSampling {
  kNearestCell,      // value of the HEALPix cell containing the pixel center
  kNeighborAverage,  // inverse-distance blend of that cell and its neighbors
};
ErpImage healpix_to_erp(const SphereSignal& x, int width, int height,
                        ErpSampling sampling = ErpSampling::kNearestCell);

// Latitude weight of ERP row v.
double ws_weight(int v, int height);

inline constexpr double kInfiniteDb = std::numeric_limits<double>::infinity();

// 10 log10(peak^2 / MSE); +inf for identical inputs.
double psnr(const ErpImage& a, const ErpImage& b, double peak = 1.0);
double ws_psnr(const ErpImage& a, const ErpImage& b, double peak = 1.0);
// Weighted MSE; uniform_weights turns it into the plain MSE.
double weighted_mse(const ErpImage& a, const ErpImage& b, bool uniform_weights = false);

// "inf" for the identical-image sentinel, otherwise fixed decimals.
std::string format_db(double db);

struct RDPoint {
  double rate = 0.0;     // bpp
  double quality = 0.0;  // dB

  friend bool operator==(const RDPoint&, const RDPoint&) = default;
};
using RDCurve = std::vector<RDPoint>;

// Sorts by rate; throws kInvalidInput on non-positive or repeated rates.
RDCurve normalize_curve(RDCurve curve);

// Bjontegaard delta rate in percent (negative = fewer bits for the same
// quality): cubic least-squares fit of ln(rate) over quality for each curve,
// mean difference over the common quality interval. Needs >= 4 points per
// curve (kInvalidInput); disjoint quality ranges give kIncomparableCurves.
double bd_rate(const RDCurve& reference, const RDCurve& test);

// CSV with a header; rate and quality columns are located by name
// (rate_bpp, quality_db), an optional "model" column groups several curves.
std::map<std::string, RDCurve> read_rd_csv(const std::filesystem::path& path);
std::map<std::string, RDCurve> parse_rd_csv(const std::string& text);
std::string format_rd_csv(const std::map<std::string, RDCurve>& curves);

// Portable pixmaps (P5 gray / P6 RGB, 8 or 16 bit) scaled to [0, 1], and the
// raw "OERP" float format. read_erp dispatches on the file magic.
ErpImage read_erp(const std::filesystem::path& path);
ErpImage parse_ppm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> format_ppm(const ErpImage& img, int bits = 8);
ErpImage parse_oerp(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> format_oerp(const ErpImage& img);
void write_erp(const ErpImage& img, const std::filesystem::path& path);  // by extension

}  // namespace oslo::metrics
