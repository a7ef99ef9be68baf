#include "oslo/gaussian.h"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace oslo {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

}  // namespace

double normal_cdf(double t) { return 0.5 * std::erfc(-t * kInvSqrt2); }

double normal_pdf(double t) {
  return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

double gaussian_bin_mass(double value, double mu, double sigma) {
  const double d = value - mu;
  const double upper = (d + 0.5) / sigma;
  const double lower = (d - 0.5) / sigma;
  // Reflect into the lower half so both erfc terms stay well conditioned.
  if (d > 0) return 0.5 * (std::erfc(lower * kInvSqrt2) - std::erfc(upper * kInvSqrt2));
  return 0.5 * (std::erfc(-upper * kInvSqrt2) - std::erfc(-lower * kInvSqrt2));
}

double gaussian_lower_tail(double upper, double mu, double sigma) {
  return normal_cdf((upper - mu) / sigma);
}

double gaussian_upper_tail(double lower, double mu, double sigma) {
  return normal_cdf(-(lower - mu) / sigma);
}

BinBits gaussian_bin_bits(double value, double mu, double sigma) {
  const bool clamped = sigma < kSigmaMin;
  const double s = clamped ? kSigmaMin : sigma;
  const double p = gaussian_bin_mass(value, mu, s);
  if (p < kLikelihoodFloor) return {-std::log2(kLikelihoodFloor), 0.0, 0.0};
  const double d = value - mu;
  const double u = (d + 0.5) / s;
  const double l = (d - 0.5) / s;
  const double pu = normal_pdf(u);
  const double pl = normal_pdf(l);
  const double scale = -1.0 / (p * std::numbers::ln2);
  const double dp_dvalue = (pu - pl) / s;
  const double dp_dsigma = (-u * pu + l * pl) / s;
  return {-std::log2(p), scale * dp_dvalue, clamped ? 0.0 : scale * dp_dsigma};
}

double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace oslo
