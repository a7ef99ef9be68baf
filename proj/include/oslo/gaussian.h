#pragma once

namespace oslo {

// Scale floor for every Gaussian entropy model.
inline constexpr double kSigmaMin = 0.11;

// Smallest probability a rate term will charge for; keeps -log2 finite.
inline constexpr double kLikelihoodFloor = 1e-12;

double normal_cdf(double t);
double normal_pdf(double t);

// Mass of the unit-width bin centered at `value` under N(mu, sigma^2),
// computed in the tail that keeps precision.
double gaussian_bin_mass(double value, double mu, double sigma);

// Mass of (-inf, upper] and [lower, inf).
double gaussian_lower_tail(double upper, double mu, double sigma);
double gaussian_upper_tail(double lower, double mu, double sigma);

struct BinBits {
  double bits;      // -log2 of the (floored) bin mass
  double d_value;   // derivative w.r.t. the coded value
  double d_sigma;   // derivative w.r.t. sigma (zero where sigma is clamped)
};

// Rate of one element with sigma clamped to kSigmaMin; d/dmu = -d_value.
BinBits gaussian_bin_bits(double value, double mu, double sigma);

double softplus(double x);
double sigmoid(double x);

}  // namespace oslo
