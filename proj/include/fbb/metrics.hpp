#pragma once

#include <string>

#include "fbb/core.hpp"

namespace fbb {

// Sample mean and unbiased covariance (rows are samples), with core jitter.
Gaussian fit_gaussian(const Mat& samples);

// KL(p || q) between Gaussians.
double kl_gaussian(const Gaussian& p, const Gaussian& q);
// 2-Wasserstein distance between Gaussians.
double bures_wasserstein(const Gaussian& p, const Gaussian& q);
// Its square, |dmu|^2 + tr Sp + tr Sq - 2 tr (Sp^1/2 Sq Sp^1/2)^1/2.
double bures_wasserstein_squared(const Gaussian& p, const Gaussian& q);

struct MarginalErrors {
  double mean_mae = 0.0;
  double var_mae = 0.0;
};

MarginalErrors marginal_maes(const Gaussian& fitted, const Gaussian& truth);

struct MetricReport {
  double kl = 0.0;          // KL(fitted || truth)
  double kl_reverse = 0.0;  // KL(truth || fitted)
  double bures = 0.0;       // squared 2-Wasserstein, the table column
  double bures_distance = 0.0;
  double mean_mae = 0.0;
  double var_mae = 0.0;
  Index n_samples = 0;

  void validate() const;
  static std::string csv_header();
  std::string csv_row() const;
};

MetricReport evaluate_samples(const Mat& samples, const Gaussian& truth);

}  // namespace fbb
