#pragma once

#include <functional>
#include <iosfwd>
#include <string>

#include "fbb/core.hpp"
#include "fbb/rng.hpp"

namespace fbb {

struct BetaSchedule {
  double b_min = 0.02;
  double b_max = 5.0;
  double t0 = 0.0;
  double T = 1.0;

  void validate() const;
  // Integral of beta over [s, t].
  double integral(double s, double t) const;
};

double beta_at(const BetaSchedule& schedule, double t);

// Linear forward SDE dX = A_t X dt + sigma_t dW on [0, T]. The state is
// ordered with the observed block (size obs_dim) first.
class LinearSde {
public:
  enum class Kind { ConstantScalar, VariancePreserving, Matrix };

  // dX = a X dt + sigma dW (isotropic).
  static LinearSde constant(Index dim, double a, double sigma, double horizon, Index obs_dim = 0);
  // dX = -0.5 beta_t X dt + sqrt(beta_t) dW.
  static LinearSde variance_preserving(Index dim, const BetaSchedule& schedule, Index obs_dim = 0);
  // General time-varying matrix drift; transitions by RK4 quadrature.
  static LinearSde matrix(Index dim, std::function<Mat(double)> drift,
                          std::function<double(double)> dispersion, double horizon,
                          Index obs_dim = 0, bool separable = false);

  Kind kind() const noexcept { return kind_; }
  Index dim() const noexcept { return dim_; }
  Index obs_dim() const noexcept { return obs_dim_; }
  double horizon() const noexcept { return horizon_; }
  bool separable() const noexcept { return separable_; }
  bool isotropic() const noexcept { return kind_ != Kind::Matrix; }

  Mat drift_matrix(double t) const;
  double dispersion(double t) const;
  Vec drift(const Vec& x, double t) const { return drift_matrix(t) * x; }

  // Isotropic kinds only: X_t = phi X_s + sqrt(var) Z.
  std::pair<double, double> scalar_transition(double s, double t) const;
  // (Phi(s, t), Q(s, t)) for any kind.
  std::pair<Mat, Mat> transition(double s, double t) const;

  // Restriction to a coordinate block (only for separable or isotropic SDEs).
  LinearSde block(Index offset, Index size) const;

private:
  void check_times(double s, double t) const;

  Kind kind_ = Kind::ConstantScalar;
  Index dim_ = 0;
  Index obs_dim_ = 0;
  double horizon_ = 1.0;
  bool separable_ = true;
  double a_ = 0.0;
  double sigma_ = 1.0;
  BetaSchedule beta_;
  std::function<Mat(double)> drift_fn_;
  std::function<double(double)> disp_fn_;
  Index block_offset_ = 0;
};

inline constexpr int kRk4Substeps = 64;

// SDE with an arbitrary drift; only Euler simulation is available.
struct GeneralSde {
  Index dim = 0;
  double horizon = 1.0;
  std::function<Vec(const Vec&, double)> drift;
  std::function<double(double)> dispersion;
};

struct Path {
  TimeGrid grid;
  Mat states;  // (K+1) x d, one row per grid point

  void validate() const;
};

Gaussian exact_transition(const LinearSde& sde, const Vec& x, double s, double t);
Gaussian marginal_moments(const LinearSde& sde, const Gaussian& init, double t);

Vec euler_step(const std::function<Vec(const Vec&, double)>& drift, double sigma, const Vec& x,
               double t, double dt, const RngStreamKey& key);

Path simulate_forward(const LinearSde& sde, const Vec& x0, const TimeGrid& grid,
                      const RngStreamKey& key);
Path simulate_forward(const GeneralSde& sde, const Vec& x0, const TimeGrid& grid,
                      const RngStreamKey& key);

// Law of X_{t_k} given X_{t_next} = x_next and X_0 = x0.
Gaussian bridge_kernel(const LinearSde& sde, const Vec& x_next, const Vec& x0, double t_k,
                       double t_next);
Gaussian bridge_kernel(const GeneralSde& sde, const Vec& x_next, const Vec& x0, double t_k,
                       double t_next);

// Precomputed bridge coefficients on a grid: X_{t_k} | X_{t_{k+1}}, X_0 has mean
// A_k x0 + B_k x_next and covariance V_k (scalar multiples of I for isotropic SDEs).
class BridgePlan {
public:
  BridgePlan(const LinearSde& sde, const TimeGrid& grid);

  const TimeGrid& grid() const noexcept { return grid_; }
  Gaussian kernel(int k, const Vec& x_next, const Vec& x0) const;
  Vec sample(int k, const Vec& x_next, const Vec& x0, const Vec& z) const;
  // Draws X_{t_K} from the exact transition and walks the bridge back to t_1.
  // Returns (K+1) x d states with row 0 = x0.
  Mat sample_path(const Vec& x0, Rng& rng) const;

  Mat a(int k) const;
  Mat b(int k) const;
  Mat v(int k) const;

private:
  TimeGrid grid_;
  LinearSde sde_;
  bool scalar_ = true;
  std::vector<double> sa_, sb_, sv_;
  std::vector<Mat> ma_, mb_, mv_, mvf_;
  double end_phi_ = 1.0, end_var_ = 0.0;
  Mat end_phi_m_, end_fac_m_;
};

void write_path_csv(std::ostream& os, const Path& path);
Path read_path_csv(std::istream& is);
void write_path_binary(std::ostream& os, const Path& path);
Path read_path_binary(std::istream& is);

}  // namespace fbb
