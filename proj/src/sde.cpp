#include "fbb/sde.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace fbb {

void BetaSchedule::validate() const {
  if (!(b_min > 0.0) || !(b_max > b_min)) throw InvalidArgument("beta schedule needs 0 < b_min < b_max");
  if (!(T > t0)) throw InvalidArgument("beta schedule needs t0 < T");
}

double beta_at(const BetaSchedule& s, double t) {
  s.validate();
  if (t < s.t0 || t > s.T) throw InvalidArgument("beta_at: t outside [t0, T]");
  return (s.b_max - s.b_min) / (s.T - s.t0) * t + (s.b_min * s.T - s.b_max * s.t0) / (s.T - s.t0);
}

double BetaSchedule::integral(double s, double t) const {
  const double slope = (b_max - b_min) / (T - t0);
  const double icpt = (b_min * T - b_max * t0) / (T - t0);
  return 0.5 * slope * (t * t - s * s) + icpt * (t - s);
}

LinearSde LinearSde::constant(Index dim, double a, double sigma, double horizon, Index obs_dim) {
  if (dim < 1) throw InvalidArgument("LinearSde: dimension must be positive");
  if (!(sigma >= 0.0)) throw InvalidArgument("LinearSde: dispersion must be nonnegative");
  if (!(horizon > 0.0)) throw InvalidArgument("LinearSde: horizon must be positive");
  if (obs_dim < 0 || obs_dim > dim) throw InvalidArgument("LinearSde: bad observed block size");
  LinearSde s;
  s.kind_ = Kind::ConstantScalar;
  s.dim_ = dim;
  s.obs_dim_ = obs_dim;
  s.horizon_ = horizon;
  s.a_ = a;
  s.sigma_ = sigma;
  return s;
}

LinearSde LinearSde::variance_preserving(Index dim, const BetaSchedule& schedule, Index obs_dim) {
  schedule.validate();
  if (schedule.t0 != 0.0) throw InvalidArgument("LinearSde: beta schedule must start at t0 = 0");
  LinearSde s = constant(dim, 0.0, 1.0, schedule.T, obs_dim);
  s.kind_ = Kind::VariancePreserving;
  s.beta_ = schedule;
  return s;
}

LinearSde LinearSde::matrix(Index dim, std::function<Mat(double)> drift,
                            std::function<double(double)> dispersion, double horizon,
                            Index obs_dim, bool separable) {
  LinearSde s = constant(dim, 0.0, 1.0, horizon, obs_dim);
  s.kind_ = Kind::Matrix;
  s.drift_fn_ = std::move(drift);
  s.disp_fn_ = std::move(dispersion);
  s.separable_ = separable;
  if (separable && obs_dim > 0 && obs_dim < dim) {
    const Mat a0 = s.drift_fn_(0.0);
    if (a0.topRightCorner(obs_dim, dim - obs_dim).cwiseAbs().maxCoeff() > 0.0 ||
        a0.bottomLeftCorner(dim - obs_dim, obs_dim).cwiseAbs().maxCoeff() > 0.0)
      throw InvalidArgument("LinearSde: separable flag set but drift couples the blocks");
  }
  return s;
}

Mat LinearSde::drift_matrix(double t) const {
  switch (kind_) {
    case Kind::ConstantScalar:
      return a_ * Mat::Identity(dim_, dim_);
    case Kind::VariancePreserving:
      return -0.5 * beta_at(beta_, t) * Mat::Identity(dim_, dim_);
    case Kind::Matrix: {
      const Mat full = drift_fn_(t);
      return full.block(block_offset_, block_offset_, dim_, dim_);
    }
  }
  return {};
}

double LinearSde::dispersion(double t) const {
  switch (kind_) {
    case Kind::ConstantScalar:
      return sigma_;
    case Kind::VariancePreserving:
      return std::sqrt(beta_at(beta_, t));
    case Kind::Matrix:
      return disp_fn_(t);
  }
  return 0.0;
}

void LinearSde::check_times(double s, double t) const {
  if (!(s < t)) throw InvalidArgument("transition requires s < t");
  if (s < 0.0 || t > horizon_ * (1.0 + 1e-12)) throw InvalidArgument("transition times outside [0, T]");
}

std::pair<double, double> LinearSde::scalar_transition(double s, double t) const {
  if (s == t) return {1.0, 0.0};
  check_times(s, t);
  switch (kind_) {
    case Kind::ConstantScalar: {
      const double dt = t - s;
      const double phi = std::exp(a_ * dt);
      const double var = a_ == 0.0 ? sigma_ * sigma_ * dt
                                   : sigma_ * sigma_ * std::expm1(2.0 * a_ * dt) / (2.0 * a_);
      return {phi, var};
    }
    case Kind::VariancePreserving: {
      const double b = beta_.integral(s, t);
      return {std::exp(-0.5 * b), -std::expm1(-b)};
    }
    case Kind::Matrix:
      break;
  }
  throw UnsupportedOperation("scalar_transition requires an isotropic SDE");
}

std::pair<Mat, Mat> LinearSde::transition(double s, double t) const {
  if (isotropic()) {
    const auto [phi, var] = scalar_transition(s, t);
    return {phi * Mat::Identity(dim_, dim_), var * Mat::Identity(dim_, dim_)};
  }
  if (s == t) return {Mat::Identity(dim_, dim_), Mat::Zero(dim_, dim_)};
  check_times(s, t);
  // Phi' = A Phi, Q' = A Q + Q A^T + sigma^2 I, integrated by classical RK4.
  Mat phi = Mat::Identity(dim_, dim_);
  Mat q = Mat::Zero(dim_, dim_);
  const double h = (t - s) / kRk4Substeps;
  const Mat eye = Mat::Identity(dim_, dim_);
  auto rhs = [&](double tau, const Mat& p, const Mat& qq, Mat& dp, Mat& dq) {
    const Mat a = drift_matrix(tau);
    const double sg = dispersion(tau);
    dp = a * p;
    dq = a * qq + qq * a.transpose() + sg * sg * eye;
  };
  Mat k1p, k1q, k2p, k2q, k3p, k3q, k4p, k4q;
  for (int i = 0; i < kRk4Substeps; ++i) {
    const double tau = s + i * h;
    rhs(tau, phi, q, k1p, k1q);
    rhs(tau + 0.5 * h, phi + 0.5 * h * k1p, q + 0.5 * h * k1q, k2p, k2q);
    rhs(tau + 0.5 * h, phi + 0.5 * h * k2p, q + 0.5 * h * k2q, k3p, k3q);
    rhs(tau + h, phi + h * k3p, q + h * k3q, k4p, k4q);
    phi += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
    q += h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
  }
  return {phi, symmetrize(q)};
}

LinearSde LinearSde::block(Index offset, Index size) const {
  if (offset < 0 || size < 1 || offset + size > dim_) throw InvalidArgument("LinearSde::block: bad range");
  if (!isotropic()) {
    const bool aligned = (offset == 0 && size == obs_dim_) || (offset == obs_dim_ && size == dim_ - obs_dim_);
    if (!(separable_ && aligned) && !(offset == 0 && size == dim_))
      throw UnsupportedOperation("LinearSde::block: only separable blocks can be restricted");
  }
  LinearSde out = *this;
  out.dim_ = size;
  out.obs_dim_ = 0;
  out.block_offset_ = block_offset_ + offset;
  return out;
}

void Path::validate() const {
  if (states.rows() != grid.steps() + 1) throw InvalidArgument("Path: row count must equal grid length");
  if (!states.allFinite()) throw InvalidArgument("Path: non-finite state");
}

Gaussian exact_transition(const LinearSde& sde, const Vec& x, double s, double t) {
  if (x.size() != sde.dim()) throw InvalidArgument("exact_transition: dimension mismatch");
  if (!(s < t)) throw InvalidArgument("exact_transition: requires s < t");
  const auto [phi, q] = sde.transition(s, t);
  return Gaussian(phi * x, q);
}

Gaussian marginal_moments(const LinearSde& sde, const Gaussian& init, double t) {
  if (init.dim() != sde.dim()) throw InvalidArgument("marginal_moments: dimension mismatch");
  if (t < 0.0 || t > sde.horizon() * (1.0 + 1e-12)) throw InvalidArgument("marginal_moments: t outside [0, T]");
  if (t == 0.0) return init;
  const auto [phi, q] = sde.transition(0.0, t);
  return Gaussian(phi * init.mean, symmetrize(phi * init.cov * phi.transpose() + q));
}

Vec euler_step(const std::function<Vec(const Vec&, double)>& drift, double sigma, const Vec& x,
               double t, double dt, const RngStreamKey& key) {
  if (!(dt > 0.0)) throw InvalidArgument("euler_step: step must be positive");
  const Vec f = drift(x, t);
  if (f.size() != x.size()) throw InvalidArgument("euler_step: drift dimension mismatch");
  if (!f.allFinite()) throw NumericalFailure("euler_step: non-finite drift");
  Vec out = x + dt * f;
  if (sigma != 0.0) {
    Rng rng(key);
    out += sigma * std::sqrt(dt) * rng.normals(x.size());
  }
  return out;
}

Path simulate_forward(const LinearSde& sde, const Vec& x0, const TimeGrid& grid,
                      const RngStreamKey& key) {
  if (x0.size() != sde.dim()) throw InvalidArgument("simulate_forward: dimension mismatch");
  const int K = grid.steps();
  Path p{grid, Mat(K + 1, sde.dim())};
  p.states.row(0) = x0.transpose();
  Rng rng(key);
  Vec x = x0;
  for (int k = 1; k <= K; ++k) {
    const Vec z = rng.normals(sde.dim());
    if (sde.isotropic()) {
      const auto [phi, var] = sde.scalar_transition(grid[k - 1], grid[k]);
      x = phi * x + std::sqrt(var) * z;
    } else {
      const auto [phi, q] = sde.transition(grid[k - 1], grid[k]);
      x = phi * x + CovFactor(q).factor() * z;
    }
    p.states.row(k) = x.transpose();
  }
  return p;
}

Path simulate_forward(const GeneralSde& sde, const Vec& x0, const TimeGrid& grid,
                      const RngStreamKey& key) {
  if (x0.size() != sde.dim) throw InvalidArgument("simulate_forward: dimension mismatch");
  const int K = grid.steps();
  Path p{grid, Mat(K + 1, sde.dim)};
  p.states.row(0) = x0.transpose();
  Vec x = x0;
  for (int k = 1; k <= K; ++k) {
    x = euler_step(sde.drift, sde.dispersion(grid[k - 1]), x, grid[k - 1], grid.delta(k),
                   key.child(static_cast<std::uint64_t>(k)));
    p.states.row(k) = x.transpose();
  }
  return p;
}

Gaussian bridge_kernel(const LinearSde& sde, const Vec& x_next, const Vec& x0, double t_k,
                       double t_next) {
  if (!(t_k > 0.0) || !(t_next > t_k)) throw InvalidArgument("bridge_kernel: requires 0 < t_k < t_next");
  if (x_next.size() != sde.dim() || x0.size() != sde.dim())
    throw InvalidArgument("bridge_kernel: dimension mismatch");
  const auto [phi0k, q0k] = sde.transition(0.0, t_k);
  const auto [phik, qk] = sde.transition(t_k, t_next);
  // Joint of (X_k, X_next) given X_0 = x0, then condition on X_next.
  const Index d = sde.dim();
  Gaussian joint(Vec(2 * d), Mat(2 * d, 2 * d));
  joint.mean << phi0k * x0, phik * phi0k * x0;
  joint.cov.topLeftCorner(d, d) = q0k;
  joint.cov.topRightCorner(d, d) = q0k * phik.transpose();
  joint.cov.bottomLeftCorner(d, d) = phik * q0k;
  joint.cov.bottomRightCorner(d, d) = phik * q0k * phik.transpose() + qk;
  std::vector<Index> idx(static_cast<size_t>(d));
  for (Index i = 0; i < d; ++i) idx[static_cast<size_t>(i)] = d + i;
  return gaussian_condition(joint, idx, x_next);
}

Gaussian bridge_kernel(const GeneralSde&, const Vec&, const Vec&, double, double) {
  throw UnsupportedOperation("bridge_kernel: only linear SDEs admit exact bridges");
}

BridgePlan::BridgePlan(const LinearSde& sde, const TimeGrid& grid)
    : grid_(grid), sde_(sde), scalar_(sde.isotropic()) {
  if (grid.horizon() > sde.horizon() * (1.0 + 1e-12)) throw InvalidArgument("BridgePlan: grid exceeds horizon");
  const int K = grid.steps();
  const Index d = sde.dim();
  if (scalar_) {
    sa_.assign(static_cast<size_t>(K), 0.0);
    sb_ = sv_ = sa_;
    for (int k = 1; k < K; ++k) {
      const auto [p0k, q0k] = sde.scalar_transition(0.0, grid[k]);
      const auto [pk, qk] = sde.scalar_transition(grid[k], grid[k + 1]);
      const double q0n = pk * pk * q0k + qk;
      const double g = q0k * pk / q0n;
      sa_[static_cast<size_t>(k)] = p0k - g * pk * p0k;
      sb_[static_cast<size_t>(k)] = g;
      sv_[static_cast<size_t>(k)] = q0k - g * pk * q0k;
    }
    const auto [pe, qe] = sde.scalar_transition(0.0, grid.horizon());
    end_phi_ = pe;
    end_var_ = qe;
  } else {
    ma_.assign(static_cast<size_t>(K), Mat());
    mb_ = mv_ = mvf_ = ma_;
    for (int k = 1; k < K; ++k) {
      const auto [p0k, q0k] = sde.transition(0.0, grid[k]);
      const auto [pk, qk] = sde.transition(grid[k], grid[k + 1]);
      const Mat q0n = pk * q0k * pk.transpose() + qk;
      const Mat g = (spd_inverse(add_jitter(q0n)) * (pk * q0k)).transpose();
      const auto ks = static_cast<size_t>(k);
      ma_[ks] = p0k - g * pk * p0k;
      mb_[ks] = g;
      mv_[ks] = symmetrize(q0k - g * pk * q0k);
      mvf_[ks] = CovFactor(mv_[ks]).factor();
    }
    const auto [pe, qe] = sde.transition(0.0, grid.horizon());
    end_phi_m_ = pe;
    end_fac_m_ = CovFactor(qe).factor();
  }
  (void)d;
}

Mat BridgePlan::a(int k) const {
  if (k < 1 || k >= grid_.steps()) throw InvalidArgument("BridgePlan: index out of range");
  const Index d = sde_.dim();
  return scalar_ ? Mat(sa_[static_cast<size_t>(k)] * Mat::Identity(d, d)) : ma_[static_cast<size_t>(k)];
}

Mat BridgePlan::b(int k) const {
  if (k < 1 || k >= grid_.steps()) throw InvalidArgument("BridgePlan: index out of range");
  const Index d = sde_.dim();
  return scalar_ ? Mat(sb_[static_cast<size_t>(k)] * Mat::Identity(d, d)) : mb_[static_cast<size_t>(k)];
}

Mat BridgePlan::v(int k) const {
  if (k < 1 || k >= grid_.steps()) throw InvalidArgument("BridgePlan: index out of range");
  const Index d = sde_.dim();
  return scalar_ ? Mat(sv_[static_cast<size_t>(k)] * Mat::Identity(d, d)) : mv_[static_cast<size_t>(k)];
}

Gaussian BridgePlan::kernel(int k, const Vec& x_next, const Vec& x0) const {
  return Gaussian(a(k) * x0 + b(k) * x_next, v(k));
}

Vec BridgePlan::sample(int k, const Vec& x_next, const Vec& x0, const Vec& z) const {
  const auto ks = static_cast<size_t>(k);
  if (scalar_) return sa_[ks] * x0 + sb_[ks] * x_next + std::sqrt(sv_[ks]) * z;
  return ma_[ks] * x0 + mb_[ks] * x_next + mvf_[ks] * z;
}

Mat BridgePlan::sample_path(const Vec& x0, Rng& rng) const {
  const int K = grid_.steps();
  const Index d = sde_.dim();
  if (x0.size() != d) throw InvalidArgument("BridgePlan: dimension mismatch");
  Mat out(K + 1, d);
  out.row(0) = x0.transpose();
  Vec z = rng.normals(d);
  Vec x = scalar_ ? Vec(end_phi_ * x0 + std::sqrt(end_var_) * z) : Vec(end_phi_m_ * x0 + end_fac_m_ * z);
  out.row(K) = x.transpose();
  for (int k = K - 1; k >= 1; --k) {
    z = rng.normals(d);
    x = sample(k, x, x0, z);
    out.row(k) = x.transpose();
  }
  return out;
}

void write_path_csv(std::ostream& os, const Path& path) {
  path.validate();
  const int K = path.grid.steps();
  os << "# fbb-path K=" << K << " T=" << path.grid.horizon() << " d=" << path.states.cols() << "\n";
  os << "t";
  for (Index j = 0; j < path.states.cols(); ++j) os << ",x" << j;
  os << "\n";
  os.precision(17);
  for (int k = 0; k <= K; ++k) {
    os << path.grid[k];
    for (Index j = 0; j < path.states.cols(); ++j) os << "," << path.states(k, j);
    os << "\n";
  }
}

Path read_path_csv(std::istream& is) {
  std::string line;
  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line[0] == 't') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    bool first = true;
    while (std::getline(ss, cell, ',')) {
      if (first) {
        times.push_back(std::stod(cell));
        first = false;
      } else {
        row.push_back(std::stod(cell));
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw InvalidArgument("read_path_csv: ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidArgument("read_path_csv: no data rows");
  Path p{TimeGrid(times), Mat(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()))};
  for (size_t k = 0; k < rows.size(); ++k)
    for (size_t j = 0; j < rows[k].size(); ++j) p.states(static_cast<Index>(k), static_cast<Index>(j)) = rows[k][j];
  p.validate();
  return p;
}

namespace {
constexpr char kMagic[8] = {'F', 'B', 'B', 'P', 'A', 'T', 'H', '1'};
}

void write_path_binary(std::ostream& os, const Path& path) {
  path.validate();
  const std::int64_t K = path.grid.steps();
  const std::int64_t d = path.states.cols();
  os.write(kMagic, sizeof kMagic);
  os.write(reinterpret_cast<const char*>(&K), sizeof K);
  os.write(reinterpret_cast<const char*>(&d), sizeof d);
  os.write(reinterpret_cast<const char*>(path.grid.points().data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(K + 1)));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = path.states;
  os.write(reinterpret_cast<const char*>(rm.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(rm.size())));
}

Path read_path_binary(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw InvalidArgument("read_path_binary: bad header");
  std::int64_t K = 0, d = 0;
  is.read(reinterpret_cast<char*>(&K), sizeof K);
  is.read(reinterpret_cast<char*>(&d), sizeof d);
  if (!is || K < 1 || d < 1) throw InvalidArgument("read_path_binary: bad dimensions");
  std::vector<double> pts(static_cast<size_t>(K + 1));
  is.read(reinterpret_cast<char*>(pts.data()), static_cast<std::streamsize>(sizeof(double) * pts.size()));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(K + 1, d);
  is.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(rm.size())));
  if (!is) throw InvalidArgument("read_path_binary: truncated data");
  Path p{TimeGrid(std::move(pts)), Mat(rm)};
  p.validate();
  return p;
}

}  // namespace fbb
