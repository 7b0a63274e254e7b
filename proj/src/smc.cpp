#include "fbb/smc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fbb {

const char* to_string(ResamplingScheme scheme) {
  switch (scheme) {
    case ResamplingScheme::Multinomial: return "multinomial";
    case ResamplingScheme::Stratified: return "stratified";
    case ResamplingScheme::Killing: return "killing";
  }
  return "unknown";
}

ResamplingScheme resampling_from_string(const std::string& name) {
  if (name == "multinomial") return ResamplingScheme::Multinomial;
  if (name == "stratified") return ResamplingScheme::Stratified;
  if (name == "killing") return ResamplingScheme::Killing;
  throw InvalidArgument("unknown resampling scheme: " + name);
}

Vec normalize_log_weights(const Vec& logw, double& log_mean, int step) {
  const Index n = logw.size();
  if (n == 0) throw InvalidArgument("normalize_log_weights: empty weights");
  if (logw.hasNaN()) throw WeightDegeneracy("NaN log weight", step);
  const double m = logw.maxCoeff();
  if (!std::isfinite(m)) throw WeightDegeneracy("no finite positive weight", step);
  Vec w = (logw.array() - m).exp().matrix();
  const double s = w.sum();
  log_mean = m + std::log(s) - std::log(static_cast<double>(n));
  return w / s;
}

namespace {

void check_weights(const Vec& w) {
  if (w.size() == 0) throw InvalidArgument("resample: empty weights");
  if (w.hasNaN() || (w.array() < 0.0).any()) throw WeightDegeneracy("negative or NaN weight", -1);
  const double s = w.sum();
  if (!(s > 0.0) || !std::isfinite(s)) throw WeightDegeneracy("weights sum to zero", -1);
}

Vec cumulative(const Vec& w) {
  Vec c(w.size());
  std::partial_sum(w.begin(), w.end(), c.begin());
  c /= c(c.size() - 1);
  return c;
}

Index search(const Vec& cum, double u) {
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  const auto i = static_cast<Index>(it - cum.begin());
  return std::min(i, cum.size() - 1);
}

Index categorical(const Vec& cum, Rng& rng) { return search(cum, rng.uniform()); }

}  // namespace

std::vector<Index> resample(const Vec& weights, ResamplingScheme scheme, Rng& rng) {
  check_weights(weights);
  const Index n = weights.size();
  const Vec cum = cumulative(weights);
  std::vector<Index> a(static_cast<size_t>(n));
  switch (scheme) {
    case ResamplingScheme::Multinomial:
      for (auto& x : a) x = categorical(cum, rng);
      break;
    case ResamplingScheme::Stratified: {
      Index j = 0;
      for (Index i = 0; i < n; ++i) {
        const double u = (static_cast<double>(i) + rng.uniform()) / static_cast<double>(n);
        while (j < n - 1 && cum(j) <= u) ++j;
        a[static_cast<size_t>(i)] = j;
      }
      break;
    }
    case ResamplingScheme::Killing: {
      const double wmax = weights.maxCoeff();
      for (Index i = 0; i < n; ++i)
        a[static_cast<size_t>(i)] = rng.uniform() < weights(i) / wmax ? i : categorical(cum, rng);
      break;
    }
  }
  return a;
}

std::vector<Index> resample(const Vec& weights, ResamplingScheme scheme, const RngStreamKey& key) {
  Rng rng(key);
  return resample(weights, scheme, rng);
}

ConditionalResample conditional_resample(const Vec& weights, Index reference_index, ResamplingScheme scheme,
                                         Rng& rng) {
  check_weights(weights);
  const Index n = weights.size();
  if (reference_index < 0 || reference_index >= n)
    throw InvalidArgument("conditional_resample: reference index out of range");
  const Vec cum = cumulative(weights);
  ConditionalResample out;
  out.ancestors.resize(static_cast<size_t>(n));
  switch (scheme) {
    case ResamplingScheme::Multinomial:
      out.slot = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
      for (Index i = 0; i < n; ++i) out.ancestors[static_cast<size_t>(i)] = categorical(cum, rng);
      break;
    case ResamplingScheme::Killing: {
      // P(slot = j) is proportional to P(A_j = ref) under unconditional killing.
      const Vec w = weights / weights.sum();
      const double wmax = w.maxCoeff();
      Vec p = (1.0 - w.array() / wmax).matrix();
      p(reference_index) += 1.0 / wmax;
      out.slot = categorical(cumulative(p), rng);
      for (Index i = 0; i < n; ++i)
        out.ancestors[static_cast<size_t>(i)] = rng.uniform() < w(i) / wmax ? i : categorical(cum, rng);
      break;
    }
    case ResamplingScheme::Stratified:
      throw UnsupportedOperation("conditional_resample: stratified resampling is not valid in the conditional filter");
  }
  out.ancestors[static_cast<size_t>(out.slot)] = reference_index;
  return out;
}

namespace {

std::vector<Vec> columns(const Mat& v) {
  std::vector<Vec> c;
  c.reserve(static_cast<size_t>(v.cols()));
  for (Index k = 0; k < v.cols(); ++k) c.emplace_back(v.col(k));
  return c;
}

Mat gather(const Mat& u, const std::vector<Index>& a) {
  Mat out(u.rows(), static_cast<Index>(a.size()));
  for (size_t i = 0; i < a.size(); ++i) out.col(static_cast<Index>(i)) = u.col(a[i]);
  return out;
}

class PlainDynamics {
public:
  PlainDynamics(const ReverseModel& m, const Mat& v) : m_(m), v_(columns(v)) {}

  double init_log_const() const { return 0.0; }
  Mat init(const Mat& z) const {
    return m_.reference.sample_u_given(v_[0], Vec::Zero(m_.dv), Mat::Zero(m_.du, z.cols()), z);
  }
  Vec log_potential(int k, const Mat& u) const {
    const auto ks = static_cast<size_t>(k);
    return m_.kernels[ks].log_bv(v_[ks + 1], v_[ks], u);
  }
  Mat propagate(int k, const Mat& u, const Mat& z) const {
    const auto ks = static_cast<size_t>(k);
    return m_.kernels[ks].sample_u_given(v_[ks + 1], v_[ks], u, z);
  }

private:
  const ReverseModel& m_;
  std::vector<Vec> v_;
};

class TwistedDynamics {
public:
  TwistedDynamics(const TwistedModel& m, const Mat& v) : m_(m), v_(columns(v)) {
    const Index dv = m.base.dv, du = m.base.du;
    e0_ = m.base.reference.mean_u_given(v_[0], Vec::Zero(dv), Mat::Zero(du, 1)).col(0);
    for (int k = 0; k < m.base.steps(); ++k) {
      const auto ks = static_cast<size_t>(k);
      e_.push_back(m.base.kernels[ks].mean_u_given(v_[ks + 1], v_[ks], Mat::Zero(du, 1)).col(0));
    }
  }

  double init_log_const() const {
    if (!m_.twisted) return 0.0;
    return m_.init.pred_cov.log_density(m_.init.pred_shift - m_.init.pred_e.apply(e0_));
  }
  Mat init(const Mat& z) const {
    if (!m_.twisted)
      return m_.base.reference.sample_u_given(v_[0], Vec::Zero(m_.base.dv), Mat::Zero(m_.base.du, z.cols()), z);
    const Vec mean = m_.init.post_e.apply(e0_) + m_.init.post_shift;
    Mat out(mean.size(), z.cols());
    out.colwise() = mean;
    m_.init.post_cov.add_noise(z, out);
    return out;
  }
  Vec log_potential(int k, const Mat& u) const {
    const auto ks = static_cast<size_t>(k);
    Vec lw = m_.base.kernels[ks].log_bv(v_[ks + 1], v_[ks], u);
    if (!m_.twisted) return lw;
    const TwistedStep& st = m_.steps[ks];
    const Vec base = st.pred_shift - st.pred_e.apply(e_[ks]);
    Mat r(base.size(), u.cols());
    r.colwise() = base;
    r -= st.pred_map.apply(u);
    Mat rt(m_.twist_shift[ks].size(), u.cols());
    rt.colwise() = m_.twist_shift[ks];
    rt -= m_.twist_h[ks].apply(u);
    return lw + st.pred_cov.log_density_cols(r) - m_.twist_cov[ks].log_density_cols(rt);
  }
  Mat propagate(int k, const Mat& u, const Mat& z) const {
    const auto ks = static_cast<size_t>(k);
    if (!m_.twisted) return m_.base.kernels[ks].sample_u_given(v_[ks + 1], v_[ks], u, z);
    const TwistedStep& st = m_.steps[ks];
    const Vec base = st.post_e.apply(e_[ks]) + st.post_shift;
    Mat out(base.size(), u.cols());
    out.colwise() = base;
    st.post_map.apply_add(u, out);
    st.post_cov.add_noise(z, out);
    return out;
  }

private:
  const TwistedModel& m_;
  std::vector<Vec> v_;
  Vec e0_;
  std::vector<Vec> e_;
};

struct EngineSettings {
  int n = 2;
  ResamplingScheme scheme = ResamplingScheme::Stratified;
  const Mat* reference = nullptr;
  const Vec* fixed_u0 = nullptr;
  bool keep_history = false;
};

// Shared filter loop. The last potential is not resampled on: particles at K
// inherit their parent's weight and one index is drawn from those weights.
template <class Dyn>
FilterResult run_filter(const Dyn& dyn, int K, Index du, Rng& rng, const EngineSettings& s) {
  const int n = s.n;
  if (n < 2) throw InvalidArgument("particle filter needs at least 2 particles");
  std::vector<Mat> states(static_cast<size_t>(K) + 1);
  std::vector<std::vector<Index>> anc(static_cast<size_t>(K) + 1);
  FilterResult res;
  Mat u = s.fixed_u0 != nullptr ? Mat(s.fixed_u0->replicate(1, n)) : dyn.init(rng.normals(du, n));
  Index slot = 0;
  if (s.reference != nullptr) {
    slot = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    u.col(slot) = s.reference->col(0);
  }
  double log_z = dyn.init_log_const();
  Vec w_last;
  std::vector<Index> identity(static_cast<size_t>(n));
  std::iota(identity.begin(), identity.end(), Index{0});
  for (int k = 0; k < K; ++k) {
    const auto ks = static_cast<size_t>(k);
    double lm = 0.0;
    const Vec w = normalize_log_weights(dyn.log_potential(k, u), lm, k);
    log_z += lm;
    std::vector<Index> a;
    if (k + 1 < K) {
      if (s.reference != nullptr) {
        ConditionalResample cr = conditional_resample(w, slot, s.scheme, rng);
        a = std::move(cr.ancestors);
        slot = cr.slot;
      } else {
        a = resample(w, s.scheme, rng);
      }
    } else {
      a = identity;
      w_last = w;
    }
    if (s.keep_history)
      res.history.push_back({u, w.array().log().matrix(), k == 0 ? identity : anc[ks], log_z});
    Mat next = dyn.propagate(k, gather(u, a), rng.normals(du, n));
    if (s.reference != nullptr) next.col(slot) = s.reference->col(k + 1);
    states[ks] = std::move(u);
    u = std::move(next);
    anc[ks + 1] = std::move(a);
  }
  if (s.keep_history)
    res.history.push_back({u, Vec::Zero(n), K == 0 ? identity : anc[static_cast<size_t>(K)], log_z});
  states[static_cast<size_t>(K)] = std::move(u);
  Index b = 0;
  if (K == 0)
    b = s.reference != nullptr ? slot : static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  else
    b = categorical(cumulative(w_last), rng);
  res.path.resize(du, K + 1);
  for (int k = K; k >= 0; --k) {
    const auto ks = static_cast<size_t>(k);
    res.path.col(k) = states[ks].col(b);
    if (k > 0) b = anc[ks][static_cast<size_t>(b)];
  }
  res.log_z = log_z;
  return res;
}

void check_path(const ReverseModel& m, const Mat& v) {
  m.validate();
  if (v.rows() != m.dv || v.cols() != m.steps() + 1)
    throw InvalidArgument("filter: observation path must be dv x (K+1)");
}

}  // namespace

FilterResult particle_filter(const ReverseModel& model, const Mat& v, int n_particles, Rng& rng,
                             const FilterOptions& options) {
  check_path(model, v);
  if (options.fixed_u0 != nullptr && options.fixed_u0->size() != model.du)
    throw InvalidArgument("particle_filter: fixed u0 dimension mismatch");
  const PlainDynamics dyn(model, v);
  EngineSettings s{n_particles, options.scheme, nullptr, options.fixed_u0, options.keep_history};
  return run_filter(dyn, model.steps(), model.du, rng, s);
}

FilterResult csmc_kernel(const ReverseModel& model, const Mat& v, const Mat& reference, int n_particles,
                         Rng& rng, const CsmcOptions& options) {
  check_path(model, v);
  if (reference.rows() != model.du || reference.cols() != model.steps() + 1)
    throw InvalidArgument("csmc_kernel: reference trajectory must be du x (K+1)");
  if (options.scheme == ResamplingScheme::Stratified)
    throw UnsupportedOperation("csmc_kernel: stratified resampling is not valid in the conditional filter");
  const PlainDynamics dyn(model, v);
  const Vec u0 = reference.col(0);
  EngineSettings s{n_particles, options.scheme, &reference, options.fixed_u0 ? &u0 : nullptr,
                   options.keep_history};
  return run_filter(dyn, model.steps(), model.du, rng, s);
}

FilterResult twisted_particle_filter(const TwistedModel& model, const Mat& v, int n_particles, Rng& rng,
                                     const FilterOptions& options) {
  check_path(model.base, v);
  if (static_cast<int>(model.steps.size()) != model.base.steps())
    throw InvalidArgument("twisted_particle_filter: inconsistent twisted model");
  const TwistedDynamics dyn(model, v);
  EngineSettings s{n_particles, options.scheme, nullptr, nullptr, options.keep_history};
  return run_filter(dyn, model.base.steps(), model.base.du, rng, s);
}

Mat coalescence_profile(const std::vector<ParticleEnsemble>& history) {
  if (history.empty()) throw InvalidArgument("coalescence_profile: empty history");
  const Index d = history.front().states.rows();
  Mat out(static_cast<Index>(history.size()), d);
  for (size_t k = 0; k < history.size(); ++k) {
    const Mat& s = history[k].states;
    if (s.rows() != d) throw InvalidArgument("coalescence_profile: inconsistent dimensions");
    const Index n = s.cols();
    const Vec mean = s.rowwise().mean();
    const Vec var = n > 1 ? Vec(((s.colwise() - mean).array().square().rowwise().sum() / static_cast<double>(n - 1))
                                    .matrix())
                          : Vec::Zero(d);
    out.row(static_cast<Index>(k)) = 2.0 * var.array().sqrt().matrix().transpose();
  }
  return out;
}

}  // namespace fbb
