#pragma once

#include "fbb/linear_op.hpp"
#include "fbb/rng.hpp"

namespace fbb {

// Affine Gaussian transition on a state split as z = (v, u):
//   v' ~ N(a_vv v + a_vu u + c_v, S_v)
//   u' | v' ~ N(a_uv v + a_uu u + c_u + L (v' - mean_v), S_u)
// With zero maps it doubles as a plain Gaussian over (v, u).
struct BlockKernel {
  Index dv = 0;
  Index du = 0;
  LinearOp a_vv, a_vu, a_uv, a_uu;
  Vec c_v, c_u;
  CovOp s_v;
  LinearOp gain;
  CovOp s_u;

  // Full joint map z' ~ N(M z + c, S) with M, S over (v, u) ordering.
  static BlockKernel from_dense(Index dv, const Mat& M, const Vec& c, const Mat& S);
  // Zero-input kernel, i.e. a Gaussian law over (v, u).
  static BlockKernel from_gaussian(Index dv, const Gaussian& g);

  // Mean of v' for each particle column of u (v shared across particles).
  Mat mean_v(const Vec& v, const Mat& u) const;
  // log b^V(v_next | v, u) per particle column.
  Vec log_bv(const Vec& v_next, const Vec& v, const Mat& u) const;
  // Conditional mean of u' given v' for each particle column.
  Mat mean_u_given(const Vec& v_next, const Vec& v, const Mat& u) const;
  Mat sample_u_given(const Vec& v_next, const Vec& v, const Mat& u, const Mat& z) const;
  Vec log_bu_given(const Vec& v_next, const Vec& v, const Mat& u, const Mat& u_next) const;

  // Joint draw of (v', u'); z holds dv + du standard normals.
  Vec sample(const Vec& v, const Vec& u, const Vec& z) const;
  double log_density(const Vec& v, const Vec& u, const Vec& v_next, const Vec& u_next) const;

  Mat dense_map() const;
  Vec dense_offset() const;
  Mat dense_cov() const;
};

}  // namespace fbb
