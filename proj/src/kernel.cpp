#include "fbb/kernel.hpp"

namespace fbb {

BlockKernel BlockKernel::from_dense(Index dv, const Mat& M, const Vec& c, const Mat& S) {
  const Index D = M.rows();
  if (M.cols() != D || c.size() != D || S.rows() != D || S.cols() != D)
    throw InvalidArgument("BlockKernel: inconsistent dense dimensions");
  if (dv < 0 || dv > D) throw InvalidArgument("BlockKernel: bad block split");
  const Index du = D - dv;
  BlockKernel k;
  k.dv = dv;
  k.du = du;
  k.a_vv = LinearOp::from_dense(M.topLeftCorner(dv, dv));
  k.a_vu = LinearOp::from_dense(M.topRightCorner(dv, du));
  k.a_uv = LinearOp::from_dense(M.bottomLeftCorner(du, dv));
  k.a_uu = LinearOp::from_dense(M.bottomRightCorner(du, du));
  k.c_v = c.head(dv);
  k.c_u = c.tail(du);
  const Mat svv = symmetrize(S.topLeftCorner(dv, dv));
  const Mat suv = S.bottomLeftCorner(du, dv);
  const Mat suu = symmetrize(S.bottomRightCorner(du, du));
  k.s_v = CovOp::from_dense(svv);
  if (dv > 0 && du > 0 && suv.cwiseAbs().maxCoeff() > 0.0) {
    const Mat g = spd_inverse(add_jitter(svv)) * suv.transpose();
    const Mat l = g.transpose();
    k.gain = LinearOp::from_dense(l);
    k.s_u = CovOp::from_dense(symmetrize(suu - l * suv.transpose()));
  } else {
    k.gain = LinearOp::zero(du, dv);
    k.s_u = CovOp::from_dense(suu);
  }
  return k;
}

BlockKernel BlockKernel::from_gaussian(Index dv, const Gaussian& g) {
  const Index D = g.dim();
  return from_dense(dv, Mat::Zero(D, D), g.mean, g.cov);
}

Mat BlockKernel::mean_v(const Vec& v, const Mat& u) const {
  Mat out(dv, u.cols());
  const Vec base = a_vv.apply(v) + c_v;
  out.colwise() = base;
  a_vu.apply_add(u, out);
  return out;
}

Vec BlockKernel::log_bv(const Vec& v_next, const Vec& v, const Mat& u) const {
  Mat r = mean_v(v, u);
  r = (-r).colwise() + v_next;
  return s_v.log_density_cols(r);
}

Mat BlockKernel::mean_u_given(const Vec& v_next, const Vec& v, const Mat& u) const {
  Mat out(du, u.cols());
  const Vec base = a_uv.apply(v) + c_u;
  out.colwise() = base;
  a_uu.apply_add(u, out);
  if (gain.kind() != LinearOp::Kind::Zero) {
    Mat r = mean_v(v, u);
    r = (-r).colwise() + v_next;
    gain.apply_add(r, out);
  }
  return out;
}

Mat BlockKernel::sample_u_given(const Vec& v_next, const Vec& v, const Mat& u, const Mat& z) const {
  Mat out = mean_u_given(v_next, v, u);
  s_u.add_noise(z, out);
  return out;
}

Vec BlockKernel::log_bu_given(const Vec& v_next, const Vec& v, const Mat& u, const Mat& u_next) const {
  return s_u.log_density_cols(u_next - mean_u_given(v_next, v, u));
}

Vec BlockKernel::sample(const Vec& v, const Vec& u, const Vec& z) const {
  if (z.size() != dv + du) throw InvalidArgument("BlockKernel::sample: noise size mismatch");
  Mat vn = mean_v(v, u);
  s_v.add_noise(z.head(dv), vn);
  const Vec v_next = vn.col(0);
  const Mat un = sample_u_given(v_next, v, u, z.tail(du));
  Vec out(dv + du);
  out << v_next, un.col(0);
  return out;
}

double BlockKernel::log_density(const Vec& v, const Vec& u, const Vec& v_next,
                                const Vec& u_next) const {
  return log_bv(v_next, v, u)(0) + log_bu_given(v_next, v, u, u_next)(0);
}

Mat BlockKernel::dense_map() const {
  Mat m(dv + du, dv + du);
  m << a_vv.to_dense(), a_vu.to_dense(), a_uv.to_dense(), a_uu.to_dense();
  // u' = ... + L (v' - mean_v) contributes nothing to the mean map.
  return m;
}

Vec BlockKernel::dense_offset() const {
  Vec c(dv + du);
  c << c_v, c_u;
  return c;
}

Mat BlockKernel::dense_cov() const {
  const Mat svv = s_v.to_dense();
  const Mat l = gain.to_dense();
  Mat s(dv + du, dv + du);
  s.topLeftCorner(dv, dv) = svv;
  s.bottomLeftCorner(du, dv) = l * svv;
  s.topRightCorner(dv, du) = (l * svv).transpose();
  s.bottomRightCorner(du, du) = s_u.to_dense() + l * svv * l.transpose();
  return s;
}

}  // namespace fbb
