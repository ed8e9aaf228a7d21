#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "stochsplit/numerics.hpp"
#include "stochsplit/stats.hpp"

namespace stochsplit {

namespace {

constexpr double kTheta13 = 5.371920351148152;

constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
    1323241920.0,        40840800.0,          960960.0,           16380.0,
    182.0,               1.0};

bool is_diagonal(const ComplexMatrix& m) noexcept {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (i != j && m(i, j) != cplx{0.0, 0.0}) return false;
  return true;
}

}  // namespace

bool all_finite(const ComplexMatrix& m) noexcept {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (!std::isfinite(m(i, j).real()) || !std::isfinite(m(i, j).imag())) return false;
  return true;
}

double max_abs(const ComplexMatrix& m) noexcept {
  double r = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) r = std::max(r, std::abs(m(i, j)));
  return r;
}

ComplexMatrix commutator(const ComplexMatrix& m1, const ComplexMatrix& m2) {
  return m1 * m2 - m2 * m1;
}

ComplexMatrix mat_exp(const ComplexMatrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("mat_exp: matrix must be square");
  if (m.rows() > kMaxMatExpDim) throw std::invalid_argument("mat_exp: dimension exceeds 64");
  if (!all_finite(m)) throw std::invalid_argument("mat_exp: non-finite input");
  const Eigen::Index d = m.rows();
  if (d == 0) return m;

  if (is_diagonal(m)) {
    ComplexMatrix out = ComplexMatrix::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i) out(i, i) = std::exp(m(i, i));
    return out;
  }

  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > kTheta13) squarings = static_cast<int>(std::ceil(std::log2(norm1 / kTheta13)));
  const ComplexMatrix a = m / std::ldexp(1.0, squarings);

  const ComplexMatrix id = ComplexMatrix::Identity(d, d);
  const ComplexMatrix a2 = a * a;
  const ComplexMatrix a4 = a2 * a2;
  const ComplexMatrix a6 = a4 * a2;
  const auto& b = kPade13;

  const ComplexMatrix u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
                                b[3] * a2 + b[1] * id;
  const ComplexMatrix u = a * u_inner;
  const ComplexMatrix v =
      a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;

  ComplexMatrix r = (v - u).partialPivLu().solve(v + u);
  for (int s = 0; s < squarings; ++s) r = r * r;
  if (!all_finite(r)) throw std::overflow_error("mat_exp: result overflowed");
  return r;
}

double quad_trapezoid(std::span<const double> samples, double spacing) {
  if (samples.size() < 2) throw std::invalid_argument("quad_trapezoid: need at least two points");
  std::vector<double> w(samples.begin(), samples.end());
  w.front() *= 0.5;
  w.back() *= 0.5;
  return pairwise_sum(w) * spacing;
}

}  // namespace stochsplit
