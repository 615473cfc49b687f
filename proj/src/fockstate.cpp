#include "tofsense/fockstate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "tofsense/constants.hpp"
#include "tofsense/errors.hpp"

namespace tofsense {

namespace {

struct GaussLegendre {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

GaussLegendre make_gauss_legendre(int order) {
  GaussLegendre gl;
  gl.nodes.resize(order);
  gl.weights.resize(order);
  for (int i = 0; i < (order + 1) / 2; ++i) {
    double x = std::cos(pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= order; ++k) {
        const double pk = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = order * (x * p1 - p0) / (x * x - 1);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= order; ++k) {
      const double pk = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
      p0 = p1;
      p1 = pk;
    }
    dp = order * (x * p1 - p0) / (x * x - 1);
    const double w = 2.0 / ((1 - x * x) * dp * dp);
    gl.nodes[i] = -x;
    gl.nodes[order - 1 - i] = x;
    gl.weights[i] = w;
    gl.weights[order - 1 - i] = w;
  }
  return gl;
}

const GaussLegendre& gauss_legendre(int order) {
  static std::mutex mutex;
  static std::map<int, GaussLegendre> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, make_gauss_legendre(order)).first;
  return it->second;
}

CMatrix annihilation(int dim) {
  CMatrix a = CMatrix::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

double max_abs(const CMatrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

double Frame::z_zpf() const { return std::sqrt(hbar / (2 * mass * omega)); }
double Frame::p_zpf() const { return std::sqrt(hbar * mass * omega / 2); }

Quadratures to_quadratures(const GaussianState& state, const Frame& frame) {
  if (!(frame.mass > 0) || !(frame.omega > 0)) throw ParameterError("frame needs positive mass and frequency");
  const Vec2 scale(1.0 / frame.z_zpf(), 1.0 / frame.p_zpf());
  Quadratures q;
  q.mean = scale.cwiseProduct(state.mean);
  q.cov = scale.asDiagonal() * state.cov * scale.asDiagonal();
  return q;
}

// ---------------------------------------------------------------------------
// DensityMatrix

DensityMatrix::DensityMatrix(CMatrix rho) : rho_(std::move(rho)) {
  if (rho_.rows() != rho_.cols() || rho_.rows() == 0) throw ParameterError("density matrix must be square and non-empty");
  const double herm = max_abs(rho_ - rho_.adjoint());
  if (herm > tolerance) throw ParameterError("density matrix not Hermitian (deviation " + std::to_string(herm) + ")");
  const double tr = rho_.trace().real();
  if (std::abs(tr - 1.0) > tolerance) throw ParameterError("density matrix trace " + std::to_string(tr) + " != 1");
  const double lmin = min_eigenvalue();
  if (lmin < -tolerance) throw ParameterError("density matrix not positive (min eigenvalue " + std::to_string(lmin) + ")");
}

DensityMatrix DensityMatrix::from_trusted(CMatrix rho) {
  CMatrix h = 0.5 * (rho + rho.adjoint());
  const double tr = h.trace().real();
  if (!(tr > 0) || !std::isfinite(tr)) throw ParameterError("density matrix has non-positive trace");
  h /= tr;
  return DensityMatrix(std::move(h), Trusted{});
}

DensityMatrix DensityMatrix::maximally_mixed(int dim) {
  if (dim < 1) throw ParameterError("dimension must be >= 1");
  return DensityMatrix(CMatrix::Identity(dim, dim) / static_cast<double>(dim), Trusted{});
}

DensityMatrix DensityMatrix::fock(int n, int dim) {
  if (n < 0 || n >= dim) throw ParameterError("Fock index outside truncation");
  CMatrix r = CMatrix::Zero(dim, dim);
  r(n, n) = 1.0;
  return DensityMatrix(std::move(r), Trusted{});
}

DensityMatrix DensityMatrix::thermal(double occupation, int dim) {
  if (!(occupation >= 0)) throw ParameterError("occupation must be >= 0");
  CMatrix r = CMatrix::Zero(dim, dim);
  const double ratio = occupation / (occupation + 1);
  double p = 1.0 / (occupation + 1);
  for (int k = 0; k < dim; ++k, p *= ratio) r(k, k) = p;
  return from_trusted(std::move(r));
}

double DensityMatrix::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(rho_, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double WignerGrid::integral() const {
  if (z_axis.size() < 2 || p_axis.size() < 2) return 0.0;
  const double dz = (z_axis.back() - z_axis.front()) / static_cast<double>(z_axis.size() - 1);
  const double dp = (p_axis.back() - p_axis.front()) / static_cast<double>(p_axis.size() - 1);
  return values.sum() * dz * dp;
}

// ---------------------------------------------------------------------------
// Special functions

void oscillator_functions(double x, std::span<double> out) {
  if (out.empty()) return;
  // psi_{m+1} = x psi_m / sqrt(m+1) - sqrt(m/(m+1)) psi_{m-1}, carried with a
  // running log-scale so that the Gaussian envelope never underflows early.
  double log_scale = -0.25 * x * x - 0.25 * std::log(2 * pi);
  double prev = 0.0;
  double cur = 1.0;
  std::vector<double> scale_at(out.size());
  out[0] = cur;
  scale_at[0] = log_scale;
  for (std::size_t m = 0; m + 1 < out.size(); ++m) {
    const double md = static_cast<double>(m);
    const double next = x * cur / std::sqrt(md + 1) - std::sqrt(md / (md + 1)) * prev;
    prev = cur;
    cur = next;
    if (std::abs(cur) > 1e150) {
      prev *= 1e-150;
      cur *= 1e-150;
      log_scale += 150 * std::log(10.0);
    }
    out[m + 1] = cur;
    scale_at[m + 1] = log_scale;
  }
  for (std::size_t m = 0; m < out.size(); ++m) out[m] = out[m] * std::exp(scale_at[m]);
}

Complex quadrature_overlap(int m, double x, double phase) {
  if (m < 0) throw ParameterError("Fock index must be >= 0");
  std::vector<double> psi(m + 1);
  oscillator_functions(x, psi);
  return std::polar(psi[m], m * (phase + pi / 2));
}

void laguerre_functions(int delta, double x, std::span<double> out) {
  if (out.empty()) return;
  if (x <= 0) {
    // Only f_l(0) with delta = 0 survives: L_l^0(0) = 1.
    std::fill(out.begin(), out.end(), delta == 0 ? 1.0 : 0.0);
    return;
  }
  const double d = delta;
  double log_scale = 0.5 * d * std::log(x) - 0.5 * x - 0.5 * std::lgamma(d + 1);
  std::vector<double> scale_at(out.size());
  double prev = 0.0;
  double cur = 1.0;
  out[0] = cur;
  scale_at[0] = log_scale;
  for (std::size_t l = 0; l + 1 < out.size(); ++l) {
    const double ld = static_cast<double>(l);
    const double next =
        ((2 * ld + 1 + d - x) * cur - std::sqrt(ld * (ld + d)) * prev) / std::sqrt((ld + 1) * (ld + 1 + d));
    prev = cur;
    cur = next;
    if (std::abs(cur) > 1e150) {
      prev *= 1e-150;
      cur *= 1e-150;
      log_scale += 150 * std::log(10.0);
    }
    out[l + 1] = cur;
    scale_at[l + 1] = log_scale;
  }
  for (std::size_t l = 0; l < out.size(); ++l) out[l] = out[l] * std::exp(scale_at[l]);
}

// ---------------------------------------------------------------------------
// Projectors and marginals

RMatrix bin_overlap(double lo, double hi, int dim, int order, int panels) {
  if (!(hi > lo)) throw ParameterError("bin must have positive width");
  const GaussLegendre& gl = gauss_legendre(order);
  RMatrix q = RMatrix::Zero(dim, dim);
  Eigen::VectorXd psi(dim);
  const double h = (hi - lo) / panels;
  for (int s = 0; s < panels; ++s) {
    const double a = lo + s * h;
    const double half = 0.5 * h;
    const double mid = a + half;
    for (int k = 0; k < order; ++k) {
      oscillator_functions(mid + half * gl.nodes[k], std::span<double>(psi.data(), dim));
      q.selfadjointView<Eigen::Lower>().rankUpdate(psi, half * gl.weights[k]);
    }
  }
  q.triangularView<Eigen::StrictlyUpper>() = q.transpose();
  return q;
}

int bin_quadrature_order(double lo, double hi, int dim) {
  int order = 16;
  RMatrix q = bin_overlap(lo, hi, dim, order);
  while (order < 512) {
    RMatrix q2 = bin_overlap(lo, hi, dim, 2 * order);
    if ((q2 - q).cwiseAbs().maxCoeff() <= 1e-10) return order;
    order *= 2;
    q = std::move(q2);
  }
  return order;
}

CMatrix bin_projector(const QuadratureBin& bin, int n_max) {
  if (!(bin.width > 0)) throw ParameterError("bin width must be positive");
  if (n_max < 0) throw ParameterError("n_max must be >= 0");
  const int dim = n_max + 1;
  const double lo = bin.center - bin.width / 2;
  const double hi = bin.center + bin.width / 2;
  const RMatrix q = bin_overlap(lo, hi, dim, bin_quadrature_order(lo, hi, dim));
  CMatrix p(dim, dim);
  const double psi = bin.phase + pi / 2;
  for (int m = 0; m < dim; ++m)
    for (int n = 0; n < dim; ++n) p(m, n) = std::polar(q(m, n), (m - n) * psi);
  return p;
}

std::vector<double> quadrature_pdf(const DensityMatrix& rho, double phase, std::span<const double> grid) {
  const int dim = rho.dim();
  const CMatrix& r = rho.matrix();
  std::vector<double> out(grid.size());
  Eigen::VectorXd psi(dim);
  Eigen::VectorXcd c(dim);
  const double shift = phase + pi / 2;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    oscillator_functions(grid[i], std::span<double>(psi.data(), dim));
    for (int m = 0; m < dim; ++m) c(m) = std::polar(psi(m), m * shift);
    const double v = (c.adjoint() * r * c)(0, 0).real();
    out[i] = std::max(v, 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Wigner function

double wigner_at(const DensityMatrix& rho, double z1, double p1) {
  const int dim = rho.dim();
  const CMatrix& r = rho.matrix();
  const double x = z1 * z1 + p1 * p1;  // 4 |alpha|^2
  const double lambda = std::atan2(p1, z1);
  std::vector<double> f(dim);
  double sum = 0.0;
  for (int delta = 0; delta < dim; ++delta) {
    const int count = dim - delta;
    laguerre_functions(delta, x, std::span<double>(f.data(), count));
    const Complex rot = std::polar(1.0, -lambda * delta);
    for (int l = 0; l < count; ++l) {
      const double sign = (l % 2 == 0) ? 1.0 : -1.0;
      if (delta == 0) {
        sum += sign * r(l, l).real() * f[l];
      } else {
        // rho_{l+delta, l} e^{-i lambda delta} plus its conjugate partner.
        sum += 2.0 * sign * (r(l + delta, l) * rot).real() * f[l];
      }
    }
  }
  return sum / (2 * pi);
}

WignerGrid wigner(const DensityMatrix& rho, std::span<const double> z_axis, std::span<const double> p_axis) {
  WignerGrid grid;
  grid.z_axis.assign(z_axis.begin(), z_axis.end());
  grid.p_axis.assign(p_axis.begin(), p_axis.end());
  grid.values.resize(static_cast<Eigen::Index>(z_axis.size()), static_cast<Eigen::Index>(p_axis.size()));
  for (std::size_t i = 0; i < z_axis.size(); ++i)
    for (std::size_t j = 0; j < p_axis.size(); ++j) grid.values(i, j) = wigner_at(rho, z_axis[i], p_axis[j]);
  return grid;
}

// ---------------------------------------------------------------------------
// Gaussian embedding and moments

DensityMatrix gaussian_to_density(const Quadratures& q, int n_max) {
  if (n_max < 0) throw ParameterError("n_max must be >= 0");
  const Mat2 cov = 0.5 * (q.cov + q.cov.transpose());
  Eigen::SelfAdjointEigenSolver<Mat2> es(cov);
  const double l_small = es.eigenvalues()(0);
  const double l_large = es.eigenvalues()(1);
  if (!(l_small > 0)) throw ParameterError("covariance is not positive definite");
  const double kappa = std::sqrt(l_small * l_large);
  if (kappa < 1.0 - 1e-9) throw ParameterError("covariance violates the uncertainty relation (det < 1)");
  const double occupation = std::max(0.0, (kappa - 1.0) / 2.0);
  const double r = 0.25 * std::log(l_large / l_small);
  const Vec2 axis = es.eigenvectors().col(0);  // squeezed direction
  const double beta = std::atan2(axis(1), axis(0));

  const int dim = n_max + 1;
  const int big = std::max(2 * dim, dim + 60);
  const CMatrix a = annihilation(big);
  const CMatrix ad = a.adjoint();

  CMatrix state = DensityMatrix::thermal(occupation, big).matrix();
  if (r > 0) {
    const CMatrix gen = 0.5 * r * (a * a - ad * ad);
    const CMatrix s = gen.exp();
    state = s * state * s.adjoint();
  }
  // U = exp(i beta a^dag a) rotates phase-space vectors by +beta.
  for (int m = 0; m < big; ++m)
    for (int n = 0; n < big; ++n) state(m, n) *= std::polar(1.0, beta * (m - n));
  const Complex alpha(q.mean(0) / 2, q.mean(1) / 2);
  if (std::abs(alpha) > 0) {
    const CMatrix gen = alpha * ad - std::conj(alpha) * a;
    const CMatrix d = gen.exp();
    state = d * state * d.adjoint();
  }

  CMatrix cropped = state.topLeftCorner(dim, dim);
  cropped = 0.5 * (cropped + cropped.adjoint()).eval();
  const double kept = cropped.trace().real();
  cropped /= kept;
  const double tail = cropped(n_max, n_max).real();
  if (tail >= DensityMatrix::truncation_limit || kept < 1 - 1e-4) {
    throw TruncationError("gaussian_to_density: n_max = " + std::to_string(n_max) +
                              " too small (rho[n_max,n_max] = " + std::to_string(tail) + ")",
                          tail);
  }
  return DensityMatrix::from_trusted(std::move(cropped));
}

DensityMatrix gaussian_to_density(const GaussianState& state, const Frame& frame, int n_max) {
  return gaussian_to_density(to_quadratures(state, frame), n_max);
}

Quadratures moments(const DensityMatrix& rho) {
  const int dim = rho.dim();
  const CMatrix& r = rho.matrix();
  const CMatrix a = annihilation(dim);
  const Complex ea = (r * a).trace();
  const Complex ea2 = (r * a * a).trace();
  double ena = 0.0;
  for (int n = 0; n < dim; ++n) ena += n * r(n, n).real();
  Quadratures q;
  q.mean = Vec2(2 * ea.real(), 2 * ea.imag());
  const double zz = 2 * ea2.real() + 2 * ena + 1;
  const double pp = -2 * ea2.real() + 2 * ena + 1;
  const double zp = 2 * ea2.imag();
  q.cov << zz - q.mean(0) * q.mean(0), zp - q.mean(0) * q.mean(1), zp - q.mean(0) * q.mean(1),
      pp - q.mean(1) * q.mean(1);
  return q;
}

double fidelity(const DensityMatrix& a, const DensityMatrix& b) {
  if (a.dim() != b.dim()) throw ParameterError("fidelity: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<CMatrix> ea(a.matrix());
  const Eigen::VectorXd sq = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const CMatrix root = ea.eigenvectors() * sq.asDiagonal() * ea.eigenvectors().adjoint();
  CMatrix m = root * b.matrix() * root;
  m = 0.5 * (m + m.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<CMatrix> em(m, Eigen::EigenvaluesOnly);
  const double tr = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return tr * tr;
}

DensityMatrix resize(const DensityMatrix& rho, int dim) {
  if (dim < 1) throw ParameterError("dimension must be >= 1");
  CMatrix out = CMatrix::Zero(dim, dim);
  const int k = std::min(dim, rho.dim());
  out.topLeftCorner(k, k) = rho.matrix().topLeftCorner(k, k);
  return DensityMatrix::from_trusted(std::move(out));
}

}  // namespace tofsense
