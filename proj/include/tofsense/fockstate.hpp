#pragma once

// Truncated Fock-basis states of one motional mode.
//
// Quadratures are zero-point normalised: z1 = a + a^dag, p1 = i(a^dag - a), so
// the ground state has unit variance in every rotated quadrature
// p~(phi) = -z1 sin(phi) + p1 cos(phi).

#include <complex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tofsense/phasespace.hpp"

namespace tofsense {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using RMatrix = Eigen::MatrixXd;

/// Zero-point scales of the mode at a given trap frequency.
struct Frame {
  double mass = 0.0;
  double omega = 0.0;

  double z_zpf() const;  // sqrt(hbar / 2 m omega)
  double p_zpf() const;  // sqrt(hbar m omega / 2)
};

/// First and second moments in zero-point units (vacuum: mean 0, cov = I).
struct Quadratures {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Identity();
};

Quadratures to_quadratures(const GaussianState& state, const Frame& frame);

class DensityMatrix {
 public:
  static constexpr double tolerance = 1e-10;
  static constexpr double truncation_limit = 1e-4;

  /// Validates Hermiticity, unit trace and positivity to `tolerance`.
  explicit DensityMatrix(CMatrix rho);

  static DensityMatrix maximally_mixed(int dim);
  static DensityMatrix fock(int n, int dim);
  static DensityMatrix thermal(double occupation, int dim);

  /// Hermitian-symmetrises and renormalises without the positivity check;
  /// for iterates that are PSD by construction.
  static DensityMatrix from_trusted(CMatrix rho);

  int dim() const { return static_cast<int>(rho_.rows()); }
  int n_max() const { return dim() - 1; }
  const CMatrix& matrix() const { return rho_; }
  Complex operator()(int n, int m) const { return rho_(n, m); }

  /// Population of the highest retained Fock state.
  double tail() const { return rho_(n_max(), n_max()).real(); }
  bool truncation_ok() const { return tail() < truncation_limit; }

  double min_eigenvalue() const;

 private:
  struct Trusted {};
  DensityMatrix(CMatrix rho, Trusted) : rho_(std::move(rho)) {}
  CMatrix rho_;
};

struct QuadratureBin {
  double center = 0.0;
  double width = 0.0;
  double phase = 0.0;
};

struct WignerGrid {
  std::vector<double> z_axis;
  std::vector<double> p_axis;
  RMatrix values;  // values(i, j) = W(z_axis[i], p_axis[j])

  /// Riemann sum times cell area (uniform axes assumed).
  double integral() const;
};

/// Normalised oscillator eigenfunctions psi_0..psi_{count-1} at quadrature x,
/// |psi_0(x)|^2 the standard normal density. Weighted three-term recurrence.
void oscillator_functions(double x, std::span<double> out);

/// <m | p~, phi>.
Complex quadrature_overlap(int m, double x, double phase);

/// Real symmetric matrix Q_mn = int_lo^hi psi_m psi_n dx by Gauss-Legendre
/// quadrature of the given order on `panels` equal sub-intervals.
RMatrix bin_overlap(double lo, double hi, int dim, int order = 16, int panels = 1);

/// Gauss-Legendre order such that doubling it changes no element of the
/// overlap matrix by more than 1e-10 (starts at 16).
int bin_quadrature_order(double lo, double hi, int dim);

/// Projector onto the quadrature bin, in the basis |0>..|n_max>.
CMatrix bin_projector(const QuadratureBin& bin, int n_max);

/// Probability density of p~(phi) at each grid point.
std::vector<double> quadrature_pdf(const DensityMatrix& rho, double phase, std::span<const double> grid);

/// Wigner function on the tensor grid z_axis x p_axis.
WignerGrid wigner(const DensityMatrix& rho, std::span<const double> z_axis, std::span<const double> p_axis);
double wigner_at(const DensityMatrix& rho, double z1, double p1);

/// Normalised Laguerre functions
/// f_l(x) = sqrt(l!/(l+delta)!) x^{delta/2} e^{-x/2} L_l^delta(x), l = 0..count-1.
void laguerre_functions(int delta, double x, std::span<double> out);

/// Displaced squeezed thermal state with the given moments, built from
/// matrix exponentials of ladder-operator generators in an enlarged space and
/// truncated to |0>..|n_max>. Throws TruncationError if the retained tail
/// population reaches 1e-4.
DensityMatrix gaussian_to_density(const Quadratures& q, int n_max);
DensityMatrix gaussian_to_density(const GaussianState& state, const Frame& frame, int n_max);

Quadratures moments(const DensityMatrix& rho);

/// Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 between states of equal dimension.
double fidelity(const DensityMatrix& a, const DensityMatrix& b);

/// Embeds or truncates `rho` into dimension `dim` (renormalised).
DensityMatrix resize(const DensityMatrix& rho, int dim);

}  // namespace tofsense
