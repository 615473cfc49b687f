#pragma once

// Gaussian model of the phase-space distribution fitted to quadrature
// samples: maximum likelihood under the positive-definite constraint, a
// binned G-test with adaptive lumping, and Metropolis-Hastings posteriors.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "tofsense/fockstate.hpp"
#include "tofsense/synthlab.hpp"

namespace tofsense {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

/// Mean and covariance of the Wigner function in zero-point units:
/// Sigma = [[A - B_c, -B_s], [-B_s, A + B_c]] so that
/// V(phi) = A + B_c cos 2phi + B_s sin 2phi is the variance of p~(phi).
struct GaussianModelParams {
  double mu_z1 = 0.0;
  double mu_p1 = 0.0;
  double A = 1.0;
  double B_c = 0.0;
  double B_s = 0.0;

  bool feasible() const;
  double sigma_plus() const;
  double sigma_minus() const;
  double mean_at(double phase) const;
  double variance_at(double phase) const;

  Quadratures to_quadratures() const;
  static GaussianModelParams from_quadratures(const Quadratures& q);
  Vec5 vector() const;
  static GaussianModelParams from_vector(const Vec5& v);
};

/// Per-phase sufficient statistics (count, sum, sum of squares).
struct PhaseMoments {
  double phase = 0.0;
  double n = 0.0;
  double sum = 0.0;
  double sum_sq = 0.0;
};

std::vector<PhaseMoments> phase_moments(const std::vector<PhaseSamples>& samples);

/// Sum over samples of ln N(p~; M(phi), V(phi)). Throws ParameterError when
/// V <= 0 at any sampled phase.
double gaussian_loglik(const GaussianModelParams& params, const std::vector<PhaseSamples>& samples);
double gaussian_loglik(const GaussianModelParams& params, const std::vector<PhaseMoments>& moments);

/// Gradient and Hessian of gaussian_loglik in the parameter order of vector().
struct LoglikDerivatives {
  double value = 0.0;
  Vec5 gradient = Vec5::Zero();
  Mat5 hessian = Mat5::Zero();
};
LoglikDerivatives gaussian_loglik_derivatives(const GaussianModelParams& params,
                                              const std::vector<PhaseMoments>& moments);

struct GaussFitOptions {
  double barrier_start = 1e-2;  // times the sample count; must stay well below 1/4
  double barrier_end = 1e-10;
  double barrier_factor = 0.1;
  int max_newton = 200;
  double gradient_tol = 1e-8;  // relative to the sample count
};

/// Interior-point maximum likelihood: Newton steps on
/// loglik + mu ln(A^2 - B_c^2 - B_s^2) with mu driven to zero.
/// Throws DataError for fewer than 5 samples or 2 phases, ConvergenceError
/// (with the last iterate and gradient norm) if Newton fails.
GaussianModelParams fit_gaussian(const std::vector<PhaseSamples>& samples, const GaussFitOptions& options = {});
GaussianModelParams fit_gaussian(const std::vector<PhaseMoments>& moments, const GaussFitOptions& options = {});

/// Inverse of the observed information at the fitted point.
Mat5 laplace_covariance(const GaussianModelParams& params, const std::vector<PhaseMoments>& moments);

struct GTestReport {
  double g_statistic = 0.0;  // after Williams' correction
  double g_raw = 0.0;
  double williams_q = 1.0;
  int degrees_of_freedom = 0;
  double upper_p_value = 1.0;
  double percentile = 0.0;  // inverse normal CDF of 1 - p, in sigma
  int merged_bins = 0;
  /// lumping[i][j] = merged group (numbered within phase i) of original bin j.
  std::vector<std::vector<int>> lumping;
};

/// Expected count of bin j at phase i under the model; the outermost bins of
/// each phase take the whole tail beyond them.
std::vector<std::vector<double>> expected_counts(const Sinogram& sinogram, const GaussianModelParams& params);

/// G-test of the binned data against the model. Bins are lumped from both
/// tails inward until each group expects at least `min_expected` counts; an
/// incomplete group left in the middle joins its neighbour.
/// dof = merged bins - phases - 5. Throws DataError if a phase ends up with
/// fewer than 2 groups.
GTestReport g_test(const Sinogram& sinogram, const GaussianModelParams& params, double min_expected = 10.0);

struct McmcSettings {
  int chains = 8;
  int min_effective = 6000;
  int batch = 500;                 // draws per chain between burn-in checks
  long max_draws_per_chain = 400000;
  double rhat_limit = 1.01;
  std::uint64_t seed = 0;
};

struct McmcDiagnostics {
  int chains = 0;
  long burn_in = 0;                // draws per chain discarded
  long draws_per_chain = 0;        // post burn-in, before thinning
  int thinning = 1;
  Vec5 split_rhat = Vec5::Zero();  // of the retained draws
  Vec5 iact = Vec5::Zero();
  long effective_samples = 0;      // thinned draws kept, all chains
  double acceptance = 0.0;         // post burn-in
  Vec5 proposal_scale = Vec5::Zero();
  bool converged = false;
  double sigma_plus_lo = 0, sigma_plus_hi = 0;
  double sigma_minus_lo = 0, sigma_minus_hi = 0;
};

struct McmcResult {
  /// Thinned posterior draws, chain-major; chain_index[k] gives the chain.
  std::vector<GaussianModelParams> draws;
  std::vector<int> chain_index;
  std::vector<long> iteration;
  McmcDiagnostics diagnostics;
};

/// Random-walk Metropolis with a flat prior on the feasible region. The
/// proposal is tuned to 20-40 % acceptance while burning in and frozen once
/// the rank-normalised split-R-hat of the latest half drops below the limit.
McmcResult run_mcmc(const std::vector<PhaseSamples>& samples, const GaussianModelParams& init,
                    const McmcSettings& settings = {});
McmcResult run_mcmc(const std::vector<PhaseMoments>& moments, const GaussianModelParams& init,
                    const McmcSettings& settings = {});

/// Rank-normalised split-R-hat (maximum of bulk and folded versions).
/// chains[c][t] holds draw t of chain c; all chains have equal length.
double split_rhat(const std::vector<std::vector<double>>& chains);

/// Integrated autocorrelation time with Geyer's initial monotone sequence,
/// from the chain-averaged autocorrelation.
double iact_geyer(const std::vector<std::vector<double>>& chains);

struct SigmaSummary {
  double sigma_plus = 0, plus_lo = 0, plus_hi = 0;
  double sigma_minus = 0, minus_lo = 0, minus_hi = 0;
  double sigma_mean = 0, mean_lo = 0, mean_hi = 0;  // (sigma_+ + sigma_-) / 2, the thermal convention
};

/// Posterior means and central 68 % intervals.
SigmaSummary sigma_summary(const std::vector<GaussianModelParams>& draws);

}  // namespace tofsense
