#pragma once

// Force sensitivity from the Fisher information of reconstructed states,
// the classical fits of the experiment (oscillation offset, susceptibility,
// squeezing floor, background-gas heating) and the Allan deviation.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tofsense/fockstate.hpp"
#include "tofsense/phasespace.hpp"
#include "tofsense/synthlab.hpp"
#include "tofsense/tomomle.hpp"

namespace tofsense {

/// I[P] = integral of P'^2 / P = 4 * integral of (sqrt P)'^2 on a uniform grid.
/// Throws ParameterError if the grid edges carry more than 1e-8 * peak.
double translation_fisher(std::span<const double> pdf, double dx);

struct FisherResult {
  double F_theta = 0.0;      // 1/rad^2
  double F_force = 0.0;      // 1/N^2
  double sensitivity = 0.0;  // N, 1/sqrt(F_force)
  double fisher_p = 0.0;     // I[P] in zero-point units
  double phase = 0.0;        // rad, homodyne phase evaluated
  double d_theta = 0.0;      // m/rad
  std::vector<std::string> warnings;

  // Filled by bootstrap_fisher.
  int bootstrap_samples = 0;
  int bootstrap_failures = 0;
  double bootstrap_mean = 0.0;  // N
  double bootstrap_lo = 0.0;    // N, 16th percentile
  double bootstrap_hi = 0.0;    // N, 84th percentile
  bool bootstrap_degenerate = false;
  double audit_max_rel_diff = 0.0;  // warm start vs cold start
  bool bootstrap_warm = false;      // warm starts used after the audit
};

/// Sensitivity from a density matrix expressed in zero-point units of
/// `frame`, which must be the hold frequency of the protocol (omega1 with
/// preparation, omega0 without). Uses the canonical hold time and the phase
/// omega t_sp - arctan(1 / omega t_tof).
FisherResult fisher_sensitivity(const DensityMatrix& rho, const ProtocolConfig& cfg, bool with_prep,
                                const Frame& frame);
/// Same, with the frame taken from the protocol.
FisherResult fisher_sensitivity(const DensityMatrix& rho, const ProtocolConfig& cfg, bool with_prep);

/// D_theta = g t_tof sin(omega t_sp) / omega + g t_tof^2 / 2 at the canonical hold time.
double d_theta(const ProtocolConfig& cfg, bool with_prep);

struct BootstrapSettings {
  int resamples = 200;
  std::uint64_t seed = 0;
  MleSettings mle = MleSettings::thermal();
  BinningPolicy binning{};
  int audit = 10;  // resamples solved both ways before warm starts are trusted; 0 keeps cold starts
};

/// Resamples shots with replacement within each phase, reconstructs each
/// resample (projectors cached on a common grid) and evaluates
/// fisher_sensitivity. The first `audit` resamples are solved from both the
/// maximally mixed state and the full-data estimate; later resamples are
/// warm-started only if those agreed within 1 % and the RMS difference is
/// below 0.2 of the spread of the cold results. Resamples whose
/// reconstruction fails or does not converge are excluded; more than 10 %
/// failures throws ConvergenceError.
FisherResult bootstrap_fisher(const std::vector<PhaseSamples>& samples, const ProtocolConfig& cfg, bool with_prep,
                              const BootstrapSettings& settings = {});

struct FitReport {
  std::string model;
  std::vector<std::string> names;
  std::vector<double> values;
  std::vector<double> errors;
  double chi2 = 0.0;           // weighted residual sum of squares
  int dof = 0;
  double rms_residual = 0.0;
  int rounds = 0;              // outer iterations, where applicable
  std::vector<double> trace;   // per-round history of the main parameter
  bool converged = true;
  std::vector<std::string> notes;

  double value(const std::string& name) const;
  double error(const std::string& name) const;
};

/// Least-squares fit of |b1 + b2 cos(b3 t + b4)| + b5 to mean positions.
/// b3 starts at omega_guess; b4 starts at 0, pi/2, pi and 3pi/2 and the best
/// start is kept. With `b5` given it is held fixed. `sigma` (optional) weights
/// the points; errors are scaled by the residual when sigma is absent.
FitReport fit_oscillation_offset(const std::vector<double>& t_sp, const std::vector<double>& mu_z,
                                 double omega_guess, std::optional<double> b5 = std::nullopt,
                                 const std::vector<double>& sigma = {});

/// b1 = g sin(theta) (t_tof^2 - 1/omega0^2 + 1/omega1^2) / 2.
double offset_theory(const ProtocolConfig& cfg);
/// Tilt angle that produces offset b1 (inverse of offset_theory).
double tilt_from_offset(double b1, const ProtocolConfig& cfg);

/// Weighted straight-line fit of mu_z against F = m g sin(theta). Parameters
/// "slope" (m/N) and "intercept" (m); errors from the given sigma.
FitReport fit_susceptibility(const std::vector<double>& theta, const std::vector<double>& mu_z,
                             const std::vector<double>& sigma, const ProtocolConfig& cfg);

/// Weighted straight line y = intercept + slope x, errors from sigma.
FitReport fit_line(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& sigma);

/// m sigma_z / (t_tof sqrt(hbar m omega0 / 2)).
double normalized_spread(double sigma_z, const ProtocolConfig& cfg);

/// Fit of sqrt(V_n + V_ini e^{-4r}) to normalised minimum spreads, both
/// parameters constrained >= 0. Parameters "V_ini" and "V_n".
FitReport fit_squeezing_floor(const std::vector<double>& r, const std::vector<double>& y,
                              const std::vector<double>& sigma);

/// Readout spreads sigma_z (m) with standard errors at several t_tof.
struct SpreadSeries {
  std::vector<double> t_tof;
  std::vector<double> sigma_z;
  std::vector<double> error;
};

/// sigma_z without preparation: kappa hbar/(2 m omega0) (1 + (omega0 t)^2) + 2 kB Gamma t^3 / (3m).
double spread_model_hold(const ProtocolConfig& cfg, double kappa, double gamma_bg, double t_tof);
/// sigma_z with preparation at a quarter period of omega1:
/// kappa hbar/(2 m omega0) ((omega0/omega1)^2 + (omega1 t)^2) + 2 kB Gamma t^3 / (3m).
double spread_model_prep(const ProtocolConfig& cfg, double kappa, double gamma_bg, double t_tof);

/// Alternating estimate: fit n on the no-preparation series with Gamma_BG
/// fixed (starting from 0), then Gamma_BG on the preparation series with n
/// fixed, until Gamma_BG changes by less than 1 % between rounds.
/// Parameters "n" and "gamma_bg" (K/s). Throws ConvergenceError after 100 rounds.
FitReport estimate_heating_rate(const SpreadSeries& without_prep, const SpreadSeries& with_prep,
                                const ProtocolConfig& cfg);

/// Gamma_BG alone from a preparation series at known occupation n.
FitReport fit_heating_at_occupation(const SpreadSeries& with_prep, const ProtocolConfig& cfg, double occupation);

/// Mean and spread of a position distribution observed through |z|. When the
/// sample mean exceeds three standard deviations a plain Gaussian is used;
/// otherwise a folded-normal maximum likelihood fit (flagged in notes).
/// Parameters "mu" and "sigma".
FitReport fit_folded_positions(const std::vector<double>& abs_values);

struct AllanPoint {
  double tau = 0.0;  // s
  double adev = 0.0;
  long windows = 0;
};

struct AllanResult {
  std::vector<AllanPoint> points;
  std::vector<std::string> notes;  // skipped tau values
};

/// Non-overlapping Allan deviation at averaging times tau (multiples of
/// 1/f_s, within 1e-9 relative). A tau needing fewer than two windows is
/// skipped with a note.
AllanResult allan_deviation(std::span<const double> series, double f_s, std::span<const double> taus);

/// Averaging times 1/f_s * {1, 2, 5, 10, 20, ...} up to length / (2 f_s).
std::vector<double> allan_taus(std::size_t length, double f_s);

}  // namespace tofsense
