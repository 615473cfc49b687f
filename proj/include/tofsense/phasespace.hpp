#pragma once

// Gaussian dynamics of the z-axis centre-of-mass mode through state
// preparation (trap frequency jump omega0 -> omega1), time-of-flight free
// fall and background-gas heating. Everything here is SI.

#include <Eigen/Dense>

namespace tofsense {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// How the particle spends the interval t_sp before release.
enum class Prep {
  squeeze,  ///< trap lowered to omega1 (state preparation)
  hold,     ///< trap kept at omega0 (no state preparation)
};

struct ProtocolConfig {
  double mass = 3.2e-17;               // kg
  double omega0 = 2 * 3.141592653589793 * 221e3;   // rad/s
  double omega1 = 2 * 3.141592653589793 * 37.3e3;  // rad/s
  double t_sp = 0.0;                   // s
  double t_tof = 100e-6;               // s
  double g = 9.798;                    // m/s^2
  double theta = 0.0;                  // rad, table tilt
  double occupation = 0.0;             // phonon occupation n
  double gamma_bg = 0.0;               // background-gas heating rate, K/s
  double noise_floor = 0.0;            // readout noise b5, m

  /// Throws ParameterError naming the first offending field.
  void validate() const;

  double kappa() const { return 2.0 * occupation + 1.0; }
  double force() const;  // m g sin(theta)
  double hold_frequency(Prep prep) const { return prep == Prep::squeeze ? omega1 : omega0; }

  /// Parameters of the levitated-nanoparticle experiment this toolkit models
  /// (t_sp at a quarter period of omega1, tilt -2.62 deg, n = 0.75).
  static ProtocolConfig paper_defaults();
};

struct GaussianState {
  Vec2 mean = Vec2::Zero();  // (z [m], p [kg m/s])
  Mat2 cov = Mat2::Zero();

  double var_z() const { return cov(0, 0); }
  double var_p() const { return cov(1, 1); }
  double det() const { return cov.determinant(); }
};

struct AffineMap {
  Mat2 linear = Mat2::Identity();
  Vec2 shift = Vec2::Zero();

  /// Composition: first *this, then `next`.
  AffineMap then(const AffineMap& next) const {
    return {next.linear * linear, next.linear * shift + next.shift};
  }
};

GaussianState thermal_state(const ProtocolConfig& cfg, double trap_frequency);

/// Evolution for time t in a harmonic trap of frequency omega under a constant
/// force, about the force-free origin.
AffineMap harmonic_map(double mass, double omega, double t, double force);

AffineMap state_prep_map(const ProtocolConfig& cfg, Prep prep = Prep::squeeze);
AffineMap tof_map(const ProtocolConfig& cfg);

GaussianState propagate(const GaussianState& state, const AffineMap& map);

/// Covariance added by background-gas heating while held for t_sp.
Mat2 heating_sp(const ProtocolConfig& cfg, Prep prep = Prep::squeeze);
/// Covariance added by background-gas heating during free flight.
Mat2 heating_tof(const ProtocolConfig& cfg);

/// State at readout time t_sp + t_tof: thermal at omega0, hold, heating, TOF, heating.
GaussianState run_protocol(const ProtocolConfig& cfg, Prep prep = Prep::squeeze);

/// Position readout relative to the gravity-shifted trap centre,
/// z_meas = z(t_sp + t_tof) - g sin(theta) / omega0^2.
double readout_offset(const ProtocolConfig& cfg);

/// t_sp used by the canonical protocols: pi/(2 omega1) with preparation, 0 without.
double canonical_prep_time(const ProtocolConfig& cfg, bool with_prep);

/// d mu_z / dF in m/N for the canonical protocol (small-angle regime).
double susceptibility_theory(const ProtocolConfig& cfg, bool with_prep);

/// Force sensitivity S = sigma_z / |d mu_z / dF| in N for the canonical protocol.
double sensitivity_theory(const ProtocolConfig& cfg, bool with_prep);

/// sqrt(2 m hbar omega0) / t_tof.
double zero_point_bound(const ProtocolConfig& cfg);

/// r = ln(omega0 / omega1) / 2.
double squeezing_parameter(double omega0, double omega1);

/// Minimum readout spread at t_sp = pi/(2 omega1) as a function of r.
double sigma_z_min_model(double r, const ProtocolConfig& cfg);

/// r minimising sigma_z_min_model: ln(omega0 t_tof) / 4.
double optimal_squeezing(const ProtocolConfig& cfg);

}  // namespace tofsense
