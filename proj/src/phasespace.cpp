#include "tofsense/phasespace.hpp"

#include <cmath>
#include <string>

#include "tofsense/constants.hpp"
#include "tofsense/errors.hpp"

namespace tofsense {

namespace {

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ParameterError("invalid config: " + field + " must satisfy " + rule);
}

Mat2 symmetric(double zz, double zp, double pp) {
  Mat2 m;
  m << zz, zp, zp, pp;
  return m;
}

}  // namespace

void ProtocolConfig::validate() const {
  require(std::isfinite(mass) && mass > 0, "mass", "mass > 0");
  require(std::isfinite(omega1) && omega1 > 0, "omega1", "omega1 > 0");
  require(std::isfinite(omega0) && omega0 > omega1, "omega0", "omega0 > omega1");
  require(std::isfinite(t_sp) && t_sp >= 0, "t_sp", "t_sp >= 0");
  require(std::isfinite(t_tof) && t_tof >= 0, "t_tof", "t_tof >= 0");
  require(std::isfinite(g), "g", "finite");
  require(std::isfinite(theta), "theta", "finite");
  require(std::isfinite(occupation) && occupation >= 0, "occupation", "n >= 0");
  require(std::isfinite(gamma_bg) && gamma_bg >= 0, "gamma_bg", "gamma_bg >= 0");
  require(std::isfinite(noise_floor) && noise_floor >= 0, "noise_floor", "noise_floor >= 0");
}

double ProtocolConfig::force() const { return mass * g * std::sin(theta); }

ProtocolConfig ProtocolConfig::paper_defaults() {
  ProtocolConfig cfg;
  cfg.mass = 3.2e-17;
  cfg.omega0 = 2 * pi * 221e3;
  cfg.omega1 = 2 * pi * 37.3e3;
  cfg.t_sp = pi / (2 * cfg.omega1);
  cfg.t_tof = 100e-6;
  cfg.g = 9.798;
  cfg.theta = -2.62 * pi / 180.0;
  cfg.occupation = 0.75;
  cfg.gamma_bg = 16e-3;
  cfg.noise_floor = 9e-12;
  return cfg;
}

GaussianState thermal_state(const ProtocolConfig& cfg, double trap_frequency) {
  if (!(trap_frequency > 0)) throw ParameterError("thermal_state: trap frequency must be positive");
  const double m = cfg.mass;
  const double w = trap_frequency;
  GaussianState s;
  s.mean = Vec2(cfg.g * std::sin(cfg.theta) / (w * w), 0.0);
  s.cov = symmetric(cfg.kappa() * hbar / (2 * m * w), 0.0, cfg.kappa() * hbar * m * w / 2);
  return s;
}

AffineMap harmonic_map(double mass, double omega, double t, double force) {
  const double c = std::cos(omega * t);
  const double s = std::sin(omega * t);
  AffineMap a;
  a.linear << c, s / (mass * omega), -mass * omega * s, c;
  const double accel = force / mass;
  a.shift = Vec2(accel * (1 - c) / (omega * omega), mass * accel * s / omega);
  return a;
}

AffineMap state_prep_map(const ProtocolConfig& cfg, Prep prep) {
  cfg.validate();
  return harmonic_map(cfg.mass, cfg.hold_frequency(prep), cfg.t_sp, cfg.force());
}

AffineMap tof_map(const ProtocolConfig& cfg) {
  cfg.validate();
  const double t = cfg.t_tof;
  const double accel = cfg.g * std::sin(cfg.theta);
  AffineMap a;
  a.linear << 1.0, t / cfg.mass, 0.0, 1.0;
  a.shift = Vec2(0.5 * accel * t * t, cfg.mass * accel * t);
  return a;
}

GaussianState propagate(const GaussianState& state, const AffineMap& map) {
  GaussianState out;
  out.mean = map.linear * state.mean + map.shift;
  out.cov = map.linear * state.cov * map.linear.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

Mat2 heating_sp(const ProtocolConfig& cfg, Prep prep) {
  cfg.validate();
  const double w = cfg.hold_frequency(prep);
  const double t = cfg.t_sp;
  const double rate = k_boltzmann * cfg.gamma_bg;
  const double s2 = std::sin(2 * w * t) / (2 * w);
  return symmetric(rate / (cfg.mass * w * w) * (t - s2),
                   rate / (2 * w * w) * (1 - std::cos(2 * w * t)),
                   cfg.mass * rate * (t + s2));
}

Mat2 heating_tof(const ProtocolConfig& cfg) {
  cfg.validate();
  const double t = cfg.t_tof;
  const double rate = k_boltzmann * cfg.gamma_bg;
  return symmetric(2 * rate / (3 * cfg.mass) * t * t * t, rate * t * t, 2 * cfg.mass * rate * t);
}

GaussianState run_protocol(const ProtocolConfig& cfg, Prep prep) {
  cfg.validate();
  GaussianState s = thermal_state(cfg, cfg.omega0);
  s = propagate(s, state_prep_map(cfg, prep));
  s.cov += heating_sp(cfg, prep);
  s = propagate(s, tof_map(cfg));
  s.cov += heating_tof(cfg);
  return s;
}

double readout_offset(const ProtocolConfig& cfg) {
  return cfg.g * std::sin(cfg.theta) / (cfg.omega0 * cfg.omega0);
}

double canonical_prep_time(const ProtocolConfig& cfg, bool with_prep) {
  return with_prep ? pi / (2 * cfg.omega1) : 0.0;
}

double susceptibility_theory(const ProtocolConfig& cfg, bool with_prep) {
  cfg.validate();
  const double t = cfg.t_tof;
  if (!with_prep) return t * t / (2 * cfg.mass);
  const double w0 = cfg.omega0;
  const double w1 = cfg.omega1;
  return ((1 + w1 * t) * (1 / (w1 * w1) - 1 / (w0 * w0)) + 0.5 * t * t) / cfg.mass;
}

double sensitivity_theory(const ProtocolConfig& cfg, bool with_prep) {
  cfg.validate();
  if (!(cfg.t_tof > 0)) throw ParameterError("sensitivity_theory: t_tof = 0 leaves the susceptibility undefined");
  ProtocolConfig c = cfg;
  c.t_sp = canonical_prep_time(cfg, with_prep);
  const GaussianState s = run_protocol(c, with_prep ? Prep::squeeze : Prep::hold);
  return std::sqrt(s.var_z()) / std::abs(susceptibility_theory(c, with_prep));
}

double zero_point_bound(const ProtocolConfig& cfg) {
  return std::sqrt(2 * cfg.mass * hbar * cfg.omega0) / cfg.t_tof;
}

double squeezing_parameter(double omega0, double omega1) {
  if (!(omega1 > 0) || omega0 < omega1) throw ParameterError("squeezing_parameter: need omega0 >= omega1 > 0");
  return 0.5 * std::log(omega0 / omega1);
}

double sigma_z_min_model(double r, const ProtocolConfig& cfg) {
  if (!(r >= 0)) throw ParameterError("sigma_z_min_model: r must be >= 0");
  const double wt = cfg.omega0 * cfg.t_tof;
  const double scale = cfg.kappa() * hbar / (2 * cfg.mass * cfg.omega0);
  return std::sqrt(scale * (std::exp(4 * r) + wt * wt * std::exp(-4 * r)));
}

double optimal_squeezing(const ProtocolConfig& cfg) {
  return 0.25 * std::log(cfg.omega0 * cfg.t_tof);
}

}  // namespace tofsense
