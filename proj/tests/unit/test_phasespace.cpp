#include <cmath>

#include "doctest.h"
#include "langevin.hpp"
#include "tofsense/constants.hpp"
#include "tofsense/errors.hpp"
#include "tofsense/phasespace.hpp"

using namespace tofsense;

namespace {

ProtocolConfig ground_config() {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  cfg.occupation = 0.0;
  cfg.theta = 0.0;
  cfg.gamma_bg = 0.0;
  cfg.noise_floor = 0.0;
  return cfg;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST_CASE("thermal state covariance") {
  ProtocolConfig cfg = ground_config();
  GaussianState g = thermal_state(cfg, cfg.omega0);
  CHECK(g.mean.norm() == 0.0);
  CHECK(rel(g.var_z(), hbar / (2 * cfg.mass * cfg.omega0)) < 1e-14);
  CHECK(rel(g.var_p(), hbar * cfg.mass * cfg.omega0 / 2) < 1e-14);
  CHECK(rel(g.det(), hbar * hbar / 4) < 1e-12);

  cfg.occupation = 0.75;
  GaussianState t = thermal_state(cfg, cfg.omega0);
  CHECK(rel(t.var_p(), 2.5 * hbar * cfg.mass * cfg.omega0 / 2) < 1e-14);
  CHECK_THROWS_AS(thermal_state(cfg, 0.0), ParameterError);
}

TEST_CASE("config validation names the field") {
  ProtocolConfig cfg = ground_config();
  cfg.omega1 = cfg.omega0 * 2;
  try {
    cfg.validate();
    FAIL("expected ParameterError");
  } catch (const ParameterError& e) {
    CHECK(std::string(e.what()).find("omega0") != std::string::npos);
  }
  cfg = ground_config();
  cfg.mass = -1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("maps are symplectic and match quarter-period form") {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  for (double frac : {0.0, 0.1, 0.25, 0.37, 0.5, 1.3}) {
    cfg.t_sp = frac * 2 * pi / cfg.omega1;
    CHECK(std::abs(state_prep_map(cfg).linear.determinant() - 1.0) < 1e-12);
  }
  for (double t : {0.0, 1e-6, 1e-4, 1e-2}) {
    cfg.t_tof = t;
    CHECK(std::abs(tof_map(cfg).linear.determinant() - 1.0) < 1e-12);
  }

  cfg = ProtocolConfig::paper_defaults();
  cfg.t_sp = 0;
  AffineMap id = state_prep_map(cfg);
  CHECK((id.linear - Mat2::Identity()).norm() == 0.0);
  CHECK(id.shift.norm() == 0.0);

  cfg.t_sp = pi / (2 * cfg.omega1);
  AffineMap q = state_prep_map(cfg);
  const double m = cfg.mass, w = cfg.omega1, gs = cfg.g * std::sin(cfg.theta);
  CHECK(std::abs(q.linear(0, 0)) < 1e-15);
  CHECK(rel(q.linear(0, 1), 1 / (m * w)) < 1e-12);
  CHECK(rel(q.linear(1, 0), -m * w) < 1e-12);
  CHECK(rel(q.shift(0), gs / (w * w)) < 1e-12);
  CHECK(rel(q.shift(1), m * gs / w) < 1e-12);
}

TEST_CASE("tof shift at the experiment's tilt") {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  AffineMap a = tof_map(cfg);
  CHECK(a.shift(0) == doctest::Approx(0.5 * 9.798 * std::sin(-2.62 * pi / 180) * 1e-8).epsilon(1e-12));
  CHECK(a.shift(0) == doctest::Approx(-2.24e-9).epsilon(0.01));
  cfg.theta = 0;
  CHECK(tof_map(cfg).shift.norm() == 0.0);
}

TEST_CASE("propagation matches closed-form variances") {
  ProtocolConfig cfg = ground_config();
  cfg.t_sp = pi / (2 * cfg.omega1);
  GaussianState g = propagate(thermal_state(cfg, cfg.omega0), state_prep_map(cfg));
  const double w0 = cfg.omega0, w1 = cfg.omega1;
  CHECK(rel(g.var_p(), hbar * cfg.mass * w0 / 2 * (w1 / w0) * (w1 / w0)) < 1e-12);

  // V^SP closed forms over a grid of hold times and frequencies.
  cfg.occupation = 0.75;
  const double kappa = cfg.kappa(), m = cfg.mass;
  for (double w : {2 * pi * 20e3, 2 * pi * 37.3e3, 2 * pi * 90e3}) {
    for (double t : {0.0, 1e-6, 3.3e-6, 2e-5}) {
      cfg.omega1 = w;
      cfg.t_sp = t;
      GaussianState s = propagate(thermal_state(cfg, w0), state_prep_map(cfg));
      const double c = std::cos(w * t), sn = std::sin(w * t);
      const double vzz = kappa * hbar / (2 * m * w0) * (c * c + (w0 / w) * (w0 / w) * sn * sn);
      const double vpp = kappa * hbar * m * w0 / 2 * ((w / w0) * (w / w0) * sn * sn + c * c);
      const double vzp = kappa * hbar / 2 * sn * c * (w0 / w - w / w0);
      CHECK(rel(s.var_z(), vzz) < 1e-12);
      CHECK(rel(s.var_p(), vpp) < 1e-12);
      CHECK(std::abs(s.cov(0, 1) - vzp) <= 1e-12 * std::sqrt(vzz * vpp));
    }
  }
}

TEST_CASE("run_protocol closed forms without heating") {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  cfg.gamma_bg = 0;
  const double k = cfg.kappa(), m = cfg.mass, w0 = cfg.omega0, w1 = cfg.omega1, t = cfg.t_tof;

  cfg.t_sp = 0;
  GaussianState a = run_protocol(cfg, Prep::squeeze);
  CHECK(rel(a.var_z(), k * hbar / (2 * m * w0) * (1 + (w0 * t) * (w0 * t))) < 1e-12);

  cfg.t_sp = pi / (2 * w1);
  GaussianState b = run_protocol(cfg, Prep::squeeze);
  CHECK(rel(b.var_z(), k * hbar / (2 * m * w0) * ((w0 / w1) * (w0 / w1) + (w1 * t) * (w1 * t))) < 1e-12);
}

TEST_CASE("purity and Heisenberg bound") {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  cfg.gamma_bg = 0;
  const double det0 = thermal_state(cfg, cfg.omega0).det();
  for (double tsp : {0.0, 2e-6, 6.7e-6, 1.1e-5}) {
    cfg.t_sp = tsp;
    CHECK(rel(run_protocol(cfg).det(), det0) < 1e-10);
    CHECK(rel(run_protocol(cfg, Prep::hold).det(), det0) < 1e-10);
  }
  cfg.gamma_bg = 16e-3;
  cfg.occupation = 0;
  for (double tsp : {0.0, 6.7e-6}) {
    cfg.t_sp = tsp;
    CHECK(run_protocol(cfg).det() >= hbar * hbar / 4 * (1 - 1e-12));
  }
}

TEST_CASE("heating terms") {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  cfg.gamma_bg = 0;
  CHECK(heating_sp(cfg).norm() == 0.0);
  CHECK(heating_tof(cfg).norm() == 0.0);
  cfg.gamma_bg = 16e-3;
  cfg.t_sp = 0;
  CHECK(heating_sp(cfg).norm() == 0.0);

  cfg.t_sp = pi / cfg.omega1;
  Mat2 h = heating_sp(cfg);
  const double rate = k_boltzmann * cfg.gamma_bg;
  CHECK(rel(h(0, 0), rate * cfg.t_sp / (cfg.mass * cfg.omega1 * cfg.omega1)) < 1e-12);
  CHECK(std::abs(h(0, 1)) < 1e-12 * rate / (cfg.omega1 * cfg.omega1));
  CHECK(rel(h(1, 1), cfg.mass * rate * cfg.t_sp) < 1e-12);

  Mat2 t1 = heating_tof(cfg);
  CHECK(t1(0, 0) == doctest::Approx(2 * rate / (3 * cfg.mass) * 1e-12).epsilon(1e-12));
  CHECK(t1(0, 0) == doctest::Approx(4.6e-21).epsilon(0.01));
  cfg.t_tof *= 2;
  CHECK(rel(heating_tof(cfg)(0, 0), 8 * t1(0, 0)) < 1e-12);
}

TEST_CASE("susceptibility and sensitivity") {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  CHECK(rel(susceptibility_theory(cfg, false), 1.5625e8) < 1e-12);
  CHECK(susceptibility_theory(cfg, true) == doctest::Approx(1.7e8).epsilon(0.02));
  cfg.t_tof = 0;
  CHECK(susceptibility_theory(cfg, false) == 0.0);
  CHECK_THROWS_AS(sensitivity_theory(cfg, false), ParameterError);

  cfg = ground_config();
  CHECK(zero_point_bound(cfg) == doctest::Approx(9.68e-19).epsilon(0.005));
  for (double wt : {10.0, 100.0, 1000.0}) {
    cfg.t_tof = wt / cfg.omega0;
    const double s = sensitivity_theory(cfg, false);
    const double bound = zero_point_bound(cfg);
    CHECK(s >= bound);
    CHECK(s / bound - 1 < 1.0 / (wt * wt));
  }

  // Long-TOF limit with preparation: ratio to the bound tends to omega1/omega0.
  cfg.t_tof = 1e3 / cfg.omega1;
  const double ratio = sensitivity_theory(cfg, true) / zero_point_bound(cfg);
  CHECK(rel(ratio, cfg.omega1 / cfg.omega0) < 0.01);
}

TEST_CASE("squeezing parameter and floor model") {
  CHECK(squeezing_parameter(2.0, 2.0) == 0.0);
  CHECK(squeezing_parameter(std::exp(2.0), 1.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(squeezing_parameter(221e3, 37.3e3) == doctest::Approx(0.890).epsilon(0.001));
  CHECK_THROWS_AS(squeezing_parameter(1.0, 2.0), ParameterError);

  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  const double base = cfg.kappa() * hbar / (2 * cfg.mass * cfg.omega0);
  const double wt = cfg.omega0 * cfg.t_tof;
  CHECK(rel(sigma_z_min_model(0, cfg), std::sqrt(base * (1 + wt * wt))) < 1e-14);
  const double rstar = optimal_squeezing(cfg);
  CHECK(rstar == doctest::Approx(1.23).epsilon(0.005));
  double prev = sigma_z_min_model(0, cfg);
  for (double r = 0.05; r < rstar; r += 0.05) {
    const double v = sigma_z_min_model(r, cfg);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(sigma_z_min_model(rstar, cfg) < sigma_z_min_model(rstar - 1e-3, cfg));
  CHECK(sigma_z_min_model(rstar, cfg) < sigma_z_min_model(rstar + 1e-3, cfg));
}

TEST_CASE("covariance agrees with a Langevin simulation") {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  for (Prep prep : {Prep::squeeze, Prep::hold}) {
    const GaussianState s = run_protocol(cfg, prep);
    const oracle::MonteCarloMoments mc = oracle::langevin_protocol(cfg, prep, 20000, 2000, 500, 7);
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) CHECK(std::abs(mc.cov(i, j) - s.cov(i, j)) < 3 * mc.cov_se(i, j));
  }
}
