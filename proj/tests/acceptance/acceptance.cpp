// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "langevin.hpp"
#include "tofsense/constants.hpp"
#include "tofsense/errors.hpp"
#include "tofsense/fockstate.hpp"
#include "tofsense/gaussfit.hpp"
#include "tofsense/inference.hpp"
#include "tofsense/phasespace.hpp"
#include "tofsense/synthlab.hpp"
#include "tofsense/tomomle.hpp"

using namespace tofsense;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::vector<double> even_phases(std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = pi * static_cast<double>(i) / static_cast<double>(n);
  return out;
}

double rel(double a, double b) { return std::abs(a / b - 1); }

double ks_uniform(std::vector<double> p) {
  std::sort(p.begin(), p.end());
  const double n = static_cast<double>(p.size());
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    d = std::max({d, (static_cast<double>(i) + 1) / n - p[i], p[i] - static_cast<double>(i) / n});
  return d;
}

bool non_decreasing(const std::vector<double>& v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] < v[k - 1]) return false;
  return true;
}

// Standard error of sigma_- from the Laplace covariance by the delta method.
double sigma_minus_se(const GaussianModelParams& p, const Mat5& cov) {
  const double r = std::hypot(p.B_c, p.B_s);
  const double s = p.sigma_minus();
  Eigen::Matrix<double, 5, 1> grad;
  grad << 0, 0, 1 / (2 * s), -p.B_c / (2 * s * r), -p.B_s / (2 * s * r);
  return std::sqrt(grad.dot(cov * grad));
}

void susceptibility(Outcome& o) {
  const ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  const double without = 1e9 * susceptibility_theory(cfg, false);
  const double with = 1e9 * susceptibility_theory(cfg, true);
  o.detail << "chi = " << without << " / " << with << " nm/N; ";
  o.check(rel(without, 1.5625e17) < 1e-9, "no-prep value 1.5625e17");
  o.check(rel(without, 1.6e17) < 0.05, "no-prep within 5% of 1.6e17");
  o.check(rel(with, 1.70e17) < 0.05, "prep within 5% of 1.7e17");
  o.check(rel(cfg.omega1, 2 * pi * 37.3e3) < 1e-3, "omega1 = 2 pi 37.3 kHz");
}

void zero_point(Outcome& o) {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  cfg.occupation = 0;
  cfg.gamma_bg = 0;
  cfg.noise_floor = 0;
  const double bound = std::sqrt(2 * cfg.mass * hbar * cfg.omega0) / cfg.t_tof;
  const double d = rel(sensitivity_theory(cfg, false), bound);
  o.detail << "no-prep deviation from sqrt(2 m hbar w0)/t = " << d << " (the exact result carries sqrt(1 + 1/(w0 t)^2), "
           << std::sqrt(1 + 1 / std::pow(cfg.omega0 * cfg.t_tof, 2)) - 1 << "); ";
  o.check(d < 1e-6, "no-prep within 1e-6 of the bound");
  cfg.t_tof = 10e-3;
  const double long_bound = cfg.omega1 / cfg.omega0 * std::sqrt(2 * cfg.mass * hbar * cfg.omega0) / cfg.t_tof;
  const double d1 = rel(sensitivity_theory(cfg, true), long_bound);
  o.detail << "prep at 10 ms vs (w1/w0) bound: " << d1;
  o.check(d1 < 0.01, "prep long-TOF limit within 1%");
}

void covariance_oracle(Outcome& o) {
  const ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  o.check(cfg.gamma_bg > 0, "heating on");
  for (Prep prep : {Prep::hold, Prep::squeeze}) {
    const GaussianState s = run_protocol(cfg, prep);
    const oracle::MonteCarloMoments mc = oracle::langevin_protocol(cfg, prep, 100000, 2000, 500, 2026);
    double worst = 0;
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) worst = std::max(worst, std::abs(mc.cov(i, j) - s.cov(i, j)) / mc.cov_se(i, j));
    o.detail << (prep == Prep::squeeze ? "prep" : "no-prep") << " worst |diff|/SE = " << worst << "; ";
    o.check(worst < 3, "covariance within 3 SE");
  }
}

void tomography_round_trip(Outcome& o) {
  const double n = 0.75, kappa = 2 * n + 1, r = 0.890;
  struct Case {
    const char* name;
    Mat2 cov;
    MleSettings settings;
  };
  Mat2 thermal = Mat2::Identity() * kappa;
  Mat2 squeezed = Mat2::Zero();
  squeezed(0, 0) = kappa * std::exp(-2 * r);
  squeezed(1, 1) = kappa * std::exp(2 * r);
  const std::vector<Case> cases{{"thermal", thermal, MleSettings::thermal()},
                                {"squeezed", squeezed, MleSettings::squeezed()}};
  for (const Case& c : cases) {
    Quadratures q;
    q.cov = c.cov;
    const auto samples = sample_quadratures(q, even_phases(300), 600, 2026, std::string("acceptance/") + c.name);
    MleSettings st = c.settings;
    st.epsilon = 0.1;
    const MleResult res = reconstruct(bin_samples(samples), st);
    const double f = fidelity(res.rho, gaussian_to_density(q, st.n_max));
    const GaussianModelParams g = fit_gaussian(samples);
    const double tp = std::sqrt(c.cov.maxCoeff()), tm = std::sqrt(c.cov.diagonal().minCoeff());
    const double dp = rel(g.sigma_plus(), tp), dm = rel(g.sigma_minus(), tm);
    o.detail << c.name << ": F = " << f << ", sigma+/- off by " << dp << "/" << dm << ", " << res.iterations
             << " iterations; ";
    o.check(res.converged(), std::string(c.name) + " converged");
    o.check(f > 0.99, std::string(c.name) + " fidelity > 0.99");
    o.check(dp < 0.02 && dm < 0.02, std::string(c.name) + " sigma within 2%");
    o.check(non_decreasing(res.loglik_trace), std::string(c.name) + " log-likelihood non-decreasing");
  }
}

void wigner_checks(Outcome& o) {
  const double w0 = wigner_at(DensityMatrix::fock(0, 4), 0, 0);
  const double w1 = wigner_at(DensityMatrix::fock(1, 4), 0, 0);
  o.check(std::abs(w0 - 1 / (2 * pi)) < 1e-10, "W(0,0) of |0> = 1/2pi");
  o.check(std::abs(w1 + 1 / (2 * pi)) < 1e-10, "W(0,0) of |1> = -1/2pi");

  std::vector<double> axis(241);
  for (std::size_t i = 0; i < axis.size(); ++i) axis[i] = -12 + 0.1 * static_cast<double>(i);
  Quadratures sq;
  sq.cov << 0.4, 0.1, 0.1, 6.0;
  const std::vector<std::pair<const char*, DensityMatrix>> states{{"|0>", DensityMatrix::fock(0, 8)},
                                                                  {"|1>", DensityMatrix::fock(1, 8)},
                                                                  {"|5>", DensityMatrix::fock(5, 12)},
                                                                  {"thermal", DensityMatrix::thermal(0.75, 30)},
                                                                  {"squeezed", gaussian_to_density(sq, 60)}};
  double worst = 0;
  for (const auto& [name, rho] : states) {
    const double d = std::abs(wigner(rho, axis, axis).integral() - 1);
    worst = std::max(worst, d);
    o.check(d < 1e-4, std::string("normalisation of ") + name);
  }
  o.detail << "W(0,0) = " << w0 << " / " << w1 << ", worst normalisation error " << worst << "; ";

  // Sub-zero-point velocity spread from the full protocol at paper parameters.
  const ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  auto shots = simulate_tomography(cfg, Prep::squeeze, 300, 600, 2026);
  remove_common_offset(shots, cfg, Prep::squeeze);
  const auto samples = to_quadrature_samples(shots, cfg, Prep::squeeze);
  const GaussianModelParams g = fit_gaussian(samples);
  const double se = sigma_minus_se(g, laplace_covariance(g, phase_moments(samples)));
  const double to_v0 = std::sqrt(cfg.omega1 / cfg.omega0);
  const double v = g.sigma_minus() * to_v0, z = (1 - v) / (se * to_v0);
  o.detail << "squeezed sigma- = " << v << " v0_zpf (" << z << " SE below 1)";
  o.check(z > 5, "squeezed sigma- below the zero-point velocity by > 5 SE");
}

void fisher_equivalence(Outcome& o) {
  auto clean = [](double t) {
    ProtocolConfig c = ProtocolConfig::paper_defaults();
    c.t_tof = t;
    c.gamma_bg = 0;
    c.noise_floor = 0;
    c.theta = 0;
    return c;
  };
  double worst = 0;
  for (double t : {100e-6, 300e-6, 1e-3}) {
    const ProtocolConfig cfg = clean(t);
    const DensityMatrix rho = gaussian_to_density(prepared_state(cfg, Prep::hold), 40);
    worst = std::max(worst, rel(fisher_sensitivity(rho, cfg, false).sensitivity, sensitivity_theory(cfg, false)));
  }
  for (double t : {300e-6, 1e-3}) {
    const ProtocolConfig cfg = clean(t);
    o.check(cfg.omega1 * t >= 50, "omega1 t >= 50");
    const DensityMatrix rho = gaussian_to_density(prepared_state(cfg, Prep::squeeze), 100);
    worst = std::max(worst, rel(fisher_sensitivity(rho, cfg, true).sensitivity, sensitivity_theory(cfg, true)));
  }
  o.detail << "Gaussian states vs covariance result: " << worst << "; ";
  o.check(worst < 0.01, "Gaussian-state sensitivity within 1%");

  double worst_i = 0;
  for (double sd : {0.5, 1.0, 1.89, 4.0}) {
    std::vector<double> pdf(8001);
    const double dx = 24 * sd / 8000;
    for (int k = 0; k <= 8000; ++k) {
      const double x = -12 * sd + k * dx;
      pdf[k] = std::exp(-0.5 * x * x / (sd * sd)) / (sd * std::sqrt(2 * pi));
    }
    worst_i = std::max(worst_i, std::abs(translation_fisher(pdf, dx) * sd * sd - 1));
  }
  o.detail << "I[P] sigma^2 - 1 = " << worst_i << "; ";
  o.check(worst_i < 1e-4, "I[P] = 1/sigma^2");

  // States with the published velocity spreads: 1.89 v0_zpf without
  // preparation; 0.520 v0_zpf (1.266 in omega1 units) with it.
  const ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  struct Case {
    const char* name;
    bool prep;
    Mat2 cov;
    MleSettings settings;
    double published;
  };
  const Mat2 thermal = Mat2::Identity() * 1.89 * 1.89;
  Mat2 squeezed = Mat2::Zero();
  squeezed(0, 0) = 1.266 * 1.266;
  squeezed(1, 1) = 4.0 * 4.0;
  for (const Case& c : {Case{"no prep", false, thermal, MleSettings::thermal(), 1.8e-18},
                        Case{"prep", true, squeezed, MleSettings::squeezed(), 4.2e-19}}) {
    Quadratures q;
    q.cov = c.cov;
    const auto samples = sample_quadratures(q, even_phases(300), 600, 2026, std::string("acceptance/fisher/") + c.name);
    const MleResult res = reconstruct(bin_samples(samples), c.settings);
    const double s = fisher_sensitivity(res.rho, cfg, c.prep).sensitivity;
    o.detail << c.name << " S = " << s << " N (" << rel(s, c.published) << " from " << c.published << "); ";
    o.check(rel(s, c.published) < 0.15, std::string(c.name) + " within 15% of the published value");
  }
}

void gaussian_suite(Outcome& o) {
  const GaussianModelParams exact{0, 0, 2, 1, 0};
  o.check(std::abs(exact.sigma_plus() - std::sqrt(3.0)) < 1e-12 && std::abs(exact.sigma_minus() - 1) < 1e-12,
          "sigma formula");

  const GaussianModelParams truth{0.3, -0.2, 2.0, 0.5, 0.3};
  std::vector<double> p;
  for (int run = 0; run < 1000; ++run) {
    const auto s = sample_quadratures(truth.to_quadratures(), even_phases(12), 300, 2026 + run, "acceptance/null");
    BinningPolicy pol;
    pol.center = false;
    pol.delta = 0.3;
    p.push_back(g_test(bin_samples(s, pol), fit_gaussian(s)).upper_p_value);
  }
  const double ks = ks_uniform(p);
  o.detail << "G-test KS = " << ks << "; ";
  o.check(ks < 0.05, "G-test null KS < 0.05");

  const auto data = sample_quadratures(truth.to_quadratures(), even_phases(20), 500, 2026, "acceptance/mcmc");
  McmcSettings st;
  st.seed = 2026;
  const McmcResult r = run_mcmc(data, fit_gaussian(data), st);
  o.detail << "R-hat " << r.diagnostics.split_rhat.maxCoeff() << ", ESS " << r.diagnostics.effective_samples << "; ";
  o.check(r.diagnostics.split_rhat.maxCoeff() < 1.01, "split R-hat < 1.01");
  o.check(r.diagnostics.effective_samples >= 6000, ">= 6000 effective samples");

  int plus = 0, minus = 0;
  const int reps = 50;
  for (int k = 0; k < reps; ++k) {
    const auto s = sample_quadratures(truth.to_quadratures(), even_phases(10), 200, 2026 + k, "acceptance/coverage");
    McmcSettings cs;
    cs.seed = 4052 + k;
    cs.min_effective = 2000;
    const SigmaSummary sum = sigma_summary(run_mcmc(s, fit_gaussian(s), cs).draws);
    plus += sum.plus_lo <= truth.sigma_plus() && truth.sigma_plus() <= sum.plus_hi;
    minus += sum.minus_lo <= truth.sigma_minus() && truth.sigma_minus() <= sum.minus_hi;
  }
  o.detail << "68% coverage " << plus << "/" << reps << " and " << minus << "/" << reps;
  o.check(plus >= 0.6 * reps && minus >= 0.6 * reps, "coverage >= 60%");
}

void allan(Outcome& o) {
  const ProtocolConfig base = ProtocolConfig::paper_defaults();
  const double s = 4.01e-19, f_s = 5;
  const ProtocolConfig cfg = config_for_sensitivity(base, s, true);
  const ForceSeries white = timeseries_for_allan(cfg, 1e4, f_s, 2026, true);
  o.check(rel(white.per_shot_sensitivity, s) < 1e-9, "series built at S = 4.01e-19 N");
  double worst = 0;
  const std::vector<double> first_decade{0.2, 0.4, 1.0, 2.0};
  for (const AllanPoint& p : allan_deviation(white.force, f_s, first_decade).points)
    worst = std::max(worst, rel(p.adev, s / std::sqrt(f_s * p.tau)));
  o.detail << "white noise off S/sqrt(f_s tau) by at most " << worst << "; ";
  o.check(worst < 0.1, "white-noise law within 10%");

  DriftModel drift;
  drift.linear_rate = 7.2e-22;
  const ForceSeries drifting = timeseries_for_allan(cfg, 1e4, f_s, 2026, true, drift);
  const std::vector<double> tau50{50.0};
  const AllanResult r = allan_deviation(drifting.force, f_s, tau50);
  const double at50 = r.points.empty() ? 0 : r.points.front().adev;
  o.detail << "ADEV(50 s) = " << at50 << " N";
  o.check(rel(at50, 4e-20) < 0.25, "ADEV near 4e-20 N at 50 s");
}

void fits(Outcome& o) {
  std::mt19937_64 gen(2026);
  std::normal_distribution<double> noise(0, 1);
  std::vector<double> r, y, e;
  for (int k = 0; k <= 12; ++k) {
    const double x = 0.1 * k;
    const double v = std::sqrt(0.19 + 3.27 * std::exp(-4 * x));
    r.push_back(x);
    e.push_back(0.02 * v);
    y.push_back(v + e.back() * noise(gen));
  }
  const FitReport sq = fit_squeezing_floor(r, y, e);
  o.detail << "V_ini = " << sq.value("V_ini") << " +- " << sq.error("V_ini") << ", V_n = " << sq.value("V_n") << " +- "
           << sq.error("V_n") << "; ";
  o.check(std::abs(sq.value("V_ini") - 3.27) < 3 * sq.error("V_ini"), "V_ini within errors");
  o.check(std::abs(sq.value("V_n") - 0.19) < 3 * sq.error("V_n"), "V_n within errors");

  const ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  auto series = [&](double gamma, bool prep) {
    SpreadSeries s;
    for (int k = 1; k <= 10; ++k) {
      const double t = 20e-6 * k;
      const double v = prep ? spread_model_prep(cfg, 2.5, gamma, t) : spread_model_hold(cfg, 2.5, gamma, t);
      s.t_tof.push_back(t);
      s.error.push_back(0.01 * v);
      s.sigma_z.push_back(v * (1 + 0.01 * noise(gen)));
    }
    return s;
  };
  const std::vector<double> pressure{1, 2, 4, 8};
  std::vector<double> g, ge;
  bool converged = true, within = true;
  for (double pr : pressure) {
    const double truth = 4e-3 * pr;
    const FitReport h = estimate_heating_rate(series(truth, false), series(truth, true), cfg);
    const auto& trace = h.trace;
    if (trace.size() >= 2) {
      const double last = trace.back(), prev = trace[trace.size() - 2];
      converged = converged && (std::abs(last - prev) < 0.01 * std::abs(last) ||
                                std::abs(last - prev) < 0.01 * h.error("gamma_bg"));
    }
    within = within && std::abs(h.value("gamma_bg") - truth) < 3 * h.error("gamma_bg");
    g.push_back(h.value("gamma_bg"));
    ge.push_back(h.error("gamma_bg"));
  }
  const FitReport line = fit_line(pressure, g, ge);
  o.detail << "gamma/pressure slope " << line.value("slope") << " +- " << line.error("slope");
  o.check(converged, "heating iteration converged below 1%");
  o.check(within, "gamma_bg within errors at every pressure");
  o.check(std::abs(line.value("slope") - 4e-3) < 3 * line.error("slope") &&
              std::abs(line.value("intercept")) < 3 * line.error("intercept"),
          "gamma_bg linear in pressure");
}

struct Criterion {
  int number;
  const char* name;
  double budget_s;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "susceptibility", 1, susceptibility},
      {2, "zero-point bound", 1, zero_point},
      {3, "covariance oracle", 120, covariance_oracle},
      {4, "tomography round trip", 600, tomography_round_trip},
      {5, "Wigner checks", 60, wigner_checks},
      {6, "Fisher equivalence", 300, fisher_equivalence},
      {7, "Gaussian-model suite", 300, gaussian_suite},
      {8, "Allan deviation", 60, allan},
      {9, "fits", 120, fits},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail << " [over the " << c.budget_s << " s budget]";
    }
    std::printf("%s criterion %d (%s, %.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.number, c.name, secs,
                o.detail.str().c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
