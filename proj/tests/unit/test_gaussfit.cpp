#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "tofsense/constants.hpp"
#include "tofsense/errors.hpp"
#include "tofsense/gaussfit.hpp"

using namespace tofsense;

namespace {

std::vector<double> even_phases(std::size_t n, double span = pi) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = span * static_cast<double>(i) / static_cast<double>(n);
  return out;
}

const GaussianModelParams kTruth{0.3, -0.2, 2.0, 0.5, 0.3};

double ks_uniform(std::vector<double> p) {
  std::sort(p.begin(), p.end());
  const double n = static_cast<double>(p.size());
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    d = std::max({d, (static_cast<double>(i) + 1) / n - p[i], p[i] - static_cast<double>(i) / n});
  return d;
}

}  // namespace

TEST_CASE("sigma formula and parameter round trips") {
  const GaussianModelParams p{0, 0, 2, 1, 0};
  CHECK(p.sigma_plus() == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  CHECK(p.sigma_minus() == doctest::Approx(1.0).epsilon(1e-15));
  const Quadratures q = kTruth.to_quadratures();
  const GaussianModelParams back = GaussianModelParams::from_quadratures(q);
  CHECK((back.vector() - kTruth.vector()).norm() < 1e-15);
  // sigma_+-^2 are the covariance eigenvalues.
  Eigen::SelfAdjointEigenSolver<Mat2> es(q.cov);
  CHECK(es.eigenvalues()(0) == doctest::Approx(kTruth.sigma_minus() * kTruth.sigma_minus()));
  CHECK(es.eigenvalues()(1) == doctest::Approx(kTruth.sigma_plus() * kTruth.sigma_plus()));
  // V(phi) is the variance of -z sin(phi) + p cos(phi).
  for (double phi : {0.0, 0.4, 1.9}) {
    Vec2 u(-std::sin(phi), std::cos(phi));
    CHECK(kTruth.variance_at(phi) == doctest::Approx(u.dot(q.cov * u)));
    CHECK(kTruth.mean_at(phi) == doctest::Approx(u.dot(q.mean)));
  }
}

TEST_CASE("log-likelihood special cases and symmetry") {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<PhaseSamples> s;
  for (double phi : {0.1, 0.9, 2.0}) {
    PhaseSamples ps{phi, {}};
    for (int k = 0; k < 50; ++k) ps.values.push_back(1.3 * nd(gen));
    s.push_back(ps);
  }
  // B = 0 and mu = 0: iid normal with variance A.
  double iid = 0;
  for (const auto& ps : s)
    for (double x : ps.values) iid += -0.5 * std::log(2 * pi * 1.7) - x * x / (2 * 1.7);
  CHECK(gaussian_loglik({0, 0, 1.7, 0, 0}, s) == doctest::Approx(iid).epsilon(1e-13));
  CHECK(gaussian_loglik(kTruth, s) == doctest::Approx(gaussian_loglik(kTruth, phase_moments(s))).epsilon(1e-12));

  // Rotating phases by delta and (B_c, B_s) by 2 delta, mu by delta.
  const double delta = 0.37;
  auto rotated = s;
  for (auto& ps : rotated) ps.phase += delta;
  GaussianModelParams r = kTruth;
  r.B_c = kTruth.B_c * std::cos(2 * delta) - kTruth.B_s * std::sin(2 * delta);
  r.B_s = kTruth.B_c * std::sin(2 * delta) + kTruth.B_s * std::cos(2 * delta);
  r.mu_z1 = kTruth.mu_z1 * std::cos(delta) - kTruth.mu_p1 * std::sin(delta);
  r.mu_p1 = kTruth.mu_z1 * std::sin(delta) + kTruth.mu_p1 * std::cos(delta);
  CHECK(gaussian_loglik(r, rotated) == doctest::Approx(gaussian_loglik(kTruth, s)).epsilon(1e-12));

  CHECK_THROWS_AS(gaussian_loglik({0, 0, 1, 2, 0}, s), ParameterError);
}

TEST_CASE("analytic derivatives match finite differences") {
  const auto s = sample_quadratures(kTruth.to_quadratures(), even_phases(7), 40, 2, "test/deriv");
  const auto m = phase_moments(s);
  const GaussianModelParams at{0.1, 0.2, 2.3, 0.4, -0.5};
  const LoglikDerivatives d = gaussian_loglik_derivatives(at, m);
  CHECK(d.value == doctest::Approx(gaussian_loglik(at, m)));
  for (int p = 0; p < 5; ++p) {
    const double h = 1e-5;
    Vec5 up = at.vector(), dn = at.vector();
    up(p) += h;
    dn(p) -= h;
    const auto fu = gaussian_loglik_derivatives(GaussianModelParams::from_vector(up), m);
    const auto fd = gaussian_loglik_derivatives(GaussianModelParams::from_vector(dn), m);
    CHECK(d.gradient(p) == doctest::Approx((fu.value - fd.value) / (2 * h)).epsilon(1e-6));
    for (int q = 0; q < 5; ++q)
      CHECK(d.hessian(q, p) == doctest::Approx((fu.gradient(q) - fd.gradient(q)) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("fit recovers known parameters") {
  const auto s = sample_quadratures(kTruth.to_quadratures(), even_phases(40), 2500, 8, "test/fit");
  const auto m = phase_moments(s);
  const GaussianModelParams fit = fit_gaussian(s);
  CHECK(fit.feasible());
  const Mat5 cov = laplace_covariance(fit, m);
  const Vec5 err = fit.vector() - kTruth.vector();
  for (int p = 0; p < 5; ++p) CHECK(std::abs(err(p)) < 3 * std::sqrt(cov(p, p)));
  // The fit is a stationary point: the remaining Newton step is negligible
  // on the scale of the standard errors.
  const LoglikDerivatives d = gaussian_loglik_derivatives(fit, m);
  const Vec5 step = (-d.hessian).ldlt().solve(d.gradient);
  for (int p = 0; p < 5; ++p) CHECK(std::abs(step(p)) < 1e-4 * std::sqrt(cov(p, p)));
  // Nearby feasible points do worse.
  for (int p = 0; p < 5; ++p) {
    Vec5 v = fit.vector();
    v(p) += 3 * std::sqrt(cov(p, p));
    CHECK(gaussian_loglik(GaussianModelParams::from_vector(v), m) < gaussian_loglik(fit, m));
  }
}

TEST_CASE("ground and squeezed states") {
  {
    const auto s = sample_quadratures(Quadratures{}, even_phases(30), 1000, 5, "test/ground");
    const GaussianModelParams fit = fit_gaussian(s);
    const Mat5 cov = laplace_covariance(fit, phase_moments(s));
    // sigma ~ sqrt(A) near isotropy; propagate the A error.
    const double se = std::sqrt(cov(2, 2) + cov(3, 3) + cov(4, 4)) / 2;
    CHECK(std::abs(fit.sigma_plus() - 1) < 3 * se + 1e-3);
    CHECK(std::abs(fit.sigma_minus() - 1) < 3 * se + 1e-3);
  }
  {
    const double r = 0.890, kappa = 2.5;
    Quadratures q;
    q.cov << kappa * std::exp(-2 * r), 0, 0, kappa * std::exp(2 * r);
    const auto s = sample_quadratures(q, even_phases(60), 2000, 6, "test/squeezed");
    const GaussianModelParams fit = fit_gaussian(s);
    CHECK(fit.sigma_minus() / fit.sigma_plus() == doctest::Approx(std::exp(-2 * r)).epsilon(0.02));
  }
}

TEST_CASE("fit is rotation equivariant") {
  const auto s = sample_quadratures(kTruth.to_quadratures(), even_phases(20), 300, 9, "test/rot");
  const GaussianModelParams a = fit_gaussian(s);
  const double delta = 0.6;
  auto rotated = s;
  for (auto& ps : rotated) ps.phase += delta;
  const GaussianModelParams b = fit_gaussian(rotated);
  CHECK(b.A == doctest::Approx(a.A).epsilon(1e-7));
  CHECK(b.sigma_minus() == doctest::Approx(a.sigma_minus()).epsilon(1e-7));
  CHECK(b.B_c == doctest::Approx(a.B_c * std::cos(2 * delta) - a.B_s * std::sin(2 * delta)).epsilon(1e-6));
  CHECK(b.B_s == doctest::Approx(a.B_c * std::sin(2 * delta) + a.B_s * std::cos(2 * delta)).epsilon(1e-6));
}

TEST_CASE("fit input validation") {
  std::vector<PhaseSamples> few{{0.0, {1, 2}}, {1.0, {0.5}}};
  CHECK_THROWS_AS(fit_gaussian(few), DataError);
  std::vector<PhaseSamples> one{{0.0, {1, 2, 3, 4, 5, 6}}};
  CHECK_THROWS_AS(fit_gaussian(one), DataError);
}

TEST_CASE("G-test on exact expectations and lumping") {
  const auto samples = sample_quadratures(kTruth.to_quadratures(), even_phases(6), 800, 3, "test/g");
  BinningPolicy pol;
  pol.center = false;
  pol.delta = 0.2;
  Sinogram s = bin_samples(samples, pol);
  // Replace the counts by the model expectations.
  const auto e = expected_counts(s, kTruth);
  for (std::size_t i = 0; i < s.size(); ++i) {
    double total = 0;
    for (double x : e[i]) total += x;
    CHECK(total == doctest::Approx(s.histograms[i].total()).epsilon(1e-12));
    s.histograms[i].counts = e[i];
  }
  const GTestReport rep = g_test(s, kTruth);
  CHECK(std::abs(rep.g_raw) < 1e-9);
  CHECK(rep.upper_p_value == doctest::Approx(1.0));

  // Every merged group expects at least 10 counts, groups are contiguous and
  // numbered left to right.
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& lab = rep.lumping[i];
    std::vector<double> sums(lab.back() + 1, 0.0);
    for (std::size_t j = 0; j < lab.size(); ++j) {
      if (j > 0) CHECK((lab[j] == lab[j - 1] || lab[j] == lab[j - 1] + 1));
      sums[lab[j]] += e[i][j];
    }
    for (double x : sums) CHECK(x >= 10.0);
  }
  CHECK(rep.degrees_of_freedom == rep.merged_bins - 6 - 5);
  const GTestReport again = g_test(s, kTruth);
  CHECK(again.lumping == rep.lumping);
}

TEST_CASE("G-test percentile convention and degenerate phases") {
  const auto samples = sample_quadratures(kTruth.to_quadratures(), even_phases(8), 500, 21, "test/pct");
  BinningPolicy pol;
  pol.center = false;
  pol.delta = 0.25;
  const GTestReport rep = g_test(bin_samples(samples, pol), fit_gaussian(samples));
  // percentile z satisfies Phi(z) = 1 - p, so p = 0.522 would read -0.05 sigma.
  CHECK(0.5 * std::erfc(-rep.percentile / std::sqrt(2.0)) == doctest::Approx(1 - rep.upper_p_value).epsilon(1e-9));
  CHECK(rep.williams_q == doctest::Approx(1 + (rep.merged_bins + 1) / (6.0 * 8 * 500)));
  CHECK(rep.g_statistic == doctest::Approx(rep.g_raw / rep.williams_q));

  Sinogram s;
  s.delta = 1.0;
  s.phases = {0.0, 1.0};
  s.histograms = {{{0.0, 1.0}, {3, 2}}, {{0.0, 1.0}, {4, 1}}};
  CHECK_THROWS_AS(g_test(s, kTruth), DataError);
}

TEST_CASE("G-test p-values are uniform under the null") {
  std::vector<double> p;
  for (int run = 0; run < 1000; ++run) {
    const auto samples = sample_quadratures(kTruth.to_quadratures(), even_phases(12), 300, 1000 + run, "test/null");
    BinningPolicy pol;
    pol.center = false;
    pol.delta = 0.3;
    const Sinogram s = bin_samples(samples, pol);
    const GaussianModelParams fit = fit_gaussian(samples);
    p.push_back(g_test(s, fit).upper_p_value);
  }
  const double d = ks_uniform(p);
  MESSAGE("KS distance " << d);
  CHECK(d < 0.05);
}

TEST_CASE("chain diagnostics") {
  std::mt19937_64 gen(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<std::vector<double>> iid(4, std::vector<double>(5000));
  for (auto& c : iid)
    for (double& x : c) x = nd(gen);
  CHECK(iact_geyer(iid) == doctest::Approx(1.0).epsilon(0.1));
  CHECK(split_rhat(iid) < 1.01);

  // AR(1) with coefficient a has IACT (1 + a) / (1 - a).
  const double a = 0.8;
  std::vector<std::vector<double>> ar(4, std::vector<double>(50000));
  for (auto& c : ar) {
    double x = nd(gen) / std::sqrt(1 - a * a);
    for (double& v : c) {
      x = a * x + nd(gen);
      v = x;
    }
  }
  CHECK(iact_geyer(ar) == doctest::Approx(9.0).epsilon(0.1));

  auto shifted = iid;
  for (double& x : shifted[0]) x += 1.0;
  CHECK(split_rhat(shifted) > 1.05);
  auto wide = iid;
  for (double& x : wide[1]) x *= 3.0;
  CHECK(split_rhat(wide) > 1.05);
}

TEST_CASE("sigma summary") {
  const std::vector<GaussianModelParams> same(10, GaussianModelParams{0, 0, 2, 1, 0});
  const SigmaSummary s = sigma_summary(same);
  CHECK(s.plus_hi - s.plus_lo == doctest::Approx(0.0));
  CHECK(s.sigma_minus == doctest::Approx(1.0));
  CHECK(s.sigma_mean == doctest::Approx(0.5 * (1 + std::sqrt(3.0))));
}

TEST_CASE("MCMC posterior on synthetic data") {
  const auto s = sample_quadratures(kTruth.to_quadratures(), even_phases(20), 500, 31, "test/mcmc");
  const GaussianModelParams fit = fit_gaussian(s);
  McmcSettings st;
  st.seed = 5;
  const McmcResult r = run_mcmc(s, fit, st);
  const McmcDiagnostics& d = r.diagnostics;
  MESSAGE("burn-in " << d.burn_in << ", thinning " << d.thinning << ", acceptance " << d.acceptance
                     << ", rhat " << d.split_rhat.maxCoeff());
  CHECK(d.converged);
  CHECK(d.chains == 8);
  CHECK(d.effective_samples >= 6000);
  CHECK(d.split_rhat.maxCoeff() < 1.01);
  CHECK(d.acceptance > 0.15);
  CHECK(d.acceptance < 0.45);
  for (const auto& p : r.draws) CHECK_UNARY(p.feasible());
  // Posterior spread agrees with the Laplace approximation.
  const Mat5 cov = laplace_covariance(fit, phase_moments(s));
  double mean_a = 0, var_a = 0;
  for (const auto& p : r.draws) mean_a += p.A;
  mean_a /= r.draws.size();
  for (const auto& p : r.draws) var_a += (p.A - mean_a) * (p.A - mean_a);
  var_a /= r.draws.size();
  CHECK(std::sqrt(var_a) == doctest::Approx(std::sqrt(cov(2, 2))).epsilon(0.1));
  CHECK(std::abs(mean_a - fit.A) < 0.2 * std::sqrt(cov(2, 2)));
}

TEST_CASE("MCMC 68% intervals cover the truth") {
  // 400 repetitions pin the coverage to about +-2.3 %, so a nominal 68 %
  // interval must land well inside [0.60, 0.76].
  int plus_hits = 0, minus_hits = 0;
  const int reps = 400;
  for (int k = 0; k < reps; ++k) {
    const auto s = sample_quadratures(kTruth.to_quadratures(), even_phases(10), 200, 40000 + k, "test/coverage");
    McmcSettings st;
    st.seed = 60000 + k;
    st.min_effective = 2000;
    const McmcResult r = run_mcmc(s, fit_gaussian(s), st);
    const SigmaSummary sum = sigma_summary(r.draws);
    if (sum.plus_lo <= kTruth.sigma_plus() && kTruth.sigma_plus() <= sum.plus_hi) ++plus_hits;
    if (sum.minus_lo <= kTruth.sigma_minus() && kTruth.sigma_minus() <= sum.minus_hi) ++minus_hits;
  }
  MESSAGE("coverage sigma+ " << plus_hits << "/" << reps << ", sigma- " << minus_hits << "/" << reps);
  CHECK(plus_hits >= 0.60 * reps);
  CHECK(plus_hits <= 0.76 * reps);
  CHECK(minus_hits >= 0.60 * reps);
  CHECK(minus_hits <= 0.76 * reps);
}

TEST_CASE("thermal posterior width") {
  const double n = 0.75;
  Quadratures q;
  q.cov = Mat2::Identity() * (2 * n + 1);
  const auto s = sample_quadratures(q, even_phases(100), 2000, 77, "test/thermal");
  McmcSettings st;
  st.seed = 3;
  const McmcResult r = run_mcmc(s, fit_gaussian(s), st);
  const SigmaSummary sum = sigma_summary(r.draws);
  CHECK(sum.sigma_mean == doctest::Approx(std::sqrt(2 * n + 1)).epsilon(0.02));
  CHECK(sum.mean_lo < sum.sigma_mean);
  CHECK(sum.mean_hi > sum.sigma_mean);
}
