#include "tofsense/gaussfit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "tofsense/constants.hpp"
#include "tofsense/errors.hpp"
#include "tofsense/random.hpp"

namespace tofsense {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Probability of (a, b) under the standard normal, accurate in both tails.
double normal_mass(double a, double b) {
  if (a > 0) return 0.5 * (std::erfc(a / std::sqrt(2.0)) - std::erfc(b / std::sqrt(2.0)));
  return normal_cdf(b) - normal_cdf(a);
}

double inverse_normal(double p) {
  if (p <= 0) return -kInf;
  if (p >= 1) return kInf;
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double total_count(const std::vector<PhaseMoments>& m) {
  double n = 0;
  for (const PhaseMoments& p : m) n += p.n;
  return n;
}

double barrier_gap(const Vec5& v) { return v(2) * v(2) - v(3) * v(3) - v(4) * v(4); }

bool inside(const Vec5& v) { return v(2) > 0 && barrier_gap(v) > 0; }

}  // namespace

// ---------------------------------------------------------------------------

bool GaussianModelParams::feasible() const { return A > std::hypot(B_c, B_s) && std::isfinite(A); }

double GaussianModelParams::sigma_plus() const { return std::sqrt(A + std::hypot(B_c, B_s)); }

double GaussianModelParams::sigma_minus() const { return std::sqrt(std::max(A - std::hypot(B_c, B_s), 0.0)); }

double GaussianModelParams::mean_at(double phase) const {
  return -mu_z1 * std::sin(phase) + mu_p1 * std::cos(phase);
}

double GaussianModelParams::variance_at(double phase) const {
  return A + B_c * std::cos(2 * phase) + B_s * std::sin(2 * phase);
}

Quadratures GaussianModelParams::to_quadratures() const {
  Quadratures q;
  q.mean << mu_z1, mu_p1;
  q.cov << A - B_c, -B_s, -B_s, A + B_c;
  return q;
}

GaussianModelParams GaussianModelParams::from_quadratures(const Quadratures& q) {
  return {q.mean(0), q.mean(1), 0.5 * (q.cov(0, 0) + q.cov(1, 1)), 0.5 * (q.cov(1, 1) - q.cov(0, 0)), -q.cov(0, 1)};
}

Vec5 GaussianModelParams::vector() const { return (Vec5() << mu_z1, mu_p1, A, B_c, B_s).finished(); }

GaussianModelParams GaussianModelParams::from_vector(const Vec5& v) { return {v(0), v(1), v(2), v(3), v(4)}; }

std::vector<PhaseMoments> phase_moments(const std::vector<PhaseSamples>& samples) {
  std::vector<PhaseMoments> out;
  out.reserve(samples.size());
  for (const PhaseSamples& ps : samples) {
    PhaseMoments m{ps.phase, static_cast<double>(ps.values.size()), 0.0, 0.0};
    for (double x : ps.values) {
      m.sum += x;
      m.sum_sq += x * x;
    }
    out.push_back(m);
  }
  return out;
}

LoglikDerivatives gaussian_loglik_derivatives(const GaussianModelParams& params,
                                              const std::vector<PhaseMoments>& moments) {
  LoglikDerivatives d;
  for (const PhaseMoments& pm : moments) {
    if (pm.n == 0) continue;
    const double s = std::sin(pm.phase), c = std::cos(pm.phase);
    const double c2 = std::cos(2 * pm.phase), s2 = std::sin(2 * pm.phase);
    const double m = -params.mu_z1 * s + params.mu_p1 * c;
    const double v = params.A + params.B_c * c2 + params.B_s * s2;
    if (!(v > 0))
      throw ParameterError("Gaussian model variance is not positive at phase " + std::to_string(pm.phase));
    const double r = pm.sum - pm.n * m;
    const double q = pm.sum_sq - 2 * m * pm.sum + pm.n * m * m;
    d.value += -0.5 * pm.n * std::log(2 * pi * v) - q / (2 * v);

    const double l_m = r / v;
    const double l_v = -pm.n / (2 * v) + q / (2 * v * v);
    const double l_mm = -pm.n / v;
    const double l_mv = -r / (v * v);
    const double l_vv = pm.n / (2 * v * v) - q / (v * v * v);
    Vec5 gm, gv;
    gm << -s, c, 0, 0, 0;
    gv << 0, 0, 1, c2, s2;
    d.gradient += l_m * gm + l_v * gv;
    d.hessian += l_mm * gm * gm.transpose() + l_mv * (gm * gv.transpose() + gv * gm.transpose()) +
                 l_vv * gv * gv.transpose();
  }
  return d;
}

double gaussian_loglik(const GaussianModelParams& params, const std::vector<PhaseMoments>& moments) {
  double sum = 0.0;
  for (const PhaseMoments& pm : moments) {
    if (pm.n == 0) continue;
    const double m = params.mean_at(pm.phase);
    const double v = params.variance_at(pm.phase);
    if (!(v > 0))
      throw ParameterError("Gaussian model variance is not positive at phase " + std::to_string(pm.phase));
    const double q = pm.sum_sq - 2 * m * pm.sum + pm.n * m * m;
    sum += -0.5 * pm.n * std::log(2 * pi * v) - q / (2 * v);
  }
  return sum;
}

double gaussian_loglik(const GaussianModelParams& params, const std::vector<PhaseSamples>& samples) {
  // Summed sample by sample here rather than through moments so the two
  // forms can be checked against each other.
  double sum = 0.0;
  for (const PhaseSamples& ps : samples) {
    const double m = params.mean_at(ps.phase);
    const double v = params.variance_at(ps.phase);
    if (!(v > 0))
      throw ParameterError("Gaussian model variance is not positive at phase " + std::to_string(ps.phase));
    for (double x : ps.values) sum += -0.5 * std::log(2 * pi * v) - (x - m) * (x - m) / (2 * v);
  }
  return sum;
}

// ---------------------------------------------------------------------------

namespace {

// Per-phase means and variances regressed on the harmonic dependence of the
// model; used as the starting point of the Newton iteration.
Vec5 moment_start(const std::vector<PhaseMoments>& moments) {
  const auto k = static_cast<Eigen::Index>(moments.size());
  Eigen::MatrixXd am(k, 2), av(k, 3);
  Eigen::VectorXd bm(k), bv(k);
  double pooled = 0, n_tot = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const PhaseMoments& pm = moments[i];
    const double mean = pm.n > 0 ? pm.sum / pm.n : 0.0;
    const double var = pm.n > 1 ? std::max(pm.sum_sq / pm.n - mean * mean, 0.0) : 0.0;
    const double w = std::sqrt(pm.n);
    am.row(i) << -std::sin(pm.phase) * w, std::cos(pm.phase) * w;
    bm(i) = mean * w;
    av.row(i) << w, std::cos(2 * pm.phase) * w, std::sin(2 * pm.phase) * w;
    bv(i) = var * w;
    pooled += pm.n * var;
    n_tot += pm.n;
  }
  Vec5 v;
  v.head<2>() = am.completeOrthogonalDecomposition().solve(bm);
  v.tail<3>() = av.completeOrthogonalDecomposition().solve(bv);
  if (!(v(2) > 0)) v(2) = std::max(pooled / n_tot, 1e-12);
  const double b = std::hypot(v(3), v(4));
  if (!(b < 0.95 * v(2)) && b > 0) v.tail<2>() *= 0.5 * v(2) / b;
  return v;
}

}  // namespace

GaussianModelParams fit_gaussian(const std::vector<PhaseMoments>& moments, const GaussFitOptions& options) {
  const double n_tot = total_count(moments);
  std::size_t phases = 0;
  for (const PhaseMoments& pm : moments)
    if (pm.n > 0) ++phases;
  if (n_tot < 5 || phases < 2) throw DataError("fit_gaussian needs >= 5 samples spanning >= 2 phases");

  Vec5 x = moment_start(moments);
  double grad_norm = kInf;
  // The barrier weight is scaled by the sample count so that the schedule
  // does not depend on the size of the data set.
  for (double mu = options.barrier_start; mu >= options.barrier_end * 0.999; mu *= options.barrier_factor) {
    const double w = mu * n_tot;
    auto objective = [&](const Vec5& v) {
      return gaussian_loglik(GaussianModelParams::from_vector(v), moments) + w * std::log(barrier_gap(v));
    };
    double f = objective(x);
    bool stage_done = false;
    for (int it = 0; it < options.max_newton; ++it) {
      const LoglikDerivatives d = gaussian_loglik_derivatives(GaussianModelParams::from_vector(x), moments);
      const double gap = barrier_gap(x);
      Eigen::Vector3d dg(2 * x(2), -2 * x(3), -2 * x(4));
      Vec5 g = d.gradient;
      Mat5 h = d.hessian;
      g.tail<3>() += w * dg / gap;
      h.bottomRightCorner<3, 3>() +=
          w * (Eigen::Vector3d(2, -2, -2).asDiagonal().toDenseMatrix() / gap - dg * dg.transpose() / (gap * gap));
      grad_norm = d.gradient.norm();

      // Newton direction on -h, regularised until it is an ascent direction.
      Vec5 step;
      double lambda = 0;
      for (int tries = 0; tries < 60; ++tries) {
        const Mat5 neg = -h + lambda * Mat5::Identity();
        Eigen::LLT<Mat5> llt(neg);
        if (llt.info() == Eigen::Success) {
          step = llt.solve(g);
          if (step.allFinite() && g.dot(step) >= 0) break;
        }
        lambda = lambda == 0 ? 1e-8 * (1 + h.diagonal().cwiseAbs().maxCoeff()) : lambda * 10;
      }
      const double decrement = g.dot(step);
      if (decrement < options.gradient_tol) {
        stage_done = true;
        break;
      }
      double t = 1.0;
      bool moved = false;
      for (int bt = 0; bt < 60; ++bt, t *= 0.5) {
        const Vec5 trial = x + t * step;
        if (!inside(trial)) continue;
        const double ft = objective(trial);
        if (ft >= f + 1e-4 * t * decrement) {
          x = trial;
          f = ft;
          moved = true;
          break;
        }
      }
      if (!moved) {
        // No representable improvement left along the Newton direction.
        stage_done = decrement < 1e-6 * std::max(1.0, std::abs(f));
        break;
      }
    }
    if (!stage_done) {
      std::ostringstream msg;
      msg << "fit_gaussian did not converge; last iterate (" << x.transpose() << "), gradient norm " << grad_norm;
      throw ConvergenceError(msg.str());
    }
  }
  return GaussianModelParams::from_vector(x);
}

GaussianModelParams fit_gaussian(const std::vector<PhaseSamples>& samples, const GaussFitOptions& options) {
  return fit_gaussian(phase_moments(samples), options);
}

Mat5 laplace_covariance(const GaussianModelParams& params, const std::vector<PhaseMoments>& moments) {
  const LoglikDerivatives d = gaussian_loglik_derivatives(params, moments);
  return (-d.hessian).inverse();
}

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> expected_counts(const Sinogram& sinogram, const GaussianModelParams& params) {
  sinogram.validate();
  std::vector<std::vector<double>> out;
  out.reserve(sinogram.size());
  for (std::size_t i = 0; i < sinogram.size(); ++i) {
    const Histogram& h = sinogram.histograms[i];
    const double m = params.mean_at(sinogram.phases[i]);
    const double v = params.variance_at(sinogram.phases[i]);
    if (!(v > 0)) throw ParameterError("Gaussian model variance is not positive");
    const double sd = std::sqrt(v);
    const double n = h.total();
    std::vector<double> e(h.counts.size());
    for (std::size_t j = 0; j < e.size(); ++j) {
      const double lo = j == 0 ? -kInf : (h.centers[j] - sinogram.delta / 2 - m) / sd;
      const double hi = j + 1 == e.size() ? kInf : (h.centers[j] + sinogram.delta / 2 - m) / sd;
      e[j] = n * normal_mass(lo, hi);
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

// Group labels for one phase, numbered left to right.
std::vector<int> lump_phase(const std::vector<double>& e, double min_expected) {
  const std::size_t n = e.size();
  const std::size_t mode = static_cast<std::size_t>(std::max_element(e.begin(), e.end()) - e.begin());
  std::vector<std::pair<std::size_t, std::size_t>> left, right;  // [first, last]

  std::size_t start = 0;
  double acc = 0;
  for (std::size_t j = 0; j <= mode; ++j) {
    acc += e[j];
    if (acc >= min_expected) {
      left.emplace_back(start, j);
      start = j + 1;
      acc = 0;
    }
  }
  const std::size_t left_end = start;  // first bin not in a closed left group
  std::size_t stop = n;                // one past the last bin not in a closed right group
  acc = 0;
  for (std::size_t j = n; j-- > mode + 1;) {
    acc += e[j];
    if (acc >= min_expected) {
      right.emplace_back(j, stop - 1);
      stop = j;
      acc = 0;
    }
  }
  std::reverse(right.begin(), right.end());

  std::vector<std::pair<std::size_t, std::size_t>> groups = left;
  if (left_end < stop) {
    double mid = 0;
    for (std::size_t j = left_end; j < stop; ++j) mid += e[j];
    if (mid >= min_expected || (left.empty() && right.empty())) {
      groups.emplace_back(left_end, stop - 1);
    } else if (!left.empty()) {
      groups.back().second = stop - 1;
    } else {
      right.front().first = left_end;
    }
  }
  groups.insert(groups.end(), right.begin(), right.end());

  std::vector<int> label(n, -1);
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t j = groups[g].first; j <= groups[g].second; ++j) label[j] = static_cast<int>(g);
  return label;
}

}  // namespace

GTestReport g_test(const Sinogram& sinogram, const GaussianModelParams& params, double min_expected) {
  if (!params.feasible()) throw ParameterError("g_test: model parameters are not positive definite");
  const auto expected = expected_counts(sinogram, params);
  GTestReport rep;
  double n_total = 0;
  for (std::size_t i = 0; i < sinogram.size(); ++i) {
    const Histogram& h = sinogram.histograms[i];
    std::vector<int> label = lump_phase(expected[i], min_expected);
    const int groups = *std::max_element(label.begin(), label.end()) + 1;
    if (groups < 2)
      throw DataError("g_test: phase " + std::to_string(i) + " collapses to fewer than 2 merged bins");
    std::vector<double> o(groups, 0.0), e(groups, 0.0);
    for (std::size_t j = 0; j < label.size(); ++j) {
      o[label[j]] += h.counts[j];
      e[label[j]] += expected[i][j];
    }
    for (int g = 0; g < groups; ++g)
      if (o[g] > 0) rep.g_raw += 2 * o[g] * std::log(o[g] / e[g]);
    rep.merged_bins += groups;
    n_total += h.total();
    rep.lumping.push_back(std::move(label));
  }
  rep.degrees_of_freedom = rep.merged_bins - static_cast<int>(sinogram.size()) - 5;
  if (rep.degrees_of_freedom < 1) throw DataError("g_test: fewer than one degree of freedom after lumping");
  // Williams (1976): q = 1 + (k^2 - 1) / (6 N nu) with nu = k - 1.
  rep.williams_q = 1 + (rep.merged_bins + 1) / (6 * n_total);
  rep.g_statistic = std::max(rep.g_raw, 0.0) / rep.williams_q;
  rep.upper_p_value = boost::math::gamma_q(0.5 * rep.degrees_of_freedom, 0.5 * rep.g_statistic);
  rep.percentile = inverse_normal(1 - rep.upper_p_value);
  return rep;
}

// ---------------------------------------------------------------------------

double split_rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.empty() || chains.front().size() < 4) throw DataError("split_rhat needs chains of length >= 4");
  const std::size_t half = chains.front().size() / 2;
  std::vector<std::vector<double>> split;
  for (const auto& c : chains) {
    if (c.size() != chains.front().size()) throw DataError("split_rhat: chains differ in length");
    split.emplace_back(c.begin(), c.begin() + half);
    split.emplace_back(c.end() - half, c.end());
  }

  auto rank_normalise = [](std::vector<std::vector<double>> s) {
    std::vector<std::pair<double, std::size_t>> all;
    const std::size_t len = s.front().size();
    for (std::size_t c = 0; c < s.size(); ++c)
      for (std::size_t t = 0; t < len; ++t) all.emplace_back(s[c][t], c * len + t);
    std::sort(all.begin(), all.end());
    const double total = static_cast<double>(all.size());
    for (std::size_t a = 0; a < all.size();) {
      std::size_t b = a;
      while (b < all.size() && all[b].first == all[a].first) ++b;
      const double rank = 0.5 * static_cast<double>(a + 1 + b);  // average of ranks a+1..b
      const double z = inverse_normal((rank - 0.375) / (total + 0.25));
      for (std::size_t k = a; k < b; ++k) s[all[k].second / len][all[k].second % len] = z;
      a = b;
    }
    return s;
  };

  auto classic = [](const std::vector<std::vector<double>>& s) {
    const double n = static_cast<double>(s.front().size());
    const double m = static_cast<double>(s.size());
    std::vector<double> means;
    double w = 0;
    for (const auto& c : s) {
      const double mean = std::accumulate(c.begin(), c.end(), 0.0) / n;
      double ss = 0;
      for (double x : c) ss += (x - mean) * (x - mean);
      w += ss / (n - 1);
      means.push_back(mean);
    }
    w /= m;
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
    double b = 0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    b *= n / (m - 1);
    if (w <= 0) return b <= 0 ? 1.0 : kInf;
    return std::sqrt(((n - 1) / n * w + b / n) / w);
  };

  const double bulk = classic(rank_normalise(split));
  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<long>(pooled.size() / 2), pooled.end());
  const double median = pooled[pooled.size() / 2];
  for (auto& c : split)
    for (double& x : c) x = std::abs(x - median);
  const double folded = classic(rank_normalise(split));
  return std::max(bulk, folded);
}

double iact_geyer(const std::vector<std::vector<double>>& chains) {
  if (chains.empty() || chains.front().size() < 4) throw DataError("iact_geyer needs chains of length >= 4");
  const std::size_t n = chains.front().size();
  std::vector<std::vector<double>> centred;
  double var = 0;
  for (const auto& c : chains) {
    const double mean = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(n);
    std::vector<double> d(n);
    for (std::size_t t = 0; t < n; ++t) d[t] = c[t] - mean;
    for (double x : d) var += x * x;
    centred.push_back(std::move(d));
  }
  var /= static_cast<double>(n * chains.size());
  if (var <= 0) return 1.0;
  auto rho = [&](std::size_t lag) {
    double s = 0;
    for (const auto& d : centred)
      for (std::size_t t = 0; t + lag < n; ++t) s += d[t] * d[t + lag];
    return s / (static_cast<double>(n * chains.size()) * var);
  };
  // Sums of adjacent pairs are positive and decreasing for a reversible
  // chain; truncate at the first non-positive pair and enforce monotonicity.
  double tau = -1.0;
  double prev = kInf;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double gamma = rho(2 * k) + rho(2 * k + 1);
    if (gamma <= 0) break;
    gamma = std::min(gamma, prev);
    prev = gamma;
    tau += 2 * gamma;
  }
  return std::max(tau, 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------

namespace {

struct Chain {
  Vec5 x;
  double ll;
  RandomStream rng;
  std::vector<Vec5> draws;
  long accepted = 0;
};

double target(const Vec5& v, const std::vector<PhaseMoments>& moments) {
  if (!inside(v)) return -kInf;
  return gaussian_loglik(GaussianModelParams::from_vector(v), moments);
}

void advance(Chain& ch, const Vec5& scale, const std::vector<PhaseMoments>& moments, int steps) {
  for (int s = 0; s < steps; ++s) {
    Vec5 prop = ch.x;
    for (int p = 0; p < 5; ++p) prop(p) += scale(p) * ch.rng.normal();
    const double ll = target(prop, moments);
    if (std::isfinite(ll) && std::log(ch.rng.uniform()) < ll - ch.ll) {
      ch.x = prop;
      ch.ll = ll;
      ++ch.accepted;
    }
    ch.draws.push_back(ch.x);
  }
}

std::vector<std::vector<double>> component(const std::vector<Chain>& chains, int p, std::size_t from) {
  std::vector<std::vector<double>> out;
  for (const Chain& c : chains) {
    std::vector<double> v;
    v.reserve(c.draws.size() - from);
    for (std::size_t t = from; t < c.draws.size(); ++t) v.push_back(c.draws[t](p));
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

McmcResult run_mcmc(const std::vector<PhaseMoments>& moments, const GaussianModelParams& init,
                    const McmcSettings& settings) {
  if (!init.feasible()) throw ParameterError("run_mcmc: initial parameters are not positive definite");
  if (settings.chains < 2 || settings.batch < 8 || settings.min_effective < 1)
    throw ParameterError("run_mcmc: need >= 2 chains, batch >= 8 and min_effective >= 1");

  const Mat5 laplace = laplace_covariance(init, moments);
  Vec5 base = laplace.diagonal().cwiseMax(0).cwiseSqrt();
  for (int p = 0; p < 5; ++p)
    if (!(base(p) > 0) || !std::isfinite(base(p))) base(p) = 1e-3 * std::max(1.0, std::abs(init.A));
  double global = 2.38 / std::sqrt(5.0);

  std::vector<Chain> chains;
  for (int c = 0; c < settings.chains; ++c) {
    Chain ch{init.vector(), 0.0, RandomStream(settings.seed, "gaussfit/mcmc/" + std::to_string(c)), {}, 0};
    // Overdispersed start: two Laplace standard deviations around the fit.
    for (int attempt = 0; attempt < 100; ++attempt) {
      Vec5 trial = init.vector();
      for (int p = 0; p < 5; ++p) trial(p) += 2 * base(p) * ch.rng.normal();
      if (inside(trial)) {
        ch.x = trial;
        break;
      }
    }
    ch.ll = target(ch.x, moments);
    chains.push_back(std::move(ch));
  }

  McmcResult res;
  McmcDiagnostics& diag = res.diagnostics;
  diag.chains = settings.chains;

  // Burn-in with adaptation.
  bool burned_in = false;
  while (true) {
    long acc_before = 0;
    for (const Chain& c : chains) acc_before += c.accepted;
    for (Chain& c : chains) advance(c, global * base, moments, settings.batch);
    long acc_after = 0;
    for (const Chain& c : chains) acc_after += c.accepted;
    const double rate =
        static_cast<double>(acc_after - acc_before) / static_cast<double>(settings.batch * settings.chains);
    const std::size_t len = chains.front().draws.size();

    bool ok = true;
    for (int p = 0; p < 5 && ok; ++p) ok = split_rhat(component(chains, p, len / 2)) < settings.rhat_limit;
    if (ok) {
      burned_in = true;
      break;
    }
    if (static_cast<long>(len) >= settings.max_draws_per_chain / 2) break;

    if (rate < 0.2) global *= 0.7;
    else if (rate > 0.4) global *= 1.4;
    // Per-parameter scales follow the spread of the latest half.
    for (int p = 0; p < 5; ++p) {
      double s = 0, s2 = 0, n = 0;
      for (const Chain& c : chains)
        for (std::size_t t = len / 2; t < len; ++t) {
          s += c.draws[t](p);
          s2 += c.draws[t](p) * c.draws[t](p);
          ++n;
        }
      const double sd = std::sqrt(std::max(s2 / n - (s / n) * (s / n), 0.0));
      if (sd > 0) base(p) = sd;
    }
  }
  diag.burn_in = static_cast<long>(chains.front().draws.size());
  diag.proposal_scale = global * base;
  for (Chain& c : chains) {
    c.draws.clear();
    c.accepted = 0;
  }

  // Production with the frozen proposal.
  Vec5 iact = Vec5::Ones();
  int thin = 1;
  while (true) {
    for (Chain& c : chains) advance(c, diag.proposal_scale, moments, settings.batch);
    const std::size_t len = chains.front().draws.size();
    for (int p = 0; p < 5; ++p) iact(p) = iact_geyer(component(chains, p, 0));
    thin = static_cast<int>(std::ceil(iact.maxCoeff()));
    const long kept = static_cast<long>(len / static_cast<std::size_t>(thin)) * settings.chains;
    if (kept >= settings.min_effective) break;
    if (diag.burn_in + static_cast<long>(len) >= settings.max_draws_per_chain) {
      burned_in = false;
      break;
    }
  }

  const std::size_t len = chains.front().draws.size();
  diag.draws_per_chain = static_cast<long>(len);
  diag.thinning = thin;
  diag.iact = iact;
  long acc = 0;
  for (const Chain& c : chains) acc += c.accepted;
  diag.acceptance = static_cast<double>(acc) / static_cast<double>(len * chains.size());
  for (int p = 0; p < 5; ++p) diag.split_rhat(p) = split_rhat(component(chains, p, 0));

  for (int c = 0; c < settings.chains; ++c)
    for (std::size_t t = static_cast<std::size_t>(thin) - 1; t < len; t += static_cast<std::size_t>(thin)) {
      res.draws.push_back(GaussianModelParams::from_vector(chains[c].draws[t]));
      res.chain_index.push_back(c);
      res.iteration.push_back(static_cast<long>(t));
    }
  diag.effective_samples = static_cast<long>(res.draws.size());
  diag.converged = burned_in && diag.split_rhat.maxCoeff() < settings.rhat_limit &&
                   diag.effective_samples >= settings.min_effective;
  const SigmaSummary sum = sigma_summary(res.draws);
  diag.sigma_plus_lo = sum.plus_lo;
  diag.sigma_plus_hi = sum.plus_hi;
  diag.sigma_minus_lo = sum.minus_lo;
  diag.sigma_minus_hi = sum.minus_hi;
  return res;
}

McmcResult run_mcmc(const std::vector<PhaseSamples>& samples, const GaussianModelParams& init,
                    const McmcSettings& settings) {
  return run_mcmc(phase_moments(samples), init, settings);
}

SigmaSummary sigma_summary(const std::vector<GaussianModelParams>& draws) {
  SigmaSummary s;
  if (draws.empty()) return s;
  std::vector<double> plus, minus, mean;
  for (const GaussianModelParams& d : draws) {
    plus.push_back(d.sigma_plus());
    minus.push_back(d.sigma_minus());
    mean.push_back(0.5 * (plus.back() + minus.back()));
  }
  auto summarise = [](std::vector<double>& v, double& centre, double& lo, double& hi) {
    centre = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    std::sort(v.begin(), v.end());
    lo = quantile_sorted(v, 0.16);
    hi = quantile_sorted(v, 0.84);
  };
  summarise(plus, s.sigma_plus, s.plus_lo, s.plus_hi);
  summarise(minus, s.sigma_minus, s.minus_lo, s.minus_hi);
  summarise(mean, s.sigma_mean, s.mean_lo, s.mean_hi);
  return s;
}

}  // namespace tofsense
