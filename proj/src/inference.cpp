#include "tofsense/inference.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include <unsupported/Eigen/NonLinearOptimization>

#include "tofsense/constants.hpp"
#include "tofsense/errors.hpp"
#include "tofsense/random.hpp"

namespace tofsense {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Residual = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using Jacobian = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

struct LsqFunctor {
  using Scalar = double;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;

  Residual f;
  Jacobian j;
  int n_in;
  int n_out;

  int inputs() const { return n_in; }
  int values() const { return n_out; }
  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& out) const {
    out = f(x);
    return 0;
  }
  int df(const Eigen::VectorXd& x, Eigen::MatrixXd& out) const {
    out = j(x);
    return 0;
  }
};

// Central-difference Jacobian for residuals without an analytic one.
Jacobian numeric_jacobian(Residual f) {
  return [f](const Eigen::VectorXd& x) {
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd jac(f0.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const double h = 1e-6 * std::max(std::abs(x(k)), 1e-8);
      Eigen::VectorXd up = x, dn = x;
      up(k) += h;
      dn(k) -= h;
      jac.col(k) = (f(up) - f(dn)) / (2 * h);
    }
    return jac;
  };
}

struct LsqOutcome {
  Eigen::VectorXd x;
  double chi2 = kInf;
  bool ok = false;
};

LsqOutcome least_squares(const Residual& f, const Jacobian& j, Eigen::VectorXd x0, int n_out) {
  LsqFunctor fun{f, j, static_cast<int>(x0.size()), n_out};
  Eigen::LevenbergMarquardt<LsqFunctor> lm(fun);
  lm.parameters.xtol = 1e-15;
  lm.parameters.ftol = 1e-15;
  lm.parameters.maxfev = 20000;
  const auto status = lm.minimize(x0);
  LsqOutcome out;
  out.x = x0;
  const Eigen::VectorXd r = f(x0);
  out.chi2 = r.allFinite() ? r.squaredNorm() : kInf;
  out.ok = status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters &&
           status != Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation && x0.allFinite();
  return out;
}

// Parameter errors from the weighted Jacobian; scaled by the reduced chi^2
// when the data carried no uncertainties.
Eigen::VectorXd parameter_errors(const Eigen::MatrixXd& jac, double chi2, int dof, bool absolute) {
  // Columns are scaled to unit norm first; the parameters span many decades.
  Eigen::VectorXd scale = jac.colwise().norm().transpose();
  for (Eigen::Index k = 0; k < scale.size(); ++k)
    if (!(scale(k) > 0)) scale(k) = 1.0;
  const Eigen::MatrixXd js = jac * scale.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd cov = (js.transpose() * js).completeOrthogonalDecomposition().pseudoInverse();
  Eigen::VectorXd se = cov.diagonal().cwiseMax(0).cwiseSqrt().cwiseQuotient(scale);
  if (!absolute) se *= dof > 0 ? std::sqrt(chi2 / dof) : 0.0;
  return se;
}

std::vector<double> unit_sigma(std::size_t n, const std::vector<double>& sigma) {
  if (sigma.empty()) return std::vector<double>(n, 1.0);
  if (sigma.size() != n) throw DataError("sigma must match the data length");
  for (double s : sigma)
    if (!(s > 0)) throw DataError("standard errors must be positive");
  return sigma;
}

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DataError(std::string(what) + ": input lengths differ");
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double FitReport::value(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values[i];
  throw ParameterError("fit report has no parameter " + name);
}

double FitReport::error(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return errors[i];
  throw ParameterError("fit report has no parameter " + name);
}

// ---------------------------------------------------------------------------

double translation_fisher(std::span<const double> pdf, double dx) {
  if (pdf.size() < 5 || !(dx > 0)) throw ParameterError("translation_fisher needs >= 5 points and dx > 0");
  const double peak = *std::max_element(pdf.begin(), pdf.end());
  if (!(peak > 0)) throw ParameterError("translation_fisher: density is zero everywhere");
  if (pdf.front() > 1e-8 * peak || pdf.back() > 1e-8 * peak)
    throw ParameterError("translation_fisher: density at the grid edge exceeds 1e-8 of the peak; widen the grid");
  // 4 * integral of (d sqrt(P)/dx)^2, differenced between neighbours so that
  // zeros of P (Fock-state nodes) need no special treatment.
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < pdf.size(); ++k) {
    const double d = std::sqrt(std::max(pdf[k + 1], 0.0)) - std::sqrt(std::max(pdf[k], 0.0));
    sum += d * d;
  }
  return 4 * sum / dx;
}

double d_theta(const ProtocolConfig& cfg, bool with_prep) {
  const double w = cfg.hold_frequency(with_prep ? Prep::squeeze : Prep::hold);
  const double t = cfg.t_tof;
  const double t_sp = canonical_prep_time(cfg, with_prep);
  return cfg.g * t * std::sin(w * t_sp) / w + 0.5 * cfg.g * t * t;
}

FisherResult fisher_sensitivity(const DensityMatrix& rho, const ProtocolConfig& cfg, bool with_prep,
                                const Frame& frame) {
  cfg.validate();
  if (!(cfg.t_tof > 0)) throw ParameterError("fisher_sensitivity: t_tof must be > 0");
  const Prep prep = with_prep ? Prep::squeeze : Prep::hold;
  const double w = cfg.hold_frequency(prep);
  if (std::abs(frame.omega - w) > 1e-9 * w || std::abs(frame.mass - cfg.mass) > 1e-9 * cfg.mass)
    throw ParameterError(std::string("fisher_sensitivity: state frame does not match the protocol (expected omega") +
                         (with_prep ? "1" : "0") + ")");

  FisherResult out;
  const double t = cfg.t_tof;
  if (w * t < 5) out.warnings.push_back("omega t_tof < 5: long-TOF approximation is poor");
  const double t_sp = canonical_prep_time(cfg, with_prep);
  out.phase = w * t_sp - std::atan(1.0 / (w * t));

  const Quadratures q = moments(rho);
  const double s = std::sin(out.phase), c = std::cos(out.phase);
  const double mean = -q.mean(0) * s + q.mean(1) * c;
  const double var = q.cov(0, 0) * s * s + q.cov(1, 1) * c * c - 2 * q.cov(0, 1) * s * c;
  const double sd = std::sqrt(std::max(var, 1e-12));
  // Small populations near n_max reach out to their classical turning point,
  // well beyond the bulk of the distribution.
  const double half = std::max(10 * sd, std::sqrt(4.0 * rho.n_max() + 2) + 8);
  constexpr int kPoints = 4001;
  std::vector<double> grid(kPoints);
  const double dx = 2 * half / (kPoints - 1);
  for (int k = 0; k < kPoints; ++k) grid[k] = mean - half + k * dx;
  const std::vector<double> pdf = quadrature_pdf(rho, out.phase, grid);
  out.fisher_p = translation_fisher(pdf, dx);

  out.d_theta = d_theta(cfg, with_prep);
  const double scale2 = (t / cfg.mass) * (t / cfg.mass) * (hbar * cfg.mass * w / 2);
  out.F_theta = out.d_theta * out.d_theta / scale2 * out.fisher_p;
  const double mg = cfg.mass * cfg.g;
  out.F_force = out.F_theta / (mg * mg);
  out.sensitivity = 1.0 / std::sqrt(out.F_force);
  return out;
}

FisherResult fisher_sensitivity(const DensityMatrix& rho, const ProtocolConfig& cfg, bool with_prep) {
  return fisher_sensitivity(rho, cfg, with_prep, measurement_frame(cfg, with_prep ? Prep::squeeze : Prep::hold));
}

namespace {

std::pair<long, long> grid_range(const Sinogram& s) {
  long lo = std::numeric_limits<long>::max(), hi = std::numeric_limits<long>::min();
  for (const Histogram& h : s.histograms) {
    lo = std::min(lo, std::lround(h.centers.front() / s.delta));
    hi = std::max(hi, std::lround(h.centers.back() / s.delta));
  }
  return {lo, hi};
}

}  // namespace

FisherResult bootstrap_fisher(const std::vector<PhaseSamples>& samples, const ProtocolConfig& cfg, bool with_prep,
                              const BootstrapSettings& settings) {
  if (settings.resamples < 1) throw ParameterError("bootstrap needs >= 1 resample");
  settings.mle.validate();
  const Sinogram full = bin_samples(samples, settings.binning);
  const MleResult base = reconstruct(full, settings.mle);
  FisherResult out = fisher_sensitivity(base.rho, cfg, with_prep);
  if (!base.converged()) out.warnings.push_back("full-data reconstruction did not converge");

  BinningPolicy policy = settings.binning;
  policy.delta = full.delta;
  auto [kmin, kmax] = grid_range(full);
  constexpr long kMargin = 4;
  auto cache = std::make_unique<ProjectorCache>(full.phases, full.delta, kmin - kMargin, kmax + kMargin,
                                                settings.mle.n_max);

  std::vector<double> sens;
  int audited = 0;
  double audit_diff_sq = 0;
  for (int b = 0; b < settings.resamples; ++b) {
    RandomStream rng(settings.seed, "inference/bootstrap/" + std::to_string(b));
    std::vector<PhaseSamples> draw;
    draw.reserve(samples.size());
    for (const PhaseSamples& ps : samples) {
      PhaseSamples r{ps.phase, std::vector<double>(ps.values.size())};
      for (double& v : r.values) v = ps.values[rng.below(ps.values.size())];
      draw.push_back(std::move(r));
    }
    try {
      const Sinogram sino = bin_samples(draw, policy);
      const auto [lo, hi] = grid_range(sino);
      if (lo < cache->kmin() || hi > cache->kmax()) {
        kmin = std::min(kmin, lo);
        kmax = std::max(kmax, hi);
        cache = std::make_unique<ProjectorCache>(full.phases, full.delta, kmin - kMargin, kmax + kMargin,
                                                 settings.mle.n_max);
      }
      // The first `audit` resamples are solved both ways and keep the cold
      // result. Warm starts are used afterwards only if the two agreed.
      const bool auditing = audited < settings.audit;
      const bool warm = !auditing && out.bootstrap_warm;
      const MleResult res = warm ? reconstruct(sino, *cache, settings.mle, base.rho)
                                 : reconstruct(sino, *cache, settings.mle);
      if (!res.converged()) {
        ++out.bootstrap_failures;
        continue;
      }
      const double s = fisher_sensitivity(res.rho, cfg, with_prep).sensitivity;
      sens.push_back(s);
      if (auditing) {
        const MleResult hot = reconstruct(sino, *cache, settings.mle, base.rho);
        const double sw = fisher_sensitivity(hot.rho, cfg, with_prep).sensitivity;
        out.audit_max_rel_diff = std::max(out.audit_max_rel_diff, std::abs(sw - s) / s);
        audit_diff_sq += (sw - s) * (sw - s);
        if (++audited == settings.audit) {
          // Warm starts pull every resample towards the full-data estimate,
          // so they must also be small against the spread of the cold results.
          const double mean = std::accumulate(sens.begin(), sens.end(), 0.0) / static_cast<double>(sens.size());
          double var = 0;
          for (double v : sens) var += (v - mean) * (v - mean);
          const double spread = sens.size() > 1 ? std::sqrt(var / static_cast<double>(sens.size() - 1)) : 0.0;
          const double rms_diff = std::sqrt(audit_diff_sq / audited);
          out.bootstrap_warm = out.audit_max_rel_diff <= 0.01 && rms_diff <= 0.2 * spread;
          if (!out.bootstrap_warm)
            out.warnings.push_back("warm starts disagree with cold starts (max " +
                                   std::to_string(100 * out.audit_max_rel_diff) +
                                   " %, or large against the bootstrap spread); all resamples use cold starts");
        }
      }
    } catch (const Error&) {
      ++out.bootstrap_failures;
    }
  }
  out.bootstrap_samples = static_cast<int>(sens.size());
  if (out.bootstrap_failures > 0.1 * settings.resamples) {
    std::ostringstream msg;
    msg << "bootstrap: " << out.bootstrap_failures << " of " << settings.resamples << " resamples failed";
    throw ConvergenceError(msg.str());
  }
  out.bootstrap_mean = std::accumulate(sens.begin(), sens.end(), 0.0) / static_cast<double>(sens.size());
  out.bootstrap_lo = percentile(sens, 0.16);
  out.bootstrap_hi = percentile(sens, 0.84);
  out.bootstrap_degenerate = sens.size() < 2;
  if (out.bootstrap_degenerate) out.warnings.push_back("bootstrap interval is degenerate (fewer than 2 resamples)");
  return out;
}

// ---------------------------------------------------------------------------

FitReport fit_oscillation_offset(const std::vector<double>& t_sp, const std::vector<double>& mu_z,
                                 double omega_guess, std::optional<double> b5, const std::vector<double>& sigma) {
  check_lengths(t_sp.size(), mu_z.size(), "fit_oscillation_offset");
  if (t_sp.size() < 8) throw DataError("fit_oscillation_offset needs >= 8 points");
  if (!(omega_guess > 0)) throw ParameterError("fit_oscillation_offset: omega_guess must be > 0");
  const auto [tmin, tmax] = std::minmax_element(t_sp.begin(), t_sp.end());
  if ((*tmax - *tmin) * omega_guess < 2 * pi) throw DataError("fit_oscillation_offset: data must span >= one period");
  const std::vector<double> sg = unit_sigma(t_sp.size(), sigma);
  const int n = static_cast<int>(t_sp.size());
  const bool free_b5 = !b5.has_value();

  auto unpack = [&](const Eigen::VectorXd& x) {
    return std::array<double, 5>{x(0), x(1), x(2), x(3), free_b5 ? x(4) : *b5};
  };
  const Residual f = [&](const Eigen::VectorXd& x) {
    const auto b = unpack(x);
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) r(i) = (std::abs(b[0] + b[1] * std::cos(b[2] * t_sp[i] + b[3])) + b[4] - mu_z[i]) / sg[i];
    return r;
  };
  const Jacobian jac = [&](const Eigen::VectorXd& x) {
    const auto b = unpack(x);
    Eigen::MatrixXd j(n, x.size());
    for (int i = 0; i < n; ++i) {
      const double arg = b[2] * t_sp[i] + b[3];
      const double inner = b[0] + b[1] * std::cos(arg);
      const double s = inner >= 0 ? 1.0 : -1.0;
      j(i, 0) = s;
      j(i, 1) = s * std::cos(arg);
      j(i, 2) = -s * b[1] * std::sin(arg) * t_sp[i];
      j(i, 3) = -s * b[1] * std::sin(arg);
      if (free_b5) j(i, 4) = 1.0;
      j.row(i) /= sg[i];
    }
    return j;
  };

  const double ymin = *std::min_element(mu_z.begin(), mu_z.end());
  const double ymax = *std::max_element(mu_z.begin(), mu_z.end());
  const double b5_start = free_b5 ? std::min(ymin, 0.0) : *b5;
  const double amp = std::max(ymax - b5_start, 1e-30);
  const double mean = std::accumulate(mu_z.begin(), mu_z.end(), 0.0) / n;
  // Oscillation-dominated starts at four phases, plus one nearly flat start.
  std::vector<std::array<double, 3>> starts;
  for (double b4 : {0.0, pi / 2, pi, 3 * pi / 2}) starts.push_back({0.1 * amp, 0.9 * amp, b4});
  starts.push_back({mean - b5_start, 0.01 * (ymax - ymin) + 1e-6 * amp, 0.0});
  LsqOutcome best;
  for (const auto& st : starts) {
    Eigen::VectorXd x0(free_b5 ? 5 : 4);
    x0(0) = st[0];
    x0(1) = st[1];
    x0(2) = omega_guess;
    x0(3) = st[2];
    if (free_b5) x0(4) = b5_start;
    const LsqOutcome o = least_squares(f, jac, x0, n);
    if (o.ok && o.chi2 < best.chi2) best = o;
  }
  if (!best.ok) throw ConvergenceError("fit_oscillation_offset: no start converged");

  // |b1 + b2 cos(b3 t + b4)| is unchanged by (b2, b4) -> (-b2, b4 + pi),
  // (b3, b4) -> (-b3, -b4) and (b1, b2, b4) -> (-b1, b2, b4 + pi).
  // Report b3 > 0, b2 >= 0 and b4 in (-pi/2, pi/2].
  Eigen::VectorXd x = best.x;
  if (x(2) < 0) {
    x(2) = -x(2);
    x(3) = -x(3);
  }
  if (x(1) < 0) {
    x(1) = -x(1);
    x(3) += pi;
  }
  x(3) = std::remainder(x(3), 2 * pi);
  if (x(3) <= -pi / 2 || x(3) > pi / 2) {
    x(0) = -x(0);
    x(3) = std::remainder(x(3) + pi, 2 * pi);
  }

  FitReport rep;
  rep.model = "|b1 + b2 cos(b3 t + b4)| + b5";
  rep.names = {"b1", "b2", "b3", "b4", "b5"};
  const auto b = unpack(x);
  rep.values.assign(b.begin(), b.end());
  const Eigen::VectorXd r = f(x);
  rep.chi2 = r.squaredNorm();
  rep.dof = n - static_cast<int>(x.size());
  const Eigen::VectorXd se = parameter_errors(jac(x), rep.chi2, rep.dof, !sigma.empty());
  rep.errors = {se(0), se(1), se(2), se(3), free_b5 ? se(4) : 0.0};
  double ss = 0;
  for (int i = 0; i < n; ++i) ss += std::pow(r(i) * sg[i], 2);
  rep.rms_residual = std::sqrt(ss / n);
  if (!free_b5) rep.notes.push_back("b5 held fixed");
  return rep;
}

double offset_theory(const ProtocolConfig& cfg) {
  const double t = cfg.t_tof;
  return 0.5 * cfg.g * std::sin(cfg.theta) *
         (t * t - 1 / (cfg.omega0 * cfg.omega0) + 1 / (cfg.omega1 * cfg.omega1));
}

double tilt_from_offset(double b1, const ProtocolConfig& cfg) {
  const double t = cfg.t_tof;
  const double k = 0.5 * cfg.g * (t * t - 1 / (cfg.omega0 * cfg.omega0) + 1 / (cfg.omega1 * cfg.omega1));
  const double s = b1 / k;
  if (std::abs(s) > 1) throw DataError("tilt_from_offset: offset too large for any tilt");
  return std::asin(s);
}

FitReport fit_line(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& sigma) {
  check_lengths(x.size(), y.size(), "fit_line");
  if (x.size() < 2) throw DataError("fit_line needs >= 2 points");
  const std::vector<double> sg = unit_sigma(x.size(), sigma);
  const std::size_t n = x.size();
  double sw = 0, swx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 1 / (sg[i] * sg[i]);
    sw += w;
    swx += w * x[i];
  }
  // Work about the weighted mean of x so that the normal equations decouple.
  const double xbar = swx / sw;
  double sxx = 0, sy = 0, sxy = 0, xmax = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 1 / (sg[i] * sg[i]);
    const double dx = x[i] - xbar;
    sxx += w * dx * dx;
    sy += w * y[i];
    sxy += w * dx * y[i];
    xmax = std::max(xmax, std::abs(x[i]));
  }
  if (!(sxx > 1e-24 * sw * xmax * xmax) || xmax == 0)
    throw DataError("fit_line: design matrix is rank deficient (all x equal?)");
  const double slope = sxy / sxx;
  const double intercept = sy / sw - slope * xbar;

  FitReport rep;
  rep.model = "y = intercept + slope x";
  rep.names = {"intercept", "slope"};
  rep.values = {intercept, slope};
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - intercept - slope * x[i];
    rep.chi2 += r * r / (sg[i] * sg[i]);
    ss += r * r;
  }
  rep.dof = static_cast<int>(n) - 2;
  double scale = 1.0;
  if (sigma.empty()) scale = rep.dof > 0 ? std::sqrt(rep.chi2 / rep.dof) : 0.0;
  rep.errors = {std::sqrt(1 / sw + xbar * xbar / sxx) * scale, std::sqrt(1 / sxx) * scale};
  rep.rms_residual = std::sqrt(ss / static_cast<double>(n));
  return rep;
}

FitReport fit_susceptibility(const std::vector<double>& theta, const std::vector<double>& mu_z,
                             const std::vector<double>& sigma, const ProtocolConfig& cfg) {
  check_lengths(theta.size(), mu_z.size(), "fit_susceptibility");
  std::vector<double> force(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) force[i] = cfg.mass * cfg.g * std::sin(theta[i]);
  FitReport rep = fit_line(force, mu_z, sigma);
  rep.model = "mu_z = intercept + slope * m g sin(theta)";
  if (theta.size() < 3) rep.notes.push_back("fewer than 3 tilt angles");
  return rep;
}

double normalized_spread(double sigma_z, const ProtocolConfig& cfg) {
  return cfg.mass * sigma_z / (cfg.t_tof * std::sqrt(hbar * cfg.mass * cfg.omega0 / 2));
}

FitReport fit_squeezing_floor(const std::vector<double>& r, const std::vector<double>& y,
                              const std::vector<double>& sigma) {
  check_lengths(r.size(), y.size(), "fit_squeezing_floor");
  std::vector<double> distinct = r;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 4) throw DataError("fit_squeezing_floor needs >= 4 distinct r values");
  const std::vector<double> sg = unit_sigma(r.size(), sigma);
  const int n = static_cast<int>(r.size());

  // Parameters (V_ini, V_n); `fixed` pins one of them at zero.
  auto make = [&](int fixed) {
    auto full = [fixed](const Eigen::VectorXd& x) {
      Eigen::Vector2d v;
      if (fixed < 0) v = x.head<2>();
      else if (fixed == 0) v << 0.0, x(0);
      else v << x(0), 0.0;
      return v;
    };
    Residual f = [&, full](const Eigen::VectorXd& x) {
      const Eigen::Vector2d v = full(x);
      Eigen::VectorXd res(n);
      for (int i = 0; i < n; ++i) res(i) = (std::sqrt(std::max(v(1) + v(0) * std::exp(-4 * r[i]), 0.0)) - y[i]) / sg[i];
      return res;
    };
    return std::make_pair(f, full);
  };

  // Linear start from y^2 = V_n + V_ini e^{-4r}.
  Eigen::MatrixXd a(n, 2);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) {
    a.row(i) << std::exp(-4 * r[i]), 1.0;
    b(i) = y[i] * y[i];
  }
  Eigen::Vector2d start = a.colPivHouseholderQr().solve(b);
  start = start.cwiseMax(1e-6);

  auto [f2, full2] = make(-1);
  LsqOutcome best = least_squares(f2, numeric_jacobian(f2), start, n);
  Eigen::Vector2d v = best.x;
  int fixed = -1;
  if (!best.ok || v.minCoeff() < 0) {
    // Active set: pin the offending parameter at zero and refit the other.
    best = LsqOutcome{};
    for (int k = 0; k < 2; ++k) {
      auto [f1, full1] = make(k);
      Eigen::VectorXd x0(1);
      x0(0) = std::max(start(1 - k), 1e-6);
      const LsqOutcome o = least_squares(f1, numeric_jacobian(f1), x0, n);
      if (o.ok && o.x(0) >= 0 && o.chi2 < best.chi2) {
        best = o;
        v = full1(o.x);
        fixed = k;
      }
    }
    if (!best.ok) throw ConvergenceError("fit_squeezing_floor did not converge");
  }

  FitReport rep;
  rep.model = "sqrt(V_n + V_ini exp(-4 r))";
  rep.names = {"V_ini", "V_n"};
  rep.values = {v(0), v(1)};
  auto [ff, fullf] = make(-1);
  const Eigen::VectorXd res = ff(v);
  rep.chi2 = res.squaredNorm();
  rep.dof = n - (fixed < 0 ? 2 : 1);
  Eigen::VectorXd se = parameter_errors(numeric_jacobian(ff)(v), rep.chi2, rep.dof, !sigma.empty());
  if (fixed >= 0) {
    auto [f1, full1] = make(fixed);
    Eigen::VectorXd x1(1);
    x1(0) = v(1 - fixed);
    const Eigen::VectorXd s1 = parameter_errors(numeric_jacobian(f1)(x1), rep.chi2, rep.dof, !sigma.empty());
    se.setZero();
    se(1 - fixed) = s1(0);
    rep.notes.push_back(std::string(fixed == 0 ? "V_ini" : "V_n") + " at the constraint boundary 0");
  }
  rep.errors = {se(0), se(1)};
  double ss = 0;
  for (int i = 0; i < n; ++i) ss += std::pow(res(i) * sg[i], 2);
  rep.rms_residual = std::sqrt(ss / n);
  return rep;
}

// ---------------------------------------------------------------------------

double spread_model_hold(const ProtocolConfig& cfg, double kappa, double gamma_bg, double t) {
  const double w0 = cfg.omega0;
  const double var = kappa * hbar / (2 * cfg.mass * w0) * (1 + w0 * w0 * t * t) +
                     2 * k_boltzmann * gamma_bg * t * t * t / (3 * cfg.mass);
  return std::sqrt(std::max(var, 0.0));
}

double spread_model_prep(const ProtocolConfig& cfg, double kappa, double gamma_bg, double t) {
  const double w0 = cfg.omega0, w1 = cfg.omega1;
  const double var = kappa * hbar / (2 * cfg.mass * w0) * ((w0 / w1) * (w0 / w1) + w1 * w1 * t * t) +
                     2 * k_boltzmann * gamma_bg * t * t * t / (3 * cfg.mass);
  return std::sqrt(std::max(var, 0.0));
}

namespace {

void check_series(const SpreadSeries& s, const char* what) {
  if (s.t_tof.size() != s.sigma_z.size() || s.t_tof.size() != s.error.size())
    throw DataError(std::string(what) + ": series lengths differ");
  if (s.t_tof.size() < 2) throw DataError(std::string(what) + ": need >= 2 points");
  for (double e : s.error)
    if (!(e > 0)) throw DataError(std::string(what) + ": standard errors must be positive");
}

// One free parameter p of a spread model; returns (estimate, error, chi2).
std::array<double, 3> fit_one(const SpreadSeries& s, const std::function<double(double, double)>& model, double start) {
  const int n = static_cast<int>(s.t_tof.size());
  const Residual f = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) r(i) = (model(x(0), s.t_tof[i]) - s.sigma_z[i]) / s.error[i];
    return r;
  };
  Eigen::VectorXd x0(1);
  x0(0) = start;
  const Jacobian jac = numeric_jacobian(f);
  const LsqOutcome o = least_squares(f, jac, x0, n);
  if (!o.ok) throw ConvergenceError("spread-model fit did not converge");
  const Eigen::VectorXd se = parameter_errors(jac(o.x), o.chi2, n - 1, true);
  return {o.x(0), se(0), o.chi2};
}

// Heating rate scale that makes the t^3 term comparable to the data, for
// starting values and the absolute convergence floor.
double gamma_scale(const SpreadSeries& s, const ProtocolConfig& cfg) {
  const double t = *std::max_element(s.t_tof.begin(), s.t_tof.end());
  const double z = *std::max_element(s.sigma_z.begin(), s.sigma_z.end());
  return z * z * 3 * cfg.mass / (2 * k_boltzmann * t * t * t);
}

}  // namespace

FitReport fit_heating_at_occupation(const SpreadSeries& with_prep, const ProtocolConfig& cfg, double occupation) {
  check_series(with_prep, "fit_heating_at_occupation");
  const double kappa = 2 * occupation + 1;
  const auto g = fit_one(
      with_prep, [&](double gamma, double t) { return spread_model_prep(cfg, kappa, gamma, t); },
      0.01 * gamma_scale(with_prep, cfg));
  FitReport rep;
  rep.model = "sigma_z with preparation, kappa fixed";
  rep.names = {"gamma_bg"};
  rep.values = {g[0]};
  rep.errors = {g[1]};
  rep.chi2 = g[2];
  rep.dof = static_cast<int>(with_prep.t_tof.size()) - 1;
  return rep;
}

FitReport estimate_heating_rate(const SpreadSeries& without_prep, const SpreadSeries& with_prep,
                                const ProtocolConfig& cfg) {
  check_series(without_prep, "estimate_heating_rate (without preparation)");
  check_series(with_prep, "estimate_heating_rate (with preparation)");
  FitReport rep;
  rep.model = "alternating fit: n from sigma_z without preparation, Gamma_BG from sigma_z with preparation";
  rep.names = {"n", "gamma_bg"};
  double gamma = 0.0, kappa = 1.0;
  std::array<double, 3> kfit{}, gfit{};
  const double floor = 1e-9 * gamma_scale(with_prep, cfg);
  for (int round = 1; round <= 100; ++round) {
    kfit = fit_one(
        without_prep, [&](double k, double t) { return spread_model_hold(cfg, k, gamma, t); }, kappa);
    kappa = kfit[0];
    gfit = fit_one(
        with_prep, [&](double g, double t) { return spread_model_prep(cfg, kappa, g, t); },
        gamma != 0 ? gamma : 0.01 * gamma_scale(with_prep, cfg));
    const double change = std::abs(gfit[0] - gamma);
    rep.trace.push_back(gfit[0]);
    rep.rounds = round;
    const bool done = round > 1 && (change < 0.01 * std::abs(gfit[0]) || change < std::max(floor, 0.01 * gfit[1]));
    gamma = gfit[0];
    if (done) {
      rep.values = {(kappa - 1) / 2, gamma};
      rep.errors = {kfit[1] / 2, gfit[1]};
      rep.chi2 = kfit[2] + gfit[2];
      rep.dof = static_cast<int>(without_prep.t_tof.size() + with_prep.t_tof.size()) - 2;
      return rep;
    }
  }
  std::ostringstream msg;
  msg << "estimate_heating_rate: Gamma_BG did not settle within 1 % after 100 rounds; trace";
  for (double g : rep.trace) msg << ' ' << g;
  throw ConvergenceError(msg.str());
}

FitReport fit_folded_positions(const std::vector<double>& values) {
  if (values.size() < 2) throw DataError("fit_folded_positions needs >= 2 values");
  const double n = static_cast<double>(values.size());
  double s = 0, s2 = 0;
  for (double v : values) {
    s += std::abs(v);
    s2 += v * v;
  }
  double mu = s / n;
  double sigma = std::sqrt(std::max(s2 / n - mu * mu, 0.0) * n / (n - 1));
  FitReport rep;
  rep.names = {"mu", "sigma"};
  if (mu >= 3 * sigma) {
    rep.model = "normal";
  } else {
    // EM over the unobserved sign of z.
    rep.model = "folded normal";
    rep.notes.push_back("mean below 3 sigma: folded-normal likelihood used");
    double var = std::max(s2 / n - mu * mu, 1e-300);
    for (int it = 0; it < 100000; ++it) {
      double m_new = 0;
      for (double v : values) {
        const double y = std::abs(v);
        const double w = 1.0 / (1.0 + std::exp(-2 * mu * y / var));
        m_new += (2 * w - 1) * y;
      }
      m_new /= n;
      const double var_new = std::max(s2 / n - m_new * m_new, 1e-300);
      const bool done = std::abs(m_new - mu) < 1e-12 * std::sqrt(var_new) && std::abs(var_new - var) < 1e-12 * var_new;
      mu = m_new;
      var = var_new;
      rep.rounds = it + 1;
      if (done) break;
    }
    sigma = std::sqrt(var);
  }
  rep.values = {mu, sigma};
  rep.errors = {sigma / std::sqrt(n), sigma / std::sqrt(2 * n)};
  rep.dof = static_cast<int>(n) - 2;
  return rep;
}

// ---------------------------------------------------------------------------

AllanResult allan_deviation(std::span<const double> series, double f_s, std::span<const double> taus) {
  if (!(f_s > 0)) throw ParameterError("allan_deviation: f_s must be > 0");
  AllanResult out;
  for (double tau : taus) {
    const double m_real = tau * f_s;
    const long m = std::lround(m_real);
    std::ostringstream note;
    if (m < 1 || std::abs(m_real - static_cast<double>(m)) > 1e-9 * std::max(1.0, m_real)) {
      note << "tau = " << tau << " s is not a multiple of 1/f_s; skipped";
      out.notes.push_back(note.str());
      continue;
    }
    const long windows = static_cast<long>(series.size()) / m;
    if (windows < 2) {
      note << "tau = " << tau << " s needs at least two windows; skipped";
      out.notes.push_back(note.str());
      continue;
    }
    std::vector<double> avg(windows);
    for (long k = 0; k < windows; ++k) {
      double sum = 0;
      for (long i = 0; i < m; ++i) sum += series[k * m + i];
      avg[k] = sum / static_cast<double>(m);
    }
    double acc = 0;
    for (long k = 0; k + 1 < windows; ++k) acc += (avg[k + 1] - avg[k]) * (avg[k + 1] - avg[k]);
    out.points.push_back({tau, std::sqrt(0.5 * acc / static_cast<double>(windows - 1)), windows});
  }
  return out;
}

std::vector<double> allan_taus(std::size_t length, double f_s) {
  std::vector<double> out;
  for (long decade = 1; decade * 2 <= static_cast<long>(length); decade *= 10)
    for (long m : {decade, 2 * decade, 5 * decade})
      if (2 * m <= static_cast<long>(length)) out.push_back(static_cast<double>(m) / f_s);
  return out;
}

}  // namespace tofsense
