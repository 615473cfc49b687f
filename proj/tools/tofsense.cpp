// tofsense: simulate TOF readouts, reconstruct states, analyse and reproduce.
//
// Exit codes: 0 success, 1 usage or configuration, 2 analysis did not
// converge, 3 I/O.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tofsense/constants.hpp"
#include "tofsense/errors.hpp"
#include "tofsense/gaussfit.hpp"
#include "tofsense/inference.hpp"
#include "tofsense/io.hpp"
#include "tofsense/phasespace.hpp"
#include "tofsense/synthlab.hpp"
#include "tofsense/tomomle.hpp"

namespace fs = std::filesystem;
using namespace tofsense;
using io::json;

namespace {

constexpr const char* kManifestName = "manifest.json";

// Keys the configuration file may carry besides the protocol fields.
const std::vector<std::string> kExtraKeys{"phases", "shots", "prep", "f_s", "allan_duration"};

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  std::string out = ".";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value configuration file (SI units)");
  app->add_option("--seed", c.seed, "top-level random seed");
  app->add_option("--out", c.out, "output directory");
}

io::KeyValues load_kv(const Common& c) {
  if (c.config.empty()) return {};
  return io::parse_key_values(io::read_file(c.config));
}

Prep parse_prep(const std::string& s) {
  if (s == "squeeze" || s == "with") return Prep::squeeze;
  if (s == "hold" || s == "without") return Prep::hold;
  throw ParameterError("prep must be 'squeeze' or 'hold', got '" + s + "'");
}

const char* prep_name(Prep p) { return p == Prep::squeeze ? "squeeze" : "hold"; }

class Outputs {
 public:
  Outputs(const Common& c, std::string command) : dir_(c.out) {
    manifest_.command = std::move(command);
    manifest_.config_path = c.config;
    manifest_.seed = c.seed;
  }

  void input(const std::string& path) { manifest_.inputs.push_back(path); }
  void setting(const std::string& key, const std::string& value) { manifest_.settings[key] = value; }

  void write(const std::string& name, const std::string& content) {
    io::write_file_atomic(dir_ / name, content);
    manifest_.outputs.push_back(name);
  }
  void write_json(const std::string& name, json j) {
    j["manifest"] = kManifestName;
    write(name, j.dump(2) + "\n");
  }
  void finish() {
    manifest_.timestamp = io::utc_timestamp();
    io::write_file_atomic(dir_ / kManifestName, manifest_.to_json().dump(2) + "\n");
  }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  io::Manifest manifest_;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

MleSettings profile_settings(const std::string& profile) {
  if (profile == "thermal" || profile == "custom") return MleSettings::thermal();
  if (profile == "squeezed") return MleSettings::squeezed();
  throw ParameterError("profile must be thermal, squeezed or custom, got '" + profile + "'");
}

WignerGrid wigner_for(const DensityMatrix& rho, int points = 81) {
  const Quadratures q = moments(rho);
  const double spread = std::sqrt(std::max(q.cov(0, 0), q.cov(1, 1)));
  const double half = std::max(4.0, 4.5 * spread);
  std::vector<double> z(points), p(points);
  for (int i = 0; i < points; ++i) {
    z[i] = q.mean(0) - half + 2 * half * i / (points - 1);
    p[i] = q.mean(1) - half + 2 * half * i / (points - 1);
  }
  return wigner(rho, z, p);
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  Common common;
  std::optional<long> phases;
  std::optional<long> shots;
  std::string prep;
  std::optional<double> allan_duration;
};

int cmd_simulate(const SimulateArgs& a) {
  const io::KeyValues kv = load_kv(a.common);
  const ProtocolConfig cfg = io::protocol_from(kv, kExtraKeys);
  const long phases = a.phases.value_or(static_cast<long>(kv.number_or("phases", 300)));
  const long shots_per_phase = a.shots.value_or(static_cast<long>(kv.number_or("shots", 600)));
  if (phases < 2) throw ParameterError("phases must be >= 2");
  if (shots_per_phase < 1) throw ParameterError("shots must be >= 1");
  const Prep prep = parse_prep(a.prep.empty() ? kv.text_or("prep", "squeeze") : a.prep);

  Outputs out(a.common, "simulate");
  const auto shots = simulate_tomography(cfg, prep, static_cast<std::size_t>(phases),
                                         static_cast<std::size_t>(shots_per_phase), a.common.seed);
  Sinogram sino = build_sinogram(shots, cfg, prep);
  sino.meta.seed = a.common.seed;

  out.write("config.txt", io::protocol_to_text(cfg));
  out.write("shots.csv", io::shots_to_csv(shots, kManifestName));
  out.write_json("sinogram.json", io::to_json(sino));
  out.setting("phases", std::to_string(phases));
  out.setting("shots_per_phase", std::to_string(shots_per_phase));
  out.setting("prep", prep_name(prep));

  const double duration = a.allan_duration.value_or(kv.number_or("allan_duration", 0));
  if (duration > 0) {
    const double f_s = kv.number_or("f_s", 5.0);
    const ForceSeries fs_ = timeseries_for_allan(cfg, duration, f_s, a.common.seed, prep == Prep::squeeze);
    std::string csv = "# manifest: " + std::string(kManifestName) + "\n# f_s = " + num(f_s) +
                      "\n# per_shot_sensitivity_N = " + num(fs_.per_shot_sensitivity) + "\nt_s,force_N\n";
    char buf[64];
    for (std::size_t k = 0; k < fs_.force.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", static_cast<double>(k) / f_s, fs_.force[k]);
      csv += buf;
    }
    out.write("force_series.csv", csv);
    out.setting("f_s", num(f_s));
    out.setting("allan_duration", num(duration));
  }
  out.finish();

  std::printf("%-22s %s\n", "preparation", prep_name(prep));
  std::printf("%-22s %ld\n", "phases", phases);
  std::printf("%-22s %ld\n", "shots per phase", shots_per_phase);
  std::printf("%-22s %zu\n", "total shots", shots.size());
  std::printf("%-22s %s\n", "bin width (zpf units)", num(sino.delta).c_str());
  for (const std::string& w : sino.warnings) std::printf("warning: %s\n", w.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct TomoArgs {
  Common common;
  std::string sinogram;
  std::string profile = "thermal";
  std::optional<int> n_max;
  std::optional<double> epsilon, threshold_distance, threshold_loglik;
  std::optional<int> max_iterations;
};

int cmd_tomo(const TomoArgs& a) {
  const ProtocolConfig cfg = io::protocol_from(load_kv(a.common), kExtraKeys);
  const Sinogram sino = io::sinogram_from_json(io::parse_json(io::read_file(a.sinogram), a.sinogram));
  MleSettings s = profile_settings(a.profile);
  if (a.n_max) s.n_max = *a.n_max;
  if (a.epsilon) s.epsilon = *a.epsilon;
  if (a.threshold_distance) s.threshold_distance = *a.threshold_distance;
  if (a.threshold_loglik) s.threshold_loglik = *a.threshold_loglik;
  if (a.max_iterations) s.max_iterations = *a.max_iterations;
  s.validate();

  Outputs out(a.common, "tomo");
  out.input(a.sinogram);
  out.setting("profile", a.profile);
  out.setting("n_max", std::to_string(s.n_max));
  out.setting("epsilon", num(s.epsilon));
  out.setting("threshold_distance", num(s.threshold_distance));
  out.setting("threshold_loglik", num(s.threshold_loglik));

  const MleResult r = reconstruct(sino, s);
  json rho = io::to_json(r.rho);
  if (sino.meta.omega > 0) rho["frame"] = {{"omega", sino.meta.omega}, {"mass", cfg.mass}, {"t_tof", sino.meta.t_tof}};
  out.write_json("rho.json", rho);
  out.write("wigner.csv", io::wigner_to_csv(wigner_for(r.rho), kManifestName));

  const Quadratures q = moments(r.rho);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(q.cov);
  json report = io::to_json(r, s);
  report["sigma_moments"] = {std::sqrt(std::max(eig.eigenvalues()(1), 0.0)),
                             std::sqrt(std::max(eig.eigenvalues()(0), 0.0))};
  out.write_json("tomo_report.json", report);
  out.finish();

  std::printf("%-22s %s (n_max %d)\n", "profile", a.profile.c_str(), s.n_max);
  std::printf("%-22s %d\n", "iterations", r.iterations);
  std::printf("%-22s %s\n", "log-likelihood", num(r.log_likelihood).c_str());
  std::printf("%-22s %s / %s\n", "final distance/dL", num(r.final_distance).c_str(), num(r.final_loglik_change).c_str());
  std::printf("%-22s %s\n", "truncation tail", num(r.truncation_tail).c_str());
  std::printf("%-22s %s\n", "converged", r.converged() ? "yes" : "no");
  if (!r.truncation_ok) std::printf("warning: truncation tail above 1e-4; increase n_max\n");
  if (!r.identifiable) std::printf("warning: fewer distinct phases than n_max + 1\n");
  return r.converged() ? 0 : 2;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  Common common;
  std::string analysis;
  std::string rho, shots, series, data, fit;
  std::string prep;
  std::string profile = "thermal";
  int bootstrap = 0;
  int min_effective = 6000;
  std::optional<double> f_s, omega_guess, b5;
};

std::vector<PhaseSamples> load_samples(const AnalyzeArgs& a, const ProtocolConfig& cfg, Prep prep) {
  if (a.shots.empty()) throw ParameterError("--shots is required for analysis '" + a.analysis + "'");
  auto shots = io::shots_from_csv(io::read_file(a.shots));
  // The Gaussian model has no term for a phase-independent offset.
  const double offset = remove_common_offset(shots, cfg, prep);
  std::printf("%-22s %s m\n", "removed offset", num(offset).c_str());
  return to_quadrature_samples(shots, cfg, prep);
}

int analyze_fisher(const AnalyzeArgs& a, ProtocolConfig cfg, Outputs& out) {
  if (a.rho.empty()) throw ParameterError("--rho is required for analysis 'fisher'");
  const json j = io::parse_json(io::read_file(a.rho), a.rho);
  if (!j.contains("frame")) throw DataError(a.rho + ": no frame metadata; cannot tell omega0 from omega1");
  const Frame frame{j["frame"].value("mass", cfg.mass), j["frame"].value("omega", 0.0)};
  const double t_tof = j["frame"].value("t_tof", cfg.t_tof);
  if (std::abs(t_tof - cfg.t_tof) > 1e-9 * cfg.t_tof)
    throw ParameterError("t_tof of the state (" + num(t_tof) + " s) differs from the configuration (" + num(cfg.t_tof) + " s)");
  Prep prep;
  if (!a.prep.empty()) {
    prep = parse_prep(a.prep);
  } else if (std::abs(frame.omega - cfg.omega1) <= 1e-9 * cfg.omega1) {
    prep = Prep::squeeze;
  } else if (std::abs(frame.omega - cfg.omega0) <= 1e-9 * cfg.omega0) {
    prep = Prep::hold;
  } else {
    throw ParameterError("state frame omega " + num(frame.omega) + " matches neither omega0 nor omega1");
  }
  out.input(a.rho);
  const DensityMatrix rho = io::density_matrix_from_json(j);
  const bool with_prep = prep == Prep::squeeze;
  FisherResult r = fisher_sensitivity(rho, cfg, with_prep, frame);
  if (a.bootstrap > 0) {
    BootstrapSettings bs;
    bs.resamples = a.bootstrap;
    bs.seed = a.common.seed;
    bs.mle = profile_settings(a.profile);
    bs.mle.n_max = rho.n_max();
    out.input(a.shots);
    r = bootstrap_fisher(load_samples(a, cfg, prep), cfg, with_prep, bs);
  }
  json rep = io::to_json(r);
  rep["prep"] = prep_name(prep);
  out.write_json("fisher_report.json", rep);
  std::printf("%-22s %s N\n", "sensitivity", num(r.sensitivity).c_str());
  if (a.bootstrap > 0)
    std::printf("%-22s %s N [%s, %s]\n", "bootstrap mean", num(r.bootstrap_mean).c_str(), num(r.bootstrap_lo).c_str(),
                num(r.bootstrap_hi).c_str());
  for (const std::string& w : r.warnings) std::printf("warning: %s\n", w.c_str());
  return 0;
}

int analyze_gauss(const AnalyzeArgs& a, const ProtocolConfig& cfg, Outputs& out, bool gtest, bool mcmc) {
  if (a.prep.empty()) throw ParameterError("--prep is required for analysis '" + a.analysis + "'");
  const Prep prep = parse_prep(a.prep);
  const auto samples = load_samples(a, cfg, prep);
  out.input(a.shots);
  const auto mom = phase_moments(samples);
  const GaussianModelParams fit = fit_gaussian(mom);
  const Mat5 cov = laplace_covariance(fit, mom);
  json rep{{"fit", io::to_json(fit)}, {"standard_errors", json::array()}};
  for (int k = 0; k < 5; ++k) rep["standard_errors"].push_back(std::sqrt(cov(k, k)));
  std::printf("%-22s %s\n", "sigma_plus", num(fit.sigma_plus()).c_str());
  std::printf("%-22s %s\n", "sigma_minus", num(fit.sigma_minus()).c_str());
  int code = 0;
  if (gtest) {
    BinningPolicy policy;
    policy.center = false;
    const GTestReport g = g_test(bin_samples(samples, policy), fit);
    rep["gtest"] = io::to_json(g);
    std::printf("%-22s %s (dof %d, p %s)\n", "G", num(g.g_statistic).c_str(), g.degrees_of_freedom,
                num(g.upper_p_value).c_str());
    out.write_json("gtest_report.json", rep);
  } else if (mcmc) {
    McmcSettings ms;
    ms.seed = a.common.seed;
    ms.min_effective = a.min_effective;
    const McmcResult m = run_mcmc(mom, fit, ms);
    const SigmaSummary ss = sigma_summary(m.draws);
    rep["diagnostics"] = io::to_json(m.diagnostics);
    rep["posterior"] = {{"sigma_plus", {ss.sigma_plus, ss.plus_lo, ss.plus_hi}},
                        {"sigma_minus", {ss.sigma_minus, ss.minus_lo, ss.minus_hi}},
                        {"sigma_mean", {ss.sigma_mean, ss.mean_lo, ss.mean_hi}}};
    out.write("chains.csv", io::mcmc_to_csv(m));
    out.write_json("mcmc_report.json", rep);
    std::printf("%-22s %ld (thin %d, max R-hat %s)\n", "effective samples", m.diagnostics.effective_samples,
                m.diagnostics.thinning, num(m.diagnostics.split_rhat.maxCoeff()).c_str());
    if (!m.diagnostics.converged) code = 2;
  } else {
    out.write_json("gauss_report.json", rep);
  }
  return code;
}

int analyze_allan(const AnalyzeArgs& a, Outputs& out) {
  if (a.series.empty()) throw ParameterError("--series is required for analysis 'allan'");
  const io::Table t = io::read_table(io::read_file(a.series), a.series);
  out.input(a.series);
  double f_s = 0;
  if (a.f_s) f_s = *a.f_s;
  else if (t.meta.count("f_s")) f_s = std::stod(t.meta.at("f_s"));
  else throw ParameterError("sampling rate unknown: pass --fs or add '# f_s = ...' to the series");
  const auto& x = t.column(t.has("force_N") ? "force_N" : t.names.back());
  const AllanResult r = allan_deviation(x, f_s, allan_taus(x.size(), f_s));
  out.write("allan.csv", io::allan_to_csv(r, kManifestName));
  out.write_json("allan_report.json", io::to_json(r));
  for (const AllanPoint& p : r.points) std::printf("tau %-10s adev %s\n", num(p.tau).c_str(), num(p.adev).c_str());
  return 0;
}

int analyze_fits(const AnalyzeArgs& a, const ProtocolConfig& cfg, Outputs& out) {
  if (a.data.empty()) throw ParameterError("--data is required for analysis 'fits'");
  const io::Table t = io::read_table(io::read_file(a.data), a.data);
  out.input(a.data);
  auto sigma = [&]() { return t.has("sigma") ? t.column("sigma") : std::vector<double>{}; };
  FitReport r;
  if (a.fit == "oscillation") {
    r = fit_oscillation_offset(t.column("t_sp"), t.column("mu_z"), a.omega_guess.value_or(cfg.omega1), a.b5, sigma());
  } else if (a.fit == "susceptibility") {
    r = fit_susceptibility(t.column("theta"), t.column("mu_z"), sigma(), cfg);
  } else if (a.fit == "squeezing") {
    r = fit_squeezing_floor(t.column("r"), t.column("y"), sigma());
  } else if (a.fit == "heating") {
    SpreadSeries with, without;
    const auto& prep = t.column("prep");
    for (std::size_t i = 0; i < t.rows(); ++i) {
      SpreadSeries& s = prep[i] != 0 ? with : without;
      s.t_tof.push_back(t.column("t_tof")[i]);
      s.sigma_z.push_back(t.column("sigma_z")[i]);
      s.error.push_back(t.column("error")[i]);
    }
    r = estimate_heating_rate(without, with, cfg);
  } else {
    throw ParameterError("--fit must be oscillation, susceptibility, squeezing or heating");
  }
  out.write_json("fit_report.json", io::to_json(r));
  for (std::size_t i = 0; i < r.names.size(); ++i)
    std::printf("%-12s %s +- %s\n", r.names[i].c_str(), num(r.values[i]).c_str(), num(r.errors[i]).c_str());
  return 0;
}

int cmd_analyze(const AnalyzeArgs& a) {
  const ProtocolConfig cfg = io::protocol_from(load_kv(a.common), kExtraKeys);
  Outputs out(a.common, "analyze");
  out.setting("analysis", a.analysis);
  int code = 0;
  if (a.analysis == "fisher") code = analyze_fisher(a, cfg, out);
  else if (a.analysis == "gauss") code = analyze_gauss(a, cfg, out, false, false);
  else if (a.analysis == "gtest") code = analyze_gauss(a, cfg, out, true, false);
  else if (a.analysis == "mcmc") code = analyze_gauss(a, cfg, out, false, true);
  else if (a.analysis == "allan") code = analyze_allan(a, out);
  else if (a.analysis == "fits") code = analyze_fits(a, cfg, out);
  out.finish();
  return code;
}

// ---------------------------------------------------------------------------

struct Comparison {
  std::string quantity;
  double computed;
  double published;
  std::string unit;
};

std::string summary_table(const std::string& title, const std::vector<Comparison>& rows) {
  std::string s = title + "\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-44s %14s %14s %8s  %s\n", "quantity", "computed", "published", "ratio", "unit");
  s += buf;
  for (const Comparison& c : rows) {
    std::snprintf(buf, sizeof buf, "%-44s %14.4g %14.4g %8.3f  %s\n", c.quantity.c_str(), c.computed, c.published,
                  c.computed / c.published, c.unit.c_str());
    s += buf;
  }
  return s + "\n";
}

std::string reproduce_susceptibility(const ProtocolConfig& cfg, Outputs& out) {
  std::string csv = "# manifest: manifest.json\nt_tof_s,chi_without_nm_per_N,chi_with_nm_per_N\n";
  ProtocolConfig c = cfg;
  for (int k = 1; k <= 20; ++k) {
    c.t_tof = 10e-6 * k;
    csv += num(c.t_tof) + "," + num(1e9 * susceptibility_theory(c, false)) + "," +
           num(1e9 * susceptibility_theory(c, true)) + "\n";
  }
  out.write("susceptibility.csv", csv);
  c.t_tof = 100e-6;
  return summary_table("Susceptibility at t_TOF = 100 us",
                       {{"without state preparation", 1e9 * susceptibility_theory(c, false), 1.6e17, "nm/N"},
                        {"with state preparation", 1e9 * susceptibility_theory(c, true), 1.7e17, "nm/N"}});
}

std::string reproduce_sensitivity(const ProtocolConfig& cfg, Outputs& out) {
  std::string csv = "# manifest: manifest.json\nt_tof_s,S_without_N,S_with_N,zero_point_bound_N\n";
  ProtocolConfig c = cfg;
  for (int k = 1; k <= 20; ++k) {
    c.t_tof = 10e-6 * k;
    csv += num(c.t_tof) + "," + num(sensitivity_theory(c, false)) + "," + num(sensitivity_theory(c, true)) + "," +
           num(zero_point_bound(c)) + "\n";
  }
  out.write("sensitivity.csv", csv);
  c.t_tof = 100e-6;
  return summary_table("Per-shot sensitivity at t_TOF = 100 us",
                       {{"without state preparation", sensitivity_theory(c, false), 1.9e-18, "N"},
                        {"with state preparation", sensitivity_theory(c, true), 4.01e-19, "N"}});
}

std::string reproduce_sinogram(const ProtocolConfig& cfg, std::uint64_t seed, Outputs& out) {
  std::string csv = "# manifest: manifest.json\nprep,phase,variance\n";
  for (Prep prep : {Prep::hold, Prep::squeeze}) {
    const auto shots = simulate_tomography(cfg, prep, 300, 600, seed);
    const auto samples = to_quadrature_samples(shots, cfg, prep);
    Sinogram s = build_sinogram(shots, cfg, prep);
    s.meta.seed = seed;
    out.write_json(std::string("sinogram_") + prep_name(prep) + ".json", io::to_json(s));
    for (const PhaseSamples& ps : samples) {
      double m = 0, v = 0;
      for (double x : ps.values) m += x;
      m /= static_cast<double>(ps.values.size());
      for (double x : ps.values) v += (x - m) * (x - m);
      csv += std::string(prep_name(prep)) + "," + num(ps.phase) + "," + num(v / (ps.values.size() - 1)) + "\n";
    }
  }
  out.write("variance_vs_phase.csv", csv);
  return "Sinograms: 300 phases x 600 shots with and without preparation written; per-phase variances in "
         "variance_vs_phase.csv\n\n";
}

std::string reproduce_wigner(const ProtocolConfig& cfg, std::uint64_t seed, Outputs& out) {
  std::vector<Comparison> rows;
  for (Prep prep : {Prep::hold, Prep::squeeze}) {
    const Sinogram s = build_sinogram(simulate_tomography(cfg, prep, 300, 600, seed), cfg, prep);
    const MleSettings ms = prep == Prep::squeeze ? MleSettings::squeezed() : MleSettings::thermal();
    const MleResult r = reconstruct(s, ms);
    const std::string name = prep_name(prep);
    json rho = io::to_json(r.rho);
    rho["frame"] = {{"omega", s.meta.omega}, {"mass", cfg.mass}, {"t_tof", s.meta.t_tof}};
    out.write_json("rho_" + name + ".json", rho);
    out.write("wigner_" + name + ".csv", io::wigner_to_csv(wigner_for(r.rho), "manifest.json"));
    // The ground state's 1/e contour of W is a circle of radius sqrt(2) in
    // zero-point units; it is the reference drawn over both grids.
    out.write_json("wigner_" + name + "_annotations.json",
                   {{"zero_point_contour", {{"center", {0.0, 0.0}}, {"radius", std::sqrt(2.0)}}},
                    {"frame_omega", s.meta.omega},
                    {"mle", io::to_json(r, ms)}});
    const Quadratures q = moments(r.rho);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(q.cov);
    // Velocity RMS in units of the omega0 zero-point velocity; with
    // preparation the quoted value is the minimum over hold times.
    const double to_v0 = std::sqrt(s.meta.omega / cfg.omega0);
    if (prep == Prep::squeeze) {
      const double v_min = std::sqrt(std::max(eig.eigenvalues()(0), 0.0)) * to_v0;
      rows.push_back({"minimum velocity RMS with preparation (v0_zpf)", v_min, 0.520, "-"});
    } else {
      rows.push_back({"velocity RMS without preparation (v0_zpf)", std::sqrt(q.cov(1, 1)) * to_v0, 1.89, "-"});
    }
  }
  return summary_table("Reconstructed states (synthetic, paper parameters)", rows);
}

std::string reproduce_allan(const ProtocolConfig& cfg, std::uint64_t seed, Outputs& out) {
  const ProtocolConfig c = config_for_sensitivity(cfg, 4.01e-19, true);
  DriftModel drift;
  drift.linear_rate = 7.2e-22;
  const double f_s = 5;
  const ForceSeries s = timeseries_for_allan(c, 1e4, f_s, seed, true, drift);
  std::vector<double> taus = allan_taus(s.force.size(), f_s);
  taus.push_back(50.0);
  std::sort(taus.begin(), taus.end());
  const AllanResult r = allan_deviation(s.force, f_s, taus);
  out.write("allan.csv", io::allan_to_csv(r, "manifest.json"));
  double at50 = 0;
  for (const AllanPoint& p : r.points)
    if (std::abs(p.tau - 50) < 1e-9) at50 = p.adev;
  return summary_table("Allan deviation, f_s = 5 Hz, drift 7.2e-22 N/s",
                       {{"per-shot sensitivity", s.per_shot_sensitivity, 4.01e-19, "N"},
                        {"ADEV at tau = 50 s", at50, 4e-20, "N"}});
}

struct ReproduceArgs {
  Common common;
  std::string target = "all";
};

int cmd_reproduce(const ReproduceArgs& a) {
  const ProtocolConfig cfg = io::protocol_from(load_kv(a.common), kExtraKeys);
  const std::vector<std::string> all{"susceptibility", "sensitivity", "sinogram", "wigner", "allan"};
  std::vector<std::string> targets = a.target == "all" ? all : std::vector<std::string>{a.target};
  std::string summary;
  for (const std::string& t : targets) {
    Common sub = a.common;
    sub.out = (fs::path(a.common.out) / t).string();
    Outputs out(sub, "reproduce " + t);
    std::string text;
    if (t == "susceptibility") text = reproduce_susceptibility(cfg, out);
    else if (t == "sensitivity") text = reproduce_sensitivity(cfg, out);
    else if (t == "sinogram") text = reproduce_sinogram(cfg, a.common.seed, out);
    else if (t == "wigner") text = reproduce_wigner(cfg, a.common.seed, out);
    else if (t == "allan") text = reproduce_allan(cfg, a.common.seed, out);
    out.write("summary.txt", text);
    out.finish();
    std::fputs(text.c_str(), stdout);
    summary += text;
  }
  if (targets.size() > 1) io::write_file_atomic(fs::path(a.common.out) / "summary.txt", summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-of-flight force sensing: simulation, tomography and statistics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", io::kVersion);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "synthetic shots, sinogram and optional force series");
  add_common(s, sim.common);
  s->add_option("--phases", sim.phases, "number of hold-time phases")->check(CLI::Range(2L, 100000L));
  s->add_option("--shots", sim.shots, "shots per phase")->check(CLI::Range(1L, 100000000L));
  s->add_option("--prep", sim.prep, "squeeze or hold")->check(CLI::IsMember({"squeeze", "hold"}));
  s->add_option("--allan-duration", sim.allan_duration, "also write a force series of this length (s)");

  TomoArgs tomo;
  auto* t = app.add_subcommand("tomo", "maximum-likelihood state reconstruction");
  add_common(t, tomo.common);
  t->add_option("--sinogram", tomo.sinogram, "sinogram JSON")->required();
  t->add_option("--profile", tomo.profile)->check(CLI::IsMember({"thermal", "squeezed", "custom"}));
  t->add_option("--n-max", tomo.n_max)->check(CLI::Range(1, 400));
  t->add_option("--epsilon", tomo.epsilon);
  t->add_option("--threshold-distance", tomo.threshold_distance);
  t->add_option("--threshold-loglik", tomo.threshold_loglik);
  t->add_option("--max-iterations", tomo.max_iterations);

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Fisher sensitivity, Gaussian fits, G-test, MCMC, Allan, classical fits");
  add_common(a, an.common);
  a->add_option("--analysis", an.analysis)
      ->required()
      ->check(CLI::IsMember({"fisher", "gauss", "gtest", "mcmc", "allan", "fits"}));
  a->add_option("--rho", an.rho, "density matrix JSON (fisher)");
  a->add_option("--shots", an.shots, "shot CSV (gauss, gtest, mcmc, fisher --bootstrap)");
  a->add_option("--series", an.series, "force series CSV (allan)");
  a->add_option("--data", an.data, "table CSV (fits)");
  a->add_option("--fit", an.fit, "oscillation, susceptibility, squeezing or heating");
  a->add_option("--prep", an.prep)->check(CLI::IsMember({"squeeze", "hold"}));
  a->add_option("--profile", an.profile)->check(CLI::IsMember({"thermal", "squeezed", "custom"}));
  a->add_option("--bootstrap", an.bootstrap, "bootstrap resamples for fisher")->check(CLI::Range(0, 100000));
  a->add_option("--min-effective", an.min_effective)->check(CLI::Range(100, 10000000));
  a->add_option("--fs", an.f_s, "sampling rate of the series (Hz)");
  a->add_option("--omega-guess", an.omega_guess);
  a->add_option("--b5", an.b5, "fixed readout offset for the oscillation fit (m)");

  ReproduceArgs rep;
  auto* r = app.add_subcommand("reproduce", "regenerate the numbers behind the figures at desk scale");
  add_common(r, rep.common);
  r->add_option("--target", rep.target)
      ->check(CLI::IsMember({"susceptibility", "sensitivity", "sinogram", "wigner", "allan", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*s) return cmd_simulate(sim);
    if (*t) return cmd_tomo(tomo);
    if (*a) return cmd_analyze(an);
    if (*r) return cmd_reproduce(rep);
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const ParameterError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "analysis failed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
