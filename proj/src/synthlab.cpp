#include "tofsense/synthlab.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "tofsense/errors.hpp"
#include "tofsense/random.hpp"

namespace tofsense {

namespace {

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double ShotRecord::v_meas() const {
  if (!(t_tof > 0)) throw DataError("velocity needs t_tof > 0");
  return z_meas / t_tof;
}

std::vector<ShotRecord> sample_shots(const ProtocolConfig& cfg, std::size_t count, std::uint64_t seed, Prep prep,
                                     std::string_view label) {
  if (count == 0) throw ParameterError("sample_shots: count must be >= 1");
  const GaussianState s = run_protocol(cfg, prep);
  const double mean = s.mean(0) - readout_offset(cfg);
  const double sd = std::sqrt(std::max(s.var_z(), 0.0));
  const CounterRng rng(seed, label);
  std::vector<ShotRecord> shots(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto n = rng.normals(k);
    shots[k] = {cfg.t_sp, cfg.t_tof, mean + sd * n[0] + cfg.noise_floor * n[1]};
  }
  return shots;
}

std::vector<double> folded_positions(const std::vector<ShotRecord>& shots) {
  std::vector<double> out(shots.size());
  for (std::size_t i = 0; i < shots.size(); ++i) out[i] = std::abs(shots[i].z_meas);
  return out;
}

double remove_common_offset(std::vector<ShotRecord>& shots, const ProtocolConfig& cfg, Prep prep) {
  if (shots.empty()) throw DataError("remove_common_offset: no shots");
  ProtocolConfig c = cfg;
  c.t_tof = shots.front().t_tof;
  std::map<double, std::pair<double, double>> groups;  // t_sp -> (sum, count)
  for (const ShotRecord& s : shots) {
    auto& g = groups[s.t_sp];
    g.first += s.z_meas;
    g.second += 1;
  }
  if (groups.size() < 3) throw DataError("remove_common_offset: needs at least 3 distinct hold times");
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d aty = Eigen::Vector3d::Zero();
  for (const auto& [t_sp, g] : groups) {
    const double phi = phase_of(t_sp, c, prep);
    const Eigen::Vector3d row(1.0, std::sin(phi), std::cos(phi));
    ata += g.second * row * row.transpose();
    aty += row * g.first;
  }
  const Eigen::LDLT<Eigen::Matrix3d> ldlt(ata);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-10)
    throw DataError("remove_common_offset: hold times do not separate the offset from the oscillation");
  const double offset = ldlt.solve(aty)(0);
  for (ShotRecord& s : shots) s.z_meas -= offset;
  return offset;
}

Frame measurement_frame(const ProtocolConfig& cfg, Prep prep) { return Frame{cfg.mass, cfg.hold_frequency(prep)}; }

double phase_of(double t_sp, const ProtocolConfig& cfg, Prep prep) {
  if (!(cfg.t_tof > 0)) throw ParameterError("phase_of: t_tof must be > 0");
  const double w = cfg.hold_frequency(prep);
  return w * t_sp - std::atan(1.0 / (w * cfg.t_tof));
}

Quadratures prepared_state(const ProtocolConfig& cfg, Prep prep) {
  cfg.validate();
  GaussianState s = thermal_state(cfg, cfg.omega0);
  s.mean.setZero();
  return to_quadratures(s, measurement_frame(cfg, prep));
}

std::vector<PhaseSamples> to_quadrature_samples(const std::vector<ShotRecord>& shots, const ProtocolConfig& cfg,
                                                Prep prep) {
  cfg.validate();
  const Frame frame = measurement_frame(cfg, prep);
  std::map<double, std::vector<double>> groups;
  for (const ShotRecord& s : shots) {
    if (!(s.t_tof > 0)) throw DataError("shot with t_tof <= 0");
    if (s.t_tof != shots.front().t_tof) throw DataError("shots mix different t_tof values");
    const double wt = frame.omega * s.t_tof;
    groups[s.t_sp].push_back(s.z_meas / (frame.z_zpf() * std::sqrt(1 + wt * wt)));
  }
  std::vector<PhaseSamples> out;
  out.reserve(groups.size());
  ProtocolConfig c = cfg;
  if (!shots.empty()) c.t_tof = shots.front().t_tof;
  for (auto& [t_sp, values] : groups) {
    out.push_back({phase_of(t_sp, c, prep), std::move(values)});
  }
  return out;
}

double Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

void Sinogram::validate() const {
  if (phases.size() != histograms.size()) throw DataError("sinogram: phases and histograms differ in length");
  if (phases.empty()) throw DataError("sinogram: no phases");
  if (!(delta > 0) || !std::isfinite(delta)) throw DataError("sinogram: bin width must be positive");
  for (std::size_t i = 0; i < histograms.size(); ++i) {
    const Histogram& h = histograms[i];
    if (h.centers.size() != h.counts.size() || h.centers.empty())
      throw DataError("sinogram: histogram " + std::to_string(i) + " malformed");
    for (std::size_t j = 0; j < h.centers.size(); ++j) {
      if (!(h.counts[j] >= 0) || !std::isfinite(h.counts[j]))
        throw DataError("sinogram: negative count in phase " + std::to_string(i));
      const double k = h.centers[j] / delta;
      if (std::abs(k - std::round(k)) > 1e-6)
        throw DataError("sinogram: bin centre off the common grid in phase " + std::to_string(i));
    }
    if (!(h.total() > 0)) throw DataError("sinogram: phase " + std::to_string(i) + " has no counts");
  }
}

double Sinogram::total_count() const {
  double n = 0.0;
  for (const Histogram& h : histograms) n += h.total();
  return n;
}

Sinogram bin_samples(const std::vector<PhaseSamples>& samples, const BinningPolicy& policy) {
  std::vector<std::size_t> thin;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].values.size() < 2) thin.push_back(i);
  if (samples.size() < 2 || !thin.empty()) {
    std::ostringstream msg;
    msg << "insufficient data: need >= 2 phases with >= 2 shots each (" << samples.size() << " phases";
    if (!thin.empty()) {
      msg << "; too few shots at phase index";
      for (std::size_t i : thin) msg << ' ' << i;
    }
    msg << ")";
    throw DataError(msg.str());
  }

  Sinogram sino;
  sino.meta.centered = policy.center;
  double min_std = INFINITY;
  for (const PhaseSamples& ps : samples) min_std = std::min(min_std, sample_std(ps.values));
  if (policy.delta) {
    if (!(*policy.delta > 0)) throw ParameterError("bin width must be positive");
    sino.delta = *policy.delta;
  } else if (min_std > 0) {
    sino.delta = policy.width_factor * min_std;
  } else {
    sino.delta = 1e-6;
    sino.warnings.push_back("zero spread at some phase; bin width fell back to 1e-6");
  }

  for (const PhaseSamples& ps : samples) {
    double shift = 0.0;
    if (policy.center)
      shift = std::accumulate(ps.values.begin(), ps.values.end(), 0.0) / static_cast<double>(ps.values.size());
    std::vector<long long> idx(ps.values.size());
    for (std::size_t j = 0; j < ps.values.size(); ++j)
      idx[j] = std::llround(std::floor((ps.values[j] - shift) / sino.delta + 0.5));
    const auto [lo, hi] = std::minmax_element(idx.begin(), idx.end());
    Histogram h;
    const long long n_bins = *hi - *lo + 1;
    h.centers.resize(n_bins);
    h.counts.assign(n_bins, 0.0);
    for (long long k = 0; k < n_bins; ++k) h.centers[k] = static_cast<double>(*lo + k) * sino.delta;
    for (long long k : idx) h.counts[k - *lo] += 1.0;
    sino.phases.push_back(ps.phase);
    sino.histograms.push_back(std::move(h));
  }
  return sino;
}

Sinogram build_sinogram(const std::vector<ShotRecord>& shots, const ProtocolConfig& cfg, Prep prep,
                        const BinningPolicy& policy) {
  if (shots.empty()) throw DataError("insufficient data: no shots");
  Sinogram s = bin_samples(to_quadrature_samples(shots, cfg, prep), policy);
  s.meta.omega = cfg.hold_frequency(prep);
  s.meta.t_tof = shots.front().t_tof;
  return s;
}

std::vector<double> tomography_times(const ProtocolConfig& cfg, Prep prep, std::size_t n_phases, double span) {
  const double w = cfg.hold_frequency(prep);
  std::vector<double> t(n_phases);
  for (std::size_t i = 0; i < n_phases; ++i) t[i] = span * static_cast<double>(i) / (w * static_cast<double>(n_phases));
  return t;
}

std::vector<ShotRecord> simulate_tomography(const ProtocolConfig& cfg, Prep prep, std::size_t n_phases,
                                            std::size_t shots_per_phase, std::uint64_t seed) {
  std::vector<ShotRecord> shots;
  shots.reserve(n_phases * shots_per_phase);
  ProtocolConfig c = cfg;
  const auto times = tomography_times(cfg, prep, n_phases);
  for (std::size_t i = 0; i < n_phases; ++i) {
    c.t_sp = times[i];
    const auto part = sample_shots(c, shots_per_phase, seed, prep, "synthlab/tomography/" + std::to_string(i));
    shots.insert(shots.end(), part.begin(), part.end());
  }
  return shots;
}

std::vector<PhaseSamples> sample_quadratures(const Quadratures& state, const std::vector<double>& phases,
                                             std::size_t shots_per_phase, std::uint64_t seed, std::string_view label) {
  std::vector<PhaseSamples> out;
  out.reserve(phases.size());
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const double s = std::sin(phases[i]), c = std::cos(phases[i]);
    const double mean = -state.mean(0) * s + state.mean(1) * c;
    const double var = state.cov(0, 0) * s * s + state.cov(1, 1) * c * c - 2 * state.cov(0, 1) * s * c;
    const double sd = std::sqrt(std::max(var, 0.0));
    const CounterRng rng(seed, std::string(label) + "/" + std::to_string(i));
    PhaseSamples ps{phases[i], std::vector<double>(shots_per_phase)};
    for (std::size_t k = 0; k < shots_per_phase; k += 2) {
      const auto n = rng.normals(k / 2);
      ps.values[k] = mean + sd * n[0];
      if (k + 1 < shots_per_phase) ps.values[k + 1] = mean + sd * n[1];
    }
    out.push_back(std::move(ps));
  }
  return out;
}

ForceSeries timeseries_for_allan(const ProtocolConfig& cfg, double duration, double f_s, std::uint64_t seed,
                                 bool with_prep, const DriftModel& drift) {
  if (!(f_s > 0) || !(duration * f_s >= 10)) throw ParameterError("timeseries_for_allan: need duration * f_s >= 10");
  if (!(cfg.t_tof > 0)) throw ParameterError("timeseries_for_allan: t_tof must be > 0");
  if (drift.amplitude != 0 && !(drift.period > 0)) throw ParameterError("drift period must be > 0");
  ProtocolConfig c = cfg;
  c.t_sp = canonical_prep_time(cfg, with_prep);
  const Prep prep = with_prep ? Prep::squeeze : Prep::hold;
  const GaussianState s = run_protocol(c, prep);
  const double chi = susceptibility_theory(c, with_prep);
  const double mean = s.mean(0) - readout_offset(c);
  const double sd = std::sqrt(std::max(s.var_z(), 0.0));

  ForceSeries out;
  out.f_s = f_s;
  out.susceptibility = chi;
  out.per_shot_sensitivity = std::sqrt(s.var_z() + c.noise_floor * c.noise_floor) / std::abs(chi);
  const auto n = static_cast<std::size_t>(std::floor(duration * f_s));
  out.force.resize(n);
  const CounterRng rng(seed, "synthlab/allan");
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / f_s;
    const auto g = rng.normals(k);
    double f = (mean + sd * g[0] + c.noise_floor * g[1]) / chi;
    f += drift.linear_rate * t;
    if (drift.amplitude != 0) f += drift.amplitude * std::sin(2 * pi * t / drift.period);
    out.force[k] = f;
  }
  return out;
}

double noise_floor_for_sensitivity(const ProtocolConfig& cfg, double sensitivity, bool with_prep) {
  ProtocolConfig c = cfg;
  c.t_sp = canonical_prep_time(cfg, with_prep);
  c.noise_floor = 0;
  const double var_z = run_protocol(c, with_prep ? Prep::squeeze : Prep::hold).var_z();
  const double target = sensitivity * susceptibility_theory(c, with_prep);
  if (!(target * target >= var_z))
    throw ParameterError("noise_floor_for_sensitivity: motional spread alone exceeds the requested sensitivity");
  return std::sqrt(target * target - var_z);
}

ProtocolConfig config_for_sensitivity(const ProtocolConfig& cfg, double sensitivity, bool with_prep) {
  ProtocolConfig c = cfg;
  c.noise_floor = 0;
  const double motional_cap = std::sqrt(0.9) * sensitivity;
  if (sensitivity_theory(c, with_prep) > motional_cap) {
    auto scaled = [&](double f) {
      ProtocolConfig s = c;
      s.occupation = f * cfg.occupation;
      s.gamma_bg = f * cfg.gamma_bg;
      return s;
    };
    if (sensitivity_theory(scaled(0), with_prep) > motional_cap)
      throw ParameterError("config_for_sensitivity: even the unheated ground state exceeds the requested sensitivity");
    double lo = 0, hi = 1;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (sensitivity_theory(scaled(mid), with_prep) > motional_cap ? hi : lo) = mid;
    }
    c = scaled(lo);
  }
  c.noise_floor = noise_floor_for_sensitivity(c, sensitivity, with_prep);
  return c;
}

}  // namespace tofsense
