#pragma once

// Synthetic experiments: per-shot position readouts, their mapping to
// homodyne quadratures, phase-resolved histograms and force time series.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tofsense/constants.hpp"
#include "tofsense/fockstate.hpp"
#include "tofsense/phasespace.hpp"

namespace tofsense {

struct ShotRecord {
  double t_sp = 0.0;    // s
  double t_tof = 0.0;   // s
  double z_meas = 0.0;  // m, relative to the gravity-shifted trap centre

  double v_meas() const;  // z_meas / t_tof
};

/// `count` independent readouts at cfg.t_sp: z from the Gaussian law of
/// run_protocol plus readout noise of std cfg.noise_floor. Shot k uses block
/// k of the stream (seed, label), so the result does not depend on threading.
std::vector<ShotRecord> sample_shots(const ProtocolConfig& cfg, std::size_t count, std::uint64_t seed,
                                     Prep prep = Prep::squeeze, std::string_view label = "synthlab/shots");

/// |z_meas| for each shot (the quantity the experiment actually records).
std::vector<double> folded_positions(const std::vector<ShotRecord>& shots);

/// Frame whose zero-point units the readout maps onto: omega1 with
/// preparation, omega0 without.
Frame measurement_frame(const ProtocolConfig& cfg, Prep prep);

/// Homodyne phase omega t_sp - arctan(1 / omega t_tof).
double phase_of(double t_sp, const ProtocolConfig& cfg, Prep prep);

/// State the protocol measures, in zero-point units of measurement_frame:
/// the omega0 thermal state just after the frequency switch, mean removed.
Quadratures prepared_state(const ProtocolConfig& cfg, Prep prep);

struct PhaseSamples {
  double phase = 0.0;
  std::vector<double> values;  // quadrature outcomes p~
};

/// Fits the per-t_sp mean positions to c + a sin(phi) + b cos(phi) and
/// subtracts the phase-independent part c, which the Gaussian model cannot
/// represent. Returns c in metres. Needs three distinct phases that are not
/// degenerate for the fit.
double remove_common_offset(std::vector<ShotRecord>& shots, const ProtocolConfig& cfg, Prep prep);

/// Groups shots by t_sp (ascending) and maps z_meas to
/// p~ = z_meas / (z_zpf sqrt(1 + (omega t_tof)^2)). Not centred.
std::vector<PhaseSamples> to_quadrature_samples(const std::vector<ShotRecord>& shots, const ProtocolConfig& cfg,
                                                Prep prep);

struct Histogram {
  std::vector<double> centers;
  std::vector<double> counts;

  double total() const;
};

struct SinogramMeta {
  double omega = 0.0;
  double t_tof = 0.0;
  bool centered = true;
  std::uint64_t seed = 0;
};

struct Sinogram {
  std::vector<double> phases;
  std::vector<Histogram> histograms;
  double delta = 0.0;
  SinogramMeta meta;
  std::vector<std::string> warnings;

  /// Shared width, non-negative counts, a positive total per phase, bins on
  /// the common grid k * delta. Throws DataError.
  void validate() const;
  double total_count() const;
  std::size_t size() const { return phases.size(); }
};

struct BinningPolicy {
  double width_factor = 0.2;          // delta = factor * min per-phase std
  bool center = true;                 // subtract each phase's mean first
  std::optional<double> delta;        // fixed width overrides the rule
};

/// Bins on the common grid of centres k * delta; each phase keeps the
/// contiguous run of bins between its lowest and highest populated bin.
Sinogram bin_samples(const std::vector<PhaseSamples>& samples, const BinningPolicy& policy = {});

Sinogram build_sinogram(const std::vector<ShotRecord>& shots, const ProtocolConfig& cfg, Prep prep,
                        const BinningPolicy& policy = {});

/// n evenly spaced hold times covering phases [0, span) at the hold frequency.
std::vector<double> tomography_times(const ProtocolConfig& cfg, Prep prep, std::size_t n_phases, double span = pi);

/// Shots for a full tomography scan; phase i draws from stream
/// "synthlab/tomography/<i>".
std::vector<ShotRecord> simulate_tomography(const ProtocolConfig& cfg, Prep prep, std::size_t n_phases,
                                            std::size_t shots_per_phase, std::uint64_t seed);

/// Quadrature outcomes drawn directly from a Gaussian state at the given phases.
std::vector<PhaseSamples> sample_quadratures(const Quadratures& state, const std::vector<double>& phases,
                                             std::size_t shots_per_phase, std::uint64_t seed,
                                             std::string_view label = "synthlab/quadratures");

/// Slow force drift added to a force series: linear_rate * t + amplitude * sin(2 pi t / period).
struct DriftModel {
  double linear_rate = 0.0;  // N/s
  double amplitude = 0.0;    // N
  double period = 0.0;       // s
};

struct ForceSeries {
  std::vector<double> force;     // N
  double f_s = 0.0;              // Hz
  double susceptibility = 0.0;   // m/N
  double per_shot_sensitivity = 0.0;  // N, readout spread / susceptibility
};

/// Force estimates z_meas / susceptibility from independent shots at rate
/// f_s over `duration` seconds, at the canonical hold time of the protocol.
ForceSeries timeseries_for_allan(const ProtocolConfig& cfg, double duration, double f_s, std::uint64_t seed,
                                 bool with_prep, const DriftModel& drift = {});

/// Readout noise b5 that makes the per-shot sensitivity of timeseries_for_allan
/// equal `sensitivity`. Throws ParameterError if the motional spread alone
/// already exceeds it.
double noise_floor_for_sensitivity(const ProtocolConfig& cfg, double sensitivity, bool with_prep);

/// A copy of `cfg` whose per-shot sensitivity equals `sensitivity`. When the
/// motional spread alone is too large, occupation and background heating are
/// scaled down together until the noise floor carries a tenth of the variance.
ProtocolConfig config_for_sensitivity(const ProtocolConfig& cfg, double sensitivity, bool with_prep);

}  // namespace tofsense
