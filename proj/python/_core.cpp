#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tofsense/errors.hpp"
#include "tofsense/fockstate.hpp"
#include "tofsense/gaussfit.hpp"
#include "tofsense/inference.hpp"
#include "tofsense/io.hpp"
#include "tofsense/phasespace.hpp"
#include "tofsense/synthlab.hpp"
#include "tofsense/tomomle.hpp"

namespace py = pybind11;
using namespace tofsense;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Prep prep_of(bool with_prep) { return with_prep ? Prep::squeeze : Prep::hold; }

// Shots travel as an (N, 3) array of t_sp, t_tof, z_meas.
std::vector<ShotRecord> shots_from(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw DataError("shots must be an (N, 3) array of t_sp, t_tof, z_meas");
  std::vector<ShotRecord> out(a.shape(0));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i] = {r(i, 0), r(i, 1), r(i, 2)};
  return out;
}

Array shots_to(const std::vector<ShotRecord>& shots) {
  Array out({static_cast<py::ssize_t>(shots.size()), py::ssize_t{3}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < shots.size(); ++i) {
    w(i, 0) = shots[i].t_sp;
    w(i, 1) = shots[i].t_tof;
    w(i, 2) = shots[i].z_meas;
  }
  return out;
}

MleSettings profile(const std::string& name) {
  if (name == "thermal") return MleSettings::thermal();
  if (name == "squeezed") return MleSettings::squeezed();
  throw ParameterError("profile must be 'thermal' or 'squeezed'");
}

py::dict fisher_dict(const FisherResult& r) {
  py::dict d;
  d["sensitivity"] = r.sensitivity;
  d["F_theta"] = r.F_theta;
  d["F_force"] = r.F_force;
  d["fisher_p"] = r.fisher_p;
  d["phase"] = r.phase;
  d["d_theta"] = r.d_theta;
  d["warnings"] = r.warnings;
  if (r.bootstrap_samples > 0) {
    d["bootstrap_mean"] = r.bootstrap_mean;
    d["bootstrap_interval"] = py::make_tuple(r.bootstrap_lo, r.bootstrap_hi);
    d["bootstrap_samples"] = r.bootstrap_samples;
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Time-of-flight force sensing: protocol model, tomography and statistics.";
  m.attr("__version__") = io::kVersion;

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<TruncationError>(m, "TruncationError", base.ptr());
  py::register_exception<SupportError>(m, "SupportError", base.ptr());
  py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<ProtocolConfig>(m, "ProtocolConfig")
      .def(py::init<>())
      .def_static("paper_defaults", &ProtocolConfig::paper_defaults)
      .def_readwrite("mass", &ProtocolConfig::mass)
      .def_readwrite("omega0", &ProtocolConfig::omega0)
      .def_readwrite("omega1", &ProtocolConfig::omega1)
      .def_readwrite("t_sp", &ProtocolConfig::t_sp)
      .def_readwrite("t_tof", &ProtocolConfig::t_tof)
      .def_readwrite("g", &ProtocolConfig::g)
      .def_readwrite("theta", &ProtocolConfig::theta)
      .def_readwrite("occupation", &ProtocolConfig::occupation)
      .def_readwrite("gamma_bg", &ProtocolConfig::gamma_bg)
      .def_readwrite("noise_floor", &ProtocolConfig::noise_floor)
      .def("validate", &ProtocolConfig::validate)
      .def("__repr__", [](const ProtocolConfig& c) { return "ProtocolConfig(\n" + io::protocol_to_text(c) + ")"; });

  m.def("susceptibility", &susceptibility_theory, py::arg("cfg"), py::arg("with_prep"),
        "Displacement per unit force, m/N.");
  m.def("sensitivity", &sensitivity_theory, py::arg("cfg"), py::arg("with_prep"),
        "Per-shot force sensitivity from the Gaussian covariance, N.");
  m.def("zero_point_bound", &zero_point_bound, py::arg("cfg"));
  m.def("squeezing_parameter", &squeezing_parameter, py::arg("omega0"), py::arg("omega1"));
  m.def(
      "run_protocol",
      [](const ProtocolConfig& cfg, bool with_prep) {
        const GaussianState s = run_protocol(cfg, prep_of(with_prep));
        return py::make_tuple(Vec2(s.mean), Mat2(s.cov));
      },
      py::arg("cfg"), py::arg("with_prep"), "Mean (z, p) and covariance after the TOF.");
  m.def(
      "prepared_quadratures",
      [](const ProtocolConfig& cfg, bool with_prep) {
        const Quadratures q = prepared_state(cfg, prep_of(with_prep));
        return py::make_tuple(Vec2(q.mean), Mat2(q.cov));
      },
      py::arg("cfg"), py::arg("with_prep"));

  m.def(
      "simulate",
      [](const ProtocolConfig& cfg, bool with_prep, std::size_t phases, std::size_t shots, std::uint64_t seed) {
        return shots_to(simulate_tomography(cfg, prep_of(with_prep), phases, shots, seed));
      },
      py::arg("cfg"), py::arg("with_prep") = true, py::arg("phases") = 300, py::arg("shots") = 600,
      py::arg("seed") = 1, "Synthetic readouts as an (N, 3) array of t_sp, t_tof, z_meas.");
  m.def(
      "quadratures",
      [](const Array& shots, const ProtocolConfig& cfg, bool with_prep, bool remove_offset) {
        auto s = shots_from(shots);
        if (remove_offset) remove_common_offset(s, cfg, prep_of(with_prep));
        py::list out;
        for (const PhaseSamples& ps : to_quadrature_samples(s, cfg, prep_of(with_prep)))
          out.append(py::make_tuple(ps.phase, to_array(ps.values)));
        return out;
      },
      py::arg("shots"), py::arg("cfg"), py::arg("with_prep"), py::arg("remove_offset") = false,
      "Per-phase quadrature samples as a list of (phase, values).");

  m.def(
      "reconstruct",
      [](const Array& shots, const ProtocolConfig& cfg, bool with_prep, const std::string& prof,
         std::optional<int> n_max) {
        const Sinogram s = build_sinogram(shots_from(shots), cfg, prep_of(with_prep));
        MleSettings st = profile(prof);
        if (n_max) st.n_max = *n_max;
        const MleResult r = [&] {
          py::gil_scoped_release release;
          return reconstruct(s, st);
        }();
        py::dict d;
        d["rho"] = CMatrix(r.rho.matrix());
        d["iterations"] = r.iterations;
        d["converged"] = r.converged();
        d["log_likelihood"] = r.log_likelihood;
        d["truncation_tail"] = r.truncation_tail;
        d["loglik_trace"] = r.loglik_trace;
        return d;
      },
      py::arg("shots"), py::arg("cfg"), py::arg("with_prep"), py::arg("profile") = "thermal",
      py::arg("n_max") = py::none(), "Maximum-likelihood density matrix from readouts.");

  m.def(
      "fisher_sensitivity",
      [](const CMatrix& rho, const ProtocolConfig& cfg, bool with_prep, std::optional<double> frame_omega) {
        Frame f{cfg.mass, cfg.hold_frequency(prep_of(with_prep))};
        if (frame_omega) f.omega = *frame_omega;
        return fisher_dict(fisher_sensitivity(DensityMatrix(rho), cfg, with_prep, f));
      },
      py::arg("rho"), py::arg("cfg"), py::arg("with_prep"), py::arg("frame_omega") = py::none(),
      "frame_omega is the frequency the state was reconstructed in; it must match the protocol.");
  m.def(
      "wigner",
      [](const CMatrix& rho, const Array& z, const Array& p) {
        const auto zv = to_vector(z), pv = to_vector(p);
        return RMatrix(wigner(DensityMatrix(rho), zv, pv).values);
      },
      py::arg("rho"), py::arg("z"), py::arg("p"), "W(z_i, p_j) on the given axes.");
  m.def(
      "fidelity", [](const CMatrix& a, const CMatrix& b) { return fidelity(DensityMatrix(a), DensityMatrix(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "gaussian_density",
      [](const Mat2& cov, const Vec2& mean, int n_max) {
        Quadratures q;
        q.mean = mean;
        q.cov = cov;
        return CMatrix(gaussian_to_density(q, n_max).matrix());
      },
      py::arg("cov"), py::arg("mean") = Vec2::Zero(), py::arg("n_max") = 40);

  m.def(
      "fit_gaussian",
      [](const std::vector<std::pair<double, Array>>& data) {
        std::vector<PhaseSamples> samples;
        for (const auto& [phase, values] : data) samples.push_back({phase, to_vector(values)});
        const GaussianModelParams p = fit_gaussian(samples);
        py::dict d;
        d["mu_z1"] = p.mu_z1;
        d["mu_p1"] = p.mu_p1;
        d["A"] = p.A;
        d["B_c"] = p.B_c;
        d["B_s"] = p.B_s;
        d["sigma_plus"] = p.sigma_plus();
        d["sigma_minus"] = p.sigma_minus();
        return d;
      },
      py::arg("samples"), "Gaussian-model MLE from a list of (phase, values).");

  m.def(
      "allan_deviation",
      [](const Array& x, double f_s, std::optional<std::vector<double>> taus) {
        const auto xv = to_vector(x);
        const std::vector<double> t = taus ? *taus : allan_taus(xv.size(), f_s);
        const AllanResult r = allan_deviation(xv, f_s, t);
        std::vector<double> tau, adev;
        for (const AllanPoint& p : r.points) {
          tau.push_back(p.tau);
          adev.push_back(p.adev);
        }
        return py::make_tuple(to_array(tau), to_array(adev));
      },
      py::arg("x"), py::arg("f_s"), py::arg("taus") = py::none(), "Non-overlapping Allan deviation (tau, adev).");
}
