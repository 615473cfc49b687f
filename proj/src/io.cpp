#include "tofsense/io.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "tofsense/errors.hpp"

namespace tofsense::io {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T field(const json& j, const char* key, const std::string& what) {
  if (!j.is_object() || !j.contains(key)) throw DataError(what + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(what + ": field '" + key + "' has the wrong type");
  }
}

std::vector<double> parse_csv_row(const std::string& line, int lineno) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t end = line.find(',', pos);
    if (end == std::string::npos) end = line.size();
    const std::string cell = trim(line.substr(pos, end - pos));
    double v = 0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size())
      throw IoError("CSV line " + std::to_string(lineno) + ": '" + cell + "' is not a number");
    out.push_back(v);
    pos = end + 1;
  }
  return out;
}

const std::vector<std::pair<const char*, double ProtocolConfig::*>>& protocol_fields() {
  static const std::vector<std::pair<const char*, double ProtocolConfig::*>> fields{
      {"mass", &ProtocolConfig::mass},
      {"omega0", &ProtocolConfig::omega0},
      {"omega1", &ProtocolConfig::omega1},
      {"t_sp", &ProtocolConfig::t_sp},
      {"t_tof", &ProtocolConfig::t_tof},
      {"g", &ProtocolConfig::g},
      {"theta", &ProtocolConfig::theta},
      {"occupation", &ProtocolConfig::occupation},
      {"gamma_bg", &ProtocolConfig::gamma_bg},
      {"noise_floor", &ProtocolConfig::noise_floor},
  };
  return fields;
}

json vec_json(const Vec5& v) { return json::array({v(0), v(1), v(2), v(3), v(4)}); }

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp, ec);
      throw IoError("write to " + tmp.string() + " failed");
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read from " + path.string() + " failed");
  return ss.str();
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(source + ": JSON parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

json to_json(const DensityMatrix& rho) {
  const CMatrix& m = rho.matrix();
  json re = json::array(), im = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      re.push_back(m(i, k).real());
      im.push_back(m(i, k).imag());
    }
  return {{"dim", rho.dim()}, {"re", re}, {"im", im}};
}

DensityMatrix density_matrix_from_json(const json& j) {
  const std::string what = "density matrix JSON";
  const int dim = field<int>(j, "dim", what);
  const auto re = field<std::vector<double>>(j, "re", what);
  const auto im = field<std::vector<double>>(j, "im", what);
  if (dim < 1 || re.size() != static_cast<std::size_t>(dim) * dim || im.size() != re.size())
    throw DataError(what + ": dim does not match the array lengths");
  CMatrix m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int k = 0; k < dim; ++k) m(i, k) = Complex(re[i * dim + k], im[i * dim + k]);
  return DensityMatrix(m);
}

json to_json(const Sinogram& s) {
  json hist = json::array();
  for (const Histogram& h : s.histograms) hist.push_back({{"centers", h.centers}, {"counts", h.counts}});
  json out{{"phases", s.phases},
           {"delta", s.delta},
           {"histograms", hist},
           {"meta",
            {{"omega", s.meta.omega}, {"t_tof", s.meta.t_tof}, {"centered", s.meta.centered}, {"seed", s.meta.seed}}}};
  if (!s.warnings.empty()) out["warnings"] = s.warnings;
  return out;
}

Sinogram sinogram_from_json(const json& j) {
  const std::string what = "sinogram JSON";
  Sinogram s;
  s.phases = field<std::vector<double>>(j, "phases", what);
  s.delta = field<double>(j, "delta", what);
  const json hist = field<json>(j, "histograms", what);
  if (!hist.is_array()) throw DataError(what + ": 'histograms' must be an array");
  for (const json& h : hist)
    s.histograms.push_back({field<std::vector<double>>(h, "centers", what), field<std::vector<double>>(h, "counts", what)});
  if (j.contains("meta")) {
    const json& m = j.at("meta");
    s.meta.omega = field<double>(m, "omega", what);
    s.meta.t_tof = field<double>(m, "t_tof", what);
    s.meta.centered = field<bool>(m, "centered", what);
    s.meta.seed = field<std::uint64_t>(m, "seed", what);
  }
  if (j.contains("warnings")) s.warnings = field<std::vector<std::string>>(j, "warnings", what);
  if (s.phases.size() != s.histograms.size()) throw DataError(what + ": phases and histograms differ in length");
  s.validate();
  return s;
}

std::string shots_to_csv(const std::vector<ShotRecord>& shots, const std::string& manifest) {
  std::string out;
  if (!manifest.empty()) out += "# manifest: " + manifest + "\n";
  out += "t_sp,t_tof,z_meas\n";
  for (const ShotRecord& s : shots) out += fmt(s.t_sp) + "," + fmt(s.t_tof) + "," + fmt(s.z_meas) + "\n";
  return out;
}

std::vector<ShotRecord> shots_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<ShotRecord> out;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "t_sp,t_tof,z_meas") throw IoError("shots CSV: expected header t_sp,t_tof,z_meas on line " + std::to_string(lineno));
      header = true;
      continue;
    }
    const auto row = parse_csv_row(line, lineno);
    if (row.size() != 3) throw IoError("shots CSV line " + std::to_string(lineno) + ": expected 3 columns");
    out.push_back({row[0], row[1], row[2]});
  }
  if (!header) throw IoError("shots CSV: missing header");
  return out;
}

std::string wigner_to_csv(const WignerGrid& grid, const std::string& manifest) {
  std::string out;
  if (!manifest.empty()) out += "# manifest: " + manifest + "\n";
  out += "z_axis";
  for (double z : grid.z_axis) out += "," + fmt(z);
  out += "\np_axis";
  for (double p : grid.p_axis) out += "," + fmt(p);
  out += "\n";
  for (Eigen::Index i = 0; i < grid.values.rows(); ++i) {
    for (Eigen::Index k = 0; k < grid.values.cols(); ++k) out += (k ? "," : "") + fmt(grid.values(i, k));
    out += "\n";
  }
  return out;
}

bool Table::has(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

const std::vector<double>& Table::column(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DataError("table has no column '" + name + "'");
  return columns[static_cast<std::size_t>(it - names.begin())];
}

Table read_table(const std::string& text, const std::string& source) {
  Table t;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos) t.meta[trim(line.substr(1, eq - 1))] = trim(line.substr(eq + 1));
      continue;
    }
    if (t.names.empty()) {
      std::istringstream hs(line);
      std::string name;
      while (std::getline(hs, name, ',')) t.names.push_back(trim(name));
      t.columns.resize(t.names.size());
      continue;
    }
    const auto row = parse_csv_row(line, lineno);
    if (row.size() != t.names.size())
      throw IoError(source + " line " + std::to_string(lineno) + ": expected " + std::to_string(t.names.size()) +
                    " columns");
    for (std::size_t k = 0; k < row.size(); ++k) t.columns[k].push_back(row[k]);
  }
  if (t.names.empty()) throw IoError(source + ": missing header row");
  return t;
}

// ---------------------------------------------------------------------------

double KeyValues::number(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw ParameterError("config: missing key '" + key + "'");
  const std::string& s = it->second;
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ParameterError("config line " + std::to_string(lines.at(key)) + ": '" + key + "' = '" + s +
                         "' is not a finite number");
  return v;
}

double KeyValues::number_or(const std::string& key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

std::string KeyValues::text_or(const std::string& key, const std::string& fallback) const {
  const auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParameterError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.has(key)) throw ParameterError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv.values[key] = value;
    kv.lines[key] = lineno;
  }
  return kv;
}

ProtocolConfig protocol_from(const KeyValues& kv, const std::vector<std::string>& extra_keys) {
  ProtocolConfig cfg = ProtocolConfig::paper_defaults();
  for (const auto& [key, value] : kv.values) {
    bool known = std::find(extra_keys.begin(), extra_keys.end(), key) != extra_keys.end();
    for (const auto& [name, member] : protocol_fields())
      if (key == name) {
        cfg.*member = kv.number(key);
        known = true;
      }
    if (!known) throw ParameterError("config line " + std::to_string(kv.lines.at(key)) + ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

std::string protocol_to_text(const ProtocolConfig& cfg) {
  std::string out;
  for (const auto& [name, member] : protocol_fields()) out += std::string(name) + " = " + fmt(cfg.*member) + "\n";
  return out;
}

json to_json(const ProtocolConfig& cfg) {
  json out = json::object();
  for (const auto& [name, member] : protocol_fields()) out[name] = cfg.*member;
  return out;
}

// ---------------------------------------------------------------------------

json to_json(const MleResult& r, const MleSettings& settings) {
  return {{"iterations", r.iterations},
          {"log_likelihood", r.log_likelihood},
          {"final_distance", r.final_distance},
          {"final_loglik_change", r.final_loglik_change},
          {"final_epsilon", r.final_epsilon},
          {"converged", r.converged()},
          {"converged_distance", r.converged_distance},
          {"converged_loglik", r.converged_loglik},
          {"stalled", r.stalled},
          {"truncation_ok", r.truncation_ok},
          {"truncation_tail", r.truncation_tail},
          {"identifiable", r.identifiable},
          {"settings",
           {{"epsilon", settings.epsilon},
            {"n_max", settings.n_max},
            {"threshold_distance", settings.threshold_distance},
            {"threshold_loglik", settings.threshold_loglik},
            {"max_iterations", settings.max_iterations}}}};
}

json to_json(const GaussianModelParams& p) {
  return {{"mu_z1", p.mu_z1}, {"mu_p1", p.mu_p1}, {"A", p.A},
          {"B_c", p.B_c},     {"B_s", p.B_s},     {"sigma_plus", p.sigma_plus()},
          {"sigma_minus", p.sigma_minus()}};
}

json to_json(const GTestReport& r) {
  return {{"g_statistic", r.g_statistic}, {"g_raw", r.g_raw},
          {"williams_q", r.williams_q},   {"degrees_of_freedom", r.degrees_of_freedom},
          {"upper_p_value", r.upper_p_value}, {"percentile_sigma", r.percentile},
          {"merged_bins", r.merged_bins}};
}

json to_json(const McmcDiagnostics& d) {
  auto v = [](const Vec5& x) { return vec_json(x); };
  return {{"chains", d.chains},
          {"burn_in", d.burn_in},
          {"draws_per_chain", d.draws_per_chain},
          {"thinning", d.thinning},
          {"split_rhat", v(d.split_rhat)},
          {"iact", v(d.iact)},
          {"effective_samples", d.effective_samples},
          {"acceptance", d.acceptance},
          {"proposal_scale", v(d.proposal_scale)},
          {"converged", d.converged},
          {"sigma_plus_interval", {d.sigma_plus_lo, d.sigma_plus_hi}},
          {"sigma_minus_interval", {d.sigma_minus_lo, d.sigma_minus_hi}}};
}

json to_json(const FisherResult& r) {
  json out{{"F_theta", r.F_theta},   {"F_force", r.F_force}, {"sensitivity_N", r.sensitivity},
           {"fisher_p", r.fisher_p}, {"phase", r.phase},     {"d_theta", r.d_theta},
           {"warnings", r.warnings}};
  if (r.bootstrap_samples > 0 || r.bootstrap_failures > 0) {
    out["bootstrap"] = {{"samples", r.bootstrap_samples},
                        {"failures", r.bootstrap_failures},
                        {"mean_N", r.bootstrap_mean},
                        {"interval_68_N", {r.bootstrap_lo, r.bootstrap_hi}},
                        {"degenerate", r.bootstrap_degenerate},
                        {"warm_start", r.bootstrap_warm},
                        {"audit_max_rel_diff", r.audit_max_rel_diff}};
  }
  return out;
}

json to_json(const FitReport& r) {
  json params = json::object();
  for (std::size_t i = 0; i < r.names.size(); ++i) params[r.names[i]] = {{"value", r.values[i]}, {"error", r.errors[i]}};
  json out{{"model", r.model}, {"parameters", params}, {"chi2", r.chi2},     {"dof", r.dof},
           {"rms_residual", r.rms_residual}, {"converged", r.converged}, {"notes", r.notes}};
  if (r.rounds > 0) {
    out["rounds"] = r.rounds;
    out["trace"] = r.trace;
  }
  return out;
}

json to_json(const AllanResult& r) {
  json pts = json::array();
  for (const AllanPoint& p : r.points) pts.push_back({{"tau_s", p.tau}, {"adev_N", p.adev}, {"windows", p.windows}});
  return {{"points", pts}, {"notes", r.notes}};
}

std::string allan_to_csv(const AllanResult& r, const std::string& manifest) {
  std::string out;
  if (!manifest.empty()) out += "# manifest: " + manifest + "\n";
  out += "tau_s,adev_N\n";
  for (const AllanPoint& p : r.points) out += fmt(p.tau) + "," + fmt(p.adev) + "\n";
  return out;
}

std::string mcmc_to_csv(const McmcResult& r) {
  std::string out = "chain,iteration,mu_z1,mu_p1,A,B_c,B_s\n";
  for (std::size_t k = 0; k < r.draws.size(); ++k) {
    const GaussianModelParams& d = r.draws[k];
    out += std::to_string(r.chain_index[k]) + "," + std::to_string(r.iteration[k]) + "," + fmt(d.mu_z1) + "," +
           fmt(d.mu_p1) + "," + fmt(d.A) + "," + fmt(d.B_c) + "," + fmt(d.B_s) + "\n";
  }
  return out;
}

json Manifest::to_json() const {
  return {{"schema", kManifestSchema}, {"command", command},   {"config_path", config_path},
          {"seed", seed},              {"inputs", inputs},     {"outputs", outputs},
          {"settings", settings},      {"version", kVersion},  {"timestamp", timestamp}};
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace tofsense::io
