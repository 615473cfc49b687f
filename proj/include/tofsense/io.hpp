#pragma once

// File formats: density matrices and sinograms as JSON, shots and Wigner
// grids as CSV, flat key = value configuration, run manifests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tofsense/fockstate.hpp"
#include "tofsense/gaussfit.hpp"
#include "tofsense/inference.hpp"
#include "tofsense/phasespace.hpp"
#include "tofsense/synthlab.hpp"
#include "tofsense/tomomle.hpp"

namespace tofsense::io {

using nlohmann::json;

inline constexpr const char* kManifestSchema = "tofsense.manifest/1";
inline constexpr const char* kVersion = "0.1.0";

/// Writes to a temporary file next to `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// Parses JSON; syntax errors become IoError naming the byte offset.
json parse_json(const std::string& text, const std::string& source = "input");

json to_json(const DensityMatrix& rho);
DensityMatrix density_matrix_from_json(const json& j);

json to_json(const Sinogram& s);
Sinogram sinogram_from_json(const json& j);

std::string shots_to_csv(const std::vector<ShotRecord>& shots, const std::string& manifest = {});
std::vector<ShotRecord> shots_from_csv(const std::string& text);

/// First row "z_axis,..." and second row "p_axis,...", then one row of
/// W values per z.
std::string wigner_to_csv(const WignerGrid& grid, const std::string& manifest = {});

/// Numeric CSV with a header row; `#` lines are comments. Lines of the form
/// `# key = value` are collected into `meta`.
struct Table {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
  std::map<std::string, std::string> meta;

  bool has(const std::string& name) const;
  const std::vector<double>& column(const std::string& name) const;
  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
};
Table read_table(const std::string& text, const std::string& source = "table");

/// Flat `key = value` lines, `#` starts a comment. Duplicate keys and lines
/// without `=` throw ParameterError naming the line.
struct KeyValues {
  std::map<std::string, std::string> values;
  std::map<std::string, int> lines;

  bool has(const std::string& key) const { return values.count(key) > 0; }
  double number(const std::string& key) const;
  double number_or(const std::string& key, double fallback) const;
  std::string text_or(const std::string& key, const std::string& fallback) const;
};
KeyValues parse_key_values(const std::string& text);

/// ProtocolConfig fields by name over paper_defaults(). Keys outside the
/// config and `extra_keys` throw ParameterError naming the key.
ProtocolConfig protocol_from(const KeyValues& kv, const std::vector<std::string>& extra_keys = {});
std::string protocol_to_text(const ProtocolConfig& cfg);
json to_json(const ProtocolConfig& cfg);

json to_json(const MleResult& r, const MleSettings& settings);
json to_json(const GaussianModelParams& p);
json to_json(const GTestReport& r);
json to_json(const McmcDiagnostics& d);
json to_json(const FisherResult& r);
json to_json(const FitReport& r);
json to_json(const AllanResult& r);
std::string allan_to_csv(const AllanResult& r, const std::string& manifest = {});
std::string mcmc_to_csv(const McmcResult& r);

struct Manifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, std::string> settings;
  std::string timestamp;  // UTC, ISO 8601

  json to_json() const;
};

/// Current UTC time as YYYY-MM-DDThh:mm:ssZ.
std::string utc_timestamp();

}  // namespace tofsense::io
