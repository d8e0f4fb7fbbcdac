#pragma once

// Config schema, file formats, and the run manifest. Every tabular output
// starts with a format-version header line; configs are strict JSON
// (unknown keys are errors, so a typo cannot silently change a run).

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diffest/mean_field.hpp"
#include "diffest/operators.hpp"
#include "diffest/simulator.hpp"
#include "diffest/spectral.hpp"

namespace diffest {

using nlohmann::json;

// Exit codes: 0 ok, 2 config error, 3 data error, 4 calibration error,
// 5 numerical divergence.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
  static constexpr int exit_code = 2;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
  static constexpr int exit_code = 3;
};
struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
  static constexpr int exit_code = 4;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
  static constexpr int exit_code = 5;
};

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------
// Strict JSON helpers

namespace io_detail {

inline void require_keys(const json& obj, const std::string& where,
                         const std::vector<std::string>& required,
                         const std::vector<std::string>& optional = {}) {
  if (!obj.is_object())
    throw ConfigError(where + ": expected an object");
  for (const auto& key : required)
    if (!obj.contains(key))
      throw ConfigError(where + ": missing required field '" + key + "'");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const auto& k : required) known = known || (k == key);
    for (const auto& k : optional) known = known || (k == key);
    if (!known)
      throw ConfigError(where + ": unknown field '" + key + "'");
  }
}

inline double number_at(const json& obj, const std::string& where,
                        const std::string& key) {
  if (!obj.at(key).is_number())
    throw ConfigError(where + ": field '" + key + "' must be a number");
  return obj.at(key).get<double>();
}

inline int integer_at(const json& obj, const std::string& where,
                      const std::string& key) {
  if (!obj.at(key).is_number_integer())
    throw ConfigError(where + ": field '" + key + "' must be an integer");
  return obj.at(key).get<int>();
}

}  // namespace io_detail

// ---------------------------------------------------------------------
// Run specification

/// One cosine term a cos(k x + phase), optionally modulated in time by
/// cos(omega t + time_phase).
struct FieldMode {
  int k = 0;
  double amplitude = 0.0;
  double phase = 0.0;
  double omega = 0.0;
  double time_phase = 0.0;

  double eval(double x, double t) const {
    double v = amplitude * std::cos(k * x + phase);
    if (omega != 0.0) v *= std::cos(omega * t + time_phase);
    return v;
  }
};

inline SpectralField modes_to_field(const std::vector<FieldMode>& modes,
                                    int n_modes, double t = 0.0) {
  SpectralField f(n_modes);
  for (const auto& m : modes) {
    if (std::abs(m.k) > n_modes)
      throw ConfigError("mode k=" + std::to_string(m.k) +
                        " exceeds n_modes");
    double a = m.amplitude;
    if (m.omega != 0.0) a *= std::cos(m.omega * t + m.time_phase);
    if (m.k == 0)
      f.set_mode_pair(0, f.coeff(0).real() + a * std::cos(m.phase));
    else
      f.set_mode_pair(m.k, f.coeff(m.k) +
                               0.5 * a * std::polar(1.0, m.phase));
  }
  return f;
}

struct RunSpec {
  ModelConfig model;
  std::vector<FieldMode> source_modes;
  std::vector<FieldMode> truth_kappa_modes;  // empty unless truth given
  int truth_refine = 1;
  std::uint64_t seed = 0;
  int measure_every = 1;
  OuterOptions estimate;

  SpectralField source_field(double t = 0.0) const {
    return modes_to_field(source_modes, model.n_modes, t);
  }
  SpaceTimeFn source_fn() const {
    auto modes = source_modes;
    return [modes](double x, double t) {
      double v = 0.0;
      for (const auto& m : modes) v += m.eval(x, t);
      return v;
    };
  }
  SpaceTimeFn truth_kappa_fn() const {
    if (truth_kappa_modes.empty())
      throw ConfigError("config has no 'truth' section");
    auto modes = truth_kappa_modes;
    return [modes](double x, double t) {
      double v = 0.0;
      for (const auto& m : modes) v += m.eval(x, t);
      return v;
    };
  }
};

namespace io_detail {

inline std::vector<FieldMode> parse_modes(const json& arr,
                                          const std::string& where) {
  if (!arr.is_array())
    throw ConfigError(where + ": expected an array of modes");
  std::vector<FieldMode> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    const json& m = arr[i];
    require_keys(m, at, {"k", "amplitude"}, {"phase", "omega", "time_phase"});
    FieldMode mode;
    mode.k = integer_at(m, at, "k");
    mode.amplitude = number_at(m, at, "amplitude");
    if (m.contains("phase")) mode.phase = number_at(m, at, "phase");
    if (m.contains("omega")) mode.omega = number_at(m, at, "omega");
    if (m.contains("time_phase"))
      mode.time_phase = number_at(m, at, "time_phase");
    out.push_back(mode);
  }
  return out;
}

}  // namespace io_detail

inline RunSpec parse_run_spec(const json& root) {
  using namespace io_detail;
  require_keys(root, "config",
               {"format", "model", "source", "seed"},
               {"truth", "measure_every", "estimate"});
  if (root.at("format").get<std::string>() != "diffest-config/v1")
    throw ConfigError("config: unsupported format '" +
                      root.at("format").get<std::string>() + "'");

  RunSpec spec;
  const json& model = root.at("model");
  require_keys(model, "config.model",
               {"n_modes", "kappa0", "mu1", "mu2", "alpha1", "beta1",
                "alpha2", "beta2", "dt", "n_steps", "sensors"});
  spec.model.n_modes = integer_at(model, "config.model", "n_modes");
  spec.model.kappa0 = number_at(model, "config.model", "kappa0");
  spec.model.mu1 = number_at(model, "config.model", "mu1");
  spec.model.mu2 = number_at(model, "config.model", "mu2");
  spec.model.alpha1 = number_at(model, "config.model", "alpha1");
  spec.model.beta1 = number_at(model, "config.model", "beta1");
  spec.model.alpha2 = number_at(model, "config.model", "alpha2");
  spec.model.beta2 = number_at(model, "config.model", "beta2");
  spec.model.dt = number_at(model, "config.model", "dt");
  spec.model.n_steps = integer_at(model, "config.model", "n_steps");

  const json& sensors = model.at("sensors");
  if (sensors.contains("count")) {
    require_keys(sensors, "config.model.sensors", {"count", "sigma"});
    const int m = integer_at(sensors, "config.model.sensors", "count");
    if (m < 1) throw ConfigError("config.model.sensors: count must be >= 1");
    spec.model.sensor_locations = uniform_sensor_locations(m);
    spec.model.sensor_sigmas.assign(
        m, number_at(sensors, "config.model.sensors", "sigma"));
  } else {
    require_keys(sensors, "config.model.sensors", {"locations", "sigmas"});
    spec.model.sensor_locations =
        sensors.at("locations").get<std::vector<double>>();
    spec.model.sensor_sigmas =
        sensors.at("sigmas").get<std::vector<double>>();
  }

  spec.source_modes = io_detail::parse_modes(root.at("source"), "config.source");
  if (root.contains("truth")) {
    const json& truth = root.at("truth");
    require_keys(truth, "config.truth", {"kappa"}, {"refine"});
    spec.truth_kappa_modes =
        io_detail::parse_modes(truth.at("kappa"), "config.truth.kappa");
    if (truth.contains("refine"))
      spec.truth_refine = integer_at(truth, "config.truth", "refine");
    if (spec.truth_refine < 1)
      throw ConfigError("config.truth: refine must be >= 1");
  }

  if (!root.at("seed").is_number_integer())
    throw ConfigError("config: field 'seed' must be an integer");
  spec.seed = root.at("seed").get<std::uint64_t>();
  if (root.contains("measure_every")) {
    spec.measure_every = integer_at(root, "config", "measure_every");
    if (spec.measure_every < 1)
      throw ConfigError("config: measure_every must be >= 1");
  }

  if (root.contains("estimate")) {
    const json& est = root.at("estimate");
    io_detail::require_keys(est, "config.estimate", {},
                            {"max_iters", "tol", "relaxation",
                             "window_multiple", "spatial_width",
                             "kappa_floor_rel"});
    if (est.contains("max_iters"))
      spec.estimate.max_iters = io_detail::integer_at(est, "config.estimate",
                                                      "max_iters");
    if (est.contains("tol"))
      spec.estimate.tol = io_detail::number_at(est, "config.estimate", "tol");
    if (est.contains("relaxation"))
      spec.estimate.relaxation =
          io_detail::number_at(est, "config.estimate", "relaxation");
    if (est.contains("window_multiple"))
      spec.estimate.window_multiple =
          io_detail::number_at(est, "config.estimate", "window_multiple");
    if (est.contains("spatial_width"))
      spec.estimate.spatial_width =
          io_detail::number_at(est, "config.estimate", "spatial_width");
    if (est.contains("kappa_floor_rel"))
      spec.estimate.kappa_floor_rel =
          io_detail::number_at(est, "config.estimate", "kappa_floor_rel");
  }

  try {
    spec.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  // A prescribed truth diffusivity must stay positive over the run.
  if (!spec.truth_kappa_modes.empty()) {
    const auto fn = spec.truth_kappa_fn();
    const auto x = SpectralField::grid(spec.model.n_modes);
    const double horizon = spec.model.n_steps * spec.model.dt;
    for (int s = 0; s <= 16; ++s) {
      const double t = horizon * s / 16.0;
      for (double xi : x)
        if (!(fn(xi, t) > 0.0))
          throw ConfigError("config.truth: kappa not positive at x=" +
                            std::to_string(xi) + ", t=" + std::to_string(t));
    }
  }
  return spec;
}

inline json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  json root;
  try {
    in >> root;
  } catch (const json::parse_error& e) {
    throw ConfigError("failed to parse '" + path.string() + "': " + e.what());
  }
  return root;
}

inline RunSpec load_run_spec(const std::filesystem::path& path) {
  return parse_run_spec(load_json(path));
}

// ---------------------------------------------------------------------
// Checksums and formatted output

inline std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = 1469598103934665603ULL;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ULL;
  }
  return hash;
}

inline std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::uint64_t hash = 1469598103934665603ULL;
  char buffer[1 << 15];
  while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
    const auto n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      hash ^= static_cast<unsigned char>(buffer[i]);
      hash *= 1099511628211ULL;
    }
    if (!in) break;
  }
  return hash;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Tab-separated writer with the format-version header.
class TsvWriter {
 public:
  TsvWriter(const std::filesystem::path& path, const std::string& kind,
            const std::vector<std::string>& columns,
            const std::vector<std::string>& meta = {})
      : out_(path) {
    if (!out_) throw DataError("cannot write '" + path.string() + "'");
    out_ << "# diffest/v1 " << kind << "\n";
    for (const auto& m : meta) out_ << "# " << m << "\n";
    out_ << "# columns:";
    for (const auto& c : columns) out_ << " " << c;
    out_ << "\n";
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << '\t';
      out_ << format_double(values[i]);
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

/// Writes a field trajectory as (time, x, value) triples on the grid.
inline void write_field_series(const std::filesystem::path& path,
                               const std::string& kind,
                               const Eigen::VectorXd& times,
                               const std::vector<SpectralField>& fields) {
  TsvWriter tsv(path, kind, {"time", "x", "value"});
  const auto x = fields.front().grid();
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const Eigen::VectorXd v = fields[i].to_physical();
    for (int j = 0; j < v.size(); ++j)
      tsv.row({times(static_cast<Eigen::Index>(i)), x[j], v(j)});
  }
}

inline void write_measurements(const std::filesystem::path& path,
                               const MeasurementSet& set) {
  TsvWriter tsv(path, "measurements",
                {"step", "time", "sensor", "sensor_x", "value"},
                {"n_sensors=" + std::to_string(set.sensor_locations.size()),
                 "n_instants=" + std::to_string(set.n_instants())});
  for (int i = 0; i < set.n_instants(); ++i)
    for (std::size_t l = 0; l < set.sensor_locations.size(); ++l)
      tsv.row({static_cast<double>(set.step_indices[i]), set.times(i),
               static_cast<double>(l), set.sensor_locations[l],
               set.values(static_cast<Eigen::Index>(l), i)});
}

/// Reads a measurements file back, validating against the model config.
inline MeasurementSet read_measurements(const std::filesystem::path& path,
                                        const ModelConfig& config) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("# diffest/v1 measurements", 0) != 0)
    throw DataError("'" + path.string() + "' is not a measurements file");

  struct Row {
    int step;
    double time;
    int sensor;
    double x;
    double value;
  };
  std::vector<Row> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Row r;
    if (!(ss >> r.step >> r.time >> r.sensor >> r.x >> r.value))
      throw DataError("measurements row " + std::to_string(line_no) +
                      ": malformed line");
    if (!std::isfinite(r.value) || !std::isfinite(r.time) ||
        !std::isfinite(r.x))
      throw DataError("measurements row " + std::to_string(line_no) +
                      ": non-finite value");
    rows.push_back(r);
  }

  const int m = config.n_sensors();
  MeasurementSet set;
  set.sensor_locations = config.sensor_locations;
  set.sensor_sigmas = config.sensor_sigmas;
  std::map<int, int> step_order;
  for (const auto& r : rows) {
    if (r.sensor < 0 || r.sensor >= m)
      throw DataError("measurements: sensor index " +
                      std::to_string(r.sensor) +
                      " does not match the config (" + std::to_string(m) +
                      " sensors)");
    if (std::abs(r.x - config.sensor_locations[r.sensor]) > 1e-9)
      throw DataError("measurements: sensor " + std::to_string(r.sensor) +
                      " location differs from the config");
    step_order.emplace(r.step, 0);
  }
  int idx = 0;
  for (auto& [step, i] : step_order) {
    if (step < 1 || step > config.n_steps)
      throw DataError("measurements: step index " + std::to_string(step) +
                      " outside 1.." + std::to_string(config.n_steps));
    i = idx++;
  }
  set.step_indices.reserve(step_order.size());
  for (const auto& [step, i] : step_order) set.step_indices.push_back(step);
  set.times.resize(idx);
  set.values.resize(m, idx);
  Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(m, idx);
  for (const auto& r : rows) {
    const int i = step_order.at(r.step);
    set.times(i) = r.time;
    set.values(r.sensor, i) = r.value;
    seen(r.sensor, i) = 1;
  }
  if (seen.minCoeff() == 0)
    throw DataError("measurements: missing sensor rows for some instants");
  return set;
}

// ---------------------------------------------------------------------
// Self-describing binary container for state dumps

inline void write_state_dump(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, Eigen::MatrixXd>>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  const char magic[4] = {'D', 'F', 'S', 'T'};
  out.write(magic, 4);
  auto put_u64 = [&](std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put_u64(1);  // container version
  put_u64(arrays.size());
  for (const auto& [name, data] : arrays) {
    put_u64(name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(static_cast<std::uint64_t>(data.rows()));
    put_u64(static_cast<std::uint64_t>(data.cols()));
    for (Eigen::Index r = 0; r < data.rows(); ++r)
      for (Eigen::Index c = 0; c < data.cols(); ++c) {
        const double v = data(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
}

inline std::vector<std::pair<std::string, Eigen::MatrixXd>> read_state_dump(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (std::string(magic, 4) != "DFST")
    throw DataError("'" + path.string() + "' is not a state dump");
  auto get_u64 = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  };
  if (get_u64() != 1) throw DataError("unsupported state dump version");
  const std::uint64_t count = get_u64();
  std::vector<std::pair<std::string, Eigen::MatrixXd>> out;
  for (std::uint64_t a = 0; a < count; ++a) {
    std::string name(get_u64(), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rows = static_cast<Eigen::Index>(get_u64());
    const auto cols = static_cast<Eigen::Index>(get_u64());
    Eigen::MatrixXd data(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        in.read(reinterpret_cast<char*>(&data(r, c)), sizeof(double));
    out.emplace_back(std::move(name), std::move(data));
  }
  if (!in) throw DataError("truncated state dump '" + path.string() + "'");
  return out;
}

// ---------------------------------------------------------------------
// Run manifest

class ManifestBuilder {
 public:
  ManifestBuilder(std::string command, json config_snapshot)
      : manifest_{{"format", "diffest-manifest/v1"},
                  {"command", std::move(command)},
                  {"version", kVersion},
                  {"config", std::move(config_snapshot)},
                  {"files", json::object()}} {}

  void set(const std::string& key, json value) {
    manifest_[key] = std::move(value);
  }

  void add_file(const std::filesystem::path& dir, const std::string& name) {
    const auto path = dir / name;
    char hex[20];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64_file(path)));
    manifest_["files"][name] = {
        {"bytes", std::filesystem::file_size(path)},
        {"fnv1a64", std::string(hex)}};
  }

  void write(const std::filesystem::path& dir) const {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write manifest");
    out << manifest_.dump(2) << "\n";
  }

  const json& data() const { return manifest_; }

 private:
  json manifest_;
};

}  // namespace diffest
