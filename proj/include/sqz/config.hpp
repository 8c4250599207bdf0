#pragma once

// Experiment configuration: JSON file with explicit units on every physical
// quantity ("2 mm", "1.8 deg", "0.3 Hz"), dotted-path overrides, and a stable
// hash of the physics sections for cache invalidation.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqz/crystal_optics.hpp"
#include "sqz/errors.hpp"
#include "sqz/homodyne.hpp"
#include "sqz/pump_kernel.hpp"

namespace sqz {

using json = nlohmann::json;

enum class Dimension { length, angle, frequency, time, chirp, decibel };

namespace detail {

inline const std::map<std::string, double>& unit_table(Dimension d) {
  static const std::map<std::string, double> length{
      {"m", 1.0}, {"cm", 1e-2}, {"mm", 1e-3}, {"um", 1e-6}, {"µm", 1e-6}, {"nm", 1e-9}, {"pm", 1e-12}};
  static const std::map<std::string, double> angle{
      {"rad", 1.0}, {"mrad", 1e-3}, {"deg", std::numbers::pi / 180.0}};
  static const std::map<std::string, double> frequency{
      {"Hz", 1.0}, {"kHz", 1e3}, {"MHz", 1e6}};
  static const std::map<std::string, double> time{
      {"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"ns", 1e-9}};
  static const std::map<std::string, double> chirp{{"s^2", 1.0}, {"ps^2", 1e-24}, {"fs^2", 1e-30}};
  static const std::map<std::string, double> decibel{{"dB", 1.0}};
  switch (d) {
    case Dimension::length: return length;
    case Dimension::angle: return angle;
    case Dimension::frequency: return frequency;
    case Dimension::time: return time;
    case Dimension::chirp: return chirp;
    case Dimension::decibel: return decibel;
  }
  return length;
}

}  // namespace detail

/// Parses "<number> <unit>" into SI (radians for angles, dB for decibels).
inline double parse_quantity(const json& value, Dimension dim, const std::string& path) {
  if (value.is_number())
    throw ConfigError(path + ": physical quantity needs an explicit unit, e.g. \"" +
                      std::to_string(value.get<double>()) + " " +
                      detail::unit_table(dim).begin()->first + "\"");
  if (!value.is_string()) throw ConfigError(path + ": expected a quantity string");
  const std::string text = value.get<std::string>();
  std::istringstream in(text);
  double number = 0.0;
  std::string unit;
  std::string rest;
  if (!(in >> number) || !(in >> unit) || (in >> rest))
    throw ConfigError(path + ": cannot parse quantity '" + text + "'");
  const auto& table = detail::unit_table(dim);
  const auto it = table.find(unit);
  if (it == table.end()) throw ConfigError(path + ": unknown or mismatched unit '" + unit + "'");
  if (!std::isfinite(number)) throw ConfigError(path + ": non-finite value");
  return number * it->second;
}

struct AnalysisSettings {
  std::vector<int> hg_orders{0, 1, 2, 3};
  double hg_center_m = 795e-9;
  double hg_fwhm_m = 15e-9;
  bool spatial_cuts = true;
  Mapping mapping = Mapping::exponential;
  double efficiency = 1.0;
  std::optional<double> gain;
  std::optional<double> calibration_target_db;
  double truncation = 1e-6;
  int bootstrap_rounds = 1000;
  double verdict_sigmas = 3.0;
  bool cross_block = false;  // reserved; X-P cross block is taken as zero
};

struct OutputSettings {
  std::string directory = "out";
  bool kernel_cache = true;
  int exported_modes = 8;
};

struct ExperimentConfig {
  CrystalSpec crystal;
  bool solve_theta0 = true;
  PumpProfile pump;
  GridSettings grid;
  AnalysisSettings analysis;
  ScanSettings scan;
  NoiseSettings noise;
  std::uint64_t seed = 0;
  OutputSettings output;
  json document;  // the effective configuration after overrides

  double omega_signal() const { return pump.signal_omega(); }
};

namespace detail {

inline const json& section(const json& doc, const std::string& name) {
  if (!doc.contains(name)) throw ConfigError("missing section '" + name + "'");
  const json& s = doc.at(name);
  if (!s.is_object()) throw ConfigError("section '" + name + "' must be an object");
  return s;
}

inline const json& key(const json& obj, const std::string& path, const std::string& name) {
  if (!obj.contains(name)) throw ConfigError(path + "." + name + ": missing key");
  return obj.at(name);
}

template <typename T>
T typed(const json& obj, const std::string& path, const std::string& name) {
  const json& v = key(obj, path, name);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + name + ": wrong type");
  }
}

template <typename T>
T typed_or(const json& obj, const std::string& path, const std::string& name, T fallback) {
  return obj.contains(name) ? typed<T>(obj, path, name) : fallback;
}

inline void reject_unknown(const json& obj, const std::string& path,
                           const std::vector<std::string>& allowed) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const auto& a : allowed) ok = ok || a == k;
    if (!ok) throw ConfigError(path + "." + k + ": unknown key");
  }
}

inline Sellmeier parse_sellmeier(const json& s, const std::string& path) {
  if (!s.is_object()) throw ConfigError(path + ": expected an object");
  reject_unknown(s, path, {"form", "a", "poles", "d", "valid_range"});
  const auto form = typed<std::string>(s, path, "form");
  if (form != "a + sum B/(l^2 - C) - d l^2, l in um")
    throw ConfigError(path + ".form: unsupported Sellmeier form '" + form + "'");
  Sellmeier out;
  out.a = typed<double>(s, path, "a");
  out.d = typed_or<double>(s, path, "d", 0.0);
  if (s.contains("poles")) {
    const json& poles = s.at("poles");
    if (!poles.is_array()) throw ConfigError(path + ".poles: expected an array of [B, C]");
    for (std::size_t i = 0; i < poles.size(); ++i) {
      const json& p = poles[i];
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        throw ConfigError(path + ".poles[" + std::to_string(i) + "]: expected [B, C]");
      out.poles.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
  }
  const json& range = key(s, path, "valid_range");
  if (!range.is_array() || range.size() != 2)
    throw ConfigError(path + ".valid_range: expected [min, max]");
  out.min_wavelength_m = parse_quantity(range[0], Dimension::length, path + ".valid_range[0]");
  out.max_wavelength_m = parse_quantity(range[1], Dimension::length, path + ".valid_range[1]");
  return out;
}

inline void set_path(json& doc, const std::string& dotted, const json& value) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string part = dotted.substr(start, dot - start);
    if (part.empty()) throw ConfigError("override key '" + dotted + "' is malformed");
    if (dot == std::string::npos) {
      if (!node->is_object()) throw ConfigError("override key '" + dotted + "' is not an object path");
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("override key '" + dotted + "' is not an object path");
    start = dot + 1;
  }
}

}  // namespace detail

/// Applies "key.path=value" overrides. The value is read as JSON when it
/// parses, otherwise as a string ("analysis.g=0", "pump.waist=60 um").
/// Setting one of analysis.g / analysis.calibration_target_db drops the other.
inline void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + o + "' must have the form key=value");
    const std::string path = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    detail::set_path(doc, path, value);
    if (path == "analysis.g" && doc["analysis"].contains("calibration_target_db"))
      doc["analysis"].erase("calibration_target_db");
    if (path == "analysis.calibration_target_db" && doc["analysis"].contains("g"))
      doc["analysis"].erase("g");
  }
}

inline ExperimentConfig parse_config(const json& doc) {
  using detail::key;
  using detail::section;
  using detail::typed;
  using detail::typed_or;
  if (!doc.is_object()) throw ConfigError("configuration root must be an object");
  detail::reject_unknown(doc, "config",
                         {"format", "crystal", "pump", "grid", "analysis", "noise", "output"});
  if (doc.contains("format") && doc.at("format") != "sqz-config v1")
    throw ConfigError("format: expected 'sqz-config v1'");

  ExperimentConfig cfg;
  cfg.document = doc;

  {
    const json& c = section(doc, "crystal");
    detail::reject_unknown(c, "crystal",
                           {"name", "length", "noncollinear_angle", "theta0", "sellmeier_ordinary",
                            "sellmeier_extraordinary"});
    cfg.crystal.name = typed_or<std::string>(c, "crystal", "name", "crystal");
    cfg.crystal.length_m = parse_quantity(key(c, "crystal", "length"), Dimension::length, "crystal.length");
    cfg.crystal.noncollinear_angle_rad = parse_quantity(
        key(c, "crystal", "noncollinear_angle"), Dimension::angle, "crystal.noncollinear_angle");
    const json& theta0 = key(c, "crystal", "theta0");
    cfg.solve_theta0 = theta0 == "solve";
    if (!cfg.solve_theta0)
      cfg.crystal.theta0_rad = parse_quantity(theta0, Dimension::angle, "crystal.theta0");
    cfg.crystal.sellmeier_ordinary =
        detail::parse_sellmeier(key(c, "crystal", "sellmeier_ordinary"), "crystal.sellmeier_ordinary");
    cfg.crystal.sellmeier_extraordinary = detail::parse_sellmeier(
        key(c, "crystal", "sellmeier_extraordinary"), "crystal.sellmeier_extraordinary");
    cfg.crystal.validate(!cfg.solve_theta0);
  }
  {
    const json& p = section(doc, "pump");
    detail::reject_unknown(p, "pump", {"center_wavelength", "fwhm", "waist", "chirp"});
    cfg.pump.center_wavelength_m =
        parse_quantity(key(p, "pump", "center_wavelength"), Dimension::length, "pump.center_wavelength");
    cfg.pump.spectral_fwhm_m = parse_quantity(key(p, "pump", "fwhm"), Dimension::length, "pump.fwhm");
    cfg.pump.waist_m = parse_quantity(key(p, "pump", "waist"), Dimension::length, "pump.waist");
    cfg.pump.chirp_s2 =
        p.contains("chirp") ? parse_quantity(p.at("chirp"), Dimension::chirp, "pump.chirp") : 0.0;
    try {
      cfg.pump.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("pump: ") + e.what());
    }
  }
  {
    const json& g = section(doc, "grid");
    detail::reject_unknown(g, "grid",
                           {"q_points", "omega_points", "q_margin_waists", "omega_points_per_pump_fwhm"});
    cfg.grid.q_points = typed<int>(g, "grid", "q_points");
    cfg.grid.omega_points = typed<int>(g, "grid", "omega_points");
    cfg.grid.q_margin_waists = typed_or<double>(g, "grid", "q_margin_waists", 4.0);
    cfg.grid.omega_points_per_pump_fwhm = typed_or<double>(g, "grid", "omega_points_per_pump_fwhm", 8.0);
    if (cfg.grid.q_points < 2 || cfg.grid.omega_points < 2)
      throw ConfigError("grid: need at least 2 points per axis");
  }
  {
    const json& a = section(doc, "analysis");
    detail::reject_unknown(a, "analysis",
                           {"hg_orders", "hg_center", "hg_fwhm", "spatial_cuts", "mapping",
                            "efficiency", "g", "calibration_target_db", "truncation",
                            "bootstrap_rounds", "verdict_sigmas", "cross_block"});
    auto& s = cfg.analysis;
    s.hg_orders = typed_or<std::vector<int>>(a, "analysis", "hg_orders", s.hg_orders);
    if (s.hg_orders.empty()) throw ConfigError("analysis.hg_orders: need at least one order");
    s.hg_center_m = parse_quantity(key(a, "analysis", "hg_center"), Dimension::length, "analysis.hg_center");
    s.hg_fwhm_m = parse_quantity(key(a, "analysis", "hg_fwhm"), Dimension::length, "analysis.hg_fwhm");
    s.spatial_cuts = typed_or<bool>(a, "analysis", "spatial_cuts", true);
    const auto mapping = typed_or<std::string>(a, "analysis", "mapping", "exponential");
    if (mapping == "exponential") s.mapping = Mapping::exponential;
    else if (mapping == "linearized") s.mapping = Mapping::linearized;
    else throw ConfigError("analysis.mapping: expected 'exponential' or 'linearized'");
    s.efficiency = typed_or<double>(a, "analysis", "efficiency", 1.0);
    if (!(s.efficiency > 0.0 && s.efficiency <= 1.0))
      throw ConfigError("analysis.efficiency: must lie in (0, 1]");
    const bool has_g = a.contains("g");
    const bool has_target = a.contains("calibration_target_db");
    if (has_g == has_target)
      throw ConfigError("analysis: exactly one of 'g' and 'calibration_target_db' is required");
    if (has_g) {
      s.gain = typed<double>(a, "analysis", "g");
      if (!(*s.gain >= 0.0) || !std::isfinite(*s.gain))
        throw ConfigError("analysis.g: must be a finite non-negative number");
    } else {
      s.calibration_target_db = parse_quantity(a.at("calibration_target_db"), Dimension::decibel,
                                               "analysis.calibration_target_db");
      if (!(*s.calibration_target_db < 0.0))
        throw ConfigError("analysis.calibration_target_db: must be negative (squeezing)");
    }
    s.truncation = typed_or<double>(a, "analysis", "truncation", 1e-6);
    if (!(s.truncation >= 0.0 && s.truncation < 1.0))
      throw ConfigError("analysis.truncation: must lie in [0, 1)");
    s.bootstrap_rounds = typed_or<int>(a, "analysis", "bootstrap_rounds", 1000);
    if (s.bootstrap_rounds < 2) throw ConfigError("analysis.bootstrap_rounds: need at least 2");
    s.verdict_sigmas = typed_or<double>(a, "analysis", "verdict_sigmas", 3.0);
    s.cross_block = typed_or<bool>(a, "analysis", "cross_block", false);
    if (s.cross_block)
      throw ConfigError("analysis.cross_block: non-zero X-P cross blocks are not supported");
  }
  {
    const json& n = section(doc, "noise");
    detail::reject_unknown(n, "noise",
                           {"effective_samples", "ramp_rate", "duration", "sample_rate", "noiseless", "seed"});
    cfg.noise.effective_samples = typed_or<double>(n, "noise", "effective_samples", 15.0 * 100e3 / 30.0);
    cfg.noise.noiseless = typed_or<bool>(n, "noise", "noiseless", false);
    if (!(cfg.noise.effective_samples > 0.0))
      throw ConfigError("noise.effective_samples: must be positive");
    cfg.scan.ramp_rate_hz = parse_quantity(key(n, "noise", "ramp_rate"), Dimension::frequency, "noise.ramp_rate");
    cfg.scan.duration_s = parse_quantity(key(n, "noise", "duration"), Dimension::time, "noise.duration");
    cfg.scan.sample_rate_hz =
        parse_quantity(key(n, "noise", "sample_rate"), Dimension::frequency, "noise.sample_rate");
    if (!(cfg.scan.ramp_rate_hz > 0.0 && cfg.scan.duration_s > 0.0 && cfg.scan.sample_rate_hz > 0.0))
      throw ConfigError("noise: ramp_rate, duration and sample_rate must be positive");
    if (cfg.scan.duration_s * 2.0 * cfg.scan.ramp_rate_hz < 2.0)
      throw ConfigError("noise.duration: scan must cover at least 2 variance periods");
    cfg.seed = typed_or<std::uint64_t>(n, "noise", "seed", 0);
  }
  if (doc.contains("output")) {
    const json& o = section(doc, "output");
    detail::reject_unknown(o, "output", {"directory", "kernel_cache", "exported_modes"});
    cfg.output.directory = typed_or<std::string>(o, "output", "directory", "out");
    cfg.output.kernel_cache = typed_or<bool>(o, "output", "kernel_cache", true);
    cfg.output.exported_modes = typed_or<int>(o, "output", "exported_modes", 8);
    if (cfg.output.exported_modes < 0) throw ConfigError("output.exported_modes: must be >= 0");
  }
  return cfg;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    const std::vector<std::string>& overrides = {}) {
  json doc = read_json_file(path);
  apply_overrides(doc, overrides);
  return parse_config(doc);
}

/// FNV-1a 64 over a canonical JSON dump; stable across runs and platforms.
inline std::uint64_t stable_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

/// Key of everything the kernel depends on (crystal, pump, grid).
inline std::string kernel_hash(const ExperimentConfig& cfg) {
  json k;
  k["crystal"] = cfg.document.at("crystal");
  k["pump"] = cfg.document.at("pump");
  k["grid"] = cfg.document.at("grid");
  return hex64(stable_hash(k.dump()));
}

}  // namespace sqz
