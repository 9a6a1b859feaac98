#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kdesign/design.hpp"
#include "kdesign/errors.hpp"
#include "kdesign/recon.hpp"

namespace kdesign {

/// Everything a run needs, grouped the way the config file is. Defaults are
/// the desk-scale experiment; any subset of keys may appear in a file.
struct ExperimentConfig {
  // [dataset]
  std::string dataset_path = "data/dataset.kd";
  int n0 = 64;
  int coils = 4;
  int train_slices = 32;
  int validation_slices = 8;
  int test_slices = 8;
  int complexity = 6;
  std::uint64_t dataset_seed = 1234;

  // [acquisition]
  int w0 = 8;
  double snr = 2.0;
  double mask_radius = -1.0;  // calibration disk; < 0 means n0/8

  // [design]
  ReconMethod method = ReconMethod::Apodized;
  DesignMode mode = DesignMode::Uniform;
  std::vector<int> candidates{16, 24, 32, 40, 48, 56, 64};
  std::uint64_t design_seed = 99;
  bool select_on_validation = false;

  // [hyper] — negative/zero sentinel means "use the method/mode default"
  double lr_params = -1.0;
  double decay_params = -1.0;
  double lr_weights = -1.0;
  double decay_weights = -1.0;
  int epochs = -1;
  int batch_size = -1;
  int rounding_epoch = -2;  // -2 = default; -1 = round only at the end
  double lambda_init = -1.0;

  // [admm]
  AdmmConfig admm;

  // [evaluate]
  int draws = 10;
  std::uint64_t evaluate_seed = 7;
  bool save_images = false;

  // [sweep]
  std::vector<double> sweep_snr{2.0, 3.0, 5.0, 10.0};
  std::vector<std::string> sweep_methods{"apodized", "sensetv"};
  std::vector<std::string> sweep_modes{"uniform", "nonuniform"};

  // [output]
  std::string output_dir = "results";

  /// Hyperparameters for this config's method/mode with overrides applied.
  Hyperparameters hyperparameters() const { return hyperparameters_for(method, mode); }

  Hyperparameters hyperparameters_for(ReconMethod m, DesignMode md) const {
    Hyperparameters h = m == ReconMethod::ZeroFilled ? Hyperparameters{}
                                                     : default_hyperparameters(m, md);
    if (lr_params >= 0.0) h.lr_params = lr_params;
    if (decay_params >= 0.0) h.decay_params = decay_params;
    if (lr_weights >= 0.0) h.lr_weights = lr_weights;
    if (decay_weights >= 0.0) h.decay_weights = decay_weights;
    if (epochs >= 0) h.epochs = epochs;
    if (batch_size >= 0) h.batch_size = batch_size;
    if (rounding_epoch >= -1) h.rounding_epoch = rounding_epoch;
    if (lambda_init >= 0.0) h.lambda_init = lambda_init;
    return h;
  }

  AcquisitionBudget budget(double sigma) const { return AcquisitionBudget(n0, w0, sigma); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(value);
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (t.empty()) throw InvalidArgument("empty list element");
    out.push_back(t);
  }
  if (out.empty()) throw InvalidArgument("empty list");
  return out;
}

struct ConfigReader {
  std::string section;
  int line_no = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("line " + std::to_string(line_no) + ": " + msg);
  }

  long long to_int(const std::string& v) const {
    long long out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) fail("not an integer: " + v);
    return out;
  }

  std::uint64_t to_u64(const std::string& v) const {
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) fail("not an unsigned integer: " + v);
    return out;
  }

  double to_double(const std::string& v) const {
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used != v.size()) fail("not a number: " + v);
      return out;
    } catch (const std::logic_error&) {
      fail("not a number: " + v);
    }
  }

  bool to_bool(const std::string& v) const {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail("not a boolean: " + v);
  }
};

}  // namespace detail

/// Strict line-oriented parser: `[section]` headers, `key = value` entries,
/// `#` comments. Unknown sections or keys, duplicate keys, and malformed
/// values are errors that name the offending line.
inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  detail::ConfigReader rd;
  std::vector<std::string> seen;
  std::stringstream stream(text);
  std::string raw;
  while (std::getline(stream, raw)) {
    ++rd.line_no;
    std::string line = raw;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') rd.fail("unterminated section header");
      rd.section = detail::trim(line.substr(1, line.size() - 2));
      if (rd.section != "dataset" && rd.section != "acquisition" && rd.section != "design" &&
          rd.section != "hyper" && rd.section != "admm" && rd.section != "evaluate" &&
          rd.section != "sweep" && rd.section != "output") {
        rd.fail("unknown section [" + rd.section + "]");
      }
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) rd.fail("expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) rd.fail("empty key");
    if (value.empty()) rd.fail("empty value for " + key);
    if (rd.section.empty()) rd.fail("key outside any section: " + key);

    const std::string qualified = rd.section + "." + key;
    for (const std::string& s : seen) {
      if (s == qualified) rd.fail("duplicate key " + qualified);
    }
    seen.push_back(qualified);

    try {
      if (rd.section == "dataset") {
        if (key == "path") cfg.dataset_path = value;
        else if (key == "n0") cfg.n0 = static_cast<int>(rd.to_int(value));
        else if (key == "coils") cfg.coils = static_cast<int>(rd.to_int(value));
        else if (key == "train") cfg.train_slices = static_cast<int>(rd.to_int(value));
        else if (key == "validation") cfg.validation_slices = static_cast<int>(rd.to_int(value));
        else if (key == "test") cfg.test_slices = static_cast<int>(rd.to_int(value));
        else if (key == "complexity") cfg.complexity = static_cast<int>(rd.to_int(value));
        else if (key == "seed") cfg.dataset_seed = rd.to_u64(value);
        else rd.fail("unknown key " + qualified);
      } else if (rd.section == "acquisition") {
        if (key == "w0") cfg.w0 = static_cast<int>(rd.to_int(value));
        else if (key == "snr") cfg.snr = rd.to_double(value);
        else if (key == "mask_radius") cfg.mask_radius = rd.to_double(value);
        else rd.fail("unknown key " + qualified);
      } else if (rd.section == "design") {
        if (key == "method") cfg.method = recon_method_from_name(value);
        else if (key == "mode") cfg.mode = design_mode_from_name(value);
        else if (key == "candidates") {
          cfg.candidates.clear();
          for (const std::string& item : detail::split_list(value)) {
            cfg.candidates.push_back(static_cast<int>(rd.to_int(item)));
          }
        } else if (key == "seed") cfg.design_seed = rd.to_u64(value);
        else if (key == "select_on_validation") cfg.select_on_validation = rd.to_bool(value);
        else rd.fail("unknown key " + qualified);
      } else if (rd.section == "hyper") {
        if (key == "lr_params") cfg.lr_params = rd.to_double(value);
        else if (key == "decay_params") cfg.decay_params = rd.to_double(value);
        else if (key == "lr_weights") cfg.lr_weights = rd.to_double(value);
        else if (key == "decay_weights") cfg.decay_weights = rd.to_double(value);
        else if (key == "epochs") cfg.epochs = static_cast<int>(rd.to_int(value));
        else if (key == "batch_size") cfg.batch_size = static_cast<int>(rd.to_int(value));
        else if (key == "rounding_epoch") cfg.rounding_epoch = static_cast<int>(rd.to_int(value));
        else if (key == "lambda_init") cfg.lambda_init = rd.to_double(value);
        else rd.fail("unknown key " + qualified);
      } else if (rd.section == "admm") {
        if (key == "iterations") cfg.admm.iterations = static_cast<int>(rd.to_int(value));
        else if (key == "rho") cfg.admm.rho = rd.to_double(value);
        else if (key == "cg_iterations") cfg.admm.cg_iterations = static_cast<int>(rd.to_int(value));
        else if (key == "cg_tolerance") cfg.admm.cg_tolerance = rd.to_double(value);
        else rd.fail("unknown key " + qualified);
      } else if (rd.section == "evaluate") {
        if (key == "draws") cfg.draws = static_cast<int>(rd.to_int(value));
        else if (key == "seed") cfg.evaluate_seed = rd.to_u64(value);
        else if (key == "save_images") cfg.save_images = rd.to_bool(value);
        else rd.fail("unknown key " + qualified);
      } else if (rd.section == "sweep") {
        if (key == "snr") {
          cfg.sweep_snr.clear();
          for (const std::string& item : detail::split_list(value)) {
            cfg.sweep_snr.push_back(rd.to_double(item));
          }
        } else if (key == "methods") {
          cfg.sweep_methods = detail::split_list(value);
          for (const std::string& m : cfg.sweep_methods) recon_method_from_name(m);
        } else if (key == "modes") {
          cfg.sweep_modes = detail::split_list(value);
          for (const std::string& m : cfg.sweep_modes) design_mode_from_name(m);
        } else rd.fail("unknown key " + qualified);
      } else if (rd.section == "output") {
        if (key == "dir") cfg.output_dir = value;
        else rd.fail("unknown key " + qualified);
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      rd.fail(e.what());
    }
  }
  return cfg;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join_list(const std::vector<T>& v, F&& piece) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += piece(v[i]);
  }
  return out;
}

}  // namespace detail

/// Canonical text for a config; parse_config(dump_config(c)) reproduces c
/// exactly (doubles are printed round-trip safe).
inline std::string dump_config(const ExperimentConfig& c) {
  using detail::format_double;
  std::string out;
  out += "[dataset]\n";
  out += "path = " + c.dataset_path + "\n";
  out += "n0 = " + std::to_string(c.n0) + "\n";
  out += "coils = " + std::to_string(c.coils) + "\n";
  out += "train = " + std::to_string(c.train_slices) + "\n";
  out += "validation = " + std::to_string(c.validation_slices) + "\n";
  out += "test = " + std::to_string(c.test_slices) + "\n";
  out += "complexity = " + std::to_string(c.complexity) + "\n";
  out += "seed = " + std::to_string(c.dataset_seed) + "\n";
  out += "\n[acquisition]\n";
  out += "w0 = " + std::to_string(c.w0) + "\n";
  out += "snr = " + format_double(c.snr) + "\n";
  out += "mask_radius = " + format_double(c.mask_radius) + "\n";
  out += "\n[design]\n";
  out += std::string("method = ") + recon_method_name(c.method) + "\n";
  out += std::string("mode = ") + design_mode_name(c.mode) + "\n";
  out += "candidates = " +
         detail::join_list(c.candidates, [](int n) { return std::to_string(n); }) + "\n";
  out += "seed = " + std::to_string(c.design_seed) + "\n";
  out += std::string("select_on_validation = ") + (c.select_on_validation ? "true" : "false") +
         "\n";
  out += "\n[hyper]\n";
  out += "lr_params = " + format_double(c.lr_params) + "\n";
  out += "decay_params = " + format_double(c.decay_params) + "\n";
  out += "lr_weights = " + format_double(c.lr_weights) + "\n";
  out += "decay_weights = " + format_double(c.decay_weights) + "\n";
  out += "epochs = " + std::to_string(c.epochs) + "\n";
  out += "batch_size = " + std::to_string(c.batch_size) + "\n";
  out += "rounding_epoch = " + std::to_string(c.rounding_epoch) + "\n";
  out += "lambda_init = " + format_double(c.lambda_init) + "\n";
  out += "\n[admm]\n";
  out += "iterations = " + std::to_string(c.admm.iterations) + "\n";
  out += "rho = " + format_double(c.admm.rho) + "\n";
  out += "cg_iterations = " + std::to_string(c.admm.cg_iterations) + "\n";
  out += "cg_tolerance = " + format_double(c.admm.cg_tolerance) + "\n";
  out += "\n[evaluate]\n";
  out += "draws = " + std::to_string(c.draws) + "\n";
  out += "seed = " + std::to_string(c.evaluate_seed) + "\n";
  out += std::string("save_images = ") + (c.save_images ? "true" : "false") + "\n";
  out += "\n[sweep]\n";
  out += "snr = " + detail::join_list(c.sweep_snr, detail::format_double) + "\n";
  out += "methods = " +
         detail::join_list(c.sweep_methods, [](const std::string& s) { return s; }) + "\n";
  out += "modes = " +
         detail::join_list(c.sweep_modes, [](const std::string& s) { return s; }) + "\n";
  out += "\n[output]\n";
  out += "dir = " + c.output_dir + "\n";
  return out;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace kdesign
