#pragma once

#include <charconv>
#include <cstdlib>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pdenet/errors.hpp"
#include "pdenet/model.hpp"
#include "pdenet/train.hpp"

namespace pdenet {

/// Everything `train` needs: architecture, optimisation and paths.
struct RunConfig {
  NetConfig net;
  TrainConfig train;
  std::filesystem::path manifest;
  std::filesystem::path out;
};

/// One settable key. The command-line flag is the key with '_' replaced by '-'.
struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string flag() const {
    std::string f = "--" + name;
    for (char& c : f) c = c == '_' ? '-' : c;
    return f;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& text) {
  U v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline std::string show(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // shortest form that parses back to the same value
  for (int prec = 1; prec <= 17; ++prec) {
    char tmp[64];
    std::snprintf(tmp, sizeof tmp, "%.*g", prec, v);
    if (std::strtod(tmp, nullptr) == v) return tmp;
  }
  return buf;
}

}  // namespace detail

inline const std::vector<ConfigKey>& config_schema() {
  using detail::parse_number;
  using detail::show;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto count = [&](std::string name, std::string help, auto field) {
      k.push_back({name, std::move(help),
                   [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<std::size_t>(name, v); },
                   [field](const RunConfig& c) { return std::to_string(field(c)); }});
    };
    auto real = [&](std::string name, std::string help, auto field) {
      k.push_back({name, std::move(help),
                   [name, field](RunConfig& c, const std::string& v) { field(c) = parse_number<double>(name, v); },
                   [field](const RunConfig& c) { return show(field(c)); }});
    };
    auto path = [&](std::string name, std::string help, auto field) {
      k.push_back({name, std::move(help), [field](RunConfig& c, const std::string& v) { field(c) = v; },
                   [field](const RunConfig& c) { return field(c).string(); }});
    };
    path("manifest", "dataset manifest (role hr-path [lr-path] per line)", [](auto& c) -> auto& { return c.manifest; });
    path("out", "output directory for checkpoint.pdec and train.log", [](auto& c) -> auto& { return c.out; });
    count("bands", "spectral bands", [](auto& c) -> auto& { return c.net.bands; });
    count("scale", "upscaling factor (2, 4 or 8)", [](auto& c) -> auto& { return c.net.scale; });
    count("stages", "refinement stages", [](auto& c) -> auto& { return c.net.stages; });
    count("units", "embedding units per stage", [](auto& c) -> auto& { return c.net.units; });
    count("channels", "feature channels", [](auto& c) -> auto& { return c.net.channels; });
    real("tau", "relaxation temperature of the gates", [](auto& c) -> auto& { return c.train.tau; });
    real("lr0", "initial learning rate", [](auto& c) -> auto& { return c.train.lr0; });
    real("beta1", "Adam first-moment decay", [](auto& c) -> auto& { return c.train.beta1; });
    real("beta2", "Adam second-moment decay", [](auto& c) -> auto& { return c.train.beta2; });
    real("eps", "Adam denominator offset", [](auto& c) -> auto& { return c.train.eps; });
    count("halve_every", "main epochs between learning-rate halvings", [](auto& c) -> auto& { return c.train.halve_every; });
    count("warmup_epochs", "epochs with all gates open", [](auto& c) -> auto& { return c.train.warmup_epochs; });
    count("main_epochs", "epochs with stochastic gates", [](auto& c) -> auto& { return c.train.main_epochs; });
    count("batch", "samples per optimisation step", [](auto& c) -> auto& { return c.train.batch; });
    real("lambda", "weight of the LR reprojection term", [](auto& c) -> auto& { return c.train.lambda; });
    k.push_back({"seed", "random seed",
                 [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    count("checkpoint_every", "write a checkpoint every k epochs (0: end only)", [](auto& c) -> auto& { return c.train.checkpoint_every; });
    count("patch", "HR training patch edge (0: whole cubes)", [](auto& c) -> auto& { return c.train.patch; });
    count("stride", "patch stride (0: equal to patch)", [](auto& c) -> auto& { return c.train.stride; });
    real("noise_sigma", "noise added when synthesising LR cubes", [](auto& c) -> auto& { return c.train.noise_sigma; });
    k.push_back({"augment", "random flips and rotations",
                 [](RunConfig& c, const std::string& v) { c.train.augment = detail::parse_bool("augment", v); },
                 [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); }});
    k.push_back({"log_wall_time", "record wall time in train.log (false writes secs=0)",
                 [](RunConfig& c, const std::string& v) { c.train.log_wall_time = detail::parse_bool("log_wall_time", v); },
                 [](const RunConfig& c) { return std::string(c.train.log_wall_time ? "true" : "false"); }});
    return k;
  }();
  return keys;
}

inline const ConfigKey& config_key(const std::string& name) {
  for (const ConfigKey& k : config_schema())
    if (k.name == name) return k;
  throw ConfigError("unknown configuration key '" + name + "'");
}

/// Apply `key=value` lines. Relative paths resolve against `base_dir`.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::filesystem::path& base_dir,
                              const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      config_key(key).set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if ((key == "manifest" || key == "out") && !value.empty()) {
      std::filesystem::path& p = key == "manifest" ? cfg.manifest : cfg.out;
      if (p.is_relative()) p = base_dir / p;
    }
  }
}

inline RunConfig read_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str(), path.parent_path(), path.string());
  return cfg;
}

/// Every key with its current value, in schema order; parses back to the same config.
inline std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const ConfigKey& k : config_schema()) out += k.name + "=" + k.get(cfg) + "\n";
  return out;
}

/// Schema checks beyond per-key parsing.
inline void validate_config(const RunConfig& cfg) {
  try {
    NetConfig n = cfg.net;
    n.tau = cfg.train.tau;
    n.validate();
    cfg.train.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (cfg.manifest.empty()) throw ConfigError("manifest is required");
  if (cfg.out.empty()) throw ConfigError("out is required");
}

}  // namespace pdenet
