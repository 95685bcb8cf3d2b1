#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "volregime/error.hpp"
#include "volregime/marketdata.hpp"
#include "volregime/modelgateway.hpp"
#include "volregime/sampler.hpp"

namespace volregime {

inline const std::vector<std::string> kAllMethods = {
    "rolling_mean", "har",        "garch",           "gjr_garch",
    "one_shot",     "icl_random", "icl_fixed_prior", "icl_label_estimate"};

inline bool is_llm_method(const std::string& m) {
  return m == "one_shot" || m.starts_with("icl_");
}

inline bool needs_pool(const std::string& m) { return m.starts_with("icl_"); }

inline std::string method_display_name(const std::string& m) {
  static const std::map<std::string, std::string> names{
      {"rolling_mean", "Rolling mean"},
      {"har", "HAR"},
      {"garch", "GARCH(1,1)"},
      {"gjr_garch", "GJR-GARCH"},
      {"one_shot", "One-shot learning"},
      {"icl_random", "Random selection"},
      {"icl_fixed_prior", "Regime-aware (fixed prior)"},
      {"icl_label_estimate", "Regime-aware (label estimate)"}};
  const auto it = names.find(m);
  return it == names.end() ? m : it->second;
}

struct ModelConfig {
  /// `remote`, `mock:<variant>`, `mock:constant:<value>`, or `replay:<path>`.
  std::string backend = "mock:echo_last_variance";
  RemoteConfig remote;
  int max_in_flight = 4;
  int max_reply_tokens = 64;
  /// When set, every request/reply pair is appended to this JSONL file.
  std::string record_path;
  std::uint64_t mock_seed = 0;
};

/// Everything an experiment needs. Defaults follow the reference setup:
/// w=7, 70/30 split, q=0.8, n=500, J=3, K=5, m=3.
struct ExperimentConfig {
  std::string data_path;
  SourceFormat format = SourceFormat::Auto;
  std::string dataset = "dataset";

  std::size_t w = 7;
  double train_fraction = 0.7;
  double q = 0.8;

  std::size_t pool_n = 500;
  int pool_iterations = 3;
  std::uint64_t pool_seed = 7;

  SamplerConfig sampler;
  /// Explicit tau'; unset means tau'.
  std::optional<double> tau_prime;

  ModelConfig model;

  std::uint64_t garch_seed = 20240601;
  int garch_max_iterations = 2000;
  int garch_restarts = 3;

  std::vector<std::string> methods = kAllMethods;
  int workers = 1;

  std::string output_dir = "out";
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema{
      {"data", {"path", "format", "dataset"}},
      {"window", {"w", "train_fraction", "q"}},
      {"pool", {"n", "J", "seed"}},
      {"sampler", {"K", "alpha", "alpha_low", "alpha_high", "m", "tau_prime", "seed"}},
      {"model",
       {"backend", "endpoint", "name", "credential_env", "timeout_s", "max_retries",
        "max_in_flight", "max_reply_tokens", "record", "mock_seed"}},
      {"garch", {"seed", "max_iterations", "restarts"}},
      {"evaluate", {"methods", "workers"}},
      {"output", {"dir"}}};
  return schema;
}

template <class T>
T convert(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  in.imbue(std::locale::classic());
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof())
    throw Error(ErrorKind::Configuration, "bad value '" + text + "' for " + key);
  return v;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      auto t = std::string(trim(cur));
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

}  // namespace detail

/// A `section.key=value` override as given on the command line.
struct ConfigOverride {
  std::string key;
  std::string value;
};

inline ConfigOverride parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorKind::Configuration, "override must look like section.key=value: " + text);
  return {text.substr(0, eq), text.substr(eq + 1)};
}

/// Builds the config from INI text plus overrides (later wins). Unknown
/// sections and keys are rejected so that typos do not silently fall back to defaults.
inline ExperimentConfig parse_config(std::istream& ini, const std::vector<ConfigOverride>& overrides = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(ini, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), e.line());
  }
  for (const auto& o : overrides) tree.put(pt::ptree::path_type(o.key, '.'), o.value);

  const auto& schema = detail::config_schema();
  for (const auto& [section, body] : tree) {
    const auto it = schema.find(section);
    if (it == schema.end()) throw Error(ErrorKind::Configuration, "unknown section [" + section + "]");
    for (const auto& [key, _] : body)
      if (!it->second.contains(key))
        throw Error(ErrorKind::Configuration, "unknown key " + section + "." + key);
  }

  ExperimentConfig c;
  auto get = [&](const std::string& path) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(path, '.')))
      return std::string(detail::trim(*v));
    return std::nullopt;
  };
  auto set = [&](const std::string& path, auto& field) {
    if (auto v = get(path)) field = detail::convert<std::decay_t<decltype(field)>>(path, *v);
  };

  if (auto v = get("data.path")) c.data_path = *v;
  if (auto v = get("data.dataset")) c.dataset = *v;
  if (auto v = get("data.format")) {
    if (*v == "auto") c.format = SourceFormat::Auto;
    else if (*v == "stooq") c.format = SourceFormat::Stooq;
    else if (*v == "date_close") c.format = SourceFormat::DateClose;
    else throw Error(ErrorKind::Configuration, "data.format must be auto, stooq or date_close");
  }
  set("window.w", c.w);
  set("window.train_fraction", c.train_fraction);
  set("window.q", c.q);
  set("pool.n", c.pool_n);
  set("pool.J", c.pool_iterations);
  set("pool.seed", c.pool_seed);
  set("sampler.K", c.sampler.k);
  if (auto v = get("sampler.alpha")) c.sampler.alpha = detail::convert<double>("sampler.alpha", *v);
  set("sampler.alpha_low", c.sampler.alpha_low);
  set("sampler.alpha_high", c.sampler.alpha_high);
  set("sampler.m", c.sampler.m);
  set("sampler.seed", c.sampler.seed);
  if (auto v = get("sampler.tau_prime")) c.tau_prime = detail::convert<double>("sampler.tau_prime", *v);
  set("model.backend", c.model.backend);
  set("model.endpoint", c.model.remote.endpoint);
  set("model.name", c.model.remote.model);
  set("model.credential_env", c.model.remote.credential_env);
  if (auto v = get("model.timeout_s"))
    c.model.remote.timeout = std::chrono::seconds(detail::convert<long>("model.timeout_s", *v));
  set("model.max_retries", c.model.remote.max_retries);
  set("model.max_in_flight", c.model.max_in_flight);
  set("model.max_reply_tokens", c.model.max_reply_tokens);
  set("model.record", c.model.record_path);
  set("model.mock_seed", c.model.mock_seed);
  set("garch.seed", c.garch_seed);
  set("garch.max_iterations", c.garch_max_iterations);
  set("garch.restarts", c.garch_restarts);
  if (auto v = get("evaluate.methods")) c.methods = detail::split_list(*v);
  set("evaluate.workers", c.workers);
  set("output.dir", c.output_dir);

  if (c.w < 2) throw Error(ErrorKind::Configuration, "window.w must be at least 2");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    throw Error(ErrorKind::Configuration, "window.train_fraction must lie in (0,1)");
  if (!(c.q >= 0.0 && c.q <= 1.0)) throw Error(ErrorKind::Configuration, "window.q must lie in [0,1]");
  if (c.pool_iterations < 0) throw Error(ErrorKind::Configuration, "pool.J must be >= 0");
  if (c.sampler.k == 0) throw Error(ErrorKind::Configuration, "sampler.K must be positive");
  if (c.model.max_in_flight < 1) throw Error(ErrorKind::Configuration, "model.max_in_flight must be >= 1");
  if (c.model.remote.max_retries < 0) throw Error(ErrorKind::Configuration, "model.max_retries must be >= 0");
  if (c.methods.empty()) throw Error(ErrorKind::Configuration, "evaluate.methods is empty");
  for (const auto& m : c.methods)
    if (std::find(kAllMethods.begin(), kAllMethods.end(), m) == kAllMethods.end())
      throw Error(ErrorKind::Configuration, "unknown method '" + m + "'");
  // The label-estimate constraint only binds when that method is requested.
  auto check = c.sampler;
  check.strategy = std::find(c.methods.begin(), c.methods.end(), "icl_label_estimate") != c.methods.end()
                       ? Strategy::LabelEstimate
                       : Strategy::Random;
  validate(check, c.w);
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<ConfigOverride>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config " + path);
  return parse_config(in, overrides);
}

}  // namespace volregime
