#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"
#include "volregime/baselines.hpp"
#include "volregime/config.hpp"
#include "volregime/evaluator.hpp"
#include "volregime/forecast.hpp"
#include "volregime/marketdata.hpp"
#include "volregime/modelgateway.hpp"
#include "volregime/poolbuilder.hpp"
#include "volregime/sampler.hpp"

namespace volregime {

// ---------------------------------------------------------------------------
// Files

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::Io, "SHA-256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

namespace artifacts {
inline constexpr const char* kReturns = "returns.csv";
inline constexpr const char* kIngest = "ingest.json";
inline constexpr const char* kPool = "pool.jsonl";
inline constexpr const char* kReportCsv = "report.csv";
inline constexpr const char* kReportMd = "report.md";
inline constexpr const char* kForecasts = "forecasts.csv";
inline constexpr const char* kBaselines = "baselines.json";
}  // namespace artifacts

// ---------------------------------------------------------------------------
// Ingest

/// Everything derived from the price file: returns, windows, split and tau.
struct MarketData {
  std::string dataset;
  std::vector<ReturnObservation> returns;
  Split split;
  double tau = 0.0;
  bool reordered = false;
};

inline MarketData derive_market_data(std::string dataset, std::vector<ReturnObservation> returns,
                                     const ExperimentConfig& config) {
  MarketData md;
  md.dataset = std::move(dataset);
  md.returns = std::move(returns);
  md.split = split_chronological(build_windows(md.returns, config.w), config.train_fraction);
  if (md.split.train.empty()) throw Error(ErrorKind::EmptyInput, "training split is empty");
  if (md.split.test.empty()) throw Error(ErrorKind::EmptyInput, "test split is empty");
  md.tau = training_quantile(md.split.train, config.q);
  return md;
}

inline MarketData load_market_data(const ExperimentConfig& config) {
  if (config.data_path.empty()) throw Error(ErrorKind::Configuration, "data.path is not set");
  const auto prices = load_prices(config.data_path, config.format);
  auto md = derive_market_data(config.dataset, compute_returns(prices), config);
  md.reordered = prices.reordered;
  return md;
}

/// Lossless CSV of the return series (shortest round-trip decimals).
inline std::string returns_to_csv(std::span<const ReturnObservation> returns) {
  std::string out = "date,log_return,realized_variance\n";
  for (const auto& r : returns)
    out += format_date(r.date) + ',' + format_exact(r.log_return) + ',' + format_exact(r.realized_variance) + '\n';
  return out;
}

inline std::vector<ReturnObservation> returns_from_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "date,log_return,realized_variance")
    throw ParseError("missing returns header", 1);
  std::vector<ReturnObservation> out;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    const auto row = detail::trim(line);
    if (row.empty()) continue;
    const auto f = detail::split_csv(row);
    ReturnObservation o;
    if (f.size() != 3 || !parse_date(f[0], o.date) || !detail::parse_double(f[1], o.log_return) ||
        !detail::parse_double(f[2], o.realized_variance))
      throw ParseError("malformed returns row", n, std::string(row));
    out.push_back(o);
  }
  return out;
}

inline nlohmann::ordered_json ingest_manifest(const MarketData& md, const ExperimentConfig& config,
                                              const std::string& source_sha, const std::string& returns_sha) {
  return {{"dataset", md.dataset},
          {"source", config.data_path},
          {"source_sha256", source_sha},
          {"returns_sha256", returns_sha},
          {"reordered", md.reordered},
          {"w", config.w},
          {"train_fraction", config.train_fraction},
          {"q", config.q},
          {"n_returns", md.returns.size()},
          {"n_samples", md.split.train.size() + md.split.test.size()},
          {"n_train", md.split.train.size()},
          {"n_test", md.split.test.size()},
          {"boundary_index", md.split.spec.boundary_index},
          {"tau", md.tau}};
}

/// Writes returns.csv and ingest.json. Rerunning on the same input reproduces both byte for byte.
inline nlohmann::ordered_json cmd_ingest(const ExperimentConfig& config) {
  const auto md = load_market_data(config);
  const auto csv = returns_to_csv(md.returns);
  const auto manifest = ingest_manifest(md, config, sha256_hex(read_file(config.data_path)), sha256_hex(csv));
  const std::filesystem::path dir(config.output_dir);
  write_file(dir / artifacts::kReturns, csv);
  write_file(dir / artifacts::kIngest, manifest.dump(2) + '\n');
  return manifest;
}

/// Reloads the ingest artifact, checking its checksum and that it was made with
/// the same window settings as `config`.
inline MarketData load_ingest(const ExperimentConfig& config) {
  const std::filesystem::path dir(config.output_dir);
  if (!std::filesystem::exists(dir / artifacts::kIngest))
    throw Error(ErrorKind::Configuration,
                "no ingest artifact in " + dir.string() + "; run `ingest` first");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / artifacts::kIngest));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ingest.json: ") + e.what());
  }
  const auto csv = read_file(dir / artifacts::kReturns);
  if (sha256_hex(csv) != manifest.at("returns_sha256").get<std::string>())
    throw Error(ErrorKind::Validation, "returns.csv does not match its recorded checksum");
  if (manifest.at("w").get<std::size_t>() != config.w ||
      manifest.at("train_fraction").get<double>() != config.train_fraction ||
      manifest.at("q").get<double>() != config.q)
    throw Error(ErrorKind::Configuration, "ingest artifact was made with different w/train_fraction/q; rerun `ingest`");
  std::istringstream in(csv);
  auto md = derive_market_data(manifest.at("dataset").get<std::string>(), returns_from_csv(in), config);
  md.reordered = manifest.value("reordered", false);
  if (md.tau != manifest.at("tau").get<double>())
    throw Error(ErrorKind::Validation, "recomputed tau differs from ingest.json");
  return md;
}

// ---------------------------------------------------------------------------
// Backends

using BackendProvider = std::function<std::shared_ptr<ModelBackend>()>;

/// Builds the backend named by the config. `known` feeds the cheating oracle,
/// which is meant for tests only.
inline std::shared_ptr<ModelBackend> make_backend(const ModelConfig& config,
                                                  std::span<const WindowSample> known = {}) {
  std::shared_ptr<ModelBackend> backend;
  const std::string& name = config.backend;
  if (name == "remote") {
    backend = std::make_shared<RemoteBackend>(config.remote);
  } else if (name.starts_with("replay:")) {
    backend = std::make_shared<ReplayBackend>(name.substr(7));
  } else if (name.starts_with("mock:")) {
    const auto spec = name.substr(5);
    const auto colon = spec.find(':');
    const auto variant = parse_mock_variant(spec.substr(0, colon));
    MockBehavior behavior{variant, config.mock_seed};
    if (colon != std::string::npos) {
      if (variant != MockVariant::Constant)
        throw Error(ErrorKind::Configuration, "only mock:constant takes a value: " + name);
      if (!detail::parse_double(spec.substr(colon + 1), behavior.constant_value))
        throw Error(ErrorKind::Configuration, "bad constant in " + name);
    }
    if (variant == MockVariant::CheatingOracle)
      backend = MockModel::cheating_oracle(known, config.mock_seed);
    else
      backend = std::make_shared<MockModel>(behavior);
  } else {
    throw Error(ErrorKind::Configuration,
                "model.backend must be remote, mock:<variant> or replay:<path>, got '" + name + "'");
  }
  if (!config.record_path.empty())
    backend = std::make_shared<RecordingBackend>(backend, config.record_path);
  return backend;
}

inline BackendProvider default_provider(const ExperimentConfig& config, const MarketData& md) {
  return [&config, &md] {
    std::vector<WindowSample> all = md.split.train;
    all.insert(all.end(), md.split.test.begin(), md.split.test.end());
    return make_backend(config.model, all);
  };
}

// ---------------------------------------------------------------------------
// Pool

inline PoolOptions pool_options(const ExperimentConfig& config, const MarketData& md) {
  return {.n = config.pool_n,
          .iterations = config.pool_iterations,
          .tau = md.tau,
          .seed = config.pool_seed,
          .hint_days = config.sampler.m,
          .dataset = md.dataset};
}

inline DemoPool cmd_build_pool(const ExperimentConfig& config, const BackendProvider& provider = {}) {
  const auto md = load_ingest(config);
  ModelGateway gateway(provider ? provider() : default_provider(config, md)(), config.model.max_in_flight,
                       config.model.max_reply_tokens);
  auto pool = build_pool(md.split.train, gateway, pool_options(config, md));
  write_pool(pool, (std::filesystem::path(config.output_dir) / artifacts::kPool).string());
  return pool;
}

// ---------------------------------------------------------------------------
// Evaluation

struct FittedBaselines {
  std::optional<HarParams> har;
  std::optional<GarchFit> garch;
  std::optional<GarchFit> gjr;
};

inline GarchFitOptions garch_options(const ExperimentConfig& config) {
  GarchFitOptions o;
  o.seed = config.garch_seed;
  o.max_iterations = config.garch_max_iterations;
  o.restarts = config.garch_restarts;
  return o;
}

/// Returns [0, boundary]: every observation whose value is known at the end of training.
inline std::span<const ReturnObservation> training_returns(const MarketData& md) {
  return std::span<const ReturnObservation>(md.returns).first(md.split.spec.boundary_index + 1);
}

/// Forecaster for a classical method. Parameters are fitted on the training
/// period once; each forecast then reads only returns up to its window's end.
inline Forecaster classical_forecaster(const std::string& method, const MarketData& md,
                                       const ExperimentConfig& config, FittedBaselines& fitted) {
  if (method == "rolling_mean")
    return [](const WindowSample& s) { return Forecast{rolling_mean_forecast(s)}; };

  if (method == "har") {
    fitted.har = fit_har(training_returns(md));
    auto variances = std::make_shared<std::vector<double>>(variances_of(md.returns));
    const auto params = *fitted.har;
    return [variances, params](const WindowSample& s) {
      if (s.end_index + 1 < kHarMonthly)
        throw Error(ErrorKind::Precondition, "HAR needs 22 days of history");
      const std::span<const double> all(*variances);
      return Forecast{har_forecast(params, all.subspan(s.end_index + 1 - kHarMonthly, kHarMonthly))};
    };
  }

  const bool asymmetric = method == "gjr_garch";
  const auto train_r = log_returns_of(training_returns(md));
  auto fit = fit_garch(train_r, asymmetric, garch_options(config));
  (asymmetric ? fitted.gjr : fitted.garch) = fit;
  // path[t] is the conditional variance of return t given returns before t.
  auto path = std::make_shared<std::vector<double>>(
      garch_filter(fit.params, log_returns_of(md.returns), fit.initial_variance));
  return [path](const WindowSample& s) { return Forecast{(*path)[s.end_index + 1]}; };
}

inline std::string audit_of(const LlmForecast& f) {
  std::string a = "demos=";
  for (std::size_t i = 0; i < f.demo_sources.size(); ++i) a += (i ? " " : "") + std::to_string(f.demo_sources[i]);
  if (f.selection.estimate)
    a += "; s_t=" + format_exact(f.selection.estimate->signal) + " est=" + to_string(f.selection.estimate->label);
  if (f.selection.shortfall) a += "; shortfall=" + std::to_string(f.selection.shortfall);
  return a;
}

inline SamplerConfig sampler_for(const std::string& method, const ExperimentConfig& config, double tau) {
  SamplerConfig s = config.sampler;
  s.strategy = method == "icl_random"        ? Strategy::Random
               : method == "icl_fixed_prior" ? Strategy::FixedPrior
                                             : Strategy::LabelEstimate;
  s.tau_prime = config.tau_prime.value_or(tau);
  return s;
}

inline Forecaster llm_forecaster(const std::string& method, const ExperimentConfig& config, double tau,
                                 std::shared_ptr<ModelGateway> gateway, std::shared_ptr<const DemoPool> pool) {
  if (method == "one_shot")
    return [gateway](const WindowSample& s) {
      const auto f = forecast_one_shot(s, *gateway);
      return Forecast{f.value, f.clamped ? kFlagClamped : kFlagNone, {}};
    };
  const auto sampler = sampler_for(method, config, tau);
  return [gateway, pool, sampler](const WindowSample& s) {
    const auto f = forecast_icl(*pool, s, sampler, *gateway);
    unsigned flags = (f.clamped ? kFlagClamped : 0u) | (f.selection.shortfall ? kFlagShortfall : 0u);
    return Forecast{f.value, flags, audit_of(f)};
  };
}

struct MethodFailure {
  std::string method;
  std::string message;
};

struct EvaluationResult {
  std::vector<ReportRow> rows;
  std::vector<ForecastRecord> records;
  std::vector<MethodFailure> failures;
  FittedBaselines fitted;
  bool backend_used = false;
};

inline nlohmann::ordered_json baselines_json(const FittedBaselines& f) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  auto garch = [](const GarchFit& g) {
    nlohmann::ordered_json p;
    p["omega"] = g.params.omega;
    p["alpha"] = g.params.alpha;
    p["beta"] = g.params.beta;
    p["gamma"] = g.params.gamma;
    p["log_likelihood"] = g.diagnostics.log_likelihood_or_sse;
    p["converged"] = g.diagnostics.converged;
    p["warnings"] = g.diagnostics.warnings;
    return p;
  };
  if (f.har)
    j["har"] = {{"intercept", f.har->intercept},
                {"beta_daily", f.har->beta_daily},
                {"beta_weekly", f.har->beta_weekly},
                {"beta_monthly", f.har->beta_monthly}};
  if (f.garch) j["garch"] = garch(*f.garch);
  if (f.gjr) j["gjr_garch"] = garch(*f.gjr);
  return j;
}

/// Backtests every configured method on the test split, in configured order.
/// The backend is created only if an LLM method is configured. A method that
/// cannot run at all is reported in `failures` and omitted from the rows.
inline EvaluationResult evaluate_methods(const ExperimentConfig& config, const MarketData& md,
                                         const BackendProvider& provider,
                                         std::shared_ptr<const DemoPool> pool = nullptr) {
  EvaluationResult out;
  std::shared_ptr<ModelGateway> gateway;
  for (const auto& method : config.methods) {
    try {
      Forecaster f;
      if (is_llm_method(method)) {
        if (needs_pool(method) && !pool) throw Error(ErrorKind::Configuration, "no demonstration pool; run `build-pool` first");
        if (!gateway) {
          gateway = std::make_shared<ModelGateway>(provider(), config.model.max_in_flight, config.model.max_reply_tokens);
          out.backend_used = true;
        }
        f = llm_forecaster(method, config, md.tau, gateway, pool);
      } else {
        f = classical_forecaster(method, md, config, out.fitted);
      }
      const int workers = is_llm_method(method) ? config.model.max_in_flight : config.workers;
      auto records = run_backtest(md.split.test, method, f, md.tau, workers);
      out.rows.push_back({md.dataset, compute_metrics(records, md.tau)});
      out.records.insert(out.records.end(), std::make_move_iterator(records.begin()),
                         std::make_move_iterator(records.end()));
    } catch (const std::exception& e) {
      out.failures.push_back({method, e.what()});
    }
  }
  return out;
}

inline EvaluationResult cmd_evaluate(const ExperimentConfig& config, const BackendProvider& provider = {}) {
  const auto md = load_ingest(config);
  const std::filesystem::path dir(config.output_dir);
  std::shared_ptr<const DemoPool> pool;
  const bool wants_pool = std::any_of(config.methods.begin(), config.methods.end(), needs_pool);
  if (wants_pool && std::filesystem::exists(dir / artifacts::kPool)) {
    auto p = std::make_shared<DemoPool>(read_pool((dir / artifacts::kPool).string()));
    if (p->tau != md.tau)
      throw Error(ErrorKind::Validation, "pool.jsonl was built with a different tau; rebuild the pool");
    pool = std::move(p);
  }
  auto result = evaluate_methods(config, md, provider ? provider : default_provider(config, md), pool);
  if (!result.rows.empty()) {
    write_file(dir / artifacts::kReportCsv, render_csv(result.rows));
    write_file(dir / artifacts::kReportMd, render_markdown(result.rows));
    write_file(dir / artifacts::kForecasts, render_forecasts_csv(result.records));
  }
  write_file(dir / artifacts::kBaselines, baselines_json(result.fitted).dump(2) + '\n');
  return result;
}

/// Re-renders the Markdown table from report.csv.
inline std::string cmd_report(const ExperimentConfig& config) {
  const std::filesystem::path dir(config.output_dir);
  std::istringstream in(read_file(dir / artifacts::kReportCsv));
  const auto md = render_markdown(parse_metrics_csv(in));
  write_file(dir / artifacts::kReportMd, md);
  return md;
}

}  // namespace volregime
