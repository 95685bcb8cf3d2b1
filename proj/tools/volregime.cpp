// Command-line driver: ingest -> build-pool -> evaluate -> report.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "volregime/experiment.hpp"

namespace vr = volregime;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2 };

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::vector<std::string> overrides;
};

vr::ExperimentConfig resolve(const Options& o) {
  std::vector<vr::ConfigOverride> ov;
  if (o.seed) {
    const auto s = std::to_string(*o.seed);
    ov.push_back({"pool.seed", s});
    ov.push_back({"sampler.seed", s});
    ov.push_back({"garch.seed", s});
  }
  if (!o.backend.empty()) ov.push_back({"model.backend", o.backend});
  for (const auto& text : o.overrides) ov.push_back(vr::parse_override(text));
  return vr::load_config(o.config_path, ov);
}

int run_ingest(const Options& o) {
  const auto cfg = resolve(o);
  const auto m = vr::cmd_ingest(cfg);
  if (m.at("reordered").get<bool>()) std::cerr << "warning: input rows were not in date order; sorted\n";
  std::cout << "ingested " << m.at("n_returns") << " returns from " << cfg.data_path << "\n"
            << "  train samples " << m.at("n_train") << ", test samples " << m.at("n_test")
            << ", tau " << vr::format_number(m.at("tau").get<double>()) << "\n"
            << "  returns sha256 " << m.at("returns_sha256").get<std::string>() << "\n";
  return kOk;
}

int run_build_pool(const Options& o) {
  const auto cfg = resolve(o);
  const auto pool = vr::cmd_build_pool(cfg);
  for (const auto& w : pool.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& s : pool.skipped) std::cerr << "skipped sample " << s.source_index << ": " << s.reason << "\n";
  std::cout << "pool of " << pool.size() << " demonstrations (" << pool.indices_of(vr::Regime::Low).size()
            << " low, " << pool.indices_of(vr::Regime::High).size() << " high) written to "
            << cfg.output_dir << "/" << vr::artifacts::kPool << "\n";
  return kOk;
}

int run_evaluate(const Options& o) {
  const auto cfg = resolve(o);
  const auto result = vr::cmd_evaluate(cfg);
  if (!result.rows.empty()) std::cout << vr::render_markdown(result.rows);
  for (const auto& row : result.rows) {
    const auto& m = row.metrics;
    if (m.n_fallback || m.n_clamped || m.n_shortfall)
      std::cerr << "note: " << m.method << ": " << m.n_fallback << " fallback, " << m.n_clamped
                << " clamped, " << m.n_shortfall << " shortfall\n";
  }
  for (const auto& f : result.failures) std::cerr << "error: method " << f.method << ": " << f.message << "\n";
  return result.failures.empty() ? kOk : kFailure;
}

int run_report(const Options& o) {
  std::cout << vr::cmd_report(resolve(o));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volatility forecasting experiments with regime-aware in-context demonstrations"};
  app.require_subcommand(1);
  Options opt;
  auto common = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "experiment config (INI)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "override every seed (pool, sampler, garch)");
    sub->add_option("--backend", opt.backend, "remote | mock:<variant> | replay:<path>");
    sub->add_option("--set", opt.overrides, "override a config key, e.g. --set pool.n=100")
        ->type_name("SECTION.KEY=VALUE");
  };
  auto* ingest = app.add_subcommand("ingest", "parse prices, compute returns, split, persist with checksums");
  auto* pool = app.add_subcommand("build-pool", "build the refined demonstration pool from the training split");
  auto* evaluate = app.add_subcommand("evaluate", "backtest all configured methods and write reports");
  auto* report = app.add_subcommand("report", "re-render report.md from report.csv");
  for (auto* s : {ingest, pool, evaluate, report}) common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*ingest) return run_ingest(opt);
    if (*pool) return run_build_pool(opt);
    if (*evaluate) return run_evaluate(opt);
    if (*report) return run_report(opt);
  } catch (const vr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == vr::ErrorKind::Configuration ? kUsage : kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
