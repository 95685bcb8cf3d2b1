#pragma once

#include <string>
#include <vector>

#include "volregime/marketdata.hpp"
#include "volregime/modelgateway.hpp"
#include "volregime/poolbuilder.hpp"
#include "volregime/promptcodec.hpp"
#include "volregime/sampler.hpp"

namespace volregime {

struct LlmForecast {
  double value = 0.0;
  bool clamped = false;
  Selection selection;
  std::vector<std::size_t> demo_sources;
};

/// Forecast prompt: K demonstration blocks, then the query window's input
/// lines and the task line.
inline PromptText render_icl_prompt(const DemoPool& pool, const Selection& selection,
                                    const WindowSample& window) {
  std::vector<PromptText> parts;
  parts.reserve(selection.indices.size() + 2);
  for (auto i : selection.indices) {
    const auto& d = pool.demonstrations.at(i);
    parts.push_back(render_demonstration(d.prompt_text, d.refined_prediction));
  }
  parts.push_back(render_input(window));
  parts.push_back(render_query());
  return concat(parts);
}

/// Single-shot in-context forecast; no feedback or ground truth is involved.
inline LlmForecast forecast_icl(const DemoPool& pool, const WindowSample& window,
                                const SamplerConfig& config, ModelGateway& gateway) {
  LlmForecast out;
  out.selection = select_demonstrations(pool, window, config);
  for (auto i : out.selection.indices) out.demo_sources.push_back(pool.demonstrations[i].source_index);
  const auto parsed = parse_forecast(gateway.complete(render_icl_prompt(pool, out.selection, window)).text);
  out.value = parsed.value;
  out.clamped = parsed.clamped;
  return out;
}

/// Direct prediction from p_input ⊕ p_query, without demonstrations or refinement.
inline LlmForecast forecast_one_shot(const WindowSample& window, ModelGateway& gateway) {
  LlmForecast out;
  const auto parsed = parse_forecast(gateway.complete(render_history_prompt(window)).text);
  out.value = parsed.value;
  out.clamped = parsed.clamped;
  return out;
}

}  // namespace volregime
