#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "specmuon/bench/experiment.hpp"

namespace specmuon::bench {

// Learning-rate and hyperparameter grids for the least-squares comparison.
// Each optimizer's base lr set is multiplied by every entry of lr_scales.
inline constexpr const char* kFig1GridWide = R"({
  "problem": {"name": "least_squares"},
  "iterations": 5000,
  "threshold": 1e-6,
  "lr_scales": [1, 10, 100],
  "optimizers": [
    {"name": "adam", "grid": {"lr": [0.01, 0.005, 0.001, 0.0005], "betas": [[0.9, 0.999]]}},
    {"name": "adamw", "grid": {"lr": [0.01, 0.005, 0.001, 0.0005], "betas": [[0.9, 0.999]],
                               "weight_decay": [0.0, 0.01, 0.001, 0.0005, 0.0001]}},
    {"name": "muon", "grid": {"lr": [0.1, 0.05, 0.02, 0.005], "momentum": [0.0, 0.02, 0.001, 0.0001, 0.0005]}},
    {"name": "specmuon", "params": {"mode": "practical", "rtop": 2},
     "grid": {"lr": [0.1, 0.05, 0.01, 0.003], "momentum": [0.9, 0.01, 0.02, 0.001, 0.0001, 0.0005],
              "sav_eta": [0.2, 0.5, 0.8]}}
  ]
})";

struct GridEntry {
  OptimizerSpec base;
  Json grid = Json::object();  // key -> list of values, expanded in key order
};

struct Fig1Config {
  ProblemSpec problem;
  std::size_t iterations = 5000;
  double threshold = 1e-6;
  std::vector<double> lr_scales{1.0};
  std::vector<GridEntry> optimizers;
  Json source;
};

inline Fig1Config fig1_config_from_json(const Json& j) {
  specmuon::detail::require_known_keys(j, {"problem", "iterations", "threshold", "lr_scales", "optimizers"}, "fig1 grid");
  Fig1Config cfg;
  cfg.source = j;
  cfg.problem = problem_spec_from_json(j.value("problem", Json{{"name", "least_squares"}}));
  const std::string where = "fig1 grid";
  const auto iters = detail::get_or<std::int64_t>(j, "iterations", 5000, where);
  if (iters < 1) throw ConfigError("fig1 grid: iterations must be >= 1");
  cfg.iterations = static_cast<std::size_t>(iters);
  cfg.threshold = detail::get_or(j, "threshold", cfg.threshold, where);
  cfg.lr_scales = detail::get_or(j, "lr_scales", cfg.lr_scales, where);
  if (cfg.lr_scales.empty()) throw ConfigError("fig1 grid: lr_scales must not be empty");
  if (!j.contains("optimizers") || !j["optimizers"].is_array() || j["optimizers"].empty())
    throw ConfigError("fig1 grid: 'optimizers' must be a non-empty list");
  for (const auto& e : j["optimizers"]) {
    specmuon::detail::require_known_keys(e, {"name", "label", "params", "grid"}, where);
    Json flat = e.value("params", Json::object());
    flat["name"] = e.value("name", "");
    if (e.contains("label")) flat["label"] = e["label"];
    GridEntry g;
    g.base = optimizer_spec_from_json(flat);
    g.grid = e.value("grid", Json::object());
    for (const auto& [key, values] : g.grid.items()) {
      if (!values.is_array() || values.empty())
        throw ConfigError("fig1 grid: '" + g.base.label + "." + key + "' must be a non-empty list");
    }
    for (const auto& other : cfg.optimizers)
      if (other.base.label == g.base.label) throw ConfigError("fig1 grid: duplicate label '" + g.base.label + "'");
    cfg.optimizers.push_back(std::move(g));
  }
  return cfg;
}

inline Fig1Config default_fig1_config() { return fig1_config_from_json(Json::parse(kFig1GridWide)); }

/// The same grids without rescaling the learning rates.
inline Fig1Config table_fig1_config() {
  Json j = Json::parse(kFig1GridWide);
  j["lr_scales"] = {1};
  return fig1_config_from_json(j);
}

inline Fig1Config load_fig1_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read grid " + path);
  try {
    return fig1_config_from_json(Json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Cartesian product of the grid, lr scales outermost, then keys in order.
inline std::vector<OptimizerSpec> expand_grid(const GridEntry& g, const std::vector<double>& lr_scales) {
  std::vector<OptimizerSpec> out;
  std::vector<std::pair<std::string, Json>> axes;
  for (const auto& [key, values] : g.grid.items()) axes.emplace_back(key, values);
  for (double scale : lr_scales) {
    std::vector<std::size_t> idx(axes.size(), 0);
    while (true) {
      OptimizerSpec s = g.base;
      for (std::size_t a = 0; a < axes.size(); ++a) s.params[axes[a].first] = axes[a].second[idx[a]];
      if (s.params.contains("lr")) s.params["lr"] = s.params["lr"].get<double>() * scale;
      out.push_back(std::move(s));
      bool done = true;
      for (std::size_t a = axes.size(); a-- > 0;) {
        if (++idx[a] < axes[a].second.size()) {
          done = false;
          break;
        }
        idx[a] = 0;
      }
      if (done) break;
    }
  }
  for (const auto& s : out) make_optimizer(s);
  return out;
}

struct Fig1Entry {
  OptimizerSpec selected;
  std::size_t candidates = 0;
  std::optional<std::size_t> iters_to_threshold;
  RunResult run;
};

struct Fig1Result {
  Json json;
  std::vector<Fig1Entry> entries;
  // SpecMuon reached the threshold in no more iterations than Adam and AdamW.
  bool specmuon_no_slower = false;
  // Every selected run hit the threshold at some iteration.
  bool all_reached = false;
};

/// Grid-searches each optimizer for the fewest iterations to
/// f - f* <= threshold * (f0 - f*), then reruns the winner for the full
/// budget. A candidate is cut off once it can no longer beat the best so far.
/// Ties keep the earlier grid point.
inline Fig1Result reproduce_fig1(std::uint64_t seed, const Fig1Config& cfg, const std::optional<std::string>& output_dir) {
  const ProblemSpec pspec = cfg.problem.with_seed(seed);
  const auto problem = make_problem(pspec);
  const double f0 = problem->loss(problem->initial_point());
  const double f_star = problem->constants().f_star.value_or(0.0);
  const double gap = cfg.threshold * (f0 - f_star);

  Fig1Result result;
  for (const auto& g : cfg.optimizers) {
    const auto candidates = expand_grid(g, cfg.lr_scales);
    Fig1Entry e;
    e.candidates = candidates.size();
    e.selected = candidates.front();
    std::size_t best = cfg.iterations + 1;
    double best_final = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) {
      RunOptions o = RunOptions::steps(std::min(best, cfg.iterations));
      o.stop_gap = gap;
      auto opt = make_optimizer(c);
      const RunResult r = run_optimizer(*problem, *opt, o);
      if (r.iters_to_gap && *r.iters_to_gap < best) {
        best = *r.iters_to_gap;
        e.selected = c;
      } else if (best > cfg.iterations && r.final_loss < best_final) {
        best_final = r.final_loss;
        e.selected = c;
      }
    }
    auto opt = make_optimizer(e.selected);
    e.run = run_optimizer(*problem, *opt, RunOptions::steps(cfg.iterations));
    e.iters_to_threshold = iterations_to_gap(e.run, f_star, gap);
    result.entries.push_back(std::move(e));
  }

  auto iters_of = [&](const std::string& name) -> std::optional<std::size_t> {
    for (const auto& e : result.entries)
      if (e.selected.name == name) return e.iters_to_threshold;
    return std::nullopt;
  };
  const auto sm = iters_of("specmuon");
  result.specmuon_no_slower = sm.has_value();
  for (const char* rival : {"adam", "adamw"}) {
    const auto r = iters_of(rival);
    if (r && sm && *sm > *r) result.specmuon_no_slower = false;
  }
  result.all_reached = true;

  Json& j = result.json;
  j["seed"] = seed;
  j["problem"] = to_json(pspec);
  j["f0"] = f0;
  j["f_star"] = f_star;
  j["threshold"] = cfg.threshold;
  j["gap"] = gap;
  j["iterations"] = cfg.iterations;
  j["optimizers"] = Json::array();
  std::vector<PlotSeries> plot;
  for (const auto& e : result.entries) {
    const bool reached = e.iters_to_threshold.has_value();
    result.all_reached = result.all_reached && reached;
    Json o;
    o["label"] = e.selected.label;
    o["name"] = e.selected.name;
    o["selected"] = e.selected.params;
    o["candidates"] = e.candidates;
    o["iters_to_threshold"] = e.iters_to_threshold ? Json(*e.iters_to_threshold) : Json(nullptr);
    o["final_loss"] = json_number(e.run.final_loss);
    o["final_gap"] = json_number(e.run.final_loss - f_star);
    o["reached_threshold"] = reached;
    j["optimizers"].push_back(std::move(o));
    std::vector<double> excess;
    for (const auto& r : e.run.records) excess.push_back(r.loss - f_star);
    plot.push_back({e.selected.label, std::move(excess)});
  }
  j["specmuon_no_slower_than_adam_adamw"] = result.specmuon_no_slower;
  j["all_reached_threshold"] = result.all_reached;
  j["grid"] = cfg.source;

  if (output_dir) {
    namespace fs = std::filesystem;
    const fs::path dir = *output_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    for (const auto& e : result.entries)
      write_csv(dir / (e.selected.label + "_seed" + std::to_string(seed) + ".csv"), e.run.records);
    write_text(dir / "summary.json", j.dump(2) + "\n");
    write_text(dir / "loss.svg", svg_plot(plot, "Training loss (log scale)", "f - f*"));
  }
  return result;
}

}  // namespace specmuon::bench
