#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "specmuon/bench/config.hpp"
#include "specmuon/bench/report.hpp"
#include "specmuon/run.hpp"

namespace specmuon::bench {

inline constexpr const char* kOutputDirEnv = "SPECMUON_OUTPUT_DIR";

/// Precedence: explicit override, then the environment variable, then the
/// configured directory.
inline std::string resolve_output_dir(const std::string& configured, const std::optional<std::string>& override_dir = {}) {
  if (override_dir && !override_dir->empty()) return *override_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return configured;
}

inline Json to_json(const TheoremLedger& l) {
  auto tally = [](const TheoremTally& t) { return Json{{"checked", t.checked}, {"failed", t.failed}}; };
  Json j;
  j["dissipation"] = tally(l.dissipation);
  j["positivity"] = tally(l.positivity);
  j["descent"] = tally(l.descent);
  j["xi_infeasible"] = l.xi_infeasible;
  j["stalls"] = l.stalls;
  return j;
}

/// Non-finite numbers have no JSON literal; they are written as null.
inline Json json_number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

struct Cell {
  std::string label;
  std::uint64_t seed = 0;
  double f0 = 0.0;
  double f_star = 0.0;
  RunResult run;
  std::optional<std::size_t> iters_to_threshold;
};

struct Summary {
  Json json;
  std::vector<Cell> cells;
  std::vector<std::string> failures;

  int exit_code() const { return failures.empty() ? 0 : 1; }
};

/// First k with f(Theta^k) - f* <= gap, counting the final iterate as k = n.
inline std::optional<std::size_t> iterations_to_gap(const RunResult& r, double f_star, double gap) {
  for (const auto& rec : r.records)
    if (rec.loss - f_star <= gap) return rec.iter;
  if (!r.diverged && r.final_loss - f_star <= gap) return r.records.size();
  return std::nullopt;
}

inline Cell run_cell(const RunConfig& cfg, const OptimizerSpec& spec, std::uint64_t seed) {
  const auto problem = make_problem(cfg.problem.with_seed(seed));
  auto opt = make_optimizer(spec);
  RunOptions options = RunOptions::steps(cfg.iterations);
  options.record_time = cfg.record_time;
  Cell cell;
  cell.label = spec.label;
  cell.seed = seed;
  cell.f0 = problem->loss(problem->initial_point());
  cell.f_star = problem->constants().f_star.value_or(0.0);
  cell.run = run_optimizer(*problem, *opt, options);
  cell.iters_to_threshold = iterations_to_gap(cell.run, cell.f_star, cfg.threshold * (cell.f0 - cell.f_star));
  return cell;
}

/// Runs every (optimizer, seed) cell. With write_files, writes one CSV per
/// cell, summary.json and (if cfg.plot) loss.svg into cfg.output_dir.
inline Summary run_experiment(const RunConfig& cfg, bool write_files = true) {
  if (cfg.optimizers.empty()) throw ConfigError("config: 'optimizers' must be a non-empty list");
  if (cfg.iterations == 0) throw ConfigError("config: iterations must be >= 1");
  namespace fs = std::filesystem;
  const fs::path dir = cfg.output_dir;
  if (write_files) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  }

  Summary summary;
  Json& j = summary.json;
  j["problem"] = to_json(cfg.problem);
  j["iterations"] = cfg.iterations;
  j["seeds"] = cfg.seeds;
  j["threshold"] = cfg.threshold;
  j["check_theorems"] = cfg.check_theorems;
  j["optimizers"] = Json::array();
  std::vector<PlotSeries> plot;
  TheoremLedger total;

  for (const auto& spec : cfg.optimizers) {
    std::vector<double> finals;
    std::vector<std::vector<double>> curves;
    TheoremLedger ledger;
    Json per_seed = Json::array();
    for (std::uint64_t seed : cfg.seeds) {
      Cell cell = run_cell(cfg, spec, seed);
      if (write_files) write_csv(dir / (spec.label + "_seed" + std::to_string(seed) + ".csv"), cell.run.records);
      ledger += cell.run.ledger;
      finals.push_back(cell.run.final_loss);
      std::vector<double> curve;
      for (const auto& r : cell.run.records) curve.push_back(r.loss);
      curves.push_back(std::move(curve));

      const std::string where = spec.label + " seed " + std::to_string(seed);
      if (cell.run.diverged) summary.failures.push_back(where + ": run did not complete: " + cell.run.error);
      if (cfg.check_theorems) {
        const auto& l = cell.run.ledger;
        if (l.dissipation.failed)
          summary.failures.push_back(where + ": dissipation failed at " + std::to_string(l.dissipation.failed) + " steps");
        if (l.positivity.failed)
          summary.failures.push_back(where + ": positivity failed at " + std::to_string(l.positivity.failed) + " steps");
        if (l.descent.failed)
          summary.failures.push_back(where + ": descent failed at " + std::to_string(l.descent.failed) + " steps");
      }
      Json s;
      s["seed"] = seed;
      s["f0"] = cell.f0;
      s["final_loss"] = json_number(cell.run.final_loss);
      s["iters_to_threshold"] = cell.iters_to_threshold ? Json(*cell.iters_to_threshold) : Json(nullptr);
      s["evaluations"] = cell.run.evaluations;
      s["diverged"] = cell.run.diverged;
      if (cell.run.diverged) s["error"] = cell.run.error;
      per_seed.push_back(std::move(s));
      summary.cells.push_back(std::move(cell));
    }
    total += ledger;
    const MeanStd ms = mean_std(finals);
    Json o;
    o["label"] = spec.label;
    o["name"] = spec.name;
    o["params"] = spec.params;
    o["final_loss"] = {{"mean", json_number(ms.mean)}, {"std", json_number(ms.std)}};
    o["runs"] = std::move(per_seed);
    o["theorems"] = to_json(ledger);
    j["optimizers"].push_back(std::move(o));
    plot.push_back({spec.label, geometric_mean(curves)});
  }
  j["theorems"] = to_json(total);
  j["failures"] = summary.failures;
  if (write_files) {
    write_text(dir / "summary.json", j.dump(2) + "\n");
    if (cfg.plot) write_text(dir / "loss.svg", svg_plot(plot, "Training loss (log scale)", "loss"));
  }
  return summary;
}

/// Smallest min(rows, cols) over the problem's parameter blocks.
inline std::size_t min_block_dim(const ProblemSpec& spec) {
  std::size_t d = std::numeric_limits<std::size_t>::max();
  for (const auto& [r, c] : make_problem(spec)->param_shapes()) d = std::min(d, std::min(r, c));
  return d;
}

/// One SpecMuon entry per k_r value, cloned from the config's first
/// SpecMuon entry (or the practical defaults), then run_experiment plus a
/// ranking by mean final loss.
inline Summary sweep_rtop(RunConfig cfg, const std::vector<std::size_t>& values, bool write_files = true) {
  if (values.empty()) throw ConfigError("rtop-sweep: no values given");
  const std::size_t limit = min_block_dim(cfg.problem);
  std::set<std::size_t> seen;
  for (std::size_t k : values) {
    if (k > limit)
      throw ConfigError("rtop-sweep: k_r = " + std::to_string(k) + " outside [0, " + std::to_string(limit) + "]");
    if (!seen.insert(k).second) throw ConfigError("rtop-sweep: duplicate value " + std::to_string(k));
  }
  OptimizerSpec base{"specmuon", "specmuon", Json::object()};
  for (const auto& o : cfg.optimizers) {
    if (o.name == "specmuon") {
      base = o;
      break;
    }
  }
  if (!base.params.contains("mode") && cfg.mode) base.params["mode"] = *cfg.mode;
  if (!base.params.contains("predictor_power") && cfg.predictor_power) base.params["predictor_power"] = *cfg.predictor_power;
  base.params.erase("k_r");
  cfg.optimizers.clear();
  for (std::size_t k : values) {
    OptimizerSpec s = base;
    s.label = "specmuon_rtop" + std::to_string(k);
    s.params["rtop"] = k;
    make_optimizer(s);
    cfg.optimizers.push_back(std::move(s));
  }
  cfg.plot = true;
  Summary summary = run_experiment(cfg, false);

  std::vector<std::pair<double, std::size_t>> order;
  const auto& opts = summary.json["optimizers"];
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& m = opts[i]["final_loss"]["mean"];
    order.emplace_back(m.is_number() ? m.get<double>() : std::numeric_limits<double>::infinity(), i);
  }
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Json ranking = Json::array();
  for (std::size_t place = 0; place < order.size(); ++place) {
    ranking.push_back({{"rank", place + 1}, {"rtop", values[order[place].second]}, {"final_loss_mean", json_number(order[place].first)}});
  }
  summary.json["ranking"] = std::move(ranking);

  if (write_files) {
    namespace fs = std::filesystem;
    const fs::path dir = cfg.output_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    std::vector<PlotSeries> plot;
    for (std::size_t i = 0; i < cfg.optimizers.size(); ++i) {
      std::vector<std::vector<double>> curves;
      for (const auto& cell : summary.cells) {
        if (cell.label != cfg.optimizers[i].label) continue;
        write_csv(dir / (cell.label + "_seed" + std::to_string(cell.seed) + ".csv"), cell.run.records);
        std::vector<double> curve;
        for (const auto& r : cell.run.records) curve.push_back(r.loss);
        curves.push_back(std::move(curve));
      }
      plot.push_back({"k_r = " + std::to_string(values[i]), geometric_mean(curves)});
    }
    write_text(dir / "summary.json", summary.json.dump(2) + "\n");
    write_text(dir / "loss.svg", svg_plot(plot, "Training loss (log scale)", "loss"));
  }
  return summary;
}

}  // namespace specmuon::bench
