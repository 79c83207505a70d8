#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "subevo/data.hpp"
#include "subevo/errors.hpp"
#include "subevo/io.hpp"
#include "subevo/loss.hpp"
#include "subevo/resampling.hpp"
#include "subevo/state_evolution.hpp"

namespace subevo {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitAllFailed = 3, kExitNumerical = 4 };

struct ExperimentConfig {
  std::string command;
  std::string mode = "robust";
  std::string loss;  // empty: huber (robust) or logistic
  double noise_df = 2.0;
  double noise_scale = 1.0;
  double signal_norm = 1.0;
  double delta = 5.0;
  std::optional<double> q;
  std::string q_grid;
  long n = 1000;
  long p = 200;
  int M = 10;
  int reps = 20;
  std::uint64_t seed = 1;
  std::string design = "gaussian";
  std::string out = ".";
  double scale = 1.0;
  int gh_nodes = 80;
  int gl_nodes = 200;
  int reference_draws = 20;
  std::string recipe;

  DataModel model() const {
    const DesignLaw d = DesignLaw::from_name(design);
    if (mode == "robust") return DataModel::robust(NoiseLaw{noise_df, noise_scale}, d);
    if (mode == "logistic") return DataModel::logistic(signal_norm, d);
    throw DomainError("--mode must be robust or logistic");
  }

  LossModel loss_model() const {
    const LossModel l = loss.empty() ? model().default_loss() : LossModel::from_name(loss);
    if (l.is_logistic() != (mode == "logistic"))
      throw DomainError("loss " + l.name() + " does not fit mode " + mode);
    return l;
  }

  QuadratureSpec quad() const {
    QuadratureSpec s{gh_nodes, gl_nodes};
    s.validate();
    return s;
  }

  Eigen::Index scaled_n() const { return std::max<long>(1, std::lround(static_cast<double>(n) * scale)); }
  Eigen::Index scaled_p() const { return std::max<long>(1, std::lround(static_cast<double>(p) * scale)); }
  int scaled_reps() const { return std::max(2, static_cast<int>(std::lround(reps * scale))); }
};

/// "start:stop:step", inclusive of stop up to rounding.
inline std::vector<double> parse_q_grid(const std::string& spec) {
  const auto c1 = spec.find(':');
  const auto c2 = c1 == std::string::npos ? std::string::npos : spec.find(':', c1 + 1);
  if (c2 == std::string::npos) throw DomainError("--q-grid must look like start:stop:step");
  double start, stop, step;
  try {
    start = std::stod(spec.substr(0, c1));
    stop = std::stod(spec.substr(c1 + 1, c2 - c1 - 1));
    step = std::stod(spec.substr(c2 + 1));
  } catch (const std::exception&) {
    throw DomainError("--q-grid has a non-numeric field: " + spec);
  }
  if (!(step > 0.0)) throw DomainError("--q-grid step must be positive");
  if (stop < start) throw DomainError("--q-grid is empty");
  std::vector<double> grid;
  for (long k = 0;; ++k) {
    const double q = start + static_cast<double>(k) * step;
    if (q > stop + 1e-9 * step) break;
    grid.push_back(std::round(q * 1e12) / 1e12);
  }
  for (double q : grid)
    if (!(q > 0.0 && q <= 1.0)) throw DomainError("--q-grid values must lie in (0, 1]");
  return grid;
}

inline std::vector<double> q_values(const ExperimentConfig& cfg) {
  if (cfg.q && !cfg.q_grid.empty()) throw DomainError("give either --q or --q-grid, not both");
  if (cfg.q) {
    if (!(*cfg.q > 0.0 && *cfg.q <= 1.0)) throw DomainError("--q must lie in (0, 1]");
    return {*cfg.q};
  }
  if (cfg.q_grid.empty()) throw DomainError("a --q or --q-grid is required");
  return parse_q_grid(cfg.q_grid);
}

namespace cli {

inline const std::vector<std::string>& theory_columns() {
  static const std::vector<std::string> c{"q", "eta", "sigma2", "gamma", "a", "eta_sigma2", "status"};
  return c;
}

inline const std::vector<std::string>& pair_columns() {
  static const std::vector<std::string> c{
      "q",          "n",          "p",           "reps",         "failures",
      "corr_mean",  "corr_se",    "corr_sd",     "inner_mean",   "inner_se",
      "inner_sd",   "est_eta_sigma2_mean",       "est_eta_sigma2_se", "est_sigma2_mean",
      "est_sigma2_se", "risk_mean", "risk_se",   "theory_eta",   "theory_sigma2",
      "theory_eta_sigma2", "status", "theory_status"};
  return c;
}

inline const std::vector<std::string>& bagging_columns() {
  static const std::vector<std::string> c{
      "q",        "n",        "p",          "M",          "reps",
      "failures", "bagged_risk_mean", "bagged_risk_se", "bagged_risk_sd", "single_risk_mean",
      "cross_inner_mean", "max_decomposition_gap", "theory_sigma2", "theory_eta",
      "theory_limit", "status", "theory_status"};
  return c;
}

inline const std::vector<std::string>& diagnostic_columns() {
  static const std::vector<std::string> c{
      "q",        "n",         "p",          "overlap",        "eta",
      "sigma",    "gamma",     "a",          "ks_first",       "ks_second",
      "ks_between", "corr_empirical", "corr_reference", "corr_gap"};
  return c;
}

inline std::vector<std::string> with_series(const std::vector<std::string>& cols) {
  std::vector<std::string> out{"series"};
  out.insert(out.end(), cols.begin(), cols.end());
  return out;
}

using Row = std::vector<std::string>;
inline std::string num(double v) { return format_number(v); }
inline std::string num(long long v) { return std::to_string(v); }

inline RiskRow theory_row(const RegimeParams& base, double q) {
  return risk_curve(base, {q}).front();
}

struct TheoryOutput {
  std::vector<RiskRow> rows;
  std::vector<Row> cells;
};

inline TheoryOutput run_theory(const ExperimentConfig& cfg, const std::vector<double>& grid) {
  RegimeParams base{cfg.delta, 1.0, cfg.model(), cfg.loss_model(), cfg.quad()};
  if (!(cfg.delta > 0.0)) throw DomainError("--delta must be positive");
  TheoryOutput out;
  out.rows = risk_curve(base, grid);
  for (const auto& r : out.rows)
    out.cells.push_back({num(r.q), num(r.eta), num(r.sigma2), num(r.gamma), num(r.a),
                         num(r.eta_sigma2), r.status});
  return out;
}

struct SimRow {
  Row cells;
  bool ok = false;
  double q = 0.0, mean = 0.0, sd = 0.0, inner = 0.0, inner_sd = 0.0, est = 0.0, est_sd = 0.0;
  double theory_eta = std::numeric_limits<double>::quiet_NaN();
  double theory_eta_sigma2 = std::numeric_limits<double>::quiet_NaN();
};

inline RiskRow theory_for_sim(const ExperimentConfig& cfg, Eigen::Index n, Eigen::Index p, double q) {
  RegimeParams base{static_cast<double>(n) / static_cast<double>(p), q, cfg.model(),
                    cfg.loss_model(), cfg.quad()};
  RiskRow row = theory_row(base, q);
  return row;
}

inline std::vector<SimRow> run_pair_rows(const ExperimentConfig& cfg, const std::vector<double>& grid) {
  const Eigen::Index n = cfg.scaled_n(), p = cfg.scaled_p();
  const int reps = cfg.scaled_reps();
  for (double q : grid)
    if (subset_size(n, q) <= p) throw DomainError("floor(q n) must exceed p for every q");
  std::vector<SimRow> rows;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double q = grid[k];
    const auto ex = run_pair_experiment(cfg.model(), cfg.loss_model(), n, p, q, reps,
                                        detail::derive_seed(cfg.seed, 0x9a1ULL, k));
    const auto& s = ex.summary;
    const RiskRow th = theory_for_sim(cfg, n, p, q);
    SimRow r;
    r.ok = s.failures < s.reps;
    r.q = q;
    r.mean = s.corr.mean;
    r.sd = s.corr.sd;
    r.inner = s.inner.mean;
    r.inner_sd = s.inner.sd;
    r.est = s.est_eta_sigma2.mean;
    r.est_sd = s.est_eta_sigma2.sd;
    r.theory_eta = th.eta;
    r.theory_eta_sigma2 = th.eta_sigma2;
    r.cells = {num(q), num(static_cast<long long>(n)), num(static_cast<long long>(p)),
               num(static_cast<long long>(s.reps)), num(static_cast<long long>(s.failures)),
               num(s.corr.mean), num(s.corr.se), num(s.corr.sd), num(s.inner.mean),
               num(s.inner.se), num(s.inner.sd), num(s.est_eta_sigma2.mean),
               num(s.est_eta_sigma2.se), num(s.est_sigma2.mean), num(s.est_sigma2.se),
               num(s.risk.mean), num(s.risk.se), num(th.eta), num(th.sigma2), num(th.eta_sigma2),
               r.ok ? "ok" : "all-failed", th.status};
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<SimRow> run_bagging_rows(const ExperimentConfig& cfg,
                                            const std::vector<double>& grid) {
  const Eigen::Index n = cfg.scaled_n(), p = cfg.scaled_p();
  const int reps = cfg.scaled_reps();
  if (cfg.M < 1) throw DomainError("--M must be >= 1");
  for (double q : grid)
    if (subset_size(n, q) <= p) throw DomainError("floor(q n) must exceed p for every q");
  std::vector<SimRow> rows;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double q = grid[k];
    const auto ex = run_bagging_experiment(cfg.model(), cfg.loss_model(), n, p, q, cfg.M, reps,
                                           detail::derive_seed(cfg.seed, 0xba6ULL, k));
    const RiskRow th = theory_for_sim(cfg, n, p, q);
    const double limit = th.ok() ? bagged_risk_limit(th.eta, th.sigma2, cfg.M)
                                 : std::numeric_limits<double>::quiet_NaN();
    SimRow r;
    r.ok = ex.failures < reps;
    r.q = q;
    r.mean = ex.bagged_risk.mean;
    r.sd = ex.bagged_risk.sd;
    r.theory_eta = limit;
    r.cells = {num(q), num(static_cast<long long>(n)), num(static_cast<long long>(p)),
               num(static_cast<long long>(cfg.M)), num(static_cast<long long>(reps)),
               num(static_cast<long long>(ex.failures)), num(ex.bagged_risk.mean),
               num(ex.bagged_risk.se), num(ex.bagged_risk.sd), num(ex.single_risk.mean),
               num(ex.cross_inner.mean), num(ex.max_decomposition_gap), num(th.sigma2),
               num(th.eta), num(limit), r.ok ? "ok" : "all-failed", th.status};
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Row run_diagnostic_row(const ExperimentConfig& cfg, double q) {
  const Eigen::Index n = cfg.scaled_n(), p = cfg.scaled_p();
  DiagnosticOptions opt;
  opt.reference_draws = cfg.reference_draws;
  const auto d = bivariate_prox_diagnostic(cfg.model(), cfg.loss_model(), n, p, q, cfg.seed, opt,
                                           cfg.quad());
  return {num(q),           num(static_cast<long long>(n)), num(static_cast<long long>(p)),
          num(static_cast<long long>(d.overlap)), num(d.eta), num(d.state.sigma),
          num(d.state.gamma), num(d.state.a), num(d.ks_first), num(d.ks_second),
          num(d.ks_between), num(d.corr_empirical), num(d.corr_reference), num(d.corr_gap)};
}

inline Series column_series(const std::string& label, const std::vector<RiskRow>& rows,
                            double RiskRow::*field) {
  Series s;
  s.label = label;
  for (const auto& r : rows) {
    s.x.push_back(r.q);
    s.y.push_back(r.ok() ? r.*field : std::numeric_limits<double>::quiet_NaN());
  }
  return s;
}

inline Series affine_reference(double delta, double qlo, double qhi) {
  Series s;
  s.dashed = true;
  for (double q : {qlo, qhi}) {
    s.x.push_back(q);
    s.y.push_back((q - 1.0 / delta) / (1.0 - 1.0 / delta));
  }
  return s;
}

inline void write_outputs(const std::filesystem::path& dir, const std::string& stem,
                          const CsvTable& table, const std::vector<Panel>* panels,
                          std::ostream& out) {
  table.write(dir / (stem + ".csv"));
  out << "wrote " << (dir / (stem + ".csv")).string() << "\n";
  if (panels) {
    CsvTable::write_text(dir / (stem + ".svg"), render_svg(*panels));
    out << "wrote " << (dir / (stem + ".svg")).string() << "\n";
  }
}

// Sim panels: empirical points with sd bars, theory line, plug-in points.
inline void add_pair_series(std::vector<Panel>& panels, const std::string& tag,
                            const std::vector<SimRow>& rows) {
  Series emp, th, emp_inner, est, th_risk;
  emp.label = tag + " simulation";
  emp.markers = true;
  th.label = tag + " theory";
  emp_inner.label = tag + " simulation";
  emp_inner.markers = true;
  est.label = tag + " plug-in";
  est.markers = true;
  th_risk.label = tag + " theory";
  for (const auto& r : rows) {
    emp.x.push_back(r.q);
    emp.y.push_back(r.ok ? r.mean : std::nan(""));
    emp.err.push_back(r.sd);
    th.x.push_back(r.q);
    th.y.push_back(r.theory_eta);
    emp_inner.x.push_back(r.q);
    emp_inner.y.push_back(r.ok ? r.inner : std::nan(""));
    emp_inner.err.push_back(r.inner_sd);
    est.x.push_back(r.q);
    est.y.push_back(r.ok ? r.est : std::nan(""));
    est.err.push_back(r.est_sd);
    th_risk.x.push_back(r.q);
    th_risk.y.push_back(r.theory_eta_sigma2);
  }
  panels[0].series.push_back(emp);
  panels[0].series.push_back(th);
  panels[1].series.push_back(emp_inner);
  panels[1].series.push_back(est);
  panels[1].series.push_back(th_risk);
}

inline std::vector<Panel> pair_panels() {
  return {Panel{"correlation", "q", "eta", {}}, Panel{"inner product", "q", "eta sigma^2", {}}};
}

struct Variant {
  std::string tag;
  std::function<void(ExperimentConfig&)> apply;
};

struct Recipe {
  std::string name;
  std::string kind;  // theory | pair
  std::string description;
  ExperimentConfig base;
  std::vector<Variant> variants;
};

inline std::vector<Recipe> recipes() {
  std::vector<Recipe> out;
  auto scale_variants = [](std::initializer_list<double> scales) {
    std::vector<Variant> v;
    for (double s : scales) {
      char tag[32];
      std::snprintf(tag, sizeof tag, "scale=%g", s);
      v.push_back({tag, [s](ExperimentConfig& c) { c.noise_scale = s; }});
    }
    return v;
  };
  {
    Recipe r{"huber-eta", "theory", "Huber, delta=5, scale x t(df=2), eta and sigma^2 eta", {}, {}};
    r.base.q_grid = "0.22:1:0.02";
    r.variants = scale_variants({1, 1.5, 2, 5, 10});
    out.push_back(r);
  }
  {
    Recipe r{"huber-eta-df3", "theory", "Huber, delta=5, scale x t(df=3)", {}, {}};
    r.base.noise_df = 3.0;
    r.base.q_grid = "0.22:1:0.02";
    r.variants = scale_variants({1, 1.5, 2, 5, 10});
    out.push_back(r);
  }
  {
    Recipe r{"huber-compare", "pair", "Huber, 3 x t(df=2), (n, p) = (5000, 1000), 100 reps", {}, {}};
    r.base.noise_scale = 3.0;
    r.base.n = 5000;
    r.base.p = 1000;
    r.base.reps = 100;
    r.base.q_grid = "0.3:1:0.1";
    r.variants = {{"huber", [](ExperimentConfig&) {}}};
    out.push_back(r);
  }
  {
    Recipe r{"logistic-compare", "pair", "logistic, (n, p) = (5000, 500), nu in {1, 2}, 100 reps", {}, {}};
    r.base.mode = "logistic";
    r.base.n = 5000;
    r.base.p = 500;
    r.base.reps = 100;
    r.base.q_grid = "0.4:1:0.1";
    r.variants = {{"nu=1", [](ExperimentConfig& c) { c.signal_norm = 1.0; }},
                  {"nu=2", [](ExperimentConfig& c) { c.signal_norm = 2.0; }}};
    out.push_back(r);
  }
  {
    Recipe r{"pseudo-huber-compare", "pair", "pseudo-Huber, 4 x t(df=2), (5000, 1000), 10 reps", {}, {}};
    r.base.loss = "pseudo-huber";
    r.base.noise_scale = 4.0;
    r.base.n = 5000;
    r.base.p = 1000;
    r.base.reps = 10;
    r.base.q_grid = "0.3:1:0.1";
    r.variants = {{"pseudo-huber", [](ExperimentConfig&) {}}};
    out.push_back(r);
  }
  {
    Recipe r{"small-n", "pair", "Huber, 3 x t(df=2), (n, p) in {(500, 100), (1000, 200)}, 100 reps", {}, {}};
    r.base.noise_scale = 3.0;
    r.base.reps = 100;
    r.base.q_grid = "0.3:1:0.1";
    r.variants = {{"n=500", [](ExperimentConfig& c) { c.n = 500; c.p = 100; }},
                  {"n=1000", [](ExperimentConfig& c) { c.n = 1000; c.p = 200; }}};
    out.push_back(r);
  }
  {
    Recipe r{"universality", "pair", "Huber, t(df=2), non-Gaussian designs, (5000, 1000)", {}, {}};
    r.base.n = 5000;
    r.base.p = 1000;
    r.base.reps = 100;
    r.base.q_grid = "0.3:1:0.1";
    for (const char* d : {"rademacher", "uniform", "t:4"})
      r.variants.push_back({d, [d](ExperimentConfig& c) { c.design = d; }});
    out.push_back(r);
  }
  {
    Recipe r{"logistic-ushape", "theory", "logistic sigma^2 eta, delta in {15..30}, nu in {0..0.4}", {}, {}};
    r.base.mode = "logistic";
    r.base.q_grid = "0.1:1:0.02";
    for (double d : {15.0, 20.0, 25.0, 30.0})
      for (double nu : {0.0, 0.1, 0.2, 0.3, 0.4}) {
        char tag[48];
        std::snprintf(tag, sizeof tag, "delta=%g nu=%g", d, nu);
        r.variants.push_back({tag, [d, nu](ExperimentConfig& c) {
                                c.delta = d;
                                c.signal_norm = nu;
                              }});
      }
    out.push_back(r);
  }
  return out;
}

inline int cmd_theory(const ExperimentConfig& cfg, std::ostream& out) {
  const auto grid = q_values(cfg);
  const auto th = run_theory(cfg, grid);
  CsvTable table(theory_columns());
  for (const auto& row : th.cells) table.add_row(row);
  std::vector<Panel> panels{Panel{"eta", "q", "eta", {}}, Panel{"risk", "q", "sigma^2 eta", {}}};
  panels[0].series.push_back(column_series("theory", th.rows, &RiskRow::eta));
  if (cfg.mode == "robust")
    panels[0].series.push_back(affine_reference(cfg.delta, grid.front(), grid.back()));
  panels[1].series.push_back(column_series("theory", th.rows, &RiskRow::eta_sigma2));
  write_outputs(cfg.out, "theory", table, &panels, out);
  for (const auto& r : th.rows)
    if (r.ok()) return kExitOk;
  return kExitAllFailed;
}

inline int cmd_simulate_pair(const ExperimentConfig& cfg, std::ostream& out) {
  const auto grid = q_values(cfg);
  const auto rows = run_pair_rows(cfg, grid);
  CsvTable table(pair_columns());
  bool any = false;
  for (const auto& r : rows) {
    table.add_row(r.cells);
    any = any || r.ok;
  }
  auto panels = pair_panels();
  add_pair_series(panels, cfg.mode, rows);
  write_outputs(cfg.out, "pair", table, &panels, out);
  return any ? kExitOk : kExitAllFailed;
}

inline int cmd_simulate_bagging(const ExperimentConfig& cfg, std::ostream& out) {
  const auto grid = q_values(cfg);
  const auto rows = run_bagging_rows(cfg, grid);
  CsvTable table(bagging_columns());
  bool any = false;
  Series emp, th;
  emp.label = "simulation";
  emp.markers = true;
  th.label = "theory";
  for (const auto& r : rows) {
    table.add_row(r.cells);
    any = any || r.ok;
    emp.x.push_back(r.q);
    emp.y.push_back(r.ok ? r.mean : std::nan(""));
    emp.err.push_back(r.sd);
    th.x.push_back(r.q);
    th.y.push_back(r.theory_eta);
  }
  std::vector<Panel> panels{Panel{"bagged risk, M = " + std::to_string(cfg.M), "q", "risk", {emp, th}}};
  write_outputs(cfg.out, "bagging", table, &panels, out);
  return any ? kExitOk : kExitAllFailed;
}

inline int cmd_diagnostic(const ExperimentConfig& cfg, std::ostream& out) {
  const auto grid = q_values(cfg);
  CsvTable table(diagnostic_columns());
  bool any = false;
  for (double q : grid) {
    try {
      table.add_row(run_diagnostic_row(cfg, q));
      any = true;
    } catch (const RegimeError&) {
      Row row(diagnostic_columns().size(), "nan");
      row[0] = num(q);
      table.add_row(row);
    }
  }
  write_outputs(cfg.out, "diagnostic", table, nullptr, out);
  return any ? kExitOk : kExitAllFailed;
}

inline int cmd_figure(const ExperimentConfig& cfg, std::ostream& out) {
  const auto all = recipes();
  auto it = std::find_if(all.begin(), all.end(), [&](const Recipe& r) { return r.name == cfg.recipe; });
  if (it == all.end()) {
    std::string names;
    for (const auto& r : all) names += (names.empty() ? "" : ", ") + r.name;
    throw DomainError("unknown --recipe '" + cfg.recipe + "'; known: " + names);
  }
  const Recipe& recipe = *it;
  out << recipe.name << ": " << recipe.description << "\n";

  auto configure = [&](const Variant& v) {
    ExperimentConfig c = recipe.base;
    c.scale = cfg.scale;
    c.seed = cfg.seed;
    c.gh_nodes = cfg.gh_nodes;
    c.gl_nodes = cfg.gl_nodes;
    if (!cfg.q_grid.empty()) c.q_grid = cfg.q_grid;
    v.apply(c);
    return c;
  };

  bool any = false;
  if (recipe.kind == "theory") {
    CsvTable table(with_series(theory_columns()));
    std::vector<Panel> panels;
    const bool by_delta = recipe.name == "logistic-ushape";
    if (!by_delta)
      panels = {Panel{"eta", "q", "eta", {}}, Panel{"risk", "q", "sigma^2 eta", {}}};
    double last_delta = -1.0;
    for (const auto& v : recipe.variants) {
      const ExperimentConfig c = configure(v);
      const auto grid = q_values(c);
      const auto th = run_theory(c, grid);
      for (const auto& row : th.cells) {
        Row cells{v.tag};
        cells.insert(cells.end(), row.begin(), row.end());
        table.add_row(cells);
      }
      for (const auto& r : th.rows) any = any || r.ok();
      if (by_delta) {
        if (c.delta != last_delta) {
          char title[32];
          std::snprintf(title, sizeof title, "delta = %g", c.delta);
          panels.push_back(Panel{title, "q", "sigma^2 eta", {}});
          last_delta = c.delta;
        }
        char label[32];
        std::snprintf(label, sizeof label, "nu=%g", c.signal_norm);
        panels.back().series.push_back(column_series(label, th.rows, &RiskRow::eta_sigma2));
      } else {
        panels[0].series.push_back(column_series(v.tag, th.rows, &RiskRow::eta));
        panels[1].series.push_back(column_series(v.tag, th.rows, &RiskRow::eta_sigma2));
      }
    }
    if (!by_delta && recipe.base.mode == "robust") {
      const auto grid = q_values(configure(recipe.variants.front()));
      panels[0].series.push_back(affine_reference(recipe.base.delta, grid.front(), grid.back()));
    }
    write_outputs(cfg.out, recipe.name, table, &panels, out);
  } else {
    CsvTable table(with_series(pair_columns()));
    auto panels = pair_panels();
    for (const auto& v : recipe.variants) {
      const ExperimentConfig c = configure(v);
      const auto rows = run_pair_rows(c, q_values(c));
      for (const auto& r : rows) {
        Row cells{v.tag};
        cells.insert(cells.end(), r.cells.begin(), r.cells.end());
        table.add_row(cells);
        any = any || r.ok;
      }
      add_pair_series(panels, v.tag, rows);
    }
    write_outputs(cfg.out, recipe.name, table, &panels, out);
  }
  return any ? kExitOk : kExitAllFailed;
}

inline void add_common_options(CLI::App* app, ExperimentConfig& cfg) {
  app->add_option("--mode", cfg.mode, "robust or logistic")->check(CLI::IsMember({"robust", "logistic"}));
  app->add_option("--loss", cfg.loss, "huber, pseudo-huber, scaled-pseudo-huber:<lambda>, logistic");
  app->add_option("--noise-df", cfg.noise_df, "degrees of freedom of the t noise");
  app->add_option("--noise-scale", cfg.noise_scale, "multiplier of the t noise");
  app->add_option("--signal-norm", cfg.signal_norm, "logistic signal strength nu = ||beta*||");
  app->add_option("--delta", cfg.delta, "n / p for theory curves");
  app->add_option("--q", cfg.q, "single subsample fraction");
  app->add_option("--q-grid", cfg.q_grid, "start:stop:step");
  app->add_option("--n", cfg.n, "sample size");
  app->add_option("--p", cfg.p, "dimension");
  app->add_option("--M", cfg.M, "number of bagged subsamples");
  app->add_option("--reps", cfg.reps, "Monte Carlo replications");
  app->add_option("--seed", cfg.seed, "base seed");
  app->add_option("--design", cfg.design, "gaussian, rademacher, uniform or t:<df>");
  app->add_option("--out", cfg.out, "output directory");
  app->add_option("--scale", cfg.scale, "multiplier applied to n, p and reps")
      ->check(CLI::PositiveNumber);
  app->add_option("--gh-nodes", cfg.gh_nodes, "Gauss-Hermite nodes");
  app->add_option("--gl-nodes", cfg.gl_nodes, "Gauss-Legendre nodes");
}

}  // namespace cli

/// Entry point shared by the subevo executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  ExperimentConfig cfg;
  CLI::App app{"Subsampled M-estimation: state evolution and Monte Carlo"};
  app.require_subcommand(1);
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const ExperimentConfig&, std::ostream&);
  };
  const Command commands[] = {
      {"theory", "solve the state evolution over a q grid", cli::cmd_theory},
      {"simulate-pair", "Monte Carlo of two subsample fits per replication", cli::cmd_simulate_pair},
      {"simulate-bagging", "Monte Carlo of the bagged estimate", cli::cmd_simulate_bagging},
      {"diagnostic", "bivariate prox distribution check", cli::cmd_diagnostic},
      {"figure", "run a named figure recipe", cli::cmd_figure},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    cli::add_common_options(sub, cfg);
    if (std::string(c.name) == "diagnostic")
      sub->add_option("--reference-draws", cfg.reference_draws, "reference pairs per observation");
    if (std::string(c.name) == "figure") {
      std::string names;
      for (const auto& r : cli::recipes()) names += (names.empty() ? "" : ", ") + r.name;
      sub->add_option("--recipe", cfg.recipe, "one of: " + names)->required();
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (std::size_t k = 0; k < subs.size(); ++k) {
    if (!subs[k]->parsed()) continue;
    cfg.command = commands[k].name;
    try {
      // validate everything derivable from the flags before computing
      (void)cfg.loss_model();
      (void)cfg.quad();
      if (cfg.command != "figure") (void)q_values(cfg);
      return commands[k].run(cfg, out);
    } catch (const DomainError& e) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const RegimeError& e) {
      err << "no solution: " << e.what() << "\n";
      return kExitAllFailed;
    } catch (const std::runtime_error& e) {
      err << "numerical error: " << e.what() << "\n";
      return kExitNumerical;
    }
  }
  return kExitUsage;
}

}  // namespace subevo
