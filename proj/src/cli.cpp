#include "tailrisk/cli.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "tailrisk/io.h"
#include "tailrisk/logit.h"
#include "tailrisk/regime.h"
#include "tailrisk/stats.h"
#include "tailrisk/synthlab.h"

namespace tailrisk {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void check_keys(const ordered_json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InputError("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw InputError("config: unknown key " + where + "." + key);
    }
}

Scope parse_scope(const std::string& s) {
    if (s == "per_month") return Scope::per_month;
    if (s == "pooled") return Scope::pooled;
    throw InputError("config: scope must be per_month or pooled, got " + s);
}

std::string scope_name(Scope s) { return s == Scope::per_month ? "per_month" : "pooled"; }

std::string p_stars(double p) {
    if (!(p < 0.10)) return "";
    if (p < 0.01) return "***";
    if (p < 0.05) return "**";
    return "*";
}

std::string num(double x) { return format_number(x); }

// Each stage draws from its own stream so adding a stage never shifts another.
std::uint64_t stage_seed(const RunConfig& c, const char* stage) {
    return derive_seed(c.require_seed(), {hash_string(stage)});
}

std::vector<Hyperparameters> grid_from_json(LearnerKind kind, const ordered_json& j, const std::string& where) {
    std::vector<Hyperparameters> grid;
    const ordered_json list = j.is_array() ? j : ordered_json::array({j});
    for (const auto& item : list) {
        if (kind == LearnerKind::random_forest) {
            check_keys(item, {"n_trees", "max_depth", "min_leaf", "feature_fraction", "bootstrap"}, where);
        } else {
            check_keys(item, {"n_rounds", "learning_rate", "max_depth", "min_leaf"}, where);
        }
        Hyperparameters h = hyperparameters_from_json(kind, item);
        validate(h);
        grid.push_back(h);
    }
    return grid;
}

ordered_json grid_to_json(const std::vector<Hyperparameters>& grid) {
    ordered_json a = ordered_json::array();
    for (const auto& h : grid) a.push_back(tailrisk::to_json(h));
    return a;
}

void write_csv(const fs::path& path, const CsvTable& t) { write_text(path, format_csv(t)); }

}  // namespace

// ---------------------------------------------------------------- config

RunConfig RunConfig::from_json(const ordered_json& j, const fs::path& config_dir) {
    RunConfig c;
    c.config_dir = config_dir;
    check_keys(j, {"panel", "output_dir", "seed", "threads", "prepare", "stress", "crash", "quantile", "dml",
                   "simulate"},
               "root");
    try {
        c.panel = j.value("panel", c.panel);
        c.output_dir = j.value("output_dir", c.output_dir);
        if (j.contains("seed")) {
            if (!j["seed"].is_number_unsigned()) throw InputError("config: seed must be a non-negative integer");
            c.seed = j["seed"].get<std::uint64_t>();
        }
        c.threads = j.value("threads", c.threads);

        if (j.contains("prepare")) {
            const auto& p = j["prepare"];
            check_keys(p, {"missing_threshold", "min_firms", "stress_level", "convention", "min_months",
                           "winsor_lower", "winsor_upper", "winsor_scope", "zscore_scope", "min_days"},
                       "prepare");
            c.prepare.missing_threshold = p.value("missing_threshold", c.prepare.missing_threshold);
            c.prepare.min_firms = p.value("min_firms", c.prepare.min_firms);
            c.prepare.stress_level = p.value("stress_level", c.prepare.stress_level);
            if (p.contains("convention")) c.prepare.convention = parse_quantile_convention(p["convention"].get<std::string>());
            c.prepare.min_months = p.value("min_months", c.prepare.min_months);
            c.prepare.standardize.lower_pct = p.value("winsor_lower", c.prepare.standardize.lower_pct);
            c.prepare.standardize.upper_pct = p.value("winsor_upper", c.prepare.standardize.upper_pct);
            if (p.contains("winsor_scope")) c.prepare.standardize.winsor_scope = parse_scope(p["winsor_scope"].get<std::string>());
            if (p.contains("zscore_scope")) c.prepare.standardize.zscore_scope = parse_scope(p["zscore_scope"].get<std::string>());
            c.min_days = p.value("min_days", c.min_days);
        }
        if (j.contains("stress")) {
            const auto& s = j["stress"];
            check_keys(s, {"histogram_bins"}, "stress");
            c.histogram_bins = s.value("histogram_bins", c.histogram_bins);
        }
        if (j.contains("crash")) {
            const auto& s = j["crash"];
            check_keys(s, {"thresholds", "headline_threshold", "n_boot"}, "crash");
            c.crash_thresholds = s.value("thresholds", c.crash_thresholds);
            c.headline_threshold = s.value("headline_threshold", c.headline_threshold);
            c.crash_boot = s.value("n_boot", c.crash_boot);
        }
        if (j.contains("quantile")) {
            const auto& s = j["quantile"];
            check_keys(s, {"taus", "n_boot", "ci_level"}, "quantile");
            c.tau_grid = s.value("taus", c.tau_grid);
            c.quantile_boot = s.value("n_boot", c.quantile_boot);
            c.ci_level = s.value("ci_level", c.ci_level);
        }
        if (j.contains("dml")) {
            const auto& s = j["dml"];
            check_keys(s, {"learners", "outcomes", "n_folds", "cv_folds", "lambda_count", "forest", "gbm", "pillars",
                           "interactions"},
                       "dml");
            c.dml_learners = s.value("learners", c.dml_learners);
            c.dml_outcomes = s.value("outcomes", c.dml_outcomes);
            c.dml_folds = s.value("n_folds", c.dml_folds);
            c.cv_folds = s.value("cv_folds", c.cv_folds);
            c.lambda_count = s.value("lambda_count", c.lambda_count);
            if (s.contains("forest")) c.forest_grid = grid_from_json(LearnerKind::random_forest, s["forest"], "dml.forest");
            if (s.contains("gbm")) c.gbm_grid = grid_from_json(LearnerKind::gbm, s["gbm"], "dml.gbm");
            c.dml_pillars = s.value("pillars", c.dml_pillars);
            c.dml_interactions = s.value("interactions", c.dml_interactions);
        }
        if (j.contains("simulate")) {
            const auto& s = j["simulate"];
            check_keys(s, {"spec"}, "simulate");
            c.simulate_spec = s.value("spec", c.simulate_spec);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("config: ") + e.what());
    }

    if (c.threads < 0) throw InputError("config: threads must be >= 0");
    if (c.min_days < 1) throw InputError("config: prepare.min_days must be positive");
    if (c.histogram_bins < 1) throw InputError("config: stress.histogram_bins must be positive");
    if (c.crash_thresholds.empty()) throw InputError("config: crash.thresholds is empty");
    for (double t : c.crash_thresholds) {
        if (!(t > 0.0 && t < 1.0)) throw InputError("config: crash thresholds must lie in (0, 1)");
    }
    if (!(c.headline_threshold > 0.0 && c.headline_threshold < 1.0)) {
        throw InputError("config: crash.headline_threshold must lie in (0, 1)");
    }
    if (c.crash_boot < 100) throw InputError("config: crash.n_boot must be at least 100");
    if (c.quantile_boot < 100) throw InputError("config: quantile.n_boot must be at least 100");
    if (!(c.ci_level > 0.0 && c.ci_level < 1.0)) throw InputError("config: quantile.ci_level must lie in (0, 1)");
    if (c.dml_learners.empty()) throw InputError("config: dml.learners is empty");
    for (const auto& l : c.dml_learners) parse_learner_kind(l);
    if (c.dml_outcomes.empty()) throw InputError("config: dml.outcomes is empty");
    if (c.dml_folds < 2) throw InputError("config: dml.n_folds must be at least 2");
    if (c.cv_folds < 2) throw InputError("config: dml.cv_folds must be at least 2");
    if (c.lambda_count < 1) throw InputError("config: dml.lambda_count must be positive");
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw InputError("config file not found: " + path.string());
    ordered_json j;
    try {
        j = ordered_json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw InputError("config: " + path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

ordered_json RunConfig::to_json() const {
    ordered_json j;
    j["panel"] = panel;
    j["output_dir"] = output_dir;
    if (seed) j["seed"] = *seed;
    j["threads"] = threads;
    j["prepare"] = {{"missing_threshold", prepare.missing_threshold},
                    {"min_firms", prepare.min_firms},
                    {"stress_level", prepare.stress_level},
                    {"convention", tailrisk::to_string(prepare.convention)},
                    {"min_months", prepare.min_months},
                    {"winsor_lower", prepare.standardize.lower_pct},
                    {"winsor_upper", prepare.standardize.upper_pct},
                    {"winsor_scope", scope_name(prepare.standardize.winsor_scope)},
                    {"zscore_scope", scope_name(prepare.standardize.zscore_scope)},
                    {"min_days", min_days}};
    j["stress"] = {{"histogram_bins", histogram_bins}};
    j["crash"] = {{"thresholds", crash_thresholds}, {"headline_threshold", headline_threshold}, {"n_boot", crash_boot}};
    j["quantile"] = {{"taus", tau_grid}, {"n_boot", quantile_boot}, {"ci_level", ci_level}};
    ordered_json d;
    d["learners"] = dml_learners;
    d["outcomes"] = dml_outcomes;
    d["n_folds"] = dml_folds;
    d["cv_folds"] = cv_folds;
    d["lambda_count"] = lambda_count;
    d["forest"] = grid_to_json(forest_grid);
    d["gbm"] = grid_to_json(gbm_grid);
    d["pillars"] = dml_pillars;
    d["interactions"] = dml_interactions;
    j["dml"] = d;
    j["simulate"] = {{"spec", simulate_spec}};
    return j;
}

fs::path RunConfig::resolve(const std::string& p) const {
    const fs::path path(p);
    if (path.is_absolute() || config_dir.empty()) return path;
    return config_dir / path;
}

std::uint64_t RunConfig::require_seed() const {
    if (!seed) throw InputError("config: seed is required");
    return *seed;
}

void RunConfig::check_paths(bool need_panel, bool need_simulate_spec) const {
    if (need_panel) {
        if (panel.empty()) throw InputError("config: panel path is required");
        if (!fs::is_regular_file(resolve(panel))) throw InputError("panel file not found: " + resolve(panel).string());
    }
    if (need_simulate_spec) {
        if (simulate_spec.empty()) throw InputError("config: simulate.spec is required");
        if (!fs::is_regular_file(resolve(simulate_spec))) {
            throw InputError("simulation spec not found: " + resolve(simulate_spec).string());
        }
    }
}

std::vector<LearnerSpec> RunConfig::learner_specs() const {
    std::vector<LearnerSpec> out;
    for (const auto& name : dml_learners) {
        LearnerSpec s;
        s.kind = parse_learner_kind(name);
        s.cv_folds = cv_folds;
        s.lambda_count = lambda_count;
        if (s.kind == LearnerKind::random_forest) s.grid = forest_grid;
        if (s.kind == LearnerKind::gbm) s.grid = gbm_grid;
        out.push_back(std::move(s));
    }
    return out;
}

LoadedPanel load_and_prepare(const RunConfig& config) {
    config.require_seed();
    config.check_paths(true, false);
    LoadedPanel out;
    const PanelDataset raw = read_panel_csv(config.resolve(config.panel), &out.read, config.min_days);
    out.prepared = prepare_panel(raw, config.prepare);
    return out;
}

// ---------------------------------------------------------------- stress

std::vector<std::string> cmd_stress(const RunConfig& config, const LoadedPanel& data, const fs::path& out) {
    const PreparedPanel& p = data.prepared;
    const RegimeSeries& regime = p.regime;

    CsvTable series;
    series.header = {"month", "market_return", "n_firms", "stress"};
    for (std::size_t t = 0; t < regime.months.size(); ++t) {
        int n_firms = 0;
        for (std::size_t s = 0; s < p.market.months.size(); ++s) {
            if (p.market.months[s] == regime.months[t]) n_firms = p.market.n_firms[s];
        }
        series.rows.push_back({regime.months[t].str(), num(regime.market_return[t]), std::to_string(n_firms),
                               regime.stress[t] ? "1" : "0"});
    }
    write_csv(out / "regime.csv", series);

    const RegimeSummary s = regime_summary(regime, config.histogram_bins);
    CsvTable hist;
    hist.header = {"lower", "upper", "count"};
    for (const auto& b : s.histogram) hist.rows.push_back({num(b.lower), num(b.upper), std::to_string(b.count)});
    write_csv(out / "regime_histogram.csv", hist);

    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["cutoff"] = s.cutoff;
    j["level"] = s.level;
    j["convention"] = to_string(regime.convention);
    j["n_months"] = s.n_months;
    j["n_stress"] = s.n_stress;
    j["stress_share"] = s.stress_share;
    j["degenerate"] = regime.degenerate;
    ordered_json sm = ordered_json::array();
    for (const auto& [m, r] : s.stress_months) sm.push_back({{"month", m.str()}, {"market_return", r}});
    j["stress_months"] = sm;
    ordered_json excluded = ordered_json::array();
    for (const auto& m : p.market.excluded_months) excluded.push_back(m.str());
    j["excluded_months"] = excluded;
    write_json(out / "regime_summary.json", j);

    ordered_json prep;
    prep["schema_version"] = kSchemaVersion;
    prep["input_mode"] = data.read.mode;
    prep["n_input_rows"] = data.read.n_input_rows;
    prep["read_diagnostics"] = data.read.diagnostics;
    prep["n_rows"] = p.panel.size();
    prep["n_uncovered_rows"] = p.n_uncovered_rows;
    prep["controls"] = p.controls;
    prep["treatments"] = p.treatments;
    prep["missing_rates"] = to_json(p.missing_report);
    prep["transforms"] = to_json(p.transforms);
    write_json(out / "preparation.json", prep);

    return {"regime.csv", "regime_histogram.csv", "regime_summary.json", "preparation.json"};
}

// ---------------------------------------------------------------- crash

namespace {

ordered_json logit_cell_json(const RegimeLogitCell& c, const std::string& treatment) {
    ordered_json j;
    j["spec"] = c.spec;
    j["regime"] = c.regime;
    j["sample"] = c.sample;
    j["threshold"] = c.threshold;
    j["status"] = c.ok() ? "ok" : "failed";
    j["error"] = c.error;
    j["n_events"] = c.n_events;
    j["n_missing_dropped"] = c.n_missing_dropped;
    j["dropped_columns"] = c.dropped_columns;
    if (!c.fit) return j;
    const LogitFit& f = *c.fit;
    j["n_obs"] = f.n_obs;
    j["n_clusters"] = f.n_clusters;
    j["converged"] = f.converged;
    j["separated"] = f.separated;
    j["iterations"] = f.iterations;
    j["log_likelihood"] = f.log_likelihood;
    j["max_abs_score"] = f.max_abs_score;
    j["small_sample_factor"] = f.small_sample_factor;
    if (!c.ok()) return j;
    ordered_json terms = ordered_json::array();
    for (std::size_t i = 0; i < f.names.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        terms.push_back({{"name", f.names[i]},
                         {"coef", f.coef(k)},
                         {"se", f.se(k)},
                         {"z", f.z(k)},
                         {"p", f.p(k)},
                         {"stars", p_stars(f.p(k))}});
    }
    j["terms"] = terms;
    const auto t = f.index_of(treatment);
    if (t >= 0) {
        const auto ors = odds_ratios(f.coef(t), {1.0, 5.0});
        j["treatment"] = {{"name", treatment},
                          {"coef", f.coef(t)},
                          {"se", f.se(t)},
                          {"p", f.p(t)},
                          {"stars", p_stars(f.p(t))},
                          {"odds_ratio_1", ors[0]},
                          {"odds_ratio_5", ors[1]}};
    }
    return j;
}

ordered_json gap_json(const QuintileGapReport& g) {
    ordered_json j;
    j["breakpoints"] = g.breakpoints;
    j["n_stress_obs"] = g.n_stress_obs;
    j["n_nonstress_obs"] = g.n_nonstress_obs;
    j["stress_rate_pct"] = 100.0 * g.stress_rate;
    j["nonstress_rate_pct"] = 100.0 * g.nonstress_rate;
    ordered_json q = ordered_json::array();
    for (int k = 0; k < 5; ++k) {
        q.push_back({{"quintile", k + 1},
                     {"n", g.stress_quintile_n[static_cast<std::size_t>(k)]},
                     {"crash_rate_pct", 100.0 * g.stress_quintile_rate[static_cast<std::size_t>(k)]}});
    }
    j["stress_quintiles"] = q;
    j["gap_pp"] = g.gap_pp;
    if (g.ci) j["gap_ci"] = {{"lower", g.ci->lower}, {"median", g.ci->median}, {"upper", g.ci->upper}};
    j["n_boot"] = g.n_boot;
    j["n_failed"] = g.n_failed;
    return j;
}

void log_failed_cells(const RegimeLogitTable& t, std::ostream& log) {
    for (const auto& c : t.cells) {
        if (c.ok()) continue;
        log << "warning: crash logit c=" << num(c.threshold) << " spec " << c.spec << " " << c.regime << " ("
            << c.sample << ") failed: " << (c.error.empty() ? "not converged" : c.error) << "\n";
    }
}

}  // namespace

std::vector<std::string> cmd_crash(const RunConfig& config, const LoadedPanel& data, const fs::path& out,
                                   std::ostream& log) {
    const PreparedPanel& p = data.prepared;
    CrashModelSpec model;
    model.controls = p.controls;
    const int threads = config.threads;

    const RegimeLogitTable headline =
        fit_regime_logits(p.panel, p.regime, CrashConfig{config.headline_threshold}, model, {"A", "B"}, threads);
    log_failed_cells(headline, log);

    QuintileGapOptions gap;
    gap.n_boot = config.crash_boot;
    gap.seed = stage_seed(config, "crash");
    gap.level = config.ci_level;
    const auto sweep = threshold_sweep(p.panel, p.regime, config.crash_thresholds, model, gap, threads);

    CsvTable logits;
    logits.header = {"threshold", "spec", "regime", "sample", "term", "coef", "se", "z", "p", "stars",
                     "odds_ratio_1", "odds_ratio_5", "n_obs", "n_events", "n_clusters", "status"};
    auto add_cells = [&](const RegimeLogitTable& t) {
        for (const auto& c : t.cells) {
            const std::string status = c.ok() ? "ok" : "failed";
            if (!c.ok()) {
                logits.rows.push_back({num(c.threshold), c.spec, c.regime, c.sample, "", "", "", "", "", "", "", "",
                                       c.fit ? std::to_string(c.fit->n_obs) : "", std::to_string(c.n_events), "",
                                       status});
                continue;
            }
            const LogitFit& f = *c.fit;
            for (std::size_t i = 0; i < f.names.size(); ++i) {
                const auto k = static_cast<Eigen::Index>(i);
                std::string or1, or5;
                if (f.names[i] == model.treatment) {
                    const auto ors = odds_ratios(f.coef(k), {1.0, 5.0});
                    or1 = num(ors[0]);
                    or5 = num(ors[1]);
                }
                logits.rows.push_back({num(c.threshold), c.spec, c.regime, c.sample, f.names[i], num(f.coef(k)),
                                       num(f.se(k)), num(f.z(k)), num(f.p(k)), p_stars(f.p(k)), or1, or5,
                                       std::to_string(f.n_obs), std::to_string(c.n_events),
                                       std::to_string(f.n_clusters), status});
            }
        }
    };
    add_cells(headline);
    write_csv(out / "crash_logits.csv", logits);

    CsvTable sweep_csv;
    sweep_csv.header = {"threshold", "n_events", "stress_rate_pct", "nonstress_rate_pct", "gap_pp", "gap_ci_lower",
                        "gap_ci_upper", "stress_coef", "stress_se", "stress_p", "stress_stars", "nonstress_coef",
                        "nonstress_se", "nonstress_p", "nonstress_stars"};
    CsvTable quint;
    quint.header = {"threshold", "quintile", "n", "crash_rate_pct"};
    ordered_json sections = ordered_json::array();
    for (const auto& e : sweep) {
        log_failed_cells(e.logits, log);
        if (!e.descriptives) log << "warning: quintile gap c=" << num(e.threshold) << " failed: " << e.descriptives_error << "\n";
        std::vector<std::string> row{num(e.threshold), std::to_string(e.n_events)};
        if (e.descriptives) {
            const auto& g = *e.descriptives;
            row.push_back(num(100.0 * g.stress_rate));
            row.push_back(num(100.0 * g.nonstress_rate));
            row.push_back(num(g.gap_pp));
            row.push_back(g.ci ? num(g.ci->lower) : "");
            row.push_back(g.ci ? num(g.ci->upper) : "");
            for (int k = 0; k < 5; ++k) {
                quint.rows.push_back({num(e.threshold), std::to_string(k + 1),
                                      std::to_string(g.stress_quintile_n[static_cast<std::size_t>(k)]),
                                      num(100.0 * g.stress_quintile_rate[static_cast<std::size_t>(k)])});
            }
        } else {
            row.insert(row.end(), 5, "");
        }
        for (const char* reg : {"stress", "nonstress"}) {
            const RegimeLogitCell* c = e.logits.find("B", reg);
            if (c && c->ok()) {
                const auto k = c->fit->index_of(model.treatment);
                row.push_back(num(c->fit->coef(k)));
                row.push_back(num(c->fit->se(k)));
                row.push_back(num(c->fit->p(k)));
                row.push_back(p_stars(c->fit->p(k)));
            } else {
                row.insert(row.end(), 4, "");
            }
        }
        sweep_csv.rows.push_back(std::move(row));

        ordered_json s;
        s["threshold"] = e.threshold;
        s["n_events"] = e.n_events;
        if (e.descriptives) {
            s["descriptives"] = gap_json(*e.descriptives);
        } else {
            s["descriptives_error"] = e.descriptives_error;
        }
        ordered_json cells = ordered_json::array();
        for (const auto& c : e.logits.cells) cells.push_back(logit_cell_json(c, model.treatment));
        s["logits"] = cells;
        sections.push_back(s);
    }
    write_csv(out / "crash_thresholds.csv", sweep_csv);
    write_csv(out / "quintile_gap.csv", quint);

    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["treatment"] = model.treatment;
    j["controls"] = model.controls;
    j["headline"] = {{"threshold", headline.threshold}, {"cells", ordered_json::array()}};
    for (const auto& c : headline.cells) j["headline"]["cells"].push_back(logit_cell_json(c, model.treatment));
    j["bootstrap"] = {{"n_boot", gap.n_boot}, {"seed", gap.seed}, {"level", gap.level}};
    j["thresholds"] = sections;
    write_json(out / "crash.json", j);
    return {"crash_logits.csv", "crash_thresholds.csv", "quintile_gap.csv", "crash.json"};
}

// ---------------------------------------------------------------- quantile

std::vector<std::string> cmd_quantile(const RunConfig& config, const LoadedPanel& data, const fs::path& out) {
    const PreparedPanel& p = data.prepared;
    QuantileSpec spec;
    spec.tau_grid = config.tau_grid;
    spec.n_boot = config.quantile_boot;
    spec.seed = stage_seed(config, "quantile");
    spec.ci_level = config.ci_level;
    QuantileModelSpec model;
    model.controls = p.controls;
    const QuantileTable t = quantile_table(p.panel, p.regime, spec, model, config.threads);

    CsvTable csv;
    csv.header = {"tau", "quantity", "estimate", "ci_lower", "ci_upper", "star", "n_failed"};
    ordered_json rows = ordered_json::array();
    std::size_t failed_total = 0;
    for (const auto& r : t.rows) {
        failed_total += r.n_failed;
        ordered_json jr;
        jr["tau"] = r.tau;
        jr["n_failed"] = r.n_failed;
        ordered_json quantities;
        const std::pair<const char*, const QuantityEstimate*> items[] = {{"stress", &r.stress},
                                                                         {"esg_nonstress", &r.esg_nonstress},
                                                                         {"interaction", &r.interaction},
                                                                         {"esg_stress_slope", &r.esg_stress_slope}};
        for (const auto& [name, q] : items) {
            csv.rows.push_back({num(r.tau), name, num(q->point), q->ci ? num(q->ci->lower) : "",
                                q->ci ? num(q->ci->upper) : "", q->stars(), std::to_string(r.n_failed)});
            ordered_json jq{{"estimate", q->point}};
            if (q->ci) {
                jq["ci_lower"] = q->ci->lower;
                jq["ci_median"] = q->ci->median;
                jq["ci_upper"] = q->ci->upper;
                jq["n_replicates"] = q->ci->n;
            }
            jq["star"] = q->stars();
            quantities[name] = jq;
        }
        jr["quantities"] = quantities;
        ordered_json coef;
        for (std::size_t i = 0; i < r.fit.names.size(); ++i) coef[r.fit.names[i]] = r.fit.coef(static_cast<Eigen::Index>(i));
        jr["coefficients"] = coef;
        jr["objective"] = r.fit.objective;
        jr["solver"] = {{"optimal", r.fit.info.optimal},
                        {"newton_iterations", r.fit.info.newton_iterations},
                        {"pivots", r.fit.info.pivots},
                        {"max_violation", r.fit.info.max_violation}};
        rows.push_back(jr);
    }
    write_csv(out / "quantile_table.csv", csv);

    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["outcome"] = model.outcome;
    j["treatment"] = model.treatment;
    j["names"] = t.names;
    j["dropped_columns"] = t.dropped_columns;
    j["n_obs"] = t.n_obs;
    j["n_months"] = t.n_months;
    j["bootstrap"] = {{"n_boot", t.n_boot}, {"seed", t.seed}, {"level", spec.ci_level}, {"n_failed", failed_total}};
    j["failure_log"] = t.failure_log;
    j["rows"] = rows;
    write_json(out / "quantile.json", j);
    return {"quantile_table.csv", "quantile.json"};
}

// ---------------------------------------------------------------- dml

namespace {

ordered_json dml_cell_json(const DmlCell& c) {
    ordered_json j;
    j["regime"] = c.regime;
    j["outcome"] = c.outcome;
    j["treatment"] = c.treatment;
    j["treatment_label"] = c.treatment_label;
    j["learner"] = c.learner;
    j["status"] = c.estimate ? "ok" : "failed";
    j["error"] = c.error;
    if (!c.estimate) return j;
    const DmlEstimate& e = *c.estimate;
    j["beta"] = e.beta;
    j["se"] = e.se;
    j["z"] = e.z;
    j["p"] = e.p;
    j["stars"] = c.stars();
    j["ci_lower"] = e.beta - 1.959963984540054 * e.se;
    j["ci_upper"] = e.beta + 1.959963984540054 * e.se;
    j["n_obs"] = e.n_obs;
    j["n_clusters"] = e.n_clusters;
    j["n_excluded"] = e.n_excluded;
    j["small_sample_factor"] = e.small_sample_factor;
    j["residuals"] = {{"mean_d", e.mean_d_res}, {"mean_y", e.mean_y_res}, {"sum_d_sq", e.sum_d_res_sq}};
    j["orthogonality"] = {{"max_abs_corr_dres_controls", e.max_abs_corr_dres_w},
                          {"corr_final_resid_dres", e.corr_final_resid_dres}};
    ordered_json folds = ordered_json::array();
    for (const auto& f : e.folds) {
        folds.push_back({{"fold", f.fold},
                         {"n_train", f.n_train},
                         {"n_test", f.n_test},
                         {"n_test_months", f.n_test_months},
                         {"outcome_mse", f.outcome_mse},
                         {"treatment_mse", f.treatment_mse},
                         {"outcome_params", tailrisk::to_json(f.outcome_params)},
                         {"treatment_params", tailrisk::to_json(f.treatment_params)}});
    }
    j["folds"] = folds;
    return j;
}

CsvTable dml_csv(const std::vector<DmlCell>& cells) {
    CsvTable t;
    t.header = {"regime", "outcome", "treatment", "treatment_label", "learner", "beta", "se", "z", "p", "stars",
                "ci_lower", "ci_upper", "n_obs", "n_clusters", "status", "error"};
    for (const auto& c : cells) {
        if (!c.estimate) {
            t.rows.push_back({c.regime, c.outcome, c.treatment, c.treatment_label, c.learner, "", "", "", "", "", "",
                              "", "", "", "failed", c.error});
            continue;
        }
        const DmlEstimate& e = *c.estimate;
        t.rows.push_back({c.regime, c.outcome, c.treatment, c.treatment_label, c.learner, num(e.beta), num(e.se),
                          num(e.z), num(e.p), c.stars(), num(e.beta - 1.959963984540054 * e.se),
                          num(e.beta + 1.959963984540054 * e.se), std::to_string(e.n_obs),
                          std::to_string(e.n_clusters), "ok", ""});
    }
    return t;
}

}  // namespace

std::vector<std::string> cmd_dml(const RunConfig& config, const LoadedPanel& data, const fs::path& out,
                                 std::ostream& log) {
    const PreparedPanel& p = data.prepared;
    DmlMatrixConfig mc;
    mc.outcomes = config.dml_outcomes;
    mc.learners = config.learner_specs();
    mc.n_folds = config.dml_folds;
    mc.seed = stage_seed(config, "dml");
    mc.controls = p.controls;
    mc.interactions = config.dml_interactions;

    const auto cells = dml_matrix(p.panel, p.regime, mc, config.threads);
    for (const auto& c : cells) {
        if (!c.estimate) {
            log << "warning: dml " << c.regime << "/" << c.outcome << "/" << c.learner << " failed: " << c.error << "\n";
        }
    }
    write_csv(out / "dml_table.csv", dml_csv(cells));
    std::vector<std::string> files{"dml_table.csv"};

    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["seed"] = mc.seed;
    j["n_folds"] = mc.n_folds;
    j["controls"] = mc.controls;
    j["cells"] = ordered_json::array();
    for (const auto& c : cells) j["cells"].push_back(dml_cell_json(c));
    if (config.dml_pillars) {
        const auto pillars = pillar_matrix(p.panel, p.regime, mc, default_pillars(), config.threads);
        for (const auto& c : pillars) {
            if (!c.estimate) {
                log << "warning: dml pillar " << c.treatment_label << " " << c.regime << "/" << c.outcome
                    << " failed: " << c.error << "\n";
            }
        }
        write_csv(out / "dml_pillars.csv", dml_csv(pillars));
        files.push_back("dml_pillars.csv");
        j["pillars"] = ordered_json::array();
        for (const auto& c : pillars) j["pillars"].push_back(dml_cell_json(c));
    }
    write_json(out / "dml.json", j);
    files.push_back("dml.json");
    return files;
}

// ---------------------------------------------------------------- simulate

std::vector<std::string> cmd_simulate(const RunConfig& config, const fs::path& out,
                                      const std::optional<fs::path>& panel_out, std::ostream& log) {
    config.require_seed();
    config.check_paths(false, true);
    const ordered_json spec = read_json(config.resolve(config.simulate_spec));
    check_keys(spec, {"dgp", "estimators", "replications"}, "simulation spec");
    if (!spec.contains("dgp")) throw InputError("simulation spec: dgp is required");
    DgpSpec dgp = DgpSpec::from_json(spec["dgp"]);
    if (!spec["dgp"].contains("seed")) dgp.seed = config.require_seed();

    std::vector<std::string> files;
    if (panel_out) {
        const GeneratedPanel g = generate_panel(dgp);
        write_text(*panel_out, format_csv(panel_to_csv(g.panel)));
        fs::path truth = *panel_out;
        truth.replace_extension(".truth.json");
        ordered_json tj;
        tj["schema_version"] = kSchemaVersion;
        tj["dgp"] = dgp.to_json();
        tj["truth"] = g.truth.to_json();
        write_json(truth, tj);
        log << "simulate: wrote " << panel_out->string() << " (" << g.panel.size() << " rows)\n";
    }
    if (!spec.contains("replications")) {
        if (!panel_out) throw InputError("simulation spec: replications is required");
        return files;
    }
    int R = 0;
    try {
        R = spec["replications"].get<int>();
    } catch (const nlohmann::json::exception&) {
        throw InputError("simulation spec: replications must be an integer");
    }
    if (R < 100) throw InputError("replications must be at least 100, got " + std::to_string(R));
    std::vector<EstimatorDescriptor> estimators;
    if (spec.contains("estimators")) {
        if (!spec["estimators"].is_array() || spec["estimators"].empty()) {
            throw InputError("simulation spec: estimators must be a non-empty array");
        }
        for (const auto& e : spec["estimators"]) estimators.push_back(EstimatorDescriptor::from_json(e));
    } else {
        estimators.emplace_back();
    }

    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["dgp"] = dgp.to_json();
    j["replications"] = R;
    j["results"] = ordered_json::array();
    for (const auto& est : estimators) {
        log << "simulate: " << est.name << " x " << R << " replications\n";
        const SimResult r = monte_carlo(dgp, est, R, config.threads);
        if (r.n_failed > 0) log << "warning: " << r.n_failed << " of " << R << " replications failed\n";
        j["results"].push_back({{"estimator", est.to_json()}, {"result", r.to_json()}});
    }
    write_json(out / "sim_result.json", j);
    files.push_back("sim_result.json");
    return files;
}

// ---------------------------------------------------------------- manifest

ordered_json build_manifest(const fs::path& out, const std::string& command, const std::string& status,
                            const std::string& failed_stage) {
    std::vector<std::pair<std::string, fs::path>> files;
    for (const auto& entry : fs::recursive_directory_iterator(out)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), out).generic_string();
        if (rel == "manifest.json") continue;
        files.emplace_back(rel, entry.path());
    }
    std::sort(files.begin(), files.end());
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["command"] = command;
    j["status"] = status;
    if (!failed_stage.empty()) j["failed_stage"] = failed_stage;
    ordered_json list = ordered_json::array();
    std::string joined;
    for (const auto& [rel, path] : files) {
        const std::string bytes = read_text(path);
        const std::string h = sha256_hex(bytes);
        list.push_back({{"path", rel}, {"bytes", bytes.size()}, {"sha256", h}});
        joined += rel + " " + h + "\n";
    }
    j["artifacts"] = list;
    j["tree_sha256"] = sha256_hex(joined);
    return j;
}

// ---------------------------------------------------------------- front end

namespace {

struct CommonOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string panel_out;
};

void add_common(CLI::App* sub, CommonOptions& o) {
    sub->add_option("-c,--config", o.config, "run configuration (JSON)")->required();
    sub->add_option("-o,--out", o.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", o.seed, "base seed (overrides the config)");
    sub->add_option("--threads", o.threads, "worker threads; 0 uses every core");
}

// The echoed config leaves out where the run wrote and how many threads it
// used; neither changes any result.
void write_effective_config(const RunConfig& c, const fs::path& out) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    ordered_json cfg = c.to_json();
    cfg.erase("output_dir");
    cfg.erase("threads");
    j["config"] = cfg;
    write_json(out / "config.json", j);
}

int run_command(const std::string& command, const CommonOptions& o, std::ostream& err) {
    RunConfig config = RunConfig::load(o.config);
    if (o.seed) config.seed = *o.seed;
    if (o.threads) {
        if (*o.threads < 0) throw InputError("--threads must be >= 0");
        config.threads = *o.threads;
    }
    config.require_seed();
    const fs::path out = o.out.empty() ? config.resolve(config.output_dir) : fs::path(o.out);
    if (command == "simulate") {
        config.check_paths(false, true);
    } else {
        config.check_paths(true, false);
    }
    fs::create_directories(out);
    write_effective_config(config, out);

    if (command == "simulate") {
        const std::optional<fs::path> panel_out =
            o.panel_out.empty() ? std::nullopt : std::optional<fs::path>(fs::path(o.panel_out));
        cmd_simulate(config, out, panel_out, err);
        write_json(out / "manifest.json", build_manifest(out, command, "ok"));
        return 0;
    }

    const LoadedPanel data = load_and_prepare(config);
    err << command << ": " << data.prepared.panel.size() << " rows, " << data.prepared.regime.n_stress() << " of "
        << data.prepared.regime.months.size() << " months flagged as stress\n";

    const std::vector<std::string> stages =
        command == "pipeline" ? std::vector<std::string>{"stress", "crash", "quantile", "dml"}
                              : std::vector<std::string>{command};
    for (const auto& stage : stages) {
        try {
            err << "[" << stage << "]\n";
            if (stage == "stress") cmd_stress(config, data, out);
            if (stage == "crash") cmd_crash(config, data, out, err);
            if (stage == "quantile") cmd_quantile(config, data, out);
            if (stage == "dml") cmd_dml(config, data, out, err);
        } catch (...) {
            write_json(out / "manifest.json", build_manifest(out, command, "failed", stage));
            throw;
        }
    }
    write_json(out / "manifest.json", build_manifest(out, command, "ok"));
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Regime-dependent tail risk estimation"};
    app.require_subcommand(1);
    CommonOptions o;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"stress", "market return series and stress flags"},
        {"crash", "crash logits, quintile gap and threshold sweep"},
        {"quantile", "quantile regressions with month-block bootstrap intervals"},
        {"dml", "double machine learning matrix and pillar run"},
        {"simulate", "Monte Carlo study from a simulation spec"},
        {"pipeline", "stress, crash, quantile and dml in order"}};
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub, o);
        if (name == "simulate") sub->add_option("--panel-out", o.panel_out, "also write one generated panel (CSV)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run_command(command, o, err);
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const EstimationError& e) {
        err << "estimation failed: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "estimation failed: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace tailrisk
