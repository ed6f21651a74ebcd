#include "tailrisk/crash.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "tailrisk/design.h"
#include "tailrisk/stats.h"

namespace tailrisk {

std::string crash_column(double c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "crash_%03ld", std::lround(c * 100.0));
    return buf;
}

Column crash_indicator(const PanelDataset& panel, double c) {
    Column out;
    out.reserve(panel.size());
    for (const auto& row : panel.rows()) {
        if (!row.ret) {
            out.emplace_back();
        } else {
            out.emplace_back(*row.ret < -c ? 1.0 : 0.0);
        }
    }
    return out;
}

PanelDataset with_crash_indicator(const PanelDataset& panel, double c) {
    if (!(c > 0.0 && c < 1.0)) throw InputError("crash threshold must lie in (0, 1)");
    PanelDataset out = panel;
    out.set_derived(crash_column(c), crash_indicator(panel, c));
    return out;
}

const RegimeLogitCell* RegimeLogitTable::find(const std::string& spec, const std::string& regime,
                                              const std::string& sample) const {
    for (const auto& c : cells) {
        if (c.spec == spec && c.regime == regime && c.sample == sample) return &c;
    }
    return nullptr;
}

namespace {

// Rows of months classified in the given state, in panel order.
std::vector<std::size_t> regime_rows(const PanelDataset& panel, const RegimeSeries& regime, bool stress) {
    std::vector<std::size_t> out;
    const auto& rows = panel.rows();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto s = regime.stress_of(rows[i].month);
        if (s && *s == stress) out.push_back(i);
    }
    return out;
}

void fit_cell(const PanelDataset& panel, const std::vector<std::size_t>& rows, const DesignSpec& spec,
              RegimeLogitCell& cell) {
    try {
        const Design d = build_design(panel, rows, spec);
        cell.dropped_columns = d.dropped_columns;
        cell.n_missing_dropped = d.n_missing_dropped;
        cell.n_events = static_cast<std::size_t>(d.y.sum());
        LogitFit fit = fit_logit_clustered(d.X, d.y, d.names, d.cluster);
        if (fit.separated) {
            cell.error = "quasi-separation detected; coefficients diverging";
        } else if (!fit.converged) {
            cell.error = "logit did not converge";
        }
        cell.fit = std::move(fit);
    } catch (const std::exception& e) {
        cell.error = e.what();
    }
}

}  // namespace

RegimeLogitTable fit_regime_logits(const PanelDataset& panel, const RegimeSeries& regime, const CrashConfig& config,
                                   const CrashModelSpec& model, const std::vector<std::string>& specs, int threads) {
    const PanelDataset data = with_crash_indicator(panel, config.threshold);
    const std::string outcome = crash_column(config.threshold);
    if (!data.has_column(model.treatment)) throw InputError("unknown column: " + model.treatment);
    for (const auto& c : model.controls) {
        if (!data.has_column(c)) throw InputError("unknown column: " + c);
    }
    const bool want_a = std::find(specs.begin(), specs.end(), "A") != specs.end();
    const bool want_b = std::find(specs.begin(), specs.end(), "B") != specs.end();

    DesignSpec spec_a{outcome, {model.treatment}, true, model.sector_dummies};
    DesignSpec spec_b = spec_a;
    for (const auto& c : model.controls) spec_b.regressors.push_back(c);

    struct Task {
        RegimeLogitCell cell;
        std::vector<std::size_t> rows;
        DesignSpec spec;
    };
    std::vector<Task> tasks;
    auto cell = [&](const char* spec, const std::string& regime_label, const char* sample) {
        RegimeLogitCell c;
        c.spec = spec;
        c.regime = regime_label;
        c.sample = sample;
        c.threshold = config.threshold;
        return c;
    };
    for (bool stress : {true, false}) {
        const std::string label = stress ? "stress" : "nonstress";
        const auto rows = regime_rows(data, regime, stress);
        if (want_a) tasks.push_back({cell("A", label, "max"), rows, spec_a});
        if (want_b) tasks.push_back({cell("B", label, "max"), rows, spec_b});
        if (want_a && want_b) {
            // Spec A restricted to rows where every Spec B regressor is present.
            std::vector<std::size_t> common;
            try {
                common = build_design(data, rows, spec_b).rows;
            } catch (const std::exception&) {
            }
            tasks.push_back({cell("A", label, "common"), common, spec_a});
        }
    }

    parallel_for(tasks.size(), threads, [&](std::size_t k) { fit_cell(data, tasks[k].rows, tasks[k].spec, tasks[k].cell); });

    RegimeLogitTable table;
    table.threshold = config.threshold;
    table.treatment = model.treatment;
    for (auto& t : tasks) table.cells.push_back(std::move(t.cell));
    return table;
}

int quintile_of(double v, const std::array<double, 4>& breakpoints) {
    int q = 0;
    while (q < 4 && v > breakpoints[q]) ++q;
    return q;
}

QuintileGapReport quintile_gap(const PanelDataset& panel, const RegimeSeries& regime, const CrashConfig& config,
                               const std::string& treatment, const QuintileGapOptions& options) {
    if (!(config.threshold > 0.0 && config.threshold < 1.0)) throw InputError("crash threshold must lie in (0, 1)");
    if (!panel.has_column(treatment)) throw InputError("unknown column: " + treatment);
    const Column esg = panel.column(treatment);
    const auto& rows = panel.rows();

    struct Obs {
        std::size_t row;
        bool stress;
        bool crash;
        double esg;
    };
    std::vector<Obs> sample;
    std::set<double> distinct;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].ret || !esg[i]) continue;
        const auto s = regime.stress_of(rows[i].month);
        if (!s) continue;
        sample.push_back({i, *s, *rows[i].ret < -config.threshold, *esg[i]});
        distinct.insert(*esg[i]);
    }
    if (distinct.size() < 5) throw InputError("insufficient distinct ESG values for quintiles");

    QuintileGapReport rep;
    rep.threshold = config.threshold;
    std::vector<double> pooled;
    pooled.reserve(sample.size());
    for (const auto& o : sample) pooled.push_back(o.esg);
    std::sort(pooled.begin(), pooled.end());
    for (int k = 0; k < 4; ++k) rep.breakpoints[k] = percentile_sorted(pooled, 0.2 * (k + 1));

    // Per stress month: rows and crashes in each quintile.
    struct Cell {
        std::array<double, 5> n{};
        std::array<double, 5> crashes{};
    };
    std::map<int, Cell> by_month;
    std::size_t stress_crashes = 0;
    std::size_t calm_crashes = 0;
    for (const auto& o : sample) {
        if (o.stress) {
            ++rep.n_stress_obs;
            stress_crashes += o.crash;
            const int q = quintile_of(o.esg, rep.breakpoints);
            auto& c = by_month[rows[o.row].month.index()];
            c.n[q] += 1.0;
            c.crashes[q] += o.crash ? 1.0 : 0.0;
        } else {
            ++rep.n_nonstress_obs;
            calm_crashes += o.crash;
        }
    }
    if (rep.n_stress_obs == 0) throw EstimationError("no stress-month observations");
    rep.stress_rate = static_cast<double>(stress_crashes) / static_cast<double>(rep.n_stress_obs);
    rep.nonstress_rate =
        rep.n_nonstress_obs ? static_cast<double>(calm_crashes) / static_cast<double>(rep.n_nonstress_obs) : 0.0;

    auto gap_of = [&](const std::map<int, double>& weight, std::array<double, 5>* rates,
                      std::array<double, 5>* counts) -> std::optional<double> {
        std::array<double, 5> n{};
        std::array<double, 5> k{};
        for (const auto& [m, w] : weight) {
            auto it = by_month.find(m);
            if (it == by_month.end()) continue;
            for (int q = 0; q < 5; ++q) {
                n[q] += w * it->second.n[q];
                k[q] += w * it->second.crashes[q];
            }
        }
        if (rates) {
            for (int q = 0; q < 5; ++q) (*rates)[q] = n[q] > 0.0 ? k[q] / n[q] : 0.0;
        }
        if (counts) *counts = n;
        if (n[0] <= 0.0 || n[4] <= 0.0) return std::nullopt;
        return 100.0 * (k[0] / n[0] - k[4] / n[4]);
    };

    std::map<int, double> full;
    for (const auto& [m, c] : by_month) full[m] = 1.0;
    std::array<double, 5> counts{};
    const auto gap = gap_of(full, &rep.stress_quintile_rate, &counts);
    for (int q = 0; q < 5; ++q) rep.stress_quintile_n[q] = static_cast<std::size_t>(counts[q]);
    if (!gap) throw EstimationError("an extreme ESG quintile has no stress-month observations");
    rep.gap_pp = *gap;

    rep.n_boot = options.n_boot;
    if (options.n_boot > 0) {
        std::vector<double> draws;
        draws.reserve(options.n_boot);
        for (std::size_t r = 0; r < options.n_boot; ++r) {
            const auto replicate = draw_replicate(regime, options.seed, r);
            std::map<int, double> w;
            for (const auto& m : replicate.stress_months) w[m.index()] += 1.0;
            if (const auto g = gap_of(w, nullptr, nullptr)) {
                draws.push_back(*g);
            } else {
                ++rep.n_failed;
            }
        }
        if (!draws.empty()) rep.ci = percentile_ci(std::move(draws), options.level);
    }
    return rep;
}

std::vector<ThresholdSweepEntry> threshold_sweep(const PanelDataset& panel, const RegimeSeries& regime,
                                                 const std::vector<double>& grid, const CrashModelSpec& model,
                                                 const QuintileGapOptions& options, int threads) {
    std::vector<ThresholdSweepEntry> out;
    for (double c : grid) {
        ThresholdSweepEntry e;
        e.threshold = c;
        const Column flag = crash_indicator(panel, c);
        for (const auto& v : flag) e.n_events += v && *v == 1.0;
        try {
            e.descriptives = quintile_gap(panel, regime, CrashConfig{c}, model.treatment, options);
        } catch (const std::exception& ex) {
            e.descriptives_error = ex.what();
        }
        e.logits = fit_regime_logits(panel, regime, CrashConfig{c}, model, {"B"}, threads);
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace tailrisk
