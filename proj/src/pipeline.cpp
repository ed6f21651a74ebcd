#include "tailrisk/pipeline.h"

#include "tailrisk/common.h"

namespace tailrisk {

PreparedPanel prepare_panel(const PanelDataset& raw, const PrepareOptions& options) {
    PreparedPanel out;
    FilterResult filtered = filter_by_missing_rate(derive_controls(raw), options.missing_threshold);
    out.missing_report = std::move(filtered.report);
    StandardizeResult standardized = standardize_controls(filtered.panel, options.standardize);
    out.transforms = std::move(standardized.transforms);
    PanelDataset panel = std::move(standardized.panel);

    std::vector<std::string> to_lag = panel.control_columns();
    for (const auto& c : to_lag) out.controls.push_back(lagged_name(c, 1));
    for (const std::string t : {"esg", "e_score", "s_score", "g_score"}) {
        if (panel.has_column(t)) {
            to_lag.push_back(t);
            out.treatments.push_back(lagged_name(t, 1));
        }
    }
    panel = lag_columns(panel, to_lag, 1);

    out.market = market_return(panel, compute_market_weights(panel), MarketReturnOptions{options.min_firms});
    out.regime = classify_stress(out.market.months, out.market.returns, options.stress_level, options.convention,
                                 options.min_months);
    out.panel = compute_excess_returns(panel, out.regime, true);
    for (const auto& row : out.panel.rows()) {
        if (!out.regime.position(row.month)) ++out.n_uncovered_rows;
    }
    return out;
}

nlohmann::ordered_json to_json(const std::vector<MissingRateEntry>& report) {
    auto j = nlohmann::ordered_json::array();
    for (const auto& e : report) {
        j.push_back({{"column", e.column}, {"missing_rate", e.missing_rate}, {"kept", e.kept}});
    }
    return j;
}

nlohmann::ordered_json to_json(const std::vector<TransformRecord>& transforms) {
    auto j = nlohmann::ordered_json::array();
    for (const auto& t : transforms) {
        j.push_back({{"column", t.column},
                     {"center", t.center},
                     {"scale", t.scale},
                     {"n_clamped", t.n_clamped},
                     {"degenerate", t.degenerate}});
    }
    return j;
}

}  // namespace tailrisk
