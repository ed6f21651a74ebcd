#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "tailrisk/panel.h"
#include "tailrisk/regime.h"

namespace tailrisk {

struct PrepareOptions {
    double missing_threshold = 0.20;
    StandardizeOptions standardize;
    int min_firms = 30;
    double stress_level = 0.15;
    QuantileConvention convention = QuantileConvention::lower_empirical;
    int min_months = 20;
};

struct PreparedPanel {
    PanelDataset panel;
    MarketSeries market;
    RegimeSeries regime;
    std::vector<MissingRateEntry> missing_report;
    std::vector<TransformRecord> transforms;
    std::vector<std::string> controls;    // lagged, standardized control names
    std::vector<std::string> treatments;  // esg_lag1 and the pillar lags present
    std::size_t n_uncovered_rows = 0;     // rows whose month has no market return
};

// Controls -> missing-rate filter -> standardize -> lag (controls, esg,
// pillars) -> weighted market return -> stress flags -> excess returns.
// Rows in months without a market return (the first month, thin months) keep
// a missing excess return.
PreparedPanel prepare_panel(const PanelDataset& raw, const PrepareOptions& options = {});

nlohmann::ordered_json to_json(const std::vector<MissingRateEntry>& report);
nlohmann::ordered_json to_json(const std::vector<TransformRecord>& transforms);

}  // namespace tailrisk
