#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tailrisk/bootstrap.h"
#include "tailrisk/logit.h"
#include "tailrisk/panel.h"
#include "tailrisk/regime.h"

namespace tailrisk {

struct CrashConfig {
    double threshold = 0.20;
};

// "crash_020" for c = 0.20.
std::string crash_column(double c);

// 1 where ret < -c strictly, 0 otherwise, missing where ret is missing.
Column crash_indicator(const PanelDataset& panel, double c);

// Copy of the panel with crash_column(c) attached.
PanelDataset with_crash_indicator(const PanelDataset& panel, double c);

// Regressors shared by every crash-logit cell. Spec A uses only the
// treatment; Spec B adds the controls.
struct CrashModelSpec {
    std::string treatment = "esg_lag1";
    std::vector<std::string> controls;
    bool sector_dummies = true;
};

struct RegimeLogitCell {
    std::string spec;    // "A" or "B"
    std::string regime;  // "stress" or "nonstress"
    std::string sample;  // "max" or "common" (Spec A on the Spec B sample)
    double threshold = 0.0;
    std::optional<LogitFit> fit;
    std::string error;
    std::vector<std::string> dropped_columns;
    std::size_t n_missing_dropped = 0;
    std::size_t n_events = 0;

    bool ok() const { return fit.has_value() && fit->converged; }
};

struct RegimeLogitTable {
    double threshold = 0.0;
    std::string treatment;
    std::vector<RegimeLogitCell> cells;

    const RegimeLogitCell* find(const std::string& spec, const std::string& regime,
                                const std::string& sample = "max") const;
};

// Fits the crash logit separately on stress and non-stress months. Spec A is
// reported on its own maximal sample and on the Spec B sample. A failing cell
// carries its error message; the other cells are unaffected.
RegimeLogitTable fit_regime_logits(const PanelDataset& panel, const RegimeSeries& regime, const CrashConfig& config,
                                   const CrashModelSpec& model, const std::vector<std::string>& specs = {"A", "B"},
                                   int threads = 0);

struct QuintileGapOptions {
    std::size_t n_boot = 800;
    std::uint64_t seed = 0;
    double level = 0.95;
};

struct QuintileGapReport {
    double threshold = 0.0;
    std::array<double, 4> breakpoints{};
    std::size_t n_stress_obs = 0;
    std::size_t n_nonstress_obs = 0;
    double stress_rate = 0.0;  // fractions
    double nonstress_rate = 0.0;
    std::array<double, 5> stress_quintile_rate{};
    std::array<std::size_t, 5> stress_quintile_n{};
    double gap_pp = 0.0;  // (Q1 - Q5) stress crash rate, percentage points
    std::optional<PercentileCi> ci;
    std::size_t n_boot = 0;
    std::size_t n_failed = 0;
};

// Quintile of v given four ascending breakpoints: 0 for v <= b1, ..., 4 for
// v > b4.
int quintile_of(double v, const std::array<double, 4>& breakpoints);

// Descriptive crash rates by treatment quintile within stress months, with a
// month-block bootstrap CI on the Q1-Q5 gap. Quintile breakpoints come from
// the pooled (stress and non-stress) sample and stay fixed across
// replicates. Throws InputError when the treatment takes fewer than five
// distinct values.
QuintileGapReport quintile_gap(const PanelDataset& panel, const RegimeSeries& regime, const CrashConfig& config,
                               const std::string& treatment, const QuintileGapOptions& options = {});

struct ThresholdSweepEntry {
    double threshold = 0.0;
    std::size_t n_events = 0;
    std::optional<QuintileGapReport> descriptives;
    std::string descriptives_error;
    RegimeLogitTable logits;  // Spec B only
};

std::vector<ThresholdSweepEntry> threshold_sweep(const PanelDataset& panel, const RegimeSeries& regime,
                                                 const std::vector<double>& grid, const CrashModelSpec& model,
                                                 const QuintileGapOptions& options = {}, int threads = 0);

}  // namespace tailrisk
