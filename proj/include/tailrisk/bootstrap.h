#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "tailrisk/panel.h"
#include "tailrisk/regime.h"

namespace tailrisk {

// One stratified month-block resample. Months are listed in draw order; a
// month drawn k times appears k times.
struct BootstrapReplicate {
    std::vector<YearMonth> stress_months;
    std::vector<YearMonth> nonstress_months;

    // Draw count keyed by YearMonth::index().
    std::map<int, int> multiplicity() const;
};

// Replicate r depends only on (seed, r). Throws InputError when either regime
// has no months.
BootstrapReplicate draw_replicate(const RegimeSeries& regime, std::uint64_t seed, std::size_t r);

std::vector<BootstrapReplicate> stratified_month_block_bootstrap(const RegimeSeries& regime, std::size_t n_boot,
                                                                 std::uint64_t seed);

// Panel rows making up the replicate dataset: every row of each drawn month,
// repeated once per draw.
std::vector<std::size_t> replicate_rows(const PanelDataset& panel, const BootstrapReplicate& replicate);

struct PercentileCi {
    double lower = 0.0;
    double median = 0.0;
    double upper = 0.0;
    std::size_t n = 0;

    bool excludes_zero() const { return lower > 0.0 || upper < 0.0; }
};

// Empirical (1-level)/2 and (1+level)/2 percentiles of the estimates, taken
// after sorting so the input order never matters. Throws EstimationError on
// an empty sample.
PercentileCi percentile_ci(std::vector<double> estimates, double level = 0.95);

}  // namespace tailrisk
