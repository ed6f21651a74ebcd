#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tailrisk/common.h"
#include "tailrisk/panel.h"

namespace tailrisk {

// Weight of firm i in the market return of month t, built from its dollar
// volume and realized volatility in month t-1.
struct MarketWeight {
    std::string firm_id;
    YearMonth month;  // the return month t
    double volume_usd = 0.0;
    double sigma = 0.0;
    double raw_weight = 0.0;
    double normalized_weight = 0.0;
};

struct RealizedVol {
    Value sigma;
    bool constant = false;  // missing because the series had zero variance
};

// Sample sd of the daily returns within one month; missing below min_obs.
RealizedVol realized_vol(std::span<const double> daily_returns, int min_obs = 5);

// V^(1/3) / sigma. Throws InputError for sigma <= 0 or negative volume.
double firm_weight(double volume_usd, double sigma);

// Weights for every (firm, t) with a non-missing return in t and positive
// volume / sigma observed in calendar month t-1. normalized_weight is filled
// over the firms eligible in t.
std::vector<MarketWeight> compute_market_weights(const PanelDataset& panel);

// sum(w_i r_i) / sum(w_i).
double weighted_return(std::span<const double> raw_weights, std::span<const double> returns);

struct MarketReturnOptions {
    int min_firms = 30;
};

struct MarketSeries {
    std::vector<YearMonth> months;
    std::vector<double> returns;
    std::vector<int> n_firms;
    std::vector<YearMonth> excluded_months;  // too few eligible firms
};

// Throws EstimationError when every month is excluded.
MarketSeries market_return(const PanelDataset& panel, const std::vector<MarketWeight>& weights,
                           const MarketReturnOptions& options = {});

enum class QuantileConvention {
    lower_empirical,  // ceil(level * T)-th order statistic
    linear,           // type-7 interpolation
};

std::string to_string(QuantileConvention c);
QuantileConvention parse_quantile_convention(const std::string& text);

struct RegimeSeries {
    std::vector<YearMonth> months;
    std::vector<double> market_return;
    std::vector<bool> stress;
    double cutoff = 0.0;
    double quantile_level = 0.15;
    QuantileConvention convention = QuantileConvention::lower_empirical;
    bool degenerate = false;  // every month ties at the cutoff

    std::size_t n_stress() const;
    std::optional<std::size_t> position(YearMonth m) const;
    std::optional<double> market_of(YearMonth m) const;
    std::optional<bool> stress_of(YearMonth m) const;
    std::vector<YearMonth> months_in(bool stress_state) const;
};

// Stress_t = 1{r_m,t <= cutoff}. Throws InputError for fewer than min_months
// observations or level outside (0, 0.5).
RegimeSeries classify_stress(const std::vector<YearMonth>& months, const std::vector<double>& market_returns,
                             double level = 0.15,
                             QuantileConvention convention = QuantileConvention::lower_empirical,
                             int min_months = 20);

struct HistogramBin {
    double lower = 0.0;
    double upper = 0.0;
    int count = 0;
};

struct RegimeSummary {
    double cutoff = 0.0;
    double level = 0.0;
    std::size_t n_months = 0;
    std::size_t n_stress = 0;
    double stress_share = 0.0;
    std::vector<std::pair<YearMonth, double>> stress_months;
    std::vector<HistogramBin> histogram;
};

RegimeSummary regime_summary(const RegimeSeries& regime, int bins = 20);

}  // namespace tailrisk
