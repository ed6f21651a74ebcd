#include "tailrisk/regime.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tailrisk/stats.h"

namespace tailrisk {

RealizedVol realized_vol(std::span<const double> daily_returns, int min_obs) {
    RealizedVol out;
    if (static_cast<int>(daily_returns.size()) < min_obs || daily_returns.size() < 2) return out;
    // Exact comparison: the computed sd of a constant series can be a rounding
    // residue rather than zero.
    const bool flat = std::all_of(daily_returns.begin(), daily_returns.end(),
                                  [&](double v) { return v == daily_returns.front(); });
    const double sd = flat ? 0.0 : sample_sd(daily_returns);
    if (!(sd > 0.0)) {
        out.constant = true;
        return out;
    }
    out.sigma = sd;
    return out;
}

double firm_weight(double volume_usd, double sigma) {
    if (!(sigma > 0.0)) throw InputError("volatility must be positive");
    if (volume_usd < 0.0) throw InputError("volume must be non-negative");
    return std::cbrt(volume_usd) / sigma;
}

std::vector<MarketWeight> compute_market_weights(const PanelDataset& panel) {
    std::vector<MarketWeight> out;
    const auto& rows = panel.rows();
    for (const auto& row : rows) {
        if (!row.ret) continue;
        const auto prev = panel.find(row.firm_id, row.month.plus(-1));
        if (!prev) continue;
        const auto& p = rows[*prev];
        if (!p.volume_usd || !p.sigma || !(*p.sigma > 0.0)) continue;
        MarketWeight w;
        w.firm_id = row.firm_id;
        w.month = row.month;
        w.volume_usd = *p.volume_usd;
        w.sigma = *p.sigma;
        w.raw_weight = firm_weight(w.volume_usd, w.sigma);
        out.push_back(w);
    }
    std::map<int, double> totals;
    for (const auto& w : out) totals[w.month.index()] += w.raw_weight;
    for (auto& w : out) {
        const double t = totals[w.month.index()];
        w.normalized_weight = t > 0.0 ? w.raw_weight / t : 0.0;
    }
    return out;
}

double weighted_return(std::span<const double> raw_weights, std::span<const double> returns) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < raw_weights.size(); ++i) {
        num += raw_weights[i] * returns[i];
        den += raw_weights[i];
    }
    if (!(den > 0.0)) throw EstimationError("weights sum to zero");
    return num / den;
}

MarketSeries market_return(const PanelDataset& panel, const std::vector<MarketWeight>& weights,
                           const MarketReturnOptions& options) {
    struct Acc {
        std::vector<double> w;
        std::vector<double> r;
    };
    std::map<int, Acc> by_month;
    for (const auto& w : weights) {
        const auto row = panel.find(w.firm_id, w.month);
        if (!row || !panel.rows()[*row].ret) continue;
        auto& acc = by_month[w.month.index()];
        acc.w.push_back(w.raw_weight);
        acc.r.push_back(*panel.rows()[*row].ret);
    }
    MarketSeries out;
    for (const auto& m : panel.months()) {
        auto it = by_month.find(m.index());
        const int n = it == by_month.end() ? 0 : static_cast<int>(it->second.w.size());
        double total = 0.0;
        if (n > 0) {
            for (double v : it->second.w) total += v;
        }
        if (n < options.min_firms || !(total > 0.0)) {
            out.excluded_months.push_back(m);
            continue;
        }
        out.months.push_back(m);
        out.returns.push_back(weighted_return(it->second.w, it->second.r));
        out.n_firms.push_back(n);
    }
    if (out.months.empty()) throw EstimationError("every month has too few eligible firms for a market return");
    return out;
}

std::string to_string(QuantileConvention c) {
    return c == QuantileConvention::lower_empirical ? "lower_empirical" : "linear";
}

QuantileConvention parse_quantile_convention(const std::string& text) {
    if (text == "lower_empirical") return QuantileConvention::lower_empirical;
    if (text == "linear") return QuantileConvention::linear;
    throw InputError("unknown quantile convention: " + text);
}

std::size_t RegimeSeries::n_stress() const {
    return static_cast<std::size_t>(std::count(stress.begin(), stress.end(), true));
}

std::optional<std::size_t> RegimeSeries::position(YearMonth m) const {
    auto it = std::lower_bound(months.begin(), months.end(), m);
    if (it == months.end() || !(*it == m)) return std::nullopt;
    return static_cast<std::size_t>(it - months.begin());
}

std::optional<double> RegimeSeries::market_of(YearMonth m) const {
    if (auto p = position(m)) return market_return[*p];
    return std::nullopt;
}

std::optional<bool> RegimeSeries::stress_of(YearMonth m) const {
    if (auto p = position(m)) return static_cast<bool>(stress[*p]);
    return std::nullopt;
}

std::vector<YearMonth> RegimeSeries::months_in(bool stress_state) const {
    std::vector<YearMonth> out;
    for (std::size_t i = 0; i < months.size(); ++i) {
        if (stress[i] == stress_state) out.push_back(months[i]);
    }
    return out;
}

RegimeSeries classify_stress(const std::vector<YearMonth>& months, const std::vector<double>& market_returns,
                             double level, QuantileConvention convention, int min_months) {
    if (months.size() != market_returns.size()) throw InputError("months and returns differ in length");
    if (static_cast<int>(months.size()) < min_months) {
        throw InputError("stress classification needs at least " + std::to_string(min_months) + " months, got " +
                         std::to_string(months.size()));
    }
    if (!(level > 0.0 && level < 0.5)) throw InputError("stress level must lie in (0, 0.5)");

    // Keep months sorted so lookups by month work.
    std::vector<std::size_t> order(months.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return months[a] < months[b]; });

    RegimeSeries out;
    out.quantile_level = level;
    out.convention = convention;
    for (std::size_t i : order) {
        out.months.push_back(months[i]);
        out.market_return.push_back(market_returns[i]);
    }
    out.cutoff = convention == QuantileConvention::lower_empirical
                     ? lower_empirical_quantile(out.market_return, level)
                     : percentile(out.market_return, level);
    out.stress.resize(out.months.size());
    for (std::size_t i = 0; i < out.months.size(); ++i) out.stress[i] = out.market_return[i] <= out.cutoff;
    const auto [lo, hi] = std::minmax_element(out.market_return.begin(), out.market_return.end());
    out.degenerate = *lo == *hi;
    return out;
}

RegimeSummary regime_summary(const RegimeSeries& regime, int bins) {
    RegimeSummary s;
    s.cutoff = regime.cutoff;
    s.level = regime.quantile_level;
    s.n_months = regime.months.size();
    s.n_stress = regime.n_stress();
    s.stress_share = s.n_months ? static_cast<double>(s.n_stress) / static_cast<double>(s.n_months) : 0.0;
    for (std::size_t i = 0; i < regime.months.size(); ++i) {
        if (regime.stress[i]) s.stress_months.emplace_back(regime.months[i], regime.market_return[i]);
    }
    if (regime.market_return.empty() || bins < 1) return s;
    const auto [lo_it, hi_it] = std::minmax_element(regime.market_return.begin(), regime.market_return.end());
    double lo = *lo_it;
    double hi = *hi_it;
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double width = (hi - lo) / bins;
    s.histogram.resize(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        s.histogram[b].lower = lo + b * width;
        s.histogram[b].upper = b + 1 == bins ? hi : lo + (b + 1) * width;
    }
    for (double r : regime.market_return) {
        int b = static_cast<int>(std::floor((r - lo) / width));
        b = std::clamp(b, 0, bins - 1);
        s.histogram[b].count += 1;
    }
    return s;
}

}  // namespace tailrisk
