#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "tailrisk/common.h"
#include "tailrisk/regime.h"

using namespace tailrisk;

namespace {

const YearMonth kStart{2005, 1};

std::vector<YearMonth> month_range(std::size_t n) {
    std::vector<YearMonth> m;
    for (std::size_t i = 0; i < n; ++i) m.push_back(kStart.plus(static_cast<int>(i)));
    return m;
}

std::vector<double> iid_returns(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.005, 0.045);
    std::vector<double> r(n);
    for (auto& v : r) v = z(rng);
    return r;
}

// Random panel with enough firms per month for a market return.
PanelDataset random_panel(int firms, int months, std::uint64_t seed, double volume_scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::vector<FirmMonthRow> rows;
    for (int f = 0; f < firms; ++f) {
        for (int t = 0; t < months; ++t) {
            FirmMonthRow r;
            r.firm_id = "F" + std::to_string(100 + f);
            r.month = kStart.plus(t);
            r.ret = 0.005 + 0.08 * z(rng);
            r.volume_usd = volume_scale * std::exp(15.0 + 1.5 * z(rng));
            r.sigma = 0.02 * std::exp(0.4 * z(rng));
            r.sector = "A";
            rows.push_back(r);
        }
    }
    return PanelDataset(rows);
}

MarketWeight weight(const std::string& firm, YearMonth m, double raw) {
    MarketWeight w;
    w.firm_id = firm;
    w.month = m;
    w.raw_weight = raw;
    return w;
}

}  // namespace

TEST(RealizedVol, ConstantSeriesShortSeriesAndHandSd) {
    const std::vector<double> flat(12, 0.003);
    const RealizedVol c = realized_vol(flat);
    EXPECT_FALSE(c.sigma.has_value());
    EXPECT_TRUE(c.constant);

    const std::vector<double> three{0.01, -0.02, 0.03};
    EXPECT_FALSE(realized_vol(three).sigma.has_value());
    EXPECT_FALSE(realized_vol(three).constant);

    std::vector<double> alt;
    for (int i = 0; i < 10; ++i) {
        alt.push_back(0.01);
        alt.push_back(-0.01);
    }
    // Mean 0, sum of squares 20e-4, sample sd sqrt(20e-4 / 19).
    const RealizedVol v = realized_vol(alt);
    ASSERT_TRUE(v.sigma.has_value());
    EXPECT_NEAR(*v.sigma, std::sqrt(20e-4 / 19.0), 1e-15);
    EXPECT_NEAR(*v.sigma, 0.010, 3e-4);
}

TEST(FirmWeight, CubeRootOverSigma) {
    EXPECT_NEAR(firm_weight(8.0, 2.0), 1.0, 1e-15);
    EXPECT_EQ(firm_weight(0.0, 0.3), 0.0);
    EXPECT_NEAR(firm_weight(27.0, 0.5), 6.0, 1e-14);
    EXPECT_THROW(firm_weight(8.0, 0.0), InputError);
    EXPECT_THROW(firm_weight(8.0, -1.0), InputError);
}

TEST(MarketReturn, HandWeightedAverages) {
    const YearMonth m = kStart;
    FirmMonthRow a, b;
    a.firm_id = "A";
    b.firm_id = "B";
    a.month = b.month = m;
    a.ret = 0.02;
    b.ret = -0.02;
    const PanelDataset sym({a, b});
    MarketReturnOptions one;
    one.min_firms = 1;
    auto s = market_return(sym, {weight("A", m, 2.0), weight("B", m, 2.0)}, one);
    ASSERT_EQ(s.returns.size(), 1u);
    EXPECT_EQ(s.returns[0], 0.0);

    s = market_return(sym, {weight("B", m, 5.0)}, one);
    EXPECT_EQ(s.returns[0], -0.02);

    a.ret = 0.04;
    b.ret = 0.0;
    s = market_return(PanelDataset({a, b}), {weight("A", m, 1.0), weight("B", m, 3.0)}, one);
    EXPECT_NEAR(s.returns[0], 0.01, 1e-16);
}

TEST(MarketReturn, ThinMonthsExcludedAndAllExcludedThrows) {
    const PanelDataset p = random_panel(40, 6, 3);
    auto w = compute_market_weights(p);
    // Drop month 3 down to 10 eligible firms.
    const YearMonth thin = kStart.plus(3);
    int kept = 0;
    std::erase_if(w, [&](const MarketWeight& x) { return x.month == thin && ++kept > 10; });
    const MarketSeries s = market_return(p, w);
    // The first month has no t-1 weights; the thin month falls below 30.
    EXPECT_EQ(s.excluded_months, (std::vector<YearMonth>{kStart, thin}));
    EXPECT_EQ(s.months.size(), 4u);
    for (int n : s.n_firms) EXPECT_EQ(n, 40);

    MarketReturnOptions strict;
    strict.min_firms = 41;
    EXPECT_THROW(market_return(p, w, strict), EstimationError);
}

TEST(MarketWeights, NormalizedWeightsSumToOne) {
    const PanelDataset p = random_panel(35, 8, 4);
    const auto w = compute_market_weights(p);
    std::map<int, double> sums;
    for (const auto& x : w) {
        EXPECT_GT(x.raw_weight, 0.0);
        sums[x.month.index()] += x.normalized_weight;
    }
    EXPECT_EQ(sums.size(), 7u);
    for (const auto& [m, s] : sums) EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(ClassifyStress, TwentyIidMonthsFlagThree) {
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const auto r = iid_returns(20, seed);
        const RegimeSeries reg = classify_stress(month_range(20), r, 0.15);
        // Oracle: the ceil(0.15 * 20) = 3rd order statistic.
        std::vector<double> sorted = r;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(reg.cutoff, sorted[2]);
        EXPECT_EQ(reg.n_stress(), 3u);
        EXPECT_FALSE(reg.degenerate);
    }
}

TEST(ClassifyStress, AllEqualFlagsEverythingAndErrors) {
    const std::vector<double> flat(24, -0.01);
    const RegimeSeries reg = classify_stress(month_range(24), flat);
    EXPECT_EQ(reg.n_stress(), 24u);
    EXPECT_TRUE(reg.degenerate);

    EXPECT_THROW(classify_stress(month_range(19), iid_returns(19, 1)), InputError);
    EXPECT_THROW(classify_stress(month_range(30), iid_returns(30, 1), 0.0), InputError);
    EXPECT_THROW(classify_stress(month_range(30), iid_returns(30, 1), 0.5), InputError);
}

TEST(ClassifyStress, UnsortedInputIsSortedByMonth) {
    auto months = month_range(30);
    auto r = iid_returns(30, 9);
    std::vector<YearMonth> rev(months.rbegin(), months.rend());
    std::vector<double> rrev(r.rbegin(), r.rend());
    const RegimeSeries a = classify_stress(months, r);
    const RegimeSeries b = classify_stress(rev, rrev);
    EXPECT_EQ(a.months, b.months);
    EXPECT_EQ(a.stress, b.stress);
    EXPECT_EQ(a.market_return, b.market_return);
}

TEST(ClassifyStress, ShareBoundsFlagsFromCutoffAndNesting) {
    for (std::size_t T : {20u, 37u, 143u, 200u}) {
        const auto r = iid_returns(T, T);
        const RegimeSeries reg = classify_stress(month_range(T), r);
        const double share = static_cast<double>(reg.n_stress()) / static_cast<double>(T);
        EXPECT_LE(std::fabs(share - 0.15), 1.0 / static_cast<double>(T));
        for (std::size_t i = 0; i < T; ++i) EXPECT_EQ(reg.stress[i], reg.market_return[i] <= reg.cutoff);

        std::vector<bool> prev(T, false);
        for (double level : {0.05, 0.10, 0.15, 0.20, 0.30, 0.45}) {
            const RegimeSeries l = classify_stress(month_range(T), r, level);
            for (std::size_t i = 0; i < T; ++i) {
                if (prev[i]) EXPECT_TRUE(l.stress[i]);
            }
            prev = l.stress;
        }
    }
    // 143 months at 0.15 flag ceil(21.45) = 22.
    EXPECT_EQ(classify_stress(month_range(143), iid_returns(143, 5)).n_stress(), 22u);
}

TEST(ClassifyStress, LinearConventionIsRecorded) {
    const RegimeSeries reg =
        classify_stress(month_range(40), iid_returns(40, 2), 0.15, QuantileConvention::linear);
    EXPECT_EQ(reg.convention, QuantileConvention::linear);
    EXPECT_EQ(parse_quantile_convention(to_string(QuantileConvention::linear)), QuantileConvention::linear);
    EXPECT_THROW(parse_quantile_convention("median"), InputError);
    for (std::size_t i = 0; i < reg.months.size(); ++i) EXPECT_EQ(reg.stress[i], reg.market_return[i] <= reg.cutoff);
}

TEST(Regime, VolumeScaleLeavesStressFlagsUnchanged) {
    auto flags = [](const PanelDataset& p) {
        const MarketSeries m = market_return(p, compute_market_weights(p));
        return classify_stress(m.months, m.returns);
    };
    const RegimeSeries a = flags(random_panel(40, 36, 11));
    const RegimeSeries b = flags(random_panel(40, 36, 11, 1000.0));
    EXPECT_EQ(a.stress, b.stress);
    for (std::size_t i = 0; i < a.months.size(); ++i) EXPECT_NEAR(a.market_return[i], b.market_return[i], 1e-15);
}

TEST(RegimeSummary, SingleStressMonthAndShare) {
    std::vector<double> r(25, 0.01);
    r[7] = -0.12;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += 1e-4 * static_cast<double>(i);
    const RegimeSeries reg = classify_stress(month_range(25), r, 0.04);
    const RegimeSummary s = regime_summary(reg, 10);
    ASSERT_EQ(s.stress_months.size(), 1u);
    EXPECT_EQ(s.stress_months[0].first, kStart.plus(7));
    EXPECT_EQ(s.stress_months[0].second, r[7]);
    int total = 0;
    for (const auto& b : s.histogram) total += b.count;
    EXPECT_EQ(total, 25);
    EXPECT_EQ(s.histogram.size(), 10u);
    EXPECT_EQ(s.histogram.front().count, 1);

    const RegimeSummary big = regime_summary(classify_stress(month_range(200), iid_returns(200, 77)));
    EXPECT_LE(std::fabs(big.stress_share - 0.15), 1.0 / 200.0);
    EXPECT_EQ(big.n_months, 200u);
}
