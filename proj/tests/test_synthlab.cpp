#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "tailrisk/common.h"
#include "tailrisk/crash.h"
#include "tailrisk/synthlab.h"

using namespace tailrisk;

namespace {

double corr(const std::vector<double>& a, const std::vector<double>& b) {
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Complete rows of two columns.
void paired(const PanelDataset& p, const std::string& x, const std::string& y, std::vector<double>& a,
            std::vector<double>& b) {
    const Column cx = p.column(x), cy = p.column(y);
    for (std::size_t i = 0; i < cx.size(); ++i) {
        if (cx[i] && cy[i]) {
            a.push_back(*cx[i]);
            b.push_back(*cy[i]);
        }
    }
}

}  // namespace

TEST(DgpSpec, InvariantsAreEnforced) {
    DgpSpec d;
    EXPECT_NO_THROW(d.validate());
    d.n_firms = 49;
    EXPECT_THROW(d.validate(), InputError);
    d = DgpSpec{};
    d.n_months = 59;
    EXPECT_THROW(d.validate(), InputError);
    d = DgpSpec{};
    d.stress_share = 0.5;
    EXPECT_THROW(d.validate(), InputError);
    d.stress_share = 0.0;
    EXPECT_THROW(d.validate(), InputError);
}

TEST(DgpSpec, JsonRoundTripAndUnknownKeys) {
    DgpSpec d;
    d.theta_stress = -0.03;
    d.tail_mode = true;
    d.noise = NoiseKind::gaussian;
    d.effect_pillar = "S";
    d.seed = 99;
    const DgpSpec back = DgpSpec::from_json(d.to_json());
    EXPECT_EQ(back.to_json().dump(), d.to_json().dump());
    EXPECT_THROW(DgpSpec::from_json(nlohmann::ordered_json{{"n_firm", 10}}), InputError);
    EXPECT_THROW(DgpSpec::from_json(nlohmann::ordered_json{{"noise", "cauchy"}}), InputError);
    EXPECT_THROW(DgpSpec::from_json(nlohmann::ordered_json{{"n_firms", "many"}}), InputError);
}

TEST(GeneratePanel, PureFunctionOfSpec) {
    DgpSpec d;
    d.n_firms = 50;
    d.n_months = 60;
    d.tail_mode = true;
    d.theta_stress = -0.03;
    d.seed = 5;
    const GeneratedPanel a = generate_panel(d);
    const GeneratedPanel b = generate_panel(d);
    ASSERT_EQ(a.panel.size(), b.panel.size());
    for (const std::string col : {"ret", "esg", "excess_ret", "esg_lag1", "log_at_lag1", "volume_usd"}) {
        EXPECT_TRUE(a.panel.column(col) == b.panel.column(col)) << col;
    }
    EXPECT_EQ(a.truth.to_json().dump(), b.truth.to_json().dump());
    d.seed = 6;
    EXPECT_NE(generate_panel(d).panel.values_or_nan("ret"), a.panel.values_or_nan("ret"));
}

TEST(GeneratePanel, StressShareMatchesSpec) {
    for (int T : {60, 97, 143}) {
        for (double share : {0.1, 0.15, 0.3}) {
            DgpSpec d;
            d.n_firms = 50;
            d.n_months = T;
            d.stress_share = share;
            const GeneratedPanel g = generate_panel(d);
            const double got = static_cast<double>(g.regime.n_stress()) / T;
            EXPECT_LT(std::fabs(got - share), 1.0 / T);
            EXPECT_EQ(g.regime.n_stress(), g.truth.stress_months.size());
            EXPECT_EQ(g.panel.months().size(), static_cast<std::size_t>(T));
        }
    }
}

TEST(GeneratePanel, NoConfoundingMeansNoCorrelation) {
    DgpSpec d;
    d.n_firms = 100;
    d.n_months = 80;
    d.confound_strength = 0.0;
    const GeneratedPanel g = generate_panel(d);
    for (const auto& c : lagged_controls()) {
        std::vector<double> a, b;
        paired(g.panel, "esg_lag1", c, a, b);
        EXPECT_LT(std::fabs(corr(a, b)), 3.0 / std::sqrt(static_cast<double>(a.size()))) << c;
    }
}

TEST(GeneratePanel, ConfoundingLinksTreatmentAndControls) {
    DgpSpec d;
    d.n_firms = 100;
    d.n_months = 80;
    const GeneratedPanel g = generate_panel(d);
    std::vector<double> a, b;
    paired(g.panel, "esg_lag1", "log_at_lag1", a, b);
    EXPECT_GT(corr(a, b), 0.2);
    EXPECT_EQ(g.truth.n_complete_rows, a.size());
}

TEST(GeneratePanel, RawFieldsRebuildAnalysisColumns) {
    DgpSpec d;
    d.n_firms = 50;
    d.n_months = 60;
    const GeneratedPanel g = generate_panel(d);
    const auto& rows = g.panel.rows();
    const Column lag = g.panel.column("log_at_lag1");
    const Column esg_lag = g.panel.column("esg_lag1");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].firm_id != rows[i - 1].firm_id) {
            EXPECT_FALSE(lag[i].has_value());
            continue;
        }
        EXPECT_NEAR(*lag[i], std::log(*rows[i - 1].fundamentals.at("at")) - 6.0, 1e-12);
        EXPECT_NEAR(*esg_lag[i], *rows[i - 1].esg, 1e-12);
    }
    const Column ex = g.panel.column("excess_ret");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_NEAR(*ex[i], *rows[i].ret - *g.regime.market_of(rows[i].month), 1e-15);
    }
}

TEST(GeneratePanel, TailModeCrashRateFallsAcrossTreatmentQuintiles) {
    DgpSpec d;
    d.n_firms = 400;
    d.n_months = 120;
    d.tail_mode = true;
    d.theta_stress = -0.06;
    d.noise_scale = 0.06;
    d.outcome_scale = 0.02;
    const GeneratedPanel g = generate_panel(d);
    const Column crash = g.panel.column(crash_column(0.20));
    const Column esg = g.panel.column("esg_lag1");
    std::vector<std::pair<double, double>> stress_rows;
    for (std::size_t i = 0; i < g.panel.size(); ++i) {
        if (*g.regime.stress_of(g.panel.rows()[i].month) && esg[i]) stress_rows.emplace_back(*esg[i], *crash[i]);
    }
    std::sort(stress_rows.begin(), stress_rows.end());
    std::vector<double> rate(5, 0.0);
    const std::size_t n = stress_rows.size();
    for (int q = 0; q < 5; ++q) {
        const std::size_t lo = n * q / 5, hi = n * (q + 1) / 5;
        for (std::size_t i = lo; i < hi; ++i) rate[q] += stress_rows[i].second;
        rate[q] /= static_cast<double>(hi - lo);
    }
    for (int q = 1; q < 5; ++q) EXPECT_LT(rate[q], rate[q - 1]) << "quintile " << q;
    EXPECT_LT(g.truth.crash_sensitivity_stress, 0.0);
    EXPECT_EQ(g.truth.crash_sensitivity_normal, 0.0);
}

TEST(GeneratePanel, TailModeKeepsAnchorQuantileFlat) {
    // The effect sits in the far tail: the anchor quantile of the stress-month
    // return (net of its location) is the same for low and high treatment.
    DgpSpec d;
    d.n_firms = 400;
    d.n_months = 120;
    d.tail_mode = true;
    d.theta_stress = -0.06;
    d.noise_scale = 0.06;
    d.outcome_scale = 0.0;
    d.confound_strength = 0.0;
    const GeneratedPanel g = generate_panel(d);
    const Column ex = g.panel.column("excess_ret");
    const Column esg = g.panel.column("esg_lag1");
    std::vector<double> low, high;
    for (std::size_t i = 0; i < g.panel.size(); ++i) {
        if (!*g.regime.stress_of(g.panel.rows()[i].month) || !esg[i]) continue;
        (*esg[i] < 5.0 ? low : high).push_back(*ex[i]);
    }
    auto q = [](std::vector<double> v, double p) {
        std::sort(v.begin(), v.end());
        return v[static_cast<std::size_t>(p * static_cast<double>(v.size()))];
    };
    EXPECT_NEAR(q(low, 0.20), q(high, 0.20), 0.006);
    EXPECT_LT(q(low, 0.02), q(high, 0.02) - 0.02);
}

TEST(TargetEffect, PillarShares) {
    DgpSpec d;
    d.theta_stress = 0.6;
    d.theta_normal = 0.6;
    GroundTruth t;
    t.mean_effect_stress = t.mean_effect_normal = 0.6;
    t.stress_months.resize(18);
    d.n_months = 120;
    EstimatorDescriptor e;
    EXPECT_DOUBLE_EQ(target_effect(e, d, t), 0.6);
    e.treatment = "e_score_lag1";
    EXPECT_NEAR(target_effect(e, d, t), 0.2, 1e-15);
    d.effect_pillar = "S";
    EXPECT_EQ(target_effect(e, d, t), 0.0);
    e.treatment = "esg_lag1";
    EXPECT_NEAR(target_effect(e, d, t), 0.6, 1e-15);
    e.treatment = "s_score_lag1";
    EXPECT_NEAR(target_effect(e, d, t), 0.6, 1e-15);
    e.outcome = "volume_usd";
    EXPECT_THROW(target_effect(e, d, t), InputError);
}

TEST(MonteCarlo, Guards) {
    DgpSpec d;
    d.n_firms = 50;
    d.n_months = 60;
    EstimatorDescriptor e;
    EXPECT_THROW(monte_carlo(d, e, 99), InputError);
    // An outcome that never fires fails every replication.
    d.noise_scale = 0.01;
    d.outcome_scale = 0.01;
    d.crash_threshold = 0.9;
    e.outcome = "crash_090";
    try {
        monte_carlo(d, e, 100);
        FAIL() << "expected an error";
    } catch (const EstimationError& ex) {
        EXPECT_NE(std::string(ex.what()).find("100 of 100"), std::string::npos) << ex.what();
    }
}

TEST(MonteCarlo, NullDgpCentersOnZero) {
    DgpSpec d;
    d.n_firms = 50;
    d.n_months = 61;
    d.seed = 17;
    EstimatorDescriptor e;
    const SimResult r = monte_carlo(d, e, 100, 2);
    EXPECT_EQ(r.n_failed, 0);
    EXPECT_EQ(r.mean_truth, 0.0);
    EXPECT_LT(std::fabs(r.mean_estimate), 3.0 * r.sd_estimate / std::sqrt(100.0));
    EXPECT_GE(r.coverage, 0.88);
    EXPECT_LE(r.rejection_rate, 0.12);
    EXPECT_GE(r.coverage, 0.0);
    EXPECT_LE(r.coverage, 1.0);
    // Reduction is by replication index, so thread count does not matter.
    EXPECT_EQ(monte_carlo(d, e, 100, 1).estimates, r.estimates);
}
