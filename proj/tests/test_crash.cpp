#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "tailrisk/common.h"
#include "tailrisk/crash.h"
#include "tailrisk/stats.h"
#include "tailrisk/synthlab.h"

using namespace tailrisk;

namespace {

const YearMonth kStart{2008, 1};

DgpSpec protective_dgp(std::uint64_t seed, int months = 120) {
    DgpSpec d;
    d.n_firms = 300;
    d.n_months = months;
    d.tail_mode = true;
    d.theta_stress = -0.05;
    d.noise_scale = 0.06;
    d.outcome_scale = 0.02;
    d.seed = seed;
    return d;
}

CrashModelSpec spec_b() {
    CrashModelSpec m;
    m.controls = lagged_controls();
    return m;
}

// Panel with the given returns and a per-row esg_lag1, one firm per entry,
// all in `month`.
std::vector<FirmMonthRow> month_rows(YearMonth month, const std::vector<double>& rets, int first_firm) {
    std::vector<FirmMonthRow> out;
    for (std::size_t i = 0; i < rets.size(); ++i) {
        FirmMonthRow r;
        r.firm_id = "F" + std::to_string(first_firm + static_cast<int>(i));
        r.month = month;
        r.ret = rets[i];
        r.sector = "A";
        out.push_back(r);
    }
    return out;
}

RegimeSeries regime_of(const std::vector<YearMonth>& months, const std::vector<bool>& stress) {
    RegimeSeries r;
    r.months = months;
    r.market_return.assign(months.size(), 0.0);
    r.stress = stress;
    return r;
}

}  // namespace

TEST(CrashIndicator, StrictInequalityAndMissingReturns) {
    const YearMonth m = kStart;
    FirmMonthRow a, b, c, d;
    a.firm_id = "A";
    b.firm_id = "B";
    c.firm_id = "C";
    d.firm_id = "D";
    a.month = b.month = c.month = d.month = m;
    a.ret = -0.25;
    b.ret = -0.20;
    c.ret = 0.30;
    const Column flag = crash_indicator(PanelDataset({a, b, c, d}), 0.20);
    EXPECT_EQ(*flag[0], 1.0);
    EXPECT_EQ(*flag[1], 0.0);
    EXPECT_EQ(*flag[2], 0.0);
    EXPECT_FALSE(flag[3].has_value());
    EXPECT_EQ(crash_column(0.20), "crash_020");
    EXPECT_EQ(crash_column(0.15), "crash_015");
}

TEST(CrashIndicator, NestedEventsAndMonotoneCounts) {
    const GeneratedPanel g = generate_panel(protective_dgp(3, 60));
    const Column c15 = crash_indicator(g.panel, 0.15);
    const Column c20 = crash_indicator(g.panel, 0.20);
    const Column c25 = crash_indicator(g.panel, 0.25);
    double n15 = 0, n20 = 0, n25 = 0;
    for (std::size_t i = 0; i < c15.size(); ++i) {
        if (!c15[i]) continue;
        if (*c25[i] == 1.0) EXPECT_EQ(*c20[i], 1.0);
        if (*c20[i] == 1.0) EXPECT_EQ(*c15[i], 1.0);
        n15 += *c15[i];
        n20 += *c20[i];
        n25 += *c25[i];
    }
    EXPECT_GE(n15, n20);
    EXPECT_GE(n20, n25);
    EXPECT_GT(n25, 0.0);

    double prev = std::numeric_limits<double>::infinity();
    for (double c = 0.05; c < 0.6; c += 0.05) {
        double n = 0;
        for (const auto& v : crash_indicator(g.panel, c)) n += v ? *v : 0.0;
        EXPECT_LE(n, prev);
        prev = n;
    }
}

TEST(RegimeLogits, FourMaximalCellsPlusCommonSample) {
    const GeneratedPanel g = generate_panel(protective_dgp(21));
    const RegimeLogitTable t = fit_regime_logits(g.panel, g.regime, {}, spec_b());
    EXPECT_EQ(t.cells.size(), 6u);
    for (const char* spec : {"A", "B"}) {
        for (const char* regime : {"stress", "nonstress"}) {
            const RegimeLogitCell* c = t.find(spec, regime);
            ASSERT_NE(c, nullptr);
            EXPECT_TRUE(c->ok()) << c->error;
            EXPECT_GT(c->n_events, 0u);
            EXPECT_GT(c->fit->n_clusters, 1);
        }
    }
    const RegimeLogitCell* common = t.find("A", "stress", "common");
    ASSERT_NE(common, nullptr);
    EXPECT_LE(common->fit->n_obs, t.find("A", "stress")->fit->n_obs);
    EXPECT_EQ(common->fit->n_obs, t.find("B", "stress")->fit->n_obs);

    CrashModelSpec bad = spec_b();
    bad.treatment = "esg_lag9";
    EXPECT_THROW(fit_regime_logits(g.panel, g.regime, {}, bad), InputError);
}

TEST(RegimeLogits, RegimeWithoutEventsFailsOnlyThatCell) {
    const GeneratedPanel g = generate_panel(protective_dgp(5, 60));
    std::vector<FirmMonthRow> rows = g.panel.rows();
    for (auto& r : rows) {
        if (*g.regime.stress_of(r.month) && r.ret && *r.ret < -0.20) r.ret = -0.19;
    }
    PanelDataset p(rows);
    for (const auto& [name, col] : g.panel.derived()) {
        if (name.rfind("crash_", 0) != 0) p.set_derived(name, col);
    }
    const RegimeLogitTable t = fit_regime_logits(p, g.regime, {}, spec_b());
    for (const char* spec : {"A", "B"}) {
        const RegimeLogitCell* s = t.find(spec, "stress");
        EXPECT_FALSE(s->ok());
        EXPECT_NE(s->error.find("degenerate outcome"), std::string::npos) << s->error;
        EXPECT_TRUE(t.find(spec, "nonstress")->ok());
    }
}

TEST(RegimeLogits, ProtectiveStressEffectDetectedAcrossReplications) {
    // Stress-only protective effect: the stress coefficient is negative and
    // significant, the non-stress interval covers zero.
    int hits = 0;
    const int reps = 20;
    for (int r = 0; r < reps; ++r) {
        const GeneratedPanel g = generate_panel(protective_dgp(derive_seed(404, {static_cast<std::uint64_t>(r)}), 180));
        const RegimeLogitTable t = fit_regime_logits(g.panel, g.regime, {}, spec_b(), {"B"});
        const RegimeLogitCell* s = t.find("B", "stress");
        const RegimeLogitCell* n = t.find("B", "nonstress");
        ASSERT_TRUE(s->ok() && n->ok());
        const Eigen::Index js = s->fit->index_of("esg_lag1");
        const Eigen::Index jn = n->fit->index_of("esg_lag1");
        const bool stress_ok = s->fit->coef(js) < 0.0 && s->fit->p(js) < 0.05;
        const bool normal_ok = std::fabs(n->fit->coef(jn)) <= 1.959964 * n->fit->se(jn);
        hits += stress_ok && normal_ok;
    }
    EXPECT_GE(hits, 18) << hits << " of " << reps;
}

TEST(QuintileGap, AllCrashesInBottomQuintile) {
    // Two stress and two calm months; 20 firms with esg 1..20. Firms with
    // esg <= 4 (the bottom quintile) crash in stress months only.
    std::vector<FirmMonthRow> rows;
    std::vector<YearMonth> months;
    std::vector<bool> stress;
    for (int t = 0; t < 4; ++t) {
        const YearMonth m = kStart.plus(t);
        const bool s = t % 2 == 0;
        std::vector<double> rets;
        for (int f = 0; f < 20; ++f) rets.push_back(s && f < 4 ? -0.5 : 0.01);
        for (auto& r : month_rows(m, rets, 100)) rows.push_back(r);
        months.push_back(m);
        stress.push_back(s);
    }
    PanelDataset p(rows);
    Column esg;
    for (const auto& r : p.rows()) esg.push_back(static_cast<double>(std::stoi(r.firm_id.substr(1)) - 99));
    p.set_derived("esg_lag1", esg);
    QuintileGapOptions opt;
    opt.n_boot = 50;
    opt.seed = 1;
    const QuintileGapReport q = quintile_gap(p, regime_of(months, stress), {}, "esg_lag1", opt);
    EXPECT_EQ(q.stress_quintile_rate[0], 1.0);
    for (int k = 1; k < 5; ++k) EXPECT_EQ(q.stress_quintile_rate[k], 0.0);
    EXPECT_NEAR(q.gap_pp, 100.0 * q.stress_quintile_rate[0], 1e-12);
    EXPECT_EQ(q.nonstress_rate, 0.0);
    EXPECT_NEAR(q.stress_rate, 0.2, 1e-15);
    EXPECT_EQ(q.n_stress_obs, 40u);
    ASSERT_TRUE(q.ci.has_value());
    EXPECT_EQ(q.ci->lower, 100.0);
    EXPECT_EQ(q.ci->upper, 100.0);
}

TEST(QuintileGap, TooFewDistinctValues) {
    std::vector<FirmMonthRow> rows;
    for (int t = 0; t < 2; ++t) {
        for (auto& r : month_rows(kStart.plus(t), std::vector<double>(10, -0.3), 100)) rows.push_back(r);
    }
    PanelDataset p(rows);
    Column esg;
    for (std::size_t i = 0; i < p.size(); ++i) esg.push_back(static_cast<double>(i % 4));
    p.set_derived("esg_lag1", esg);
    const RegimeSeries reg = regime_of({kStart, kStart.plus(1)}, {true, false});
    EXPECT_THROW(quintile_gap(p, reg, {}, "esg_lag1"), InputError);
}

TEST(QuintileGap, BreakpointsAndQuintileAssignment) {
    const std::array<double, 4> b{1.0, 2.0, 3.0, 4.0};
    EXPECT_EQ(quintile_of(0.5, b), 0);
    EXPECT_EQ(quintile_of(1.0, b), 0);
    EXPECT_EQ(quintile_of(1.5, b), 1);
    EXPECT_EQ(quintile_of(4.0, b), 3);
    EXPECT_EQ(quintile_of(9.0, b), 4);
}

TEST(QuintileGap, NullDgpCiCoversZeroMostOfTheTime) {
    int covered = 0;
    const int reps = 100;
    for (int r = 0; r < reps; ++r) {
        DgpSpec d = protective_dgp(derive_seed(77, {static_cast<std::uint64_t>(r)}), 120);
        d.theta_stress = 0.0;
        d.confound_strength = 0.0;
        d.n_firms = 200;
        const GeneratedPanel g = generate_panel(d);
        QuintileGapOptions opt;
        opt.n_boot = 200;
        opt.seed = static_cast<std::uint64_t>(r);
        const QuintileGapReport q = quintile_gap(g.panel, g.regime, {}, "esg_lag1", opt);
        covered += q.ci->lower <= 0.0 && 0.0 <= q.ci->upper;
    }
    // Nominal 95%; 88 is about three binomial sd below.
    EXPECT_GE(covered, 88) << covered << " of " << reps;
}

TEST(ThresholdSweep, ThreeSectionsWithStableProtectiveSign) {
    // Linear protective shift in stress months: returns rise with the
    // treatment, so every threshold sees fewer crashes.
    DgpSpec d = protective_dgp(8);
    d.tail_mode = false;
    d.theta_stress = 0.01;
    d.noise_scale = 0.08;
    const GeneratedPanel g = generate_panel(d);
    QuintileGapOptions opt;
    opt.n_boot = 50;
    const auto sweep = threshold_sweep(g.panel, g.regime, {0.15, 0.20, 0.25}, spec_b(), opt);
    ASSERT_EQ(sweep.size(), 3u);
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (const auto& e : sweep) {
        EXPECT_TRUE(e.descriptives.has_value()) << e.descriptives_error;
        EXPECT_LE(e.n_events, prev);
        prev = e.n_events;
        const RegimeLogitCell* s = e.logits.find("B", "stress");
        ASSERT_NE(s, nullptr);
        ASSERT_TRUE(s->ok()) << s->error;
        EXPECT_EQ(e.logits.find("A", "stress"), nullptr);
        EXPECT_LT(s->fit->coef_of("esg_lag1"), 0.0) << "threshold " << e.threshold;
    }
}
