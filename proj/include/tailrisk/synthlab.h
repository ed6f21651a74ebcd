#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tailrisk/dml.h"
#include "tailrisk/panel.h"
#include "tailrisk/regime.h"

namespace tailrisk {

enum class NoiseKind { student_t5, gaussian };

struct DgpSpec {
    int n_firms = 200;
    int n_months = 120;
    double stress_share = 0.15;
    double theta_stress = 0.0;
    double theta_normal = 0.0;
    double confound_strength = 1.0;
    // Scales the control and sector terms of the outcome (not theta).
    double outcome_scale = 1.0;
    bool tail_mode = false;
    double noise_scale = 1.0;
    NoiseKind noise = NoiseKind::student_t5;
    // Which score carries the effect: Agg, E, S or G.
    std::string effect_pillar = "Agg";
    // tail_mode only.
    double jump_size = 0.40;
    double jump_base_stress = 0.05;
    double jump_base_normal = 0.005;
    double crash_threshold = 0.20;
    // The body is shifted so this quantile of the stress-month return does
    // not move with the treatment; the effect stays in the far tail.
    double anchor_quantile = 0.20;
    std::uint64_t seed = 0;

    // Throws InputError when an invariant is violated.
    void validate() const;
    static DgpSpec from_json(const nlohmann::ordered_json& j);
    nlohmann::ordered_json to_json() const;
};

struct GroundTruth {
    double theta_stress = 0.0;
    double theta_normal = 0.0;
    // Average marginal effect of the treatment on E[ret] over the realized
    // rows of each state; equals theta outside tail_mode.
    double mean_effect_stress = 0.0;
    double mean_effect_normal = 0.0;
    // Average marginal effect of the treatment on P(ret < -crash_threshold)
    // over the realized rows of each state (tail_mode; linear mode reports
    // the same quantity for its Gaussian/t body).
    double crash_sensitivity_stress = 0.0;
    double crash_sensitivity_normal = 0.0;
    // A market return recomputed from firm weights contains a 1/n_firms share
    // of each firm's own effect; effects on that excess return shrink by this.
    double excess_attenuation = 1.0;
    std::vector<YearMonth> stress_months;
    std::vector<double> market_factor;
    std::size_t n_complete_rows = 0;

    nlohmann::ordered_json to_json() const;
};

// The panel carries the raw fields (ret, esg, pillars, volume_usd, sigma,
// fundamentals, sector) and, for direct use by estimators, analysis columns
// holding the latent values: esg_lag1, the pillar lags, <control>_lag1 for
// the five controls, excess_ret = ret - market factor, and crash_020 style
// indicators. Running the preparation pipeline on the raw fields rebuilds
// those columns from data.
struct GeneratedPanel {
    PanelDataset panel;
    RegimeSeries regime;  // flags are the DGP's own stress months
    GroundTruth truth;
};

GeneratedPanel generate_panel(const DgpSpec& spec);

std::vector<std::string> lagged_controls();

struct EstimatorDescriptor {
    std::string name = "dml";  // dml | naive_ols
    std::string outcome = "excess_ret";
    std::string treatment = "esg_lag1";
    std::string regime = "all";  // all | stress | nonstress
    LearnerSpec learner;
    int n_folds = 5;
    bool sector_dummies = true;

    static EstimatorDescriptor from_json(const nlohmann::ordered_json& j);
    nlohmann::ordered_json to_json() const;
};

// Treatment effect the descriptor targets under the DGP.
double target_effect(const EstimatorDescriptor& est, const DgpSpec& dgp, const GroundTruth& truth);

struct EstimatorOutput {
    double beta = 0.0;
    double se = 0.0;
    double p = 1.0;
};

EstimatorOutput run_estimator(const EstimatorDescriptor& est, const GeneratedPanel& data, std::uint64_t seed);

struct SimResult {
    std::string estimator;
    int replications = 0;
    int n_failed = 0;
    double mean_bias = 0.0;
    double rmse = 0.0;
    double coverage = 0.0;        // share of 95% CIs covering the truth
    double rejection_rate = 0.0;  // share with p < 0.05 (size under a null)
    double mean_estimate = 0.0;
    double mean_truth = 0.0;
    double mean_se = 0.0;
    double sd_estimate = 0.0;
    double seconds_per_replication = 0.0;
    std::vector<double> estimates;
    std::vector<std::string> failure_log;

    nlohmann::ordered_json to_json() const;
};

// R independent panels with seeds derive_seed(dgp.seed, {r}). Throws
// InputError for R < 100 and EstimationError when more than 5% of the
// replications fail.
SimResult monte_carlo(const DgpSpec& dgp, const EstimatorDescriptor& est, int replications, int threads = 1);

}  // namespace tailrisk
