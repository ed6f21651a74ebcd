#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tailrisk/bootstrap.h"
#include "tailrisk/panel.h"
#include "tailrisk/regime.h"

namespace tailrisk {

// rho_tau(u) = u * (tau - 1{u < 0}).
double check_loss(double u, double tau);
double pinball_loss(std::span<const double> residuals, double tau);

struct QuantileSolverOptions {
    bool smoothing = true;  // run the annealed smoothed-Newton phase first
    int anneal_stages = 6;
    double anneal_factor = 0.1;
    int max_newton = 50;
    int max_pivots = 5000;
    // Directional derivatives above -optimality_tol * sum(w) count as zero.
    double optimality_tol = 1e-10;
};

struct QuantileSolverInfo {
    int newton_iterations = 0;
    int pivots = 0;
    bool optimal = false;
    double final_smoothing = 0.0;
    double max_violation = 0.0;  // most negative edge derivative, sign flipped
};

struct QuantileSolution {
    Eigen::VectorXd coef;
    double objective = 0.0;
    std::vector<Eigen::Index> basis;  // rows interpolated exactly
    QuantileSolverInfo info;
};

// Minimizes sum_i w_i rho_tau(y_i - x_i' b). Weights default to one; rows
// with zero weight are ignored. `start` seeds the solver (the smoothed phase
// is skipped when smoothing is off). Throws EstimationError when X restricted
// to positive-weight rows lacks full column rank.
QuantileSolution solve_quantile(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double tau,
                                const QuantileSolverOptions& options = {}, const Eigen::VectorXd* weights = nullptr,
                                const Eigen::VectorXd* start = nullptr);

struct QuantileFit {
    double tau = 0.5;
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    double objective = 0.0;
    bool converged = false;
    QuantileSolverInfo info;
    std::size_t n_obs = 0;

    Eigen::Index index_of(const std::string& name) const;
    double coef_of(const std::string& name) const;
};

// Point estimate. Rank deficiency is an EstimationError naming the collinear
// columns; a solver that stops short of verified optimality returns a fit
// with converged = false.
QuantileFit fit_quantile(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names,
                         double tau, const QuantileSolverOptions& options = {});

struct QuantileSpec {
    std::vector<double> tau_grid{0.01, 0.02, 0.05, 0.10, 0.20};
    std::size_t n_boot = 800;
    std::uint64_t seed = 0;
    double ci_level = 0.95;
    // Minimum rows per design column for the full-sample fit.
    double min_rows_per_column = 10.0;
    double max_failure_share = 0.05;
};

struct QuantileModelSpec {
    std::string outcome = "excess_ret";
    std::string treatment = "esg_lag1";
    std::vector<std::string> controls;
    bool sector_dummies = true;
};

// Name of the 0/1 stress regressor and of the treatment x stress product.
inline const std::string kStressColumn = "stress";
std::string interaction_name(const std::string& treatment);

struct QuantityEstimate {
    double point = 0.0;
    std::optional<PercentileCi> ci;

    std::string stars() const { return ci && ci->excludes_zero() ? "*" : ""; }
};

struct QuantileRow {
    double tau = 0.0;
    QuantileFit fit;
    QuantityEstimate stress;
    QuantityEstimate esg_nonstress;
    QuantityEstimate interaction;
    QuantityEstimate esg_stress_slope;  // esg_nonstress + interaction
    std::size_t n_failed = 0;
};

struct QuantileTable {
    std::vector<QuantileRow> rows;
    std::size_t n_boot = 0;
    std::uint64_t seed = 0;
    std::size_t n_obs = 0;
    int n_months = 0;
    std::vector<std::string> names;
    std::vector<std::string> dropped_columns;
    std::vector<std::string> failure_log;
    QuantileSolverOptions solver;
};

// Adds the 0/1 stress column (missing outside the regime series).
PanelDataset with_stress_indicator(const PanelDataset& panel, const RegimeSeries& regime);

// Full-sample fits over the tau grid plus stratified month-block bootstrap
// percentile intervals. Bootstrap replicates reuse the full-sample design with
// month multiplicities as row weights.
QuantileTable quantile_table(const PanelDataset& panel, const RegimeSeries& regime, const QuantileSpec& spec,
                             const QuantileModelSpec& model, int threads = 0);

}  // namespace tailrisk
