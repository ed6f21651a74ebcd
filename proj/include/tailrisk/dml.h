#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tailrisk/learners.h"
#include "tailrisk/panel.h"
#include "tailrisk/regime.h"

namespace tailrisk {

struct FoldDiagnostic {
    int fold = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    int n_test_months = 0;
    double outcome_mse = 0.0;    // out-of-fold nuisance losses
    double treatment_mse = 0.0;
    Hyperparameters outcome_params;
    Hyperparameters treatment_params;
};

struct CrossfitResult {
    Eigen::VectorXd y_res;
    Eigen::VectorXd d_res;
    std::vector<int> fold;  // per row
    std::vector<FoldDiagnostic> folds;
};

// Month-block cross-fitting. Months are shuffled with the seed and dealt
// round-robin into K folds; nuisances for fold k are selected (cv_select) and
// fit on the other folds only. Throws InputError for K < 2 or K above the
// number of distinct months, and EstimationError naming the fold when a
// training complement has a constant outcome or treatment, or when the
// residualized treatment has (numerically) no variation left.
CrossfitResult crossfit_residuals(const Eigen::MatrixXd& W, const Eigen::VectorXd& y, const Eigen::VectorXd& d,
                                  const std::vector<int>& month_of_row, const RowKeys& keys,
                                  const LearnerSpec& learner, int n_folds, std::uint64_t seed, int threads = 1);

struct DmlEstimate {
    double beta = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p = 1.0;
    std::size_t n_obs = 0;
    int n_clusters = 0;
    double small_sample_factor = 1.0;
    double mean_d_res = 0.0;
    double mean_y_res = 0.0;
    double sum_d_res_sq = 0.0;
    std::vector<FoldDiagnostic> folds;
    std::size_t n_excluded = 0;  // rows dropped for missing values
    // Orthogonality diagnostics.
    double max_abs_corr_dres_w = 0.0;
    double corr_final_resid_dres = 0.0;
};

// beta = sum(D~ Y~) / sum(D~^2); month-clustered sandwich variance
// G/(G-1) * sum_g (sum_{i in g} D~_i e_i)^2 / (sum D~^2)^2.
DmlEstimate final_stage(const Eigen::VectorXd& y_res, const Eigen::VectorXd& d_res, const std::vector<int>& clusters);

struct DmlConfig {
    std::string outcome = "excess_ret";
    std::string treatment = "esg_lag1";
    LearnerSpec learner;
    int n_folds = 5;
    std::string regime = "stress";  // stress | nonstress | all
    std::uint64_t seed = 0;
    std::vector<std::string> controls;
    bool sector_dummies = true;
    bool interactions = false;  // add pairwise products of the controls to W
};

// Outcome names of the form crash_NNN are derived from returns on demand.
PanelDataset ensure_outcome_column(const PanelDataset& panel, const std::string& outcome);

std::string cell_key(const DmlConfig& config);

DmlEstimate estimate_dml(const PanelDataset& panel, const RegimeSeries& regime, const DmlConfig& config,
                         int threads = 1);

struct DmlCell {
    std::string regime;
    std::string outcome;
    std::string treatment;
    std::string treatment_label;
    std::string learner;
    std::optional<DmlEstimate> estimate;
    std::string error;

    std::string stars() const;
};

struct DmlMatrixConfig {
    std::vector<std::string> regimes{"stress", "nonstress"};
    std::vector<std::string> outcomes{"crash_020", "excess_ret"};
    std::vector<LearnerSpec> learners;  // empty: Lasso and random forest
    std::string treatment = "esg_lag1";
    int n_folds = 5;
    std::uint64_t seed = 0;
    std::vector<std::string> controls;
    bool sector_dummies = true;
    bool interactions = false;
};

std::vector<LearnerSpec> default_learners(const DmlMatrixConfig& config);

// Every regime x outcome x learner cell; a failing cell records its error and
// the rest still run.
std::vector<DmlCell> dml_matrix(const PanelDataset& panel, const RegimeSeries& regime, const DmlMatrixConfig& config,
                                int threads = 1);

struct PillarTreatment {
    std::string label;   // Agg, E, S, G
    std::string column;  // e.g. s_score_lag1
};

std::vector<PillarTreatment> default_pillars();

// Lasso-only matrix over the aggregate score and the three pillars. Throws
// InputError naming the first absent pillar column.
std::vector<DmlCell> pillar_matrix(const PanelDataset& panel, const RegimeSeries& regime,
                                   const DmlMatrixConfig& base,
                                   const std::vector<PillarTreatment>& pillars = default_pillars(), int threads = 1);

}  // namespace tailrisk
