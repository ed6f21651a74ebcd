#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tailrisk {

struct LogitOptions {
    int max_iterations = 100;
    int max_halvings = 20;
    double score_tolerance = 1e-8;
    // Newton decrement g' H^-1 g below this also counts as converged.
    double decrement_tolerance = 1e-20;
    double separation_bound = 15.0;
};

struct LogitFit {
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    Eigen::MatrixXd information;  // observed information X' W X at coef
    Eigen::MatrixXd cov_clustered;
    Eigen::VectorXd se;
    Eigen::VectorXd z;
    Eigen::VectorXd p;
    double log_likelihood = 0.0;
    double max_abs_score = 0.0;
    double small_sample_factor = 1.0;
    int n_obs = 0;
    int n_clusters = 0;
    int iterations = 0;
    bool converged = false;
    bool separated = false;

    Eigen::Index index_of(const std::string& name) const;
    double coef_of(const std::string& name) const;
};

double logit_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta);
Eigen::VectorXd logit_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta);

// Maximum likelihood by damped Newton with step halving. Throws
// EstimationError("degenerate outcome") when y has a single class and names
// the collinear columns when X is rank deficient. Separation is reported
// through the separated flag, not an exception.
LogitFit fit_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names,
                   const LogitOptions& options = {});

// H^-1 (sum_g s_g s_g') H^-1, times G/(G-1) when small_sample is set. Requires
// a converged fit and at least two clusters.
Eigen::MatrixXd cluster_robust_cov(const LogitFit& fit, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const std::vector<int>& clusters, bool small_sample = true);

// Fits, then fills cov_clustered, se, z and p from month-clustered scores.
LogitFit fit_logit_clustered(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names,
                             const std::vector<int>& clusters, const LogitOptions& options = {});

// exp(k * beta) for each k.
std::vector<double> odds_ratios(double beta, const std::vector<double>& units);

}  // namespace tailrisk
