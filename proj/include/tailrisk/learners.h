#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace tailrisk {

enum class LearnerKind { lasso, random_forest, gbm };

std::string to_string(LearnerKind kind);
LearnerKind parse_learner_kind(const std::string& text);

struct LassoParams {
    double lambda = 0.0;
};

struct ForestParams {
    int n_trees = 200;
    int max_depth = 6;
    int min_leaf = 5;
    double feature_fraction = 1.0 / 3.0;
    bool bootstrap = true;
};

struct GbmParams {
    int n_rounds = 200;
    double learning_rate = 0.1;
    int max_depth = 2;
    int min_leaf = 5;
};

using Hyperparameters = std::variant<LassoParams, ForestParams, GbmParams>;

LearnerKind kind_of(const Hyperparameters& h);
// Throws InputError for invalid values (negative lambda, non-positive counts,
// learning rate outside (0, 1], feature fraction outside (0, 1]).
void validate(const Hyperparameters& h);
std::string describe(const Hyperparameters& h);
nlohmann::ordered_json to_json(const Hyperparameters& h);
Hyperparameters hyperparameters_from_json(LearnerKind kind, const nlohmann::ordered_json& j);

// Flattened regression tree. Leaves have feature == -1.
struct RegressionTree {
    std::vector<int> feature;
    std::vector<double> threshold;
    std::vector<int> left;
    std::vector<int> right;
    std::vector<double> value;

    double predict(const double* x, Eigen::Index stride) const;
    int depth() const;
};

struct FittedLearner {
    LearnerKind kind = LearnerKind::lasso;
    Hyperparameters params;
    std::size_t n_features = 0;
    std::vector<std::string> feature_names;

    // Lasso: prediction = intercept + coef' x (original units).
    double intercept = 0.0;
    Eigen::VectorXd coef;
    bool flagged = false;  // lambda = 0 on a singular design
    int sweeps = 0;

    // Tree ensembles: forest = mean of trees; gbm = base + rate * sum.
    double base = 0.0;
    std::vector<RegressionTree> trees;

    double in_sample_loss = 0.0;
    std::vector<double> loss_path;  // gbm: training MSE after each round

    Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
    nlohmann::ordered_json to_json() const;
    static FittedLearner from_json(const nlohmann::ordered_json& j);
};

// S(z, g) = sign(z) max(|z| - g, 0).
double soft_threshold(double z, double gamma);

struct LassoOptions {
    // Stop when no standardized coefficient moves more than tolerance * sd(y).
    double tolerance = 1e-7;
    int max_sweeps = 100000;
};

// Minimizes (1/2n)||y - b0 - X b||^2 + lambda ||b||_1 with X standardized
// internally (population sd); the intercept is unpenalized. Zero-variance
// columns get a zero coefficient.
FittedLearner fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                        const LassoOptions& options = {});

// max_j |X_j' (y - ybar)| / n on standardized columns: the smallest lambda
// with an all-zero slope vector.
double lasso_lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// `count` log-spaced values from lambda_max down to lambda_max * ratio,
// descending.
std::vector<double> lasso_lambda_grid(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int count = 30,
                                      double ratio = 1e-3);

// Stable identity of each training row. Forest bootstrap draws are keyed on
// it so that permuting rows does not change the fit.
using RowKeys = std::vector<std::uint64_t>;

FittedLearner fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestParams& params,
                         std::uint64_t seed, const RowKeys* keys = nullptr, int threads = 1);

FittedLearner fit_gbm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GbmParams& params, std::uint64_t seed,
                      const RowKeys* keys = nullptr);

FittedLearner fit_learner(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Hyperparameters& params,
                          std::uint64_t seed, const RowKeys* keys = nullptr);

struct CvPoint {
    Hyperparameters params;
    double mse = 0.0;
};

struct CvResult {
    Hyperparameters selected;
    std::vector<CvPoint> path;
};

// Ordering used for ties: true when a is more regularized than b.
bool more_regularized(const Hyperparameters& a, const Hyperparameters& b);

// K-fold CV mean squared error per grid point; the minimum wins and ties go
// to the more regularized point. Folds are a seeded shuffle of row keys.
CvResult cv_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<Hyperparameters>& grid,
                   int folds, std::uint64_t seed, const RowKeys* keys = nullptr, int threads = 1);

// Learner choice for a nuisance fit. An empty grid means the kind's default:
// the data-driven lambda path for Lasso, or the single default setting for
// the tree learners.
struct LearnerSpec {
    LearnerKind kind = LearnerKind::lasso;
    std::vector<Hyperparameters> grid;
    int cv_folds = 5;
    int lambda_count = 30;
    double lambda_ratio = 1e-3;
};

std::vector<Hyperparameters> resolve_grid(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

}  // namespace tailrisk
