#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracles.h"
#include "tailrisk/common.h"
#include "tailrisk/learners.h"

using namespace tailrisk;

namespace {

void random_regression(std::mt19937_64& rng, int n, int p, Eigen::MatrixXd& X, Eigen::VectorXd& y, double signal = 1.0) {
    std::normal_distribution<double> z(0.0, 1.0);
    X.resize(n, p);
    y.resize(n);
    for (int i = 0; i < n; ++i) {
        double m = 0.5;
        for (int j = 0; j < p; ++j) {
            X(i, j) = 2.0 * z(rng) + j;
            if (j < 3) m += signal * (j + 1) * 0.3 * X(i, j);
        }
        y(i) = m + z(rng);
    }
}

Eigen::MatrixXd standardized(const Eigen::MatrixXd& X) {
    Eigen::MatrixXd Z = X.rowwise() - X.colwise().mean();
    for (Eigen::Index j = 0; j < Z.cols(); ++j) Z.col(j) /= std::sqrt(Z.col(j).squaredNorm() / Z.rows());
    return Z;
}

}  // namespace

TEST(SoftThreshold, OperatorDefinition) {
    EXPECT_EQ(soft_threshold(3.0, 1.0), 2.0);
    EXPECT_EQ(soft_threshold(-0.5, 1.0), 0.0);
    EXPECT_EQ(soft_threshold(-3.0, 1.0), -2.0);
}

TEST(Lasso, ZeroPenaltyMatchesNormalEquations) {
    std::mt19937_64 rng(1);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 60, 4, X, y);
    const FittedLearner f = fit_lasso(X, y, 0.0);
    Eigen::MatrixXd Xi(60, 5);
    Xi.col(0).setOnes();
    Xi.rightCols(4) = X;
    const Eigen::VectorXd b = oracle::normal_equations(Xi, y);
    EXPECT_NEAR(f.intercept, b(0), 1e-6);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(f.coef(j), b(j + 1), 1e-6);
    EXPECT_FALSE(f.flagged);
}

TEST(Lasso, PenaltyAtLambdaMaxZeroesEverySlope) {
    std::mt19937_64 rng(2);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 80, 6, X, y);
    // Oracle: max_j |Z_j' (y - ybar)| / n on independently standardized X.
    const Eigen::MatrixXd Z = standardized(X);
    const double lmax = (Z.transpose() * (y.array() - y.mean()).matrix()).cwiseAbs().maxCoeff() / 80.0;
    EXPECT_NEAR(lasso_lambda_max(X, y), lmax, 1e-12);
    for (double l : {lmax, 1.5 * lmax}) {
        const FittedLearner f = fit_lasso(X, y, l);
        for (int j = 0; j < 6; ++j) EXPECT_EQ(f.coef(j), 0.0);
        EXPECT_NEAR(f.intercept, y.mean(), 1e-12);
    }
}

TEST(Lasso, KktConditionsHold) {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::MatrixXd X;
        Eigen::VectorXd y;
        random_regression(rng, 50 + 5 * rep, 8, X, y);
        const double lambda = lasso_lambda_max(X, y) * (0.05 + 0.09 * rep);
        const FittedLearner f = fit_lasso(X, y, lambda);
        const Eigen::MatrixXd Z = standardized(X);
        const Eigen::VectorXd r = y - f.predict(X);
        const double n = static_cast<double>(X.rows());
        for (int j = 0; j < 8; ++j) {
            const double grad = std::fabs(Z.col(j).dot(r));
            if (f.coef(j) == 0.0) {
                EXPECT_LE(grad, n * lambda + 1e-6);
            } else {
                EXPECT_NEAR(grad, n * lambda, 1e-4 * n);
            }
        }
    }
}

TEST(Lasso, SingularDesignAtZeroPenaltyIsFlagged) {
    std::mt19937_64 rng(4);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 40, 3, X, y);
    Eigen::MatrixXd X2(40, 4);
    X2.leftCols(3) = X;
    X2.col(3) = X.col(0) + X.col(1);
    LassoOptions o;
    o.max_sweeps = 2000;
    const FittedLearner f = fit_lasso(X2, y, 0.0, o);
    EXPECT_TRUE(f.flagged);
    EXPECT_TRUE(f.predict(X2).allFinite());
}

TEST(Lasso, RowPermutationDoesNotChangeFit) {
    std::mt19937_64 rng(5);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 70, 5, X, y);
    std::vector<int> perm(70);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd Xp(70, 5);
    Eigen::VectorXd yp(70);
    for (int i = 0; i < 70; ++i) {
        Xp.row(i) = X.row(perm[static_cast<std::size_t>(i)]);
        yp(i) = y(perm[static_cast<std::size_t>(i)]);
    }
    const double l = 0.1 * lasso_lambda_max(X, y);
    const FittedLearner a = fit_lasso(X, y, l);
    const FittedLearner b = fit_lasso(Xp, yp, l);
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(a.coef(j), b.coef(j), 1e-9);
}

TEST(Lasso, LambdaGridIsLogSpaced) {
    std::mt19937_64 rng(6);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 40, 3, X, y);
    const auto g = lasso_lambda_grid(X, y);
    ASSERT_EQ(g.size(), 30u);
    EXPECT_DOUBLE_EQ(g.front(), lasso_lambda_max(X, y));
    EXPECT_NEAR(g.back(), g.front() * 1e-3, 1e-15);
    for (std::size_t k = 1; k < g.size(); ++k) EXPECT_LT(g[k], g[k - 1]);
}

TEST(Forest, DepthZeroPredictsTrainingMean) {
    std::mt19937_64 rng(7);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 30, 3, X, y);
    ForestParams p;
    p.n_trees = 1;
    p.max_depth = 0;
    const FittedLearner f = fit_forest(X, y, p, 1);
    const Eigen::VectorXd pred = f.predict(X);
    for (Eigen::Index i = 0; i < pred.size(); ++i) EXPECT_DOUBLE_EQ(pred(i), y.mean());
}

TEST(Forest, ConstantTargetPredictsConstant) {
    std::mt19937_64 rng(8);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 50, 3, X, y);
    y.setConstant(7.0);
    const FittedLearner f = fit_forest(X, y, ForestParams{}, 3);
    Eigen::MatrixXd probe = Eigen::MatrixXd::Random(10, 3) * 100.0;
    const Eigen::VectorXd pred = f.predict(probe);
    for (Eigen::Index i = 0; i < pred.size(); ++i) EXPECT_EQ(pred(i), 7.0);
}

namespace {

// Exhaustive split scan for a single regressor: best threshold (midpoint)
// and leaf means under squared loss.
struct Split {
    double threshold, left, right;
};
Split exhaustive_split(const std::vector<double>& x, const std::vector<double>& y) {
    Split best{0, 0, 0};
    double best_sse = 1e300;
    std::vector<double> xs = x;
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
        if (xs[k] == xs[k + 1]) continue;
        const double t = 0.5 * (xs[k] + xs[k + 1]);
        double sl = 0, nl = 0, sr = 0, nr = 0;
        for (std::size_t i = 0; i < x.size(); ++i) (x[i] <= t ? (sl += y[i], nl += 1) : (sr += y[i], nr += 1));
        const double ml = sl / nl, mr = sr / nr;
        double sse = 0;
        for (std::size_t i = 0; i < x.size(); ++i) sse += std::pow(y[i] - (x[i] <= t ? ml : mr), 2);
        if (sse < best_sse) {
            best_sse = sse;
            best = {t, ml, mr};
        }
    }
    return best;
}

}  // namespace

TEST(Forest, StepFunctionSplitMatchesExhaustiveScan) {
    std::vector<double> xv, yv;
    for (int i = 0; i <= 20; ++i) {
        xv.push_back(i / 20.0);
        yv.push_back(i / 20.0 > 0.5 ? 1.0 : 0.0);
    }
    const Split s = exhaustive_split(xv, yv);
    Eigen::MatrixXd X = Eigen::Map<Eigen::VectorXd>(xv.data(), 21);
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(yv.data(), 21);
    ForestParams p;
    p.n_trees = 1;
    p.max_depth = 1;
    p.min_leaf = 1;
    p.feature_fraction = 1.0;
    p.bootstrap = false;
    const FittedLearner f = fit_forest(X, y, p, 9);
    ASSERT_EQ(f.trees.size(), 1u);
    const auto& t = f.trees[0];
    EXPECT_GT(t.threshold[0], 0.4);
    EXPECT_LT(t.threshold[0], 0.6);
    EXPECT_DOUBLE_EQ(t.threshold[0], s.threshold);
    EXPECT_EQ(t.value[static_cast<std::size_t>(t.left[0])], s.left);
    EXPECT_EQ(t.value[static_cast<std::size_t>(t.right[0])], s.right);
    EXPECT_EQ(s.left, 0.0);
    EXPECT_EQ(s.right, 1.0);

    GbmParams g;
    g.n_rounds = 1;
    g.learning_rate = 1.0;
    g.max_depth = 1;
    g.min_leaf = 1;
    const FittedLearner b = fit_gbm(X, y, g, 9);
    EXPECT_LT((b.predict(X) - f.predict(X)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Forest, DeterministicAndRowOrderInvariant) {
    std::mt19937_64 rng(10);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 120, 5, X, y);
    ForestParams p;
    p.n_trees = 25;
    RowKeys keys(120);
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = 1000 + 7 * i;
    const FittedLearner a = fit_forest(X, y, p, 42, &keys);
    const FittedLearner b = fit_forest(X, y, p, 42, &keys, 3);
    EXPECT_EQ(a.predict(X), b.predict(X));

    std::vector<int> perm(120);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd Xp(120, 5);
    Eigen::VectorXd yp(120);
    RowKeys kp(120);
    for (int i = 0; i < 120; ++i) {
        Xp.row(i) = X.row(perm[static_cast<std::size_t>(i)]);
        yp(i) = y(perm[static_cast<std::size_t>(i)]);
        kp[static_cast<std::size_t>(i)] = keys[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    const FittedLearner c = fit_forest(Xp, yp, p, 42, &kp);
    EXPECT_EQ(a.predict(X), c.predict(X));
}

TEST(Gbm, ZeroRoundsAndMonotoneTrainingLoss) {
    std::mt19937_64 rng(11);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 150, 4, X, y);
    GbmParams g;
    g.n_rounds = 0;
    const FittedLearner z = fit_gbm(X, y, g, 1);
    EXPECT_DOUBLE_EQ(z.predict(X)(3), y.mean());
    g.n_rounds = 60;
    const FittedLearner f = fit_gbm(X, y, g, 1);
    for (std::size_t k = 1; k < f.loss_path.size(); ++k) EXPECT_LE(f.loss_path[k], f.loss_path[k - 1] + 1e-12);
    EXPECT_EQ(f.predict(X), fit_gbm(X, y, g, 1).predict(X));
}

TEST(Learners, JsonRoundTripPreservesPredictions) {
    std::mt19937_64 rng(12);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 80, 4, X, y);
    ForestParams fp;
    fp.n_trees = 5;
    GbmParams gp;
    gp.n_rounds = 10;
    for (const FittedLearner& f : {fit_lasso(X, y, 0.01), fit_forest(X, y, fp, 2), fit_gbm(X, y, gp, 2)}) {
        const auto j = f.to_json();
        EXPECT_EQ(j["schema_version"], 1);
        const FittedLearner g = FittedLearner::from_json(nlohmann::ordered_json::parse(j.dump()));
        EXPECT_EQ(f.predict(X), g.predict(X));
    }
}

TEST(Learners, InvalidHyperparametersRejected) {
    EXPECT_THROW(validate(LassoParams{-1.0}), InputError);
    GbmParams g;
    g.learning_rate = 1.5;
    EXPECT_THROW(validate(g), InputError);
    ForestParams f;
    f.n_trees = 0;
    EXPECT_THROW(validate(f), InputError);
}

TEST(CvSelect, SinglePointAndTieRule) {
    std::mt19937_64 rng(13);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 60, 3, X, y);
    EXPECT_EQ(std::get<LassoParams>(cv_select(X, y, {LassoParams{0.3}}, 5, 1).selected).lambda, 0.3);
    // Both lambdas exceed lambda_max: identical predictions, so the larger
    // one must win the tie.
    const double top = lasso_lambda_max(X, y);
    const auto r = cv_select(X, y, {LassoParams{2 * top}, LassoParams{5 * top}}, 5, 1);
    EXPECT_EQ(std::get<LassoParams>(r.selected).lambda, 5 * top);
    const auto r2 = cv_select(X, y, {LassoParams{5 * top}, LassoParams{2 * top}}, 5, 1);
    EXPECT_EQ(std::get<LassoParams>(r2.selected).lambda, 5 * top);
}

TEST(CvSelect, PureNoisePrefersHeavyPenalty) {
    int heavy = 0;
    const int trials = 40;
    for (int s = 0; s < trials; ++s) {
        std::mt19937_64 rng(1000 + s);
        std::normal_distribution<double> z;
        Eigen::MatrixXd X(100, 10);
        Eigen::VectorXd y(100);
        for (int i = 0; i < 100; ++i) {
            for (int j = 0; j < 10; ++j) X(i, j) = z(rng);
            y(i) = z(rng);
        }
        const auto r = cv_select(X, y, {LassoParams{1e-4}, LassoParams{100.0}}, 5, static_cast<std::uint64_t>(s));
        heavy += std::get<LassoParams>(r.selected).lambda == 100.0;
    }
    EXPECT_GE(heavy, static_cast<int>(0.9 * trials));
}

TEST(CvSelect, ForestGridPicksAPointAndIsDeterministic) {
    std::mt19937_64 rng(14);
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    random_regression(rng, 100, 3, X, y);
    ForestParams a, b;
    a.n_trees = b.n_trees = 10;
    a.max_depth = 2;
    b.max_depth = 4;
    const auto r1 = cv_select(X, y, {a, b}, 4, 3);
    const auto r2 = cv_select(X, y, {a, b}, 4, 3, nullptr, 2);
    EXPECT_EQ(r1.path[0].mse, r2.path[0].mse);
    EXPECT_EQ(r1.path[1].mse, r2.path[1].mse);
    EXPECT_TRUE(more_regularized(a, b));
}
