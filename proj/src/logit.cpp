#include "tailrisk/logit.h"

#include <algorithm>
#include <cmath>

#include "tailrisk/common.h"
#include "tailrisk/design.h"
#include "tailrisk/stats.h"

namespace tailrisk {

namespace {

double sigmoid(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

// log(1 + exp(eta)) without overflow.
double softplus(double eta) { return std::max(eta, 0.0) + std::log1p(std::exp(-std::fabs(eta))); }

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
    return out;
}

}  // namespace

Eigen::Index LogitFit::index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<Eigen::Index>(it - names.begin());
}

double LogitFit::coef_of(const std::string& name) const {
    const auto i = index_of(name);
    if (i < 0) throw InputError("no coefficient named " + name);
    return coef(i);
}

double logit_log_likelihood(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = X * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - softplus(eta(i));
    return ll;
}

Eigen::VectorXd logit_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd resid(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) resid(i) = y(i) - sigmoid(eta(i));
    return X.transpose() * resid;
}

namespace {

Eigen::MatrixXd logit_information(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double p = sigmoid(eta(i));
        w(i) = p * (1.0 - p);
    }
    return X.transpose() * w.asDiagonal() * X;
}

}  // namespace

LogitFit fit_logit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names,
                   const LogitOptions& options) {
    if (X.rows() != y.size()) throw InputError("design and outcome differ in length");
    if (static_cast<Eigen::Index>(names.size()) != X.cols()) throw InputError("coefficient names do not match design");
    const double ones = y.sum();
    if (X.rows() == 0 || ones <= 0.0 || ones >= static_cast<double>(y.size())) {
        throw EstimationError("degenerate outcome");
    }
    if (const auto bad = collinear_columns(X, names); !bad.empty()) {
        throw EstimationError("rank-deficient design; collinear columns: " + join(bad));
    }

    LogitFit fit;
    fit.names = std::move(names);
    fit.n_obs = static_cast<int>(X.rows());

    // Newton runs on standardized columns (centered too when an intercept is
    // present) so the separation bound does not depend on units. Z = X A.
    const Eigen::Index p = X.cols();
    Eigen::Index intercept = -1;
    for (Eigen::Index c = 0; c < p; ++c) {
        if ((X.col(c).array() == 1.0).all()) {
            intercept = c;
            break;
        }
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(p, p);
    for (Eigen::Index c = 0; c < p; ++c) {
        if (c == intercept) continue;
        const double mu = intercept >= 0 ? X.col(c).mean() : 0.0;
        const double sd = std::sqrt((X.col(c).array() - mu).square().mean());
        if (!(sd > 0.0)) continue;
        A(c, c) = 1.0 / sd;
        if (intercept >= 0) A(intercept, c) = -mu / sd;
    }
    const Eigen::MatrixXd Z = X * A;

    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(p);
    if (intercept >= 0) {
        const double rate = ones / static_cast<double>(y.size());
        gamma(intercept) = std::log(rate / (1.0 - rate));
    }
    double ll = logit_log_likelihood(Z, y, gamma);
    const double inner_tol = 1e-2 * options.score_tolerance;

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        const Eigen::VectorXd score = logit_score(Z, y, gamma);
        // The original-unit score picks up column means when mapped back, so
        // it is checked as well.
        const double raw_score = logit_score(X, y, A * gamma).cwiseAbs().maxCoeff();
        if (score.cwiseAbs().maxCoeff() < inner_tol && raw_score < 0.1 * options.score_tolerance) {
            fit.converged = true;
            break;
        }
        const Eigen::MatrixXd H = logit_information(Z, gamma);
        Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        Eigen::VectorXd step = ldlt.solve(score);
        if (ldlt.info() != Eigen::Success || !step.allFinite()) step = score;
        const double decrement = score.dot(step);
        // On large samples the decrement can vanish while the summed score is
        // still above tolerance; keep stepping in that case.
        if (decrement >= 0.0 && decrement < options.decrement_tolerance && raw_score < 0.1 * options.score_tolerance) {
            fit.converged = true;
            break;
        }

        double scale = 1.0;
        Eigen::VectorXd candidate = gamma + step;
        double ll_new = logit_log_likelihood(Z, y, candidate);
        // Near the optimum the predicted gain drops below the rounding error of
        // the summed log-likelihood, so a comparison can reject a good step.
        // Take the full Newton step there.
        if (decrement >= 0.0 && decrement < 1e-10 * std::max(1.0, std::fabs(ll))) {
            gamma = candidate;
            ll = ll_new;
            fit.iterations = iter + 1;
            continue;
        }
        int halvings = 0;
        while (!(ll_new >= ll) && halvings < options.max_halvings) {
            scale *= 0.5;
            candidate = gamma + scale * step;
            ll_new = logit_log_likelihood(Z, y, candidate);
            ++halvings;
        }
        fit.iterations = iter + 1;
        if (!(ll_new >= ll)) break;  // no ascent direction found

        const double gain = ll_new - ll;
        gamma = candidate;
        ll = ll_new;
        if (gamma.cwiseAbs().maxCoeff() > options.separation_bound && gain > 0.0 &&
            logit_score(Z, y, gamma).cwiseAbs().maxCoeff() >= inner_tol) {
            fit.separated = true;
            break;
        }
        if (gain == 0.0 && scale < 1.0) break;  // stalled at floating-point resolution
    }

    const Eigen::VectorXd beta = A * gamma;
    fit.max_abs_score = logit_score(X, y, beta).cwiseAbs().maxCoeff();
    if (!fit.separated) fit.converged = fit.max_abs_score < options.score_tolerance;
    ll = logit_log_likelihood(X, y, beta);

    fit.coef = beta;
    fit.log_likelihood = ll;
    fit.information = logit_information(X, beta);
    return fit;
}

Eigen::MatrixXd cluster_robust_cov(const LogitFit& fit, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const std::vector<int>& clusters, bool small_sample) {
    if (!fit.converged) throw EstimationError("clustered covariance requires a converged fit");
    if (static_cast<Eigen::Index>(clusters.size()) != X.rows()) throw InputError("cluster labels do not match rows");
    int G = 0;
    const std::vector<int> ids = dense_ids(clusters, &G);
    if (G < 2) throw EstimationError("clustered covariance needs at least 2 clusters");

    const Eigen::VectorXd eta = X * fit.coef;
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(G, X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        S.row(ids[static_cast<std::size_t>(i)]) += (y(i) - sigmoid(eta(i))) * X.row(i);
    }
    const Eigen::MatrixXd meat = S.transpose() * S;
    const Eigen::MatrixXd bread = fit.information.ldlt().solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
    Eigen::MatrixXd V = bread * meat * bread;
    if (small_sample) V *= static_cast<double>(G) / static_cast<double>(G - 1);
    return 0.5 * (V + V.transpose());
}

LogitFit fit_logit_clustered(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names,
                             const std::vector<int>& clusters, const LogitOptions& options) {
    LogitFit fit = fit_logit(X, y, std::move(names), options);
    int G = 0;
    dense_ids(clusters, &G);
    fit.n_clusters = G;
    if (!fit.converged) return fit;
    fit.cov_clustered = cluster_robust_cov(fit, X, y, clusters, true);
    fit.small_sample_factor = static_cast<double>(G) / static_cast<double>(G - 1);
    fit.se = fit.cov_clustered.diagonal().cwiseMax(0.0).cwiseSqrt();
    fit.z = fit.coef.cwiseQuotient(fit.se);
    fit.p.resize(fit.z.size());
    for (Eigen::Index i = 0; i < fit.z.size(); ++i) fit.p(i) = two_sided_normal_p(fit.z(i));
    return fit;
}

std::vector<double> odds_ratios(double beta, const std::vector<double>& units) {
    std::vector<double> out;
    out.reserve(units.size());
    for (double k : units) out.push_back(std::exp(k * beta));
    return out;
}

}  // namespace tailrisk
