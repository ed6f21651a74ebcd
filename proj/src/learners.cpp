#include "tailrisk/learners.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

#include "tailrisk/common.h"
#include "tailrisk/stats.h"

namespace tailrisk {

using nlohmann::ordered_json;

std::string to_string(LearnerKind kind) {
    switch (kind) {
        case LearnerKind::lasso: return "lasso";
        case LearnerKind::random_forest: return "random_forest";
        case LearnerKind::gbm: return "gbm";
    }
    return "unknown";
}

LearnerKind parse_learner_kind(const std::string& text) {
    if (text == "lasso") return LearnerKind::lasso;
    if (text == "random_forest" || text == "rf") return LearnerKind::random_forest;
    if (text == "gbm") return LearnerKind::gbm;
    throw InputError("unknown learner: " + text);
}

LearnerKind kind_of(const Hyperparameters& h) {
    if (std::holds_alternative<LassoParams>(h)) return LearnerKind::lasso;
    if (std::holds_alternative<ForestParams>(h)) return LearnerKind::random_forest;
    return LearnerKind::gbm;
}

void validate(const Hyperparameters& h) {
    if (const auto* l = std::get_if<LassoParams>(&h)) {
        if (!(l->lambda >= 0.0)) throw InputError("lambda must be non-negative");
    } else if (const auto* f = std::get_if<ForestParams>(&h)) {
        if (f->n_trees < 1 || f->max_depth < 0 || f->min_leaf < 1) throw InputError("invalid forest hyperparameters");
        if (!(f->feature_fraction > 0.0 && f->feature_fraction <= 1.0)) {
            throw InputError("feature_fraction must lie in (0, 1]");
        }
    } else {
        const auto& g = std::get<GbmParams>(h);
        if (g.n_rounds < 0 || g.max_depth < 0 || g.min_leaf < 1) throw InputError("invalid gbm hyperparameters");
        if (!(g.learning_rate > 0.0 && g.learning_rate <= 1.0)) throw InputError("learning_rate must lie in (0, 1]");
    }
}

std::string describe(const Hyperparameters& h) { return to_json(h).dump(); }

ordered_json to_json(const Hyperparameters& h) {
    ordered_json j;
    if (const auto* l = std::get_if<LassoParams>(&h)) {
        j["lambda"] = l->lambda;
    } else if (const auto* f = std::get_if<ForestParams>(&h)) {
        j["n_trees"] = f->n_trees;
        j["max_depth"] = f->max_depth;
        j["min_leaf"] = f->min_leaf;
        j["feature_fraction"] = f->feature_fraction;
        j["bootstrap"] = f->bootstrap;
    } else {
        const auto& g = std::get<GbmParams>(h);
        j["n_rounds"] = g.n_rounds;
        j["learning_rate"] = g.learning_rate;
        j["max_depth"] = g.max_depth;
        j["min_leaf"] = g.min_leaf;
    }
    return j;
}

Hyperparameters hyperparameters_from_json(LearnerKind kind, const ordered_json& j) {
    Hyperparameters out;
    switch (kind) {
        case LearnerKind::lasso: {
            LassoParams p;
            p.lambda = j.value("lambda", p.lambda);
            out = p;
            break;
        }
        case LearnerKind::random_forest: {
            ForestParams p;
            p.n_trees = j.value("n_trees", p.n_trees);
            p.max_depth = j.value("max_depth", p.max_depth);
            p.min_leaf = j.value("min_leaf", p.min_leaf);
            p.feature_fraction = j.value("feature_fraction", p.feature_fraction);
            p.bootstrap = j.value("bootstrap", p.bootstrap);
            out = p;
            break;
        }
        case LearnerKind::gbm: {
            GbmParams p;
            p.n_rounds = j.value("n_rounds", p.n_rounds);
            p.learning_rate = j.value("learning_rate", p.learning_rate);
            p.max_depth = j.value("max_depth", p.max_depth);
            p.min_leaf = j.value("min_leaf", p.min_leaf);
            out = p;
            break;
        }
    }
    validate(out);
    return out;
}

// ---------------------------------------------------------------------------
// Trees

double RegressionTree::predict(const double* x, Eigen::Index stride) const {
    int node = 0;
    while (feature[static_cast<std::size_t>(node)] >= 0) {
        const auto k = static_cast<std::size_t>(node);
        node = x[feature[k] * stride] <= threshold[k] ? left[k] : right[k];
    }
    return value[static_cast<std::size_t>(node)];
}

int RegressionTree::depth() const {
    std::vector<int> d(feature.size(), 0);
    int best = 0;
    for (std::size_t k = 0; k < feature.size(); ++k) {
        if (feature[k] < 0) continue;
        d[static_cast<std::size_t>(left[k])] = d[k] + 1;
        d[static_cast<std::size_t>(right[k])] = d[k] + 1;
        best = std::max(best, d[k] + 1);
    }
    return best;
}

namespace {

// Row order per feature, sorted by (value, key). Shared by every tree of a fit.
std::vector<std::vector<int>> presort(const Eigen::MatrixXd& X, const RowKeys& keys) {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        auto& o = out[static_cast<std::size_t>(j)];
        o.resize(static_cast<std::size_t>(X.rows()));
        std::iota(o.begin(), o.end(), 0);
        std::sort(o.begin(), o.end(), [&](int a, int b) {
            const double xa = X(a, j), xb = X(b, j);
            if (xa != xb) return xa < xb;
            return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
        });
    }
    return out;
}

struct TreeBuilder {
    const Eigen::MatrixXd& X;
    const Eigen::VectorXd& y;
    const std::vector<double>& w;
    int max_depth;
    int min_leaf;
    int mtry;
    std::uint64_t seed;

    std::vector<std::vector<int>> order;  // per feature, rows with w > 0
    std::vector<char> goes_left;
    std::vector<int> scratch;
    RegressionTree tree;

    int add_leaf(double v) {
        tree.feature.push_back(-1);
        tree.threshold.push_back(0.0);
        tree.left.push_back(-1);
        tree.right.push_back(-1);
        tree.value.push_back(v);
        return static_cast<int>(tree.feature.size()) - 1;
    }

    int build(std::size_t lo, std::size_t hi, int depth) {
        const auto& base = order[0];
        double W = 0.0, S = 0.0, SS = 0.0;
        for (std::size_t q = lo; q < hi; ++q) {
            const int i = base[q];
            const double wi = w[static_cast<std::size_t>(i)];
            W += wi;
            S += wi * y(i);
            SS += wi * y(i) * y(i);
        }
        const int node = add_leaf(W > 0.0 ? S / W : 0.0);
        if (depth >= max_depth || W < 2.0 * min_leaf) return node;

        const int p = static_cast<int>(X.cols());
        std::vector<int> features(static_cast<std::size_t>(p));
        std::iota(features.begin(), features.end(), 0);
        if (mtry < p) {
            std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(node)}));
            for (int k = 0; k < mtry; ++k) {
                std::uniform_int_distribution<int> pick(k, p - 1);
                std::swap(features[static_cast<std::size_t>(k)], features[static_cast<std::size_t>(pick(rng))]);
            }
            features.resize(static_cast<std::size_t>(mtry));
            std::sort(features.begin(), features.end());
        }

        const double parent = S * S / W;
        double best_gain = 1e-12 * std::max(1e-300, SS - parent);
        int best_f = -1;
        double best_thr = 0.0;
        for (int f : features) {
            const auto& o = order[static_cast<std::size_t>(f)];
            double wl = 0.0, sl = 0.0;
            for (std::size_t q = lo; q + 1 < hi; ++q) {
                const int i = o[q];
                const double wi = w[static_cast<std::size_t>(i)];
                wl += wi;
                sl += wi * y(i);
                const double x0 = X(i, f);
                const double x1 = X(o[q + 1], f);
                if (!(x1 > x0)) continue;
                const double wr = W - wl;
                if (wl < min_leaf || wr < min_leaf) continue;
                const double sr = S - sl;
                const double gain = sl * sl / wl + sr * sr / wr - parent;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_f = f;
                    best_thr = 0.5 * (x0 + x1);
                    if (!(best_thr < x1)) best_thr = x0;
                }
            }
        }
        if (best_f < 0) return node;

        // Stable partition of every feature's segment.
        std::size_t n_left = 0;
        for (std::size_t q = lo; q < hi; ++q) {
            const int i = base[q];
            const bool l = X(i, best_f) <= best_thr;
            goes_left[static_cast<std::size_t>(i)] = l;
            n_left += l;
        }
        for (auto& o : order) {
            std::size_t a = lo;
            std::size_t b = 0;
            for (std::size_t q = lo; q < hi; ++q) {
                const int i = o[q];
                if (goes_left[static_cast<std::size_t>(i)]) {
                    o[a++] = i;
                } else {
                    scratch[b++] = i;
                }
            }
            std::copy(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(b),
                      o.begin() + static_cast<std::ptrdiff_t>(a));
        }
        const auto k = static_cast<std::size_t>(node);
        tree.feature[k] = best_f;
        tree.threshold[k] = best_thr;
        const int l = build(lo, lo + n_left, depth + 1);
        const int r = build(lo + n_left, hi, depth + 1);
        tree.left[k] = l;
        tree.right[k] = r;
        return node;
    }
};

RegressionTree grow_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<double>& w,
                         const std::vector<std::vector<int>>& sorted, int max_depth, int min_leaf, int mtry,
                         std::uint64_t seed) {
    TreeBuilder b{X, y, w, max_depth, min_leaf, mtry, seed, {}, {}, {}, {}};
    b.order.resize(sorted.size());
    for (std::size_t j = 0; j < sorted.size(); ++j) {
        auto& o = b.order[j];
        o.reserve(sorted[j].size());
        for (int i : sorted[j]) {
            if (w[static_cast<std::size_t>(i)] > 0.0) o.push_back(i);
        }
    }
    b.goes_left.assign(static_cast<std::size_t>(X.rows()), 0);
    b.scratch.resize(b.order.empty() ? 0 : b.order[0].size());
    if (b.order.empty() || b.order[0].empty()) {
        b.add_leaf(0.0);
        return b.tree;
    }
    b.build(0, b.order[0].size(), 0);
    return b.tree;
}

// Poisson(1) count from a uniform draw by CDF inversion.
double poisson1(double u) {
    double p = std::exp(-1.0);
    double cdf = p;
    int k = 0;
    while (u >= cdf && k < 20) {
        ++k;
        p /= k;
        cdf += p;
    }
    return k;
}

RowKeys default_keys(Eigen::Index n) {
    RowKeys keys(static_cast<std::size_t>(n));
    std::iota(keys.begin(), keys.end(), std::uint64_t{0});
    return keys;
}

double mse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.size() ? (a - b).squaredNorm() / static_cast<double>(a.size()) : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Lasso

double soft_threshold(double z, double gamma) {
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

namespace {

struct Standardized {
    Eigen::VectorXd mu;
    Eigen::VectorXd sd;  // 0 for constant columns
    double ybar = 0.0;
    double y_scale = 0.0;  // population sd of y; the stopping rule is relative to it
    Eigen::MatrixXd G;  // Xc' Xc / n
    Eigen::VectorXd c;  // Xc' (y - ybar) / n
};

Standardized standardize_gram(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    Standardized s;
    const auto n = static_cast<double>(X.rows());
    const Eigen::Index p = X.cols();
    s.mu = X.colwise().mean().transpose();
    s.sd.resize(p);
    Eigen::MatrixXd Xc = X.rowwise() - s.mu.transpose();
    for (Eigen::Index j = 0; j < p; ++j) {
        const double v = std::sqrt(Xc.col(j).squaredNorm() / n);
        s.sd(j) = v > 1e-12 * std::max(1.0, std::fabs(s.mu(j))) ? v : 0.0;
        if (s.sd(j) > 0.0) {
            Xc.col(j) /= s.sd(j);
        } else {
            Xc.col(j).setZero();
        }
    }
    s.ybar = y.mean();
    s.y_scale = std::sqrt((y.array() - s.ybar).square().mean());
    s.G = (Xc.transpose() * Xc) / n;
    s.c = Xc.transpose() * (y.array() - s.ybar).matrix() / n;
    return s;
}

// Cyclic coordinate descent on the standardized problem, warm-started from
// beta. Returns the number of sweeps.
int coordinate_descent(const Standardized& s, double lambda, const LassoOptions& opt, Eigen::VectorXd& beta) {
    const Eigen::Index p = s.c.size();
    Eigen::VectorXd Gb = s.G * beta;
    int sweeps = 0;
    while (sweeps < opt.max_sweeps) {
        ++sweeps;
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (s.sd(j) == 0.0) continue;
            const double gjj = s.G(j, j);
            const double z = s.c(j) - (Gb(j) - gjj * beta(j));
            const double next = soft_threshold(z, lambda) / gjj;
            const double delta = next - beta(j);
            if (delta != 0.0) {
                Gb += delta * s.G.col(j);
                beta(j) = next;
                max_delta = std::max(max_delta, std::fabs(delta));
            }
        }
        if (max_delta <= opt.tolerance * s.y_scale) break;
    }
    return sweeps;
}

FittedLearner lasso_from_standardized(const Standardized& s, const Eigen::VectorXd& beta, double lambda,
                                      std::size_t n_features) {
    FittedLearner f;
    f.kind = LearnerKind::lasso;
    f.params = LassoParams{lambda};
    f.n_features = n_features;
    f.coef.resize(static_cast<Eigen::Index>(n_features));
    f.intercept = s.ybar;
    for (Eigen::Index j = 0; j < f.coef.size(); ++j) {
        f.coef(j) = s.sd(j) > 0.0 ? beta(j) / s.sd(j) : 0.0;
        f.intercept -= f.coef(j) * s.mu(j);
    }
    return f;
}

}  // namespace

double lasso_lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const Standardized s = standardize_gram(X, y);
    return s.c.size() ? s.c.cwiseAbs().maxCoeff() : 0.0;
}

std::vector<double> lasso_lambda_grid(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int count, double ratio) {
    const double top = lasso_lambda_max(X, y);
    std::vector<double> grid;
    if (count <= 1 || !(top > 0.0)) {
        grid.push_back(top);
        return grid;
    }
    for (int k = 0; k < count; ++k) {
        grid.push_back(top * std::pow(ratio, static_cast<double>(k) / (count - 1)));
    }
    return grid;
}

FittedLearner fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                        const LassoOptions& options) {
    validate(LassoParams{lambda});
    if (X.rows() != y.size() || X.rows() == 0) throw InputError("lasso needs matching, non-empty X and y");
    const Standardized s = standardize_gram(X, y);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
    const int sweeps = coordinate_descent(s, lambda, options, beta);
    FittedLearner f = lasso_from_standardized(s, beta, lambda, static_cast<std::size_t>(X.cols()));
    f.sweeps = sweeps;
    if (lambda == 0.0 && X.cols() > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.G);
        const double top = es.eigenvalues().maxCoeff();
        int active = 0;
        for (Eigen::Index j = 0; j < s.sd.size(); ++j) active += s.sd(j) > 0.0;
        int positive = 0;
        for (Eigen::Index j = 0; j < es.eigenvalues().size(); ++j) positive += es.eigenvalues()(j) > 1e-10 * top;
        f.flagged = positive < active;
    }
    f.in_sample_loss = mse(f.predict(X), y);
    return f;
}

// ---------------------------------------------------------------------------
// Ensembles

FittedLearner fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestParams& params,
                         std::uint64_t seed, const RowKeys* keys, int threads) {
    validate(params);
    if (X.rows() != y.size() || X.rows() == 0) throw InputError("forest needs matching, non-empty X and y");
    if (X.rows() < 2 * params.min_leaf && params.max_depth > 0) {
        throw InputError("forest needs at least 2 * min_leaf rows");
    }
    FittedLearner f;
    f.kind = LearnerKind::random_forest;
    f.params = params;
    f.n_features = static_cast<std::size_t>(X.cols());
    f.base = y.mean();
    if (params.max_depth == 0) {
        // A depth-0 forest is the training mean; store no trees.
        f.in_sample_loss = mse(f.predict(X), y);
        return f;
    }
    const RowKeys own = keys ? RowKeys{} : default_keys(X.rows());
    const RowKeys& k = keys ? *keys : own;
    if (static_cast<Eigen::Index>(k.size()) != X.rows()) throw InputError("row keys do not match rows");
    const auto sorted = presort(X, k);
    const int p = static_cast<int>(X.cols());
    const int mtry = std::clamp(static_cast<int>(std::ceil(params.feature_fraction * p - 1e-12)), 1, p);

    f.trees.resize(static_cast<std::size_t>(params.n_trees));
    parallel_for(f.trees.size(), threads, [&](std::size_t t) {
        const std::uint64_t tree_seed = derive_seed(seed, {static_cast<std::uint64_t>(t)});
        std::vector<double> w(static_cast<std::size_t>(X.rows()), 1.0);
        if (params.bootstrap) {
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = poisson1(hash_uniform(tree_seed, k[i]));
        }
        f.trees[t] = grow_tree(X, y, w, sorted, params.max_depth, params.min_leaf, mtry, mix64(tree_seed));
    });
    f.in_sample_loss = mse(f.predict(X), y);
    return f;
}

FittedLearner fit_gbm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GbmParams& params, std::uint64_t seed,
                      const RowKeys* keys) {
    validate(params);
    if (X.rows() != y.size() || X.rows() == 0) throw InputError("gbm needs matching, non-empty X and y");
    FittedLearner f;
    f.kind = LearnerKind::gbm;
    f.params = params;
    f.n_features = static_cast<std::size_t>(X.cols());
    f.base = y.mean();
    Eigen::VectorXd F = Eigen::VectorXd::Constant(y.size(), f.base);
    if (params.n_rounds > 0 && params.max_depth > 0) {
        const RowKeys own = keys ? RowKeys{} : default_keys(X.rows());
        const RowKeys& k = keys ? *keys : own;
        const auto sorted = presort(X, k);
        const std::vector<double> w(static_cast<std::size_t>(X.rows()), 1.0);
        const int p = static_cast<int>(X.cols());
        for (int round = 0; round < params.n_rounds; ++round) {
            const Eigen::VectorXd resid = y - F;
            RegressionTree t = grow_tree(X, resid, w, sorted, params.max_depth, params.min_leaf, p,
                                         derive_seed(seed, {static_cast<std::uint64_t>(round)}));
            for (Eigen::Index i = 0; i < X.rows(); ++i) F(i) += params.learning_rate * t.predict(&X(i, 0), X.rows());
            f.trees.push_back(std::move(t));
            f.loss_path.push_back(mse(F, y));
        }
    }
    f.in_sample_loss = mse(F, y);
    return f;
}

FittedLearner fit_learner(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Hyperparameters& params,
                          std::uint64_t seed, const RowKeys* keys) {
    if (const auto* l = std::get_if<LassoParams>(&params)) return fit_lasso(X, y, l->lambda);
    if (const auto* f = std::get_if<ForestParams>(&params)) return fit_forest(X, y, *f, seed, keys);
    return fit_gbm(X, y, std::get<GbmParams>(params), seed, keys);
}

Eigen::VectorXd FittedLearner::predict(const Eigen::MatrixXd& X) const {
    if (static_cast<std::size_t>(X.cols()) != n_features) throw InputError("prediction schema does not match training");
    if (kind == LearnerKind::lasso) {
        Eigen::VectorXd out = X * coef;
        out.array() += intercept;
        return out;
    }
    Eigen::VectorXd out = Eigen::VectorXd::Constant(X.rows(), base);
    if (trees.empty()) return out;
    if (kind == LearnerKind::random_forest) {
        out.setZero();
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            double s = 0.0;
            for (const auto& t : trees) s += t.predict(&X(i, 0), X.rows());
            out(i) = s / static_cast<double>(trees.size());
        }
        return out;
    }
    const double rate = std::get<GbmParams>(params).learning_rate;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        double s = 0.0;
        for (const auto& t : trees) s += t.predict(&X(i, 0), X.rows());
        out(i) += rate * s;
    }
    return out;
}

ordered_json FittedLearner::to_json() const {
    ordered_json j;
    j["schema_version"] = 1;
    j["kind"] = tailrisk::to_string(kind);
    j["params"] = tailrisk::to_json(params);
    j["n_features"] = n_features;
    j["feature_names"] = feature_names;
    j["in_sample_loss"] = in_sample_loss;
    if (kind == LearnerKind::lasso) {
        j["intercept"] = intercept;
        j["coef"] = std::vector<double>(coef.data(), coef.data() + coef.size());
        j["flagged"] = flagged;
    } else {
        j["base"] = base;
        ordered_json trees_json = ordered_json::array();
        for (const auto& t : trees) {
            trees_json.push_back({{"feature", t.feature},
                                  {"threshold", t.threshold},
                                  {"left", t.left},
                                  {"right", t.right},
                                  {"value", t.value}});
        }
        j["trees"] = std::move(trees_json);
    }
    return j;
}

FittedLearner FittedLearner::from_json(const ordered_json& j) {
    if (j.value("schema_version", 0) != 1) throw InputError("unsupported learner schema version");
    FittedLearner f;
    f.kind = parse_learner_kind(j.at("kind").get<std::string>());
    f.params = hyperparameters_from_json(f.kind, j.at("params"));
    f.n_features = j.at("n_features").get<std::size_t>();
    f.feature_names = j.value("feature_names", std::vector<std::string>{});
    f.in_sample_loss = j.value("in_sample_loss", 0.0);
    if (f.kind == LearnerKind::lasso) {
        f.intercept = j.at("intercept").get<double>();
        const auto c = j.at("coef").get<std::vector<double>>();
        f.coef = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
        f.flagged = j.value("flagged", false);
    } else {
        f.base = j.at("base").get<double>();
        for (const auto& t : j.at("trees")) {
            RegressionTree tree;
            tree.feature = t.at("feature").get<std::vector<int>>();
            tree.threshold = t.at("threshold").get<std::vector<double>>();
            tree.left = t.at("left").get<std::vector<int>>();
            tree.right = t.at("right").get<std::vector<int>>();
            tree.value = t.at("value").get<std::vector<double>>();
            f.trees.push_back(std::move(tree));
        }
    }
    return f;
}

// ---------------------------------------------------------------------------
// Cross-validation

bool more_regularized(const Hyperparameters& a, const Hyperparameters& b) {
    if (a.index() != b.index()) return a.index() < b.index();
    if (const auto* la = std::get_if<LassoParams>(&a)) return la->lambda > std::get<LassoParams>(b).lambda;
    if (const auto* fa = std::get_if<ForestParams>(&a)) {
        const auto& fb = std::get<ForestParams>(b);
        return std::make_tuple(fa->max_depth, fa->n_trees, -fa->min_leaf, fa->feature_fraction) <
               std::make_tuple(fb.max_depth, fb.n_trees, -fb.min_leaf, fb.feature_fraction);
    }
    const auto& ga = std::get<GbmParams>(a);
    const auto& gb = std::get<GbmParams>(b);
    return std::make_tuple(ga.n_rounds, ga.max_depth, ga.learning_rate) <
           std::make_tuple(gb.n_rounds, gb.max_depth, gb.learning_rate);
}

CvResult cv_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<Hyperparameters>& grid,
                   int folds, std::uint64_t seed, const RowKeys* keys, int threads) {
    if (grid.empty()) throw InputError("hyperparameter grid is empty");
    for (const auto& h : grid) validate(h);
    CvResult out;
    if (grid.size() == 1) {
        out.selected = grid.front();
        out.path.push_back({grid.front(), 0.0});
        return out;
    }
    if (folds < 2) throw InputError("cross-validation needs at least 2 folds");
    const Eigen::Index n = X.rows();
    if (n < folds) throw InputError("fewer rows than cross-validation folds");
    const RowKeys own = keys ? RowKeys{} : default_keys(n);
    const RowKeys& k = keys ? *keys : own;

    // Fold = position in a seeded ordering of row keys.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::vector<double> u(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) u[static_cast<std::size_t>(i)] = hash_uniform(seed, k[static_cast<std::size_t>(i)]);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        const double ua = u[static_cast<std::size_t>(a)], ub = u[static_cast<std::size_t>(b)];
        return ua != ub ? ua < ub : k[static_cast<std::size_t>(a)] < k[static_cast<std::size_t>(b)];
    });
    std::vector<int> fold(static_cast<std::size_t>(n));
    for (std::size_t q = 0; q < order.size(); ++q) fold[static_cast<std::size_t>(order[q])] = static_cast<int>(q % folds);

    const bool all_lasso = std::all_of(grid.begin(), grid.end(),
                                       [](const Hyperparameters& h) { return std::holds_alternative<LassoParams>(h); });
    std::vector<std::vector<double>> sse(grid.size(), std::vector<double>(static_cast<std::size_t>(folds), 0.0));

    parallel_for(static_cast<std::size_t>(folds), threads, [&](std::size_t fk) {
        std::vector<Eigen::Index> tr, va;
        for (Eigen::Index i = 0; i < n; ++i) (fold[static_cast<std::size_t>(i)] == static_cast<int>(fk) ? va : tr).push_back(i);
        Eigen::MatrixXd Xt(static_cast<Eigen::Index>(tr.size()), X.cols()), Xv(static_cast<Eigen::Index>(va.size()), X.cols());
        Eigen::VectorXd yt(Xt.rows()), yv(Xv.rows());
        RowKeys kt;
        for (std::size_t q = 0; q < tr.size(); ++q) {
            Xt.row(static_cast<Eigen::Index>(q)) = X.row(tr[q]);
            yt(static_cast<Eigen::Index>(q)) = y(tr[q]);
            kt.push_back(k[static_cast<std::size_t>(tr[q])]);
        }
        for (std::size_t q = 0; q < va.size(); ++q) {
            Xv.row(static_cast<Eigen::Index>(q)) = X.row(va[q]);
            yv(static_cast<Eigen::Index>(q)) = y(va[q]);
        }
        if (all_lasso) {
            // One Gram matrix per fold; walk lambda from large to small with
            // warm starts.
            const Standardized s = standardize_gram(Xt, yt);
            std::vector<std::size_t> idx(grid.size());
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                return std::get<LassoParams>(grid[a]).lambda > std::get<LassoParams>(grid[b]).lambda;
            });
            Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
            for (std::size_t g : idx) {
                const double lambda = std::get<LassoParams>(grid[g]).lambda;
                coordinate_descent(s, lambda, LassoOptions{}, beta);
                const FittedLearner f = lasso_from_standardized(s, beta, lambda, static_cast<std::size_t>(X.cols()));
                sse[g][fk] = (f.predict(Xv) - yv).squaredNorm();
            }
        } else {
            for (std::size_t g = 0; g < grid.size(); ++g) {
                const FittedLearner f = fit_learner(Xt, yt, grid[g], derive_seed(seed, {fk, g}), &kt);
                sse[g][fk] = (f.predict(Xv) - yv).squaredNorm();
            }
        }
    });

    std::size_t best = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double total = 0.0;
        for (double v : sse[g]) total += v;
        const double m = total / static_cast<double>(n);
        out.path.push_back({grid[g], m});
        if (g == 0) continue;
        const double cur = out.path[best].mse;
        const double tol = 1e-12 * std::max(std::fabs(cur), std::fabs(m));
        if (m < cur - tol || (std::fabs(m - cur) <= tol && more_regularized(grid[g], grid[best]))) best = g;
    }
    out.selected = grid[best];
    return out;
}

std::vector<Hyperparameters> resolve_grid(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    if (!spec.grid.empty()) {
        for (const auto& h : spec.grid) {
            if (kind_of(h) != spec.kind) throw InputError("hyperparameter grid does not match learner kind");
        }
        return spec.grid;
    }
    std::vector<Hyperparameters> out;
    switch (spec.kind) {
        case LearnerKind::lasso:
            for (double l : lasso_lambda_grid(X, y, spec.lambda_count, spec.lambda_ratio)) out.emplace_back(LassoParams{l});
            break;
        case LearnerKind::random_forest: out.emplace_back(ForestParams{}); break;
        case LearnerKind::gbm: out.emplace_back(GbmParams{}); break;
    }
    return out;
}

}  // namespace tailrisk
