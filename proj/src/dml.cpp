#include "tailrisk/dml.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "tailrisk/common.h"
#include "tailrisk/crash.h"
#include "tailrisk/design.h"
#include "tailrisk/stats.h"

namespace tailrisk {

namespace {

bool constant(const Eigen::VectorXd& v) { return v.size() == 0 || v.maxCoeff() == v.minCoeff(); }

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(idx[r]);
    return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) out(static_cast<Eigen::Index>(r)) = v(idx[r]);
    return out;
}

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::ArrayXd x = a.array() - a.mean();
    const Eigen::ArrayXd y = b.array() - b.mean();
    const double den = std::sqrt((x * x).sum() * (y * y).sum());
    return den > 0.0 ? (x * y).sum() / den : 0.0;
}

}  // namespace

CrossfitResult crossfit_residuals(const Eigen::MatrixXd& W, const Eigen::VectorXd& y, const Eigen::VectorXd& d,
                                  const std::vector<int>& month_of_row, const RowKeys& keys,
                                  const LearnerSpec& learner, int n_folds, std::uint64_t seed, int threads) {
    const Eigen::Index n = y.size();
    if (d.size() != n || W.rows() != n || static_cast<Eigen::Index>(month_of_row.size()) != n ||
        static_cast<Eigen::Index>(keys.size()) != n) {
        throw InputError("cross-fitting inputs differ in length");
    }
    if (n_folds < 2) throw InputError("cross-fitting needs at least 2 folds");
    const std::set<int> distinct(month_of_row.begin(), month_of_row.end());
    if (static_cast<std::size_t>(n_folds) > distinct.size()) {
        throw InputError("more folds (" + std::to_string(n_folds) + ") than distinct months (" +
                         std::to_string(distinct.size()) + ")");
    }

    // Shuffle the months, then deal them round-robin.
    std::vector<int> months(distinct.begin(), distinct.end());
    std::mt19937_64 rng(derive_seed(seed, {0}));
    std::shuffle(months.begin(), months.end(), rng);
    std::map<int, int> fold_of_month;
    for (std::size_t i = 0; i < months.size(); ++i) fold_of_month[months[i]] = static_cast<int>(i % n_folds);

    CrossfitResult out;
    out.fold.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out.fold[i] = fold_of_month[month_of_row[i]];
    out.y_res.resize(n);
    out.d_res.resize(n);
    out.folds.resize(static_cast<std::size_t>(n_folds));

    parallel_for(static_cast<std::size_t>(n_folds), threads, [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < n; ++i) (out.fold[i] == k ? test : train).push_back(i);
        const Eigen::MatrixXd W_train = take_rows(W, train);
        const Eigen::MatrixXd W_test = take_rows(W, test);
        const Eigen::VectorXd y_train = take(y, train);
        const Eigen::VectorXd d_train = take(d, train);
        if (constant(y_train)) {
            throw EstimationError("fold " + std::to_string(k) + ": outcome is constant on the training complement");
        }
        if (constant(d_train)) {
            throw EstimationError("fold " + std::to_string(k) + ": treatment is constant on the training complement");
        }
        RowKeys keys_train;
        keys_train.reserve(train.size());
        for (auto i : train) keys_train.push_back(keys[static_cast<std::size_t>(i)]);

        auto nuisance = [&](const Eigen::VectorXd& target, std::uint64_t role, Hyperparameters& chosen) {
            const auto grid = resolve_grid(learner, W_train, target);
            const CvResult cv =
                cv_select(W_train, target, grid, learner.cv_folds, derive_seed(seed, {kk + 1, role}), &keys_train);
            chosen = cv.selected;
            return fit_learner(W_train, target, cv.selected, derive_seed(seed, {kk + 1, role + 1}), &keys_train)
                .predict(W_test);
        };

        FoldDiagnostic& diag = out.folds[kk];
        diag.fold = k;
        diag.n_train = train.size();
        diag.n_test = test.size();
        std::set<int> test_months;
        for (auto i : test) test_months.insert(month_of_row[static_cast<std::size_t>(i)]);
        diag.n_test_months = static_cast<int>(test_months.size());

        const Eigen::VectorXd m_hat = nuisance(y_train, 10, diag.outcome_params);
        const Eigen::VectorXd g_hat = nuisance(d_train, 20, diag.treatment_params);
        double sy = 0.0, sd = 0.0;
        for (std::size_t r = 0; r < test.size(); ++r) {
            const auto i = test[r];
            const auto ri = static_cast<Eigen::Index>(r);
            out.y_res(i) = y(i) - m_hat(ri);
            out.d_res(i) = d(i) - g_hat(ri);
            sy += out.y_res(i) * out.y_res(i);
            sd += out.d_res(i) * out.d_res(i);
        }
        diag.outcome_mse = sy / static_cast<double>(test.size());
        diag.treatment_mse = sd / static_cast<double>(test.size());
    });

    if (!(out.d_res.squaredNorm() >= 1e-12 * static_cast<double>(n))) {
        throw EstimationError("treatment fully explained by controls");
    }
    return out;
}

DmlEstimate final_stage(const Eigen::VectorXd& y_res, const Eigen::VectorXd& d_res, const std::vector<int>& clusters) {
    const Eigen::Index n = y_res.size();
    if (d_res.size() != n || static_cast<Eigen::Index>(clusters.size()) != n) {
        throw InputError("final stage inputs differ in length");
    }
    const double sdd = d_res.squaredNorm();
    if (!(sdd > 0.0)) throw EstimationError("treatment fully explained by controls");
    int G = 0;
    const std::vector<int> ids = dense_ids(clusters, &G);
    if (G < 2) throw EstimationError("final stage needs at least 2 clusters");

    DmlEstimate est;
    est.n_obs = static_cast<std::size_t>(n);
    est.n_clusters = G;
    est.sum_d_res_sq = sdd;
    est.mean_d_res = d_res.mean();
    est.mean_y_res = y_res.mean();
    est.beta = d_res.dot(y_res) / sdd;

    std::vector<double> score(static_cast<std::size_t>(G), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        score[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] +=
            d_res(i) * (y_res(i) - est.beta * d_res(i));
    }
    double meat = 0.0;
    for (double s : score) meat += s * s;
    est.small_sample_factor = static_cast<double>(G) / static_cast<double>(G - 1);
    est.se = std::sqrt(est.small_sample_factor * meat) / sdd;
    est.z = est.beta / est.se;
    est.p = two_sided_normal_p(est.z);
    est.corr_final_resid_dres = correlation(y_res - est.beta * d_res, d_res);
    return est;
}

PanelDataset ensure_outcome_column(const PanelDataset& panel, const std::string& outcome) {
    if (panel.has_column(outcome)) return panel;
    int pct = 0;
    char tail = 0;
    if (outcome.size() == 9 && std::sscanf(outcome.c_str(), "crash_%3d%c", &pct, &tail) == 1 && pct > 0 &&
        pct < 100) {
        return with_crash_indicator(panel, pct / 100.0);
    }
    throw InputError("unknown column: " + outcome);
}

std::string cell_key(const DmlConfig& config) {
    return config.regime + "|" + config.outcome + "|" + config.treatment + "|" + to_string(config.learner.kind);
}

DmlEstimate estimate_dml(const PanelDataset& panel, const RegimeSeries& regime, const DmlConfig& config,
                         int threads) {
    if (config.n_folds < 2) throw InputError("cross-fitting needs at least 2 folds");
    if (config.regime != "stress" && config.regime != "nonstress" && config.regime != "all") {
        throw InputError("regime must be stress, nonstress or all");
    }
    for (const auto& c : config.controls) {
        if (c == config.treatment) throw InputError("treatment " + c + " is also listed as a control");
        if (c == config.outcome) throw InputError("outcome " + c + " is also listed as a control");
    }
    if (config.treatment == config.outcome) throw InputError("treatment and outcome are the same column");
    const PanelDataset data = ensure_outcome_column(panel, config.outcome);
    if (!data.has_column(config.treatment)) throw InputError("unknown column: " + config.treatment);
    for (const auto& c : config.controls) {
        if (!data.has_column(c)) throw InputError("unknown column: " + c);
    }

    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto s = regime.stress_of(data.rows()[i].month);
        if (!s) continue;
        if (config.regime == "all" || (*s == (config.regime == "stress"))) rows.push_back(i);
    }

    DesignSpec spec{config.outcome, {config.treatment}, false, config.sector_dummies};
    for (const auto& c : config.controls) spec.regressors.push_back(c);
    if (config.interactions) {
        for (std::size_t a = 0; a < config.controls.size(); ++a) {
            for (std::size_t b = a; b < config.controls.size(); ++b) {
                spec.regressors.push_back(config.controls[a] + ":" + config.controls[b]);
            }
        }
    }
    const Design design = build_design(data, rows, spec);
    if (design.X.rows() == 0) throw EstimationError("no complete rows in the " + config.regime + " regime");
    const Eigen::Index i_d = design.column(config.treatment);
    const Eigen::VectorXd d = design.X.col(i_d);
    Eigen::MatrixXd W(design.X.rows(), design.X.cols() - 1);
    for (Eigen::Index c = 0, o = 0; c < design.X.cols(); ++c) {
        if (c != i_d) W.col(o++) = design.X.col(c);
    }

    std::vector<int> month(design.rows.size());
    RowKeys keys(design.rows.size());
    for (std::size_t r = 0; r < design.rows.size(); ++r) {
        const auto& row = data.rows()[design.rows[r]];
        month[r] = row.month.index();
        keys[r] = derive_seed(hash_string(row.firm_id), {static_cast<std::uint64_t>(row.month.index())});
    }

    const std::uint64_t seed = derive_seed(config.seed, {hash_string(cell_key(config))});
    const CrossfitResult cf =
        crossfit_residuals(W, design.y, d, month, keys, config.learner, config.n_folds, seed, threads);
    DmlEstimate est = final_stage(cf.y_res, cf.d_res, month);
    est.folds = cf.folds;
    est.n_excluded = design.n_missing_dropped;
    for (Eigen::Index c = 0; c < W.cols(); ++c) {
        est.max_abs_corr_dres_w = std::max(est.max_abs_corr_dres_w, std::fabs(correlation(cf.d_res, W.col(c))));
    }
    return est;
}

std::string DmlCell::stars() const {
    if (!estimate) return "";
    const double p = estimate->p;
    if (p < 0.01) return "***";
    if (p < 0.05) return "**";
    if (p < 0.10) return "*";
    return "";
}

std::vector<LearnerSpec> default_learners(const DmlMatrixConfig& config) {
    if (!config.learners.empty()) return config.learners;
    LearnerSpec lasso;
    LearnerSpec forest;
    forest.kind = LearnerKind::random_forest;
    return {lasso, forest};
}

namespace {

struct CellTask {
    DmlConfig config;
    std::string label;
};

std::vector<DmlCell> run_cells(const PanelDataset& panel, const RegimeSeries& regime,
                               const std::vector<CellTask>& tasks, int threads) {
    std::vector<DmlCell> cells(tasks.size());
    parallel_for(tasks.size(), threads, [&](std::size_t i) {
        const DmlConfig& c = tasks[i].config;
        DmlCell& cell = cells[i];
        cell.regime = c.regime;
        cell.outcome = c.outcome;
        cell.treatment = c.treatment;
        cell.treatment_label = tasks[i].label;
        cell.learner = to_string(c.learner.kind);
        try {
            cell.estimate = estimate_dml(panel, regime, c, 1);
        } catch (const InputError&) {
            throw;
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    });
    return cells;
}

DmlConfig base_cell(const DmlMatrixConfig& m) {
    DmlConfig c;
    c.n_folds = m.n_folds;
    c.seed = m.seed;
    c.controls = m.controls;
    c.sector_dummies = m.sector_dummies;
    c.interactions = m.interactions;
    return c;
}

PanelDataset with_outcomes(const PanelDataset& panel, const std::vector<std::string>& outcomes) {
    PanelDataset data = panel;
    for (const auto& o : outcomes) data = ensure_outcome_column(data, o);
    return data;
}

}  // namespace

std::vector<DmlCell> dml_matrix(const PanelDataset& panel, const RegimeSeries& regime, const DmlMatrixConfig& config,
                                int threads) {
    if (config.n_folds < 2) throw InputError("cross-fitting needs at least 2 folds");
    const PanelDataset data = with_outcomes(panel, config.outcomes);
    std::vector<CellTask> tasks;
    for (const auto& r : config.regimes) {
        for (const auto& o : config.outcomes) {
            for (const auto& l : default_learners(config)) {
                DmlConfig c = base_cell(config);
                c.regime = r;
                c.outcome = o;
                c.treatment = config.treatment;
                c.learner = l;
                tasks.push_back({c, config.treatment});
            }
        }
    }
    return run_cells(data, regime, tasks, threads);
}

std::vector<PillarTreatment> default_pillars() {
    return {{"Agg", "esg_lag1"}, {"E", "e_score_lag1"}, {"S", "s_score_lag1"}, {"G", "g_score_lag1"}};
}

std::vector<DmlCell> pillar_matrix(const PanelDataset& panel, const RegimeSeries& regime,
                                   const DmlMatrixConfig& base, const std::vector<PillarTreatment>& pillars,
                                   int threads) {
    for (const auto& p : pillars) {
        if (!panel.has_column(p.column)) throw InputError("missing pillar column: " + p.column);
    }
    const PanelDataset data = with_outcomes(panel, base.outcomes);
    LearnerSpec lasso;
    for (const auto& l : base.learners) {
        if (l.kind == LearnerKind::lasso) lasso = l;
    }
    std::vector<CellTask> tasks;
    for (const auto& p : pillars) {
        for (const auto& r : base.regimes) {
            for (const auto& o : base.outcomes) {
                DmlConfig c = base_cell(base);
                c.regime = r;
                c.outcome = o;
                c.treatment = p.column;
                c.learner = lasso;
                tasks.push_back({c, p.label});
            }
        }
    }
    return run_cells(data, regime, tasks, threads);
}

}  // namespace tailrisk
