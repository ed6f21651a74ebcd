#include "tailrisk/quantile.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "tailrisk/design.h"
#include "tailrisk/stats.h"

namespace tailrisk {

double check_loss(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

double pinball_loss(std::span<const double> residuals, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InputError("tau must lie in (0, 1)");
    double s = 0.0;
    for (double u : residuals) s += check_loss(u, tau);
    return s;
}

namespace {

double weighted_objective(const Eigen::VectorXd& r, const Eigen::VectorXd& w, double tau) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) s += w(i) * check_loss(r(i), tau);
    return s;
}

// Huberized check function: quadratic on [-h, h], matching value and slope
// of rho_tau outside.
double smooth_loss(double u, double tau, double h) {
    if (u > h) return tau * u;
    if (u < -h) return (tau - 1.0) * u;
    return u * u / (4.0 * h) + (tau - 0.5) * u + h / 4.0;
}

double smooth_psi(double u, double tau, double h) {
    if (u > h) return tau;
    if (u < -h) return tau - 1.0;
    return u / (2.0 * h) + (tau - 0.5);
}

struct Problem {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Eigen::VectorXd w;
    std::vector<Eigen::Index> original;  // row in the caller's X
};

Problem compress(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd* weights) {
    Problem p;
    if (!weights) {
        p.X = X;
        p.y = y;
        p.w = Eigen::VectorXd::Ones(y.size());
        p.original.resize(static_cast<std::size_t>(y.size()));
        std::iota(p.original.begin(), p.original.end(), Eigen::Index{0});
        return p;
    }
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if ((*weights)(i) < 0.0) throw InputError("quantile weights must be non-negative");
        if ((*weights)(i) > 0.0) p.original.push_back(i);
    }
    const auto n = static_cast<Eigen::Index>(p.original.size());
    p.X.resize(n, X.cols());
    p.y.resize(n);
    p.w.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index i = p.original[static_cast<std::size_t>(k)];
        p.X.row(k) = X.row(i);
        p.y(k) = y(i);
        p.w(k) = (*weights)(i);
    }
    return p;
}

// Annealed smoothed Newton. Returns the number of Newton iterations.
int smoothed_phase(const Problem& P, double tau, const QuantileSolverOptions& opt, Eigen::VectorXd& beta,
                   double& final_h) {
    const Eigen::Index n = P.y.size();
    const Eigen::Index k = P.X.cols();
    Eigen::VectorXd r = P.y - P.X * beta;
    double h = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) h += P.w(i) * std::fabs(r(i));
    h = 0.5 * h / P.w.sum();
    if (!(h > 0.0)) {
        final_h = 0.0;
        return 0;
    }
    const double ridge_base = (P.X.array().square().colwise() * P.w.array()).sum() / static_cast<double>(k);

    int iterations = 0;
    auto objective = [&](const Eigen::VectorXd& b, double hh) {
        const Eigen::VectorXd rr = P.y - P.X * b;
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) s += P.w(i) * smooth_loss(rr(i), tau, hh);
        return s;
    };
    for (int stage = 0; stage < opt.anneal_stages; ++stage) {
        double f = objective(beta, h);
        for (int it = 0; it < opt.max_newton; ++it) {
            r = P.y - P.X * beta;
            Eigen::VectorXd psi(n);
            Eigen::VectorXd curv(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                psi(i) = P.w(i) * smooth_psi(r(i), tau, h);
                curv(i) = std::fabs(r(i)) <= h ? P.w(i) / (2.0 * h) : 0.0;
            }
            const Eigen::VectorXd grad = P.X.transpose() * psi;  // minus the gradient
            Eigen::MatrixXd H = P.X.transpose() * curv.asDiagonal() * P.X;
            H.diagonal().array() += 1e-10 * ridge_base / h + 1e-300;
            Eigen::VectorXd step = H.ldlt().solve(grad);
            if (!step.allFinite()) break;
            ++iterations;
            double t = 1.0;
            Eigen::VectorXd cand = beta + step;
            double fc = objective(cand, h);
            int halvings = 0;
            while (!(fc < f) && halvings < 40) {
                t *= 0.5;
                cand = beta + t * step;
                fc = objective(cand, h);
                ++halvings;
            }
            if (!(fc < f)) break;
            const double gain = f - fc;
            beta = cand;
            f = fc;
            if (gain <= 1e-14 * std::max(1.0, std::fabs(f))) break;
        }
        final_h = h;
        h *= opt.anneal_factor;
    }
    return iterations;
}

// Picks k linearly independent rows, preferring small |r|. Returns false when
// fewer than k independent rows exist.
bool initial_basis(const Problem& P, const Eigen::VectorXd& r, std::vector<Eigen::Index>& basis) {
    const Eigen::Index n = P.y.size();
    const Eigen::Index k = P.X.cols();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return std::fabs(r(a)) < std::fabs(r(b)); });
    // Incremental Gram-Schmidt on candidate rows.
    Eigen::MatrixXd Q(k, k);
    Eigen::Index m = 0;
    basis.clear();
    for (Eigen::Index idx : order) {
        Eigen::VectorXd v = P.X.row(idx).transpose();
        const double norm0 = v.norm();
        if (!(norm0 > 0.0)) continue;
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index j = 0; j < m; ++j) v -= Q.col(j).dot(v) * Q.col(j);
        }
        const double norm = v.norm();
        if (norm > 1e-9 * norm0) {
            Q.col(m++) = v / norm;
            basis.push_back(idx);
            if (m == k) return true;
        }
    }
    return false;
}

// Vertex-to-vertex descent on the exact objective. Each step frees one basic
// row along the edge with the most negative directional derivative and moves
// to the minimizing breakpoint.
void polish(const Problem& P, double tau, const QuantileSolverOptions& opt, std::vector<Eigen::Index>& basis,
            Eigen::VectorXd& beta, QuantileSolverInfo& info) {
    const Eigen::Index n = P.y.size();
    const Eigen::Index k = P.X.cols();
    const double wsum = P.w.sum();
    const double tol = opt.optimality_tol * std::max(1.0, wsum);
    const double yscale = std::max(1.0, P.y.cwiseAbs().maxCoeff());
    const double eps = 1e-12 * yscale;

    std::vector<char> basic(static_cast<std::size_t>(n), 0);
    Eigen::MatrixXd Xh(k, k);
    Eigen::VectorXd yh(k);
    Eigen::VectorXd r(n);
    Eigen::VectorXd a(n);
    std::vector<std::pair<double, Eigen::Index>> breaks;
    std::vector<Eigen::Index> degenerate;

    for (;;) {
        for (Eigen::Index j = 0; j < k; ++j) {
            Xh.row(j) = P.X.row(basis[static_cast<std::size_t>(j)]);
            yh(j) = P.y(basis[static_cast<std::size_t>(j)]);
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(Xh);
        const Eigen::MatrixXd Xinv = lu.inverse();
        beta = Xinv * yh;
        r.noalias() = P.y - P.X * beta;
        std::fill(basic.begin(), basic.end(), 0);
        for (Eigen::Index b : basis) {
            basic[static_cast<std::size_t>(b)] = 1;
            r(b) = 0.0;
        }

        Eigen::VectorXd g = Eigen::VectorXd::Zero(k);
        degenerate.clear();
        {
            Eigen::VectorXd coef(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (basic[static_cast<std::size_t>(i)]) {
                    coef(i) = 0.0;
                } else if (std::fabs(r(i)) <= eps) {
                    coef(i) = 0.0;
                    degenerate.push_back(i);
                } else {
                    coef(i) = P.w(i) * (r(i) > 0.0 ? tau : tau - 1.0);
                }
            }
            g.noalias() = P.X.transpose() * coef;
        }
        const Eigen::VectorXd u = Xinv.transpose() * g;
        Eigen::MatrixXd Z;
        if (!degenerate.empty()) {
            Z.resize(static_cast<Eigen::Index>(degenerate.size()), k);
            for (std::size_t q = 0; q < degenerate.size(); ++q) {
                Z.row(static_cast<Eigen::Index>(q)) = P.X.row(degenerate[q]) * Xinv;
            }
        }

        double best = 0.0;
        Eigen::Index best_j = -1;
        int best_s = 0;
        for (Eigen::Index j = 0; j < k; ++j) {
            const double wj = P.w(basis[static_cast<std::size_t>(j)]);
            for (int s : {1, -1}) {
                double D = -s * u(j) + wj * (s > 0 ? 1.0 - tau : tau);
                for (std::size_t q = 0; q < degenerate.size(); ++q) {
                    const double ai = -s * Z(static_cast<Eigen::Index>(q), j);
                    D += P.w(degenerate[q]) * std::max(tau * ai, (tau - 1.0) * ai);
                }
                if (D < best) {
                    best = D;
                    best_j = j;
                    best_s = s;
                }
            }
        }
        info.max_violation = -best;
        if (best >= -tol) {
            info.optimal = true;
            return;
        }
        if (info.pivots >= opt.max_pivots) return;

        const Eigen::VectorXd d = best_s * Xinv.col(best_j);
        a.noalias() = P.X * d;
        breaks.clear();
        for (Eigen::Index i = 0; i < n; ++i) {
            if (basic[static_cast<std::size_t>(i)] || std::fabs(r(i)) <= eps || a(i) == 0.0) continue;
            const double t = r(i) / a(i);
            if (t > 0.0) breaks.emplace_back(t, i);
        }
        // Walk breakpoints in increasing t until the slope turns non-negative,
        // sorting only as much of the list as needed.
        double slope = best;
        Eigen::Index entering = -1;
        std::size_t lo = 0;
        std::size_t chunk = 64;
        auto cmp = [](const auto& x, const auto& y) { return x.first < y.first || (x.first == y.first && x.second < y.second); };
        while (entering < 0 && lo < breaks.size()) {
            const std::size_t hi = std::min(breaks.size(), lo + chunk);
            if (hi < breaks.size()) {
                std::nth_element(breaks.begin() + static_cast<std::ptrdiff_t>(lo),
                                 breaks.begin() + static_cast<std::ptrdiff_t>(hi), breaks.end(), cmp);
            }
            std::sort(breaks.begin() + static_cast<std::ptrdiff_t>(lo), breaks.begin() + static_cast<std::ptrdiff_t>(hi),
                      cmp);
            for (std::size_t q = lo; q < hi; ++q) {
                const Eigen::Index i = breaks[q].second;
                slope += P.w(i) * std::fabs(a(i));
                if (slope >= 0.0) {
                    entering = i;
                    break;
                }
            }
            lo = hi;
            chunk *= 2;
        }
        if (entering < 0) return;  // unbounded direction: numerically singular basis
        basis[static_cast<std::size_t>(best_j)] = entering;
        ++info.pivots;
    }
}

}  // namespace

QuantileSolution solve_quantile(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double tau,
                                const QuantileSolverOptions& options, const Eigen::VectorXd* weights,
                                const Eigen::VectorXd* start) {
    if (!(tau > 0.0 && tau < 1.0)) throw InputError("tau must lie in (0, 1)");
    if (X.rows() != y.size()) throw InputError("design and outcome differ in length");
    if (weights && weights->size() != y.size()) throw InputError("weights and outcome differ in length");
    const Problem P = compress(X, y, weights);
    const Eigen::Index k = X.cols();
    if (P.y.size() < k || k == 0) throw EstimationError("fewer observations than quantile regressors");

    QuantileSolution sol;
    Eigen::VectorXd beta;
    if (start) {
        if (start->size() != k) throw InputError("start vector has the wrong length");
        beta = *start;
    } else {
        // Weighted least squares start.
        const Eigen::VectorXd sw = P.w.cwiseSqrt();
        beta = (sw.asDiagonal() * P.X).colPivHouseholderQr().solve(sw.cwiseProduct(P.y));
        if (!beta.allFinite()) beta = Eigen::VectorXd::Zero(k);
    }
    if (options.smoothing) {
        sol.info.newton_iterations = smoothed_phase(P, tau, options, beta, sol.info.final_smoothing);
    }

    const Eigen::VectorXd r = P.y - P.X * beta;
    std::vector<Eigen::Index> basis;
    if (!initial_basis(P, r, basis)) throw EstimationError("quantile design is rank deficient");
    polish(P, tau, options, basis, beta, sol.info);

    sol.coef = beta;
    sol.objective = weighted_objective(P.y - P.X * beta, P.w, tau);
    for (Eigen::Index b : basis) sol.basis.push_back(P.original[static_cast<std::size_t>(b)]);
    std::sort(sol.basis.begin(), sol.basis.end());
    return sol;
}

Eigen::Index QuantileFit::index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<Eigen::Index>(it - names.begin());
}

double QuantileFit::coef_of(const std::string& name) const {
    const auto i = index_of(name);
    if (i < 0) throw InputError("no coefficient named " + name);
    return coef(i);
}

QuantileFit fit_quantile(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names,
                         double tau, const QuantileSolverOptions& options) {
    if (static_cast<Eigen::Index>(names.size()) != X.cols()) throw InputError("coefficient names do not match design");
    if (const auto bad = collinear_columns(X, names); !bad.empty()) {
        std::string list;
        for (std::size_t i = 0; i < bad.size(); ++i) list += (i ? ", " : "") + bad[i];
        throw EstimationError("rank-deficient design; collinear columns: " + list);
    }
    const QuantileSolution sol = solve_quantile(X, y, tau, options);
    QuantileFit fit;
    fit.tau = tau;
    fit.names = std::move(names);
    fit.coef = sol.coef;
    fit.objective = sol.objective;
    fit.converged = sol.info.optimal;
    fit.info = sol.info;
    fit.n_obs = static_cast<std::size_t>(X.rows());
    return fit;
}

std::string interaction_name(const std::string& treatment) { return treatment + ":" + kStressColumn; }

PanelDataset with_stress_indicator(const PanelDataset& panel, const RegimeSeries& regime) {
    PanelDataset out = panel;
    Column flag;
    flag.reserve(panel.size());
    for (const auto& row : panel.rows()) {
        const auto s = regime.stress_of(row.month);
        if (s) {
            flag.emplace_back(*s ? 1.0 : 0.0);
        } else {
            flag.emplace_back();
        }
    }
    out.set_derived(kStressColumn, std::move(flag));
    return out;
}

QuantileTable quantile_table(const PanelDataset& panel, const RegimeSeries& regime, const QuantileSpec& spec,
                             const QuantileModelSpec& model, int threads) {
    if (spec.tau_grid.empty()) throw InputError("tau grid is empty");
    for (double t : spec.tau_grid) {
        if (!(t > 0.0 && t < 1.0)) throw InputError("each tau must lie in (0, 1)");
    }
    if (spec.n_boot < 100) throw InputError("n_boot must be at least 100");

    const PanelDataset data = with_stress_indicator(panel, regime);
    DesignSpec ds{model.outcome, {model.treatment, kStressColumn, model.treatment + ":" + kStressColumn}, true,
                  model.sector_dummies};
    for (const auto& c : model.controls) ds.regressors.push_back(c);
    std::vector<std::size_t> candidates(data.size());
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
    const Design d = build_design(data, candidates, ds);
    const auto n = static_cast<double>(d.X.rows());
    if (n < spec.min_rows_per_column * static_cast<double>(d.X.cols())) {
        throw EstimationError("quantile regression needs at least " + std::to_string(spec.min_rows_per_column) +
                              " rows per column");
    }

    QuantileTable table;
    table.n_boot = spec.n_boot;
    table.seed = spec.seed;
    table.n_obs = static_cast<std::size_t>(d.X.rows());
    table.n_months = d.n_clusters();
    table.names = d.names;
    table.dropped_columns = d.dropped_columns;
    QuantileSolverOptions solver;
    table.solver = solver;

    const Eigen::Index i_esg = d.column(model.treatment);
    const Eigen::Index i_stress = d.column(kStressColumn);
    const Eigen::Index i_int = d.column(interaction_name(model.treatment));

    const std::size_t n_tau = spec.tau_grid.size();
    std::vector<QuantileFit> full(n_tau);
    for (std::size_t t = 0; t < n_tau; ++t) full[t] = fit_quantile(d.X, d.y, d.names, spec.tau_grid[t], solver);

    // Row weights per replicate come from month multiplicities.
    std::map<int, int> cluster_of_month;
    for (std::size_t c = 0; c < d.cluster_months.size(); ++c) {
        cluster_of_month[d.cluster_months[c].index()] = static_cast<int>(c);
    }
    struct Draw {
        bool ok = false;
        double stress = 0.0, esg = 0.0, inter = 0.0;
        std::string error;
    };
    std::vector<std::vector<Draw>> draws(spec.n_boot, std::vector<Draw>(n_tau));
    QuantileSolverOptions warm = solver;
    warm.smoothing = false;

    parallel_for(spec.n_boot, threads, [&](std::size_t r) {
        const BootstrapReplicate rep = draw_replicate(regime, spec.seed, r);
        std::vector<double> mult(d.cluster_months.size(), 0.0);
        for (const auto& [m, count] : rep.multiplicity()) {
            auto it = cluster_of_month.find(m);
            if (it != cluster_of_month.end()) mult[static_cast<std::size_t>(it->second)] = count;
        }
        Eigen::VectorXd w(d.X.rows());
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = mult[static_cast<std::size_t>(d.cluster[static_cast<std::size_t>(i)])];
        for (std::size_t t = 0; t < n_tau; ++t) {
            Draw& out = draws[r][t];
            try {
                const QuantileSolution s = solve_quantile(d.X, d.y, spec.tau_grid[t], warm, &w, &full[t].coef);
                if (!s.info.optimal) {
                    out.error = "solver stopped before verified optimality";
                    continue;
                }
                out.ok = true;
                out.esg = s.coef(i_esg);
                out.stress = s.coef(i_stress);
                out.inter = s.coef(i_int);
            } catch (const std::exception& e) {
                out.error = e.what();
            }
        }
    });

    for (std::size_t t = 0; t < n_tau; ++t) {
        QuantileRow row;
        row.tau = spec.tau_grid[t];
        row.fit = full[t];
        row.stress.point = full[t].coef(i_stress);
        row.esg_nonstress.point = full[t].coef(i_esg);
        row.interaction.point = full[t].coef(i_int);
        row.esg_stress_slope.point = row.esg_nonstress.point + row.interaction.point;

        std::vector<double> s, e, in, slope;
        for (std::size_t r = 0; r < spec.n_boot; ++r) {
            const Draw& dr = draws[r][t];
            if (!dr.ok) {
                ++row.n_failed;
                char buf[64];
                std::snprintf(buf, sizeof buf, "tau=%g replicate %zu: ", row.tau, r);
                table.failure_log.push_back(buf + dr.error);
                continue;
            }
            s.push_back(dr.stress);
            e.push_back(dr.esg);
            in.push_back(dr.inter);
            slope.push_back(dr.esg + dr.inter);
        }
        if (static_cast<double>(row.n_failed) > spec.max_failure_share * static_cast<double>(spec.n_boot)) {
            std::string msg = "too many failed bootstrap replicates at tau=" + std::to_string(row.tau) + " (" +
                              std::to_string(row.n_failed) + " of " + std::to_string(spec.n_boot) + ")";
            for (std::size_t k = 0; k < table.failure_log.size() && k < 20; ++k) msg += "\n  " + table.failure_log[k];
            throw EstimationError(msg);
        }
        row.stress.ci = percentile_ci(std::move(s), spec.ci_level);
        row.esg_nonstress.ci = percentile_ci(std::move(e), spec.ci_level);
        row.interaction.ci = percentile_ci(std::move(in), spec.ci_level);
        row.esg_stress_slope.ci = percentile_ci(std::move(slope), spec.ci_level);
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace tailrisk
