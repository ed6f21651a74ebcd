#include "tailrisk/design.h"

#include <algorithm>
#include <map>

namespace tailrisk {

Eigen::Index Design::column(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<Eigen::Index>(it - names.begin());
}

Design build_design(const PanelDataset& panel, const std::vector<std::size_t>& candidate_rows, const DesignSpec& spec) {
    Design d;
    const Column y = panel.column(spec.outcome);

    struct Term {
        Column a;
        Column b;  // empty unless interaction
        std::string name;
    };
    std::vector<Term> terms;
    for (const auto& r : spec.regressors) {
        Term t;
        t.name = r;
        const auto colon = r.find(':');
        if (colon == std::string::npos) {
            if (!panel.has_column(r)) throw InputError("unknown column: " + r);
            t.a = panel.column(r);
        } else {
            const std::string lhs = r.substr(0, colon);
            const std::string rhs = r.substr(colon + 1);
            if (!panel.has_column(lhs)) throw InputError("unknown column: " + lhs);
            if (!panel.has_column(rhs)) throw InputError("unknown column: " + rhs);
            t.a = panel.column(lhs);
            t.b = panel.column(rhs);
        }
        terms.push_back(std::move(t));
    }

    for (std::size_t i : candidate_rows) {
        bool ok = static_cast<bool>(y[i]);
        for (const auto& t : terms) {
            if (!ok) break;
            ok = t.a[i] && (t.b.empty() || t.b[i]);
        }
        if (spec.sector_dummies && panel.rows()[i].sector.empty()) ok = false;
        if (ok) {
            d.rows.push_back(i);
        } else {
            ++d.n_missing_dropped;
        }
    }

    if (spec.sector_dummies) d.sectors = encode_sectors(panel, d.rows);
    const auto n = static_cast<Eigen::Index>(d.rows.size());
    const Eigen::Index n_sector = spec.sector_dummies ? static_cast<Eigen::Index>(d.sectors.levels.size()) : 0;
    const Eigen::Index p = (spec.intercept ? 1 : 0) + n_sector + static_cast<Eigen::Index>(terms.size());

    d.X.resize(n, p);
    d.y.resize(n);
    if (spec.intercept) d.names.push_back("intercept");
    if (spec.sector_dummies) {
        for (const auto& c : d.sectors.column_names()) d.names.push_back(c);
    }
    for (const auto& t : terms) d.names.push_back(t.name);

    std::map<int, int> cluster_of;
    for (Eigen::Index r = 0; r < n; ++r) {
        const std::size_t i = d.rows[static_cast<std::size_t>(r)];
        Eigen::Index c = 0;
        if (spec.intercept) d.X(r, c++) = 1.0;
        if (n_sector > 0) {
            d.X.block(r, c, 1, n_sector) = d.sectors.indicators(panel.rows()[i].sector);
            c += n_sector;
        }
        for (const auto& t : terms) {
            double v = *t.a[i];
            if (!t.b.empty()) v *= *t.b[i];
            d.X(r, c++) = v;
        }
        d.y(r) = *y[i];
        const int m = panel.rows()[i].month.index();
        auto [it, inserted] = cluster_of.emplace(m, static_cast<int>(cluster_of.size()));
        if (inserted) d.cluster_months.push_back(panel.rows()[i].month);
        d.cluster.push_back(it->second);
    }

    // Drop identically-zero dummy columns.
    if (n_sector > 0) {
        const Eigen::Index first = spec.intercept ? 1 : 0;
        std::vector<Eigen::Index> keep;
        for (Eigen::Index c = 0; c < p; ++c) {
            const bool is_dummy = c >= first && c < first + n_sector;
            if (is_dummy && d.X.col(c).cwiseAbs().maxCoeff() == 0.0) {
                d.dropped_columns.push_back(d.names[static_cast<std::size_t>(c)]);
            } else {
                keep.push_back(c);
            }
        }
        if (static_cast<Eigen::Index>(keep.size()) != p) {
            Eigen::MatrixXd X2(n, static_cast<Eigen::Index>(keep.size()));
            std::vector<std::string> names2;
            for (std::size_t k = 0; k < keep.size(); ++k) {
                X2.col(static_cast<Eigen::Index>(k)) = d.X.col(keep[k]);
                names2.push_back(d.names[static_cast<std::size_t>(keep[k])]);
            }
            d.X = std::move(X2);
            d.names = std::move(names2);
        }
    }
    return d;
}

std::vector<std::string> collinear_columns(const Eigen::MatrixXd& X, const std::vector<std::string>& names) {
    if (X.cols() == 0) return {};
    if (X.rows() < X.cols()) return names;
    // Scale columns so the rank threshold is not dominated by units.
    Eigen::MatrixXd Xs = X;
    for (Eigen::Index c = 0; c < Xs.cols(); ++c) {
        const double norm = Xs.col(c).norm();
        if (norm > 0.0) Xs.col(c) /= norm;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
    qr.setThreshold(1e-10);
    const Eigen::Index rank = qr.rank();
    std::vector<std::string> out;
    if (rank == X.cols()) return out;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = rank; k < X.cols(); ++k) out.push_back(names[static_cast<std::size_t>(perm(k))]);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> dense_ids(const std::vector<int>& labels, int* n_groups) {
    std::map<int, int> ids;
    std::vector<int> out;
    out.reserve(labels.size());
    for (int l : labels) {
        auto [it, inserted] = ids.emplace(l, static_cast<int>(ids.size()));
        out.push_back(it->second);
    }
    if (n_groups) *n_groups = static_cast<int>(ids.size());
    return out;
}

}  // namespace tailrisk
