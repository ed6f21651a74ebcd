#include "tailrisk/panel.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <tuple>

#include "tailrisk/regime.h"
#include "tailrisk/stats.h"

namespace tailrisk {

namespace {

const std::vector<std::string> kBaseScalars = {"ret",     "esg",        "e_score", "s_score",
                                               "g_score", "volume_usd", "sigma"};

Value base_value(const FirmMonthRow& row, const std::string& name) {
    if (name == "ret") return row.ret;
    if (name == "esg") return row.esg;
    if (name == "e_score") return row.e_score;
    if (name == "s_score") return row.s_score;
    if (name == "g_score") return row.g_score;
    if (name == "volume_usd") return row.volume_usd;
    if (name == "sigma") return row.sigma;
    auto it = row.fundamentals.find(name);
    return it == row.fundamentals.end() ? Value{} : it->second;
}

int parse_int(const std::string& text, std::size_t pos, std::size_t len, const std::string& whole) {
    if (pos + len > text.size()) throw InputError("malformed date: '" + whole + "'");
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
        if (text[i] < '0' || text[i] > '9') throw InputError("malformed date: '" + whole + "'");
        v = v * 10 + (text[i] - '0');
    }
    return v;
}

}  // namespace

YearMonth YearMonth::parse(const std::string& text) {
    if (text.size() != 7 && text.size() != 10) throw InputError("malformed date: '" + text + "'");
    if (text[4] != '-') throw InputError("malformed date: '" + text + "'");
    YearMonth ym{parse_int(text, 0, 4, text), parse_int(text, 5, 2, text)};
    if (ym.month < 1 || ym.month > 12) throw InputError("malformed date: '" + text + "'");
    return ym;
}

std::string YearMonth::str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
    return buf;
}

Date Date::parse(const std::string& text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
        throw InputError("malformed date: '" + text + "'");
    }
    Date d{parse_int(text, 0, 4, text), parse_int(text, 5, 2, text), parse_int(text, 8, 2, text)};
    if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31) {
        throw InputError("malformed date: '" + text + "'");
    }
    return d;
}

// ---------------------------------------------------------------------------

PanelDataset::PanelDataset(std::vector<FirmMonthRow> rows) : rows_(std::move(rows)) {
    std::sort(rows_.begin(), rows_.end(), [](const FirmMonthRow& a, const FirmMonthRow& b) {
        if (a.firm_id != b.firm_id) return a.firm_id < b.firm_id;
        return a.month < b.month;
    });
    std::set<int> month_set;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        const auto& r = rows_[i];
        auto [it, inserted] = index_.emplace(std::make_pair(r.firm_id, r.month.index()), i);
        if (!inserted) {
            throw InputError("duplicate firm-month: " + r.firm_id + " " + r.month.str());
        }
        if (r.ret && !std::isfinite(*r.ret)) {
            throw InputError("non-finite return for " + r.firm_id + " " + r.month.str());
        }
        if (r.volume_usd && *r.volume_usd < 0.0) {
            throw InputError("negative volume for " + r.firm_id + " " + r.month.str());
        }
        month_set.insert(r.month.index());
        for (const auto& name : kBaseScalars) {
            if (base_value(r, name)) base_present_.insert(name);
        }
        for (const auto& [name, v] : r.fundamentals) {
            if (v) base_present_.insert(name);
        }
    }
    for (int m : month_set) months_.push_back(YearMonth::from_index(m));
}

bool PanelDataset::is_base_column(const std::string& name) {
    return std::find(kBaseScalars.begin(), kBaseScalars.end(), name) != kBaseScalars.end() ||
           std::find(kFundamentals.begin(), kFundamentals.end(), name) != kFundamentals.end();
}

bool PanelDataset::has_column(const std::string& name) const {
    if (derived_.count(name)) return true;
    return is_base_column(name) && base_present_.count(name);
}

Column PanelDataset::column(const std::string& name) const {
    if (auto it = derived_.find(name); it != derived_.end()) return it->second;
    if (!is_base_column(name)) throw InputError("unknown column: " + name);
    Column out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back(base_value(r, name));
    return out;
}

std::vector<double> PanelDataset::values_or_nan(const std::string& name) const {
    const Column c = column(name);
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        out[i] = c[i] ? *c[i] : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

void PanelDataset::set_derived(const std::string& name, Column values) {
    if (values.size() != rows_.size()) {
        throw std::invalid_argument("derived column '" + name + "' has wrong length");
    }
    derived_[name] = std::move(values);
}

void PanelDataset::drop_derived(const std::string& name) {
    derived_.erase(name);
    controls_.erase(std::remove(controls_.begin(), controls_.end(), name), controls_.end());
}

std::optional<std::size_t> PanelDataset::find(const std::string& firm_id, YearMonth month) const {
    auto it = index_.find({firm_id, month.index()});
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::vector<std::size_t>> PanelDataset::rows_by_month() const {
    std::map<int, std::size_t> pos;
    for (std::size_t i = 0; i < months_.size(); ++i) pos[months_[i].index()] = i;
    std::vector<std::vector<std::size_t>> out(months_.size());
    for (std::size_t i = 0; i < rows_.size(); ++i) out[pos[rows_[i].month.index()]].push_back(i);
    return out;
}

// ---------------------------------------------------------------------------

MonthlyReturnSeries compound_monthly_returns(const std::vector<DailyPrice>& prices, int min_days) {
    MonthlyReturnSeries out;
    std::map<std::string, std::vector<DailyPrice>> by_firm;
    for (const auto& p : prices) {
        if (!(p.price > 0.0) || !std::isfinite(p.price)) {
            std::ostringstream msg;
            msg << "rejected non-positive price " << p.price << " for " << p.firm_id << " on "
                << p.date.year << "-" << p.date.month << "-" << p.date.day;
            out.diagnostics.push_back(msg.str());
            continue;
        }
        by_firm[p.firm_id].push_back(p);
    }
    for (auto& [firm, series] : by_firm) {
        std::stable_sort(series.begin(), series.end(),
                         [](const DailyPrice& a, const DailyPrice& b) { return a.date < b.date; });
        std::map<int, std::vector<double>> daily;
        std::vector<int> order;
        for (std::size_t i = 0; i < series.size(); ++i) {
            const int m = series[i].date.year_month().index();
            if (!daily.count(m)) {
                daily[m];
                order.push_back(m);
            }
            if (i > 0) daily[m].push_back(series[i].price / series[i - 1].price - 1.0);
        }
        for (int m : order) {
            MonthlyReturn mr;
            mr.firm_id = firm;
            mr.month = YearMonth::from_index(m);
            mr.daily_returns = daily[m];
            if (static_cast<int>(mr.daily_returns.size()) >= min_days && !mr.daily_returns.empty()) {
                double growth = 1.0;
                for (double r : mr.daily_returns) growth *= 1.0 + r;
                mr.ret = growth - 1.0;
            }
            out.months.push_back(std::move(mr));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

PanelDataset derive_controls(const PanelDataset& panel) {
    PanelDataset out = panel;
    const std::size_t n = panel.size();
    Column log_at(n), lev(n), prof(n), inv(n), tang(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& f = panel.rows()[i].fundamentals;
        auto get = [&](const char* key) -> Value {
            auto it = f.find(key);
            return it == f.end() ? Value{} : it->second;
        };
        const Value at = get("at");
        if (!at || !(*at > 0.0)) continue;
        log_at[i] = std::log(*at);
        auto ratio = [&](const char* key) -> Value {
            const Value v = get(key);
            return v ? Value{*v / *at} : Value{};
        };
        lev[i] = ratio("dltt");
        prof[i] = ratio("ib");
        inv[i] = ratio("capx");
        tang[i] = ratio("ppent");
    }
    out.set_derived("log_at", std::move(log_at));
    out.set_derived("lev", std::move(lev));
    out.set_derived("prof", std::move(prof));
    out.set_derived("inv", std::move(inv));
    out.set_derived("tang", std::move(tang));
    out.set_control_columns(kDerivedControls);
    return out;
}

FilterResult filter_by_missing_rate(const PanelDataset& panel, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw InputError("missing-rate threshold must lie in (0, 1]");
    }
    FilterResult result{panel, {}};
    std::vector<std::string> kept;
    for (const auto& name : panel.control_columns()) {
        const Column c = panel.column(name);
        std::size_t missing = 0;
        for (const auto& v : c) missing += v ? 0 : 1;
        const double rate = c.empty() ? 1.0 : static_cast<double>(missing) / static_cast<double>(c.size());
        const bool keep = rate < threshold;
        result.report.push_back({name, rate, keep});
        if (keep) {
            kept.push_back(name);
        } else {
            result.panel.drop_derived(name);
        }
    }
    result.panel.set_control_columns(kept);
    return result;
}

namespace {

void winsorize_group(Column& col, const std::vector<std::size_t>& idx, double lo_p, double hi_p,
                     std::size_t& clamped) {
    std::vector<double> vals;
    for (std::size_t i : idx) {
        if (col[i]) vals.push_back(*col[i]);
    }
    if (vals.size() < 2) return;
    std::sort(vals.begin(), vals.end());
    const double lo = percentile_sorted(vals, lo_p);
    const double hi = percentile_sorted(vals, hi_p);
    for (std::size_t i : idx) {
        if (!col[i]) continue;
        const double v = std::clamp(*col[i], lo, hi);
        if (v != *col[i]) ++clamped;
        col[i] = v;
    }
}

// Returns {center, scale, degenerate}.
std::tuple<double, double, bool> zscore_group(Column& col, const std::vector<std::size_t>& idx) {
    std::vector<double> vals;
    for (std::size_t i : idx) {
        if (col[i]) vals.push_back(*col[i]);
    }
    if (vals.empty()) return {0.0, 1.0, true};
    const double m = mean(vals);
    double sd = sample_sd(vals);
    bool degenerate = false;
    if (!(sd > 1e-12 * std::max(1.0, std::fabs(m)))) {
        sd = 1.0;
        degenerate = true;
    }
    for (std::size_t i : idx) {
        if (col[i]) col[i] = (*col[i] - m) / sd;
    }
    return {m, sd, degenerate};
}

}  // namespace

StandardizeResult standardize_controls(const PanelDataset& panel, const StandardizeOptions& options) {
    StandardizeResult result{panel, {}};
    const auto by_month = panel.rows_by_month();
    std::vector<std::size_t> all(panel.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

    for (const auto& name : panel.control_columns()) {
        Column col = panel.column(name);
        TransformRecord rec;
        rec.column = name;
        if (options.winsor_scope == Scope::per_month) {
            for (const auto& idx : by_month) {
                winsorize_group(col, idx, options.lower_pct, options.upper_pct, rec.n_clamped);
            }
        } else {
            winsorize_group(col, all, options.lower_pct, options.upper_pct, rec.n_clamped);
        }
        if (options.zscore_scope == Scope::pooled) {
            auto [c, s, deg] = zscore_group(col, all);
            rec.center = c;
            rec.scale = s;
            rec.degenerate = deg;
        } else {
            for (const auto& idx : by_month) {
                auto [c, s, deg] = zscore_group(col, idx);
                (void)c;
                (void)s;
                rec.degenerate = rec.degenerate || deg;
            }
        }
        result.panel.set_derived(name, std::move(col));
        result.transforms.push_back(rec);
    }
    return result;
}

std::string lagged_name(const std::string& column, int lag) { return column + "_lag" + std::to_string(lag); }

PanelDataset lag_columns(const PanelDataset& panel, const std::vector<std::string>& columns, int lag) {
    if (lag < 1) throw InputError("lag must be at least 1");
    PanelDataset out = panel;
    for (const auto& name : columns) {
        if (!panel.has_column(name)) throw InputError("unknown column: " + name);
        const Column src = panel.column(name);
        Column lagged(panel.size());
        for (std::size_t i = 0; i < panel.size(); ++i) {
            const auto& row = panel.rows()[i];
            if (auto j = panel.find(row.firm_id, row.month.plus(-lag))) lagged[i] = src[*j];
        }
        out.set_derived(lagged_name(name, lag), std::move(lagged));
    }
    return out;
}

PanelDataset compute_excess_returns(const PanelDataset& panel, const RegimeSeries& market, bool allow_uncovered) {
    PanelDataset out = panel;
    Column ex(panel.size());
    for (std::size_t i = 0; i < panel.size(); ++i) {
        const auto& row = panel.rows()[i];
        const auto rm = market.market_of(row.month);
        if (!rm) {
            if (allow_uncovered) continue;
            throw InputError("month " + row.month.str() + " absent from market series");
        }
        if (row.ret) ex[i] = *row.ret - *rm;
    }
    out.set_derived("excess_ret", std::move(ex));
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> SectorEncoding::column_names() const {
    std::vector<std::string> out;
    for (const auto& l : levels) out.push_back("sector[" + l + "]");
    return out;
}

Eigen::RowVectorXd SectorEncoding::indicators(const std::string& label) const {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(levels.size()));
    auto it = std::lower_bound(levels.begin(), levels.end(), label);
    if (it != levels.end() && *it == label) v(it - levels.begin()) = 1.0;
    return v;
}

SectorEncoding encode_sectors(const PanelDataset& panel, const std::vector<std::size_t>& rows) {
    std::set<std::string> labels;
    for (std::size_t i : rows) {
        const auto& s = panel.rows()[i].sector;
        if (s.empty()) throw InputError("missing sector label for " + panel.rows()[i].firm_id);
        labels.insert(s);
    }
    SectorEncoding enc;
    if (labels.empty()) {
        enc.single_sector = true;
        return enc;
    }
    enc.reference = *labels.begin();
    enc.levels.assign(std::next(labels.begin()), labels.end());
    enc.single_sector = enc.levels.empty();
    return enc;
}

SectorEncoding encode_sectors(const PanelDataset& panel) {
    std::vector<std::size_t> all(panel.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return encode_sectors(panel, all);
}

Eigen::MatrixXd sector_fragment(const PanelDataset& panel, const SectorEncoding& encoding,
                                const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(encoding.levels.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        m.row(static_cast<Eigen::Index>(r)) = encoding.indicators(panel.rows()[rows[r]].sector);
    }
    return m;
}

}  // namespace tailrisk
