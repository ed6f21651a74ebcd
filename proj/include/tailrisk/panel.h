#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tailrisk/common.h"

namespace tailrisk {

// Raw fundamentals carried on each row.
inline const std::vector<std::string> kFundamentals = {"at", "dltt", "ib", "capx", "ppent"};
// Controls built from the fundamentals, in construction order.
inline const std::vector<std::string> kDerivedControls = {"log_at", "lev", "prof", "inv", "tang"};

struct FirmMonthRow {
    std::string firm_id;
    YearMonth month;
    Value ret;
    Value esg;
    Value e_score;
    Value s_score;
    Value g_score;
    Value volume_usd;
    // Realized volatility of daily returns within the month.
    Value sigma;
    std::map<std::string, Value> fundamentals;
    std::string sector;
};

// Tidy firm-month table. Rows are kept sorted by (firm_id, month) and every
// derived column holds one value-or-missing entry per row.
class PanelDataset {
public:
    PanelDataset() = default;
    // Throws InputError on duplicate (firm_id, month), non-finite returns or
    // negative volume.
    explicit PanelDataset(std::vector<FirmMonthRow> rows);

    const std::vector<FirmMonthRow>& rows() const { return rows_; }
    const std::vector<YearMonth>& months() const { return months_; }
    std::size_t size() const { return rows_.size(); }

    // Base columns are the FirmMonthRow fields (ret, esg, e_score, s_score,
    // g_score, volume_usd, sigma and the fundamentals); everything else is a
    // derived column.
    static bool is_base_column(const std::string& name);
    bool has_column(const std::string& name) const;
    Column column(const std::string& name) const;
    std::vector<double> values_or_nan(const std::string& name) const;

    const std::map<std::string, Column>& derived() const { return derived_; }
    void set_derived(const std::string& name, Column values);
    void drop_derived(const std::string& name);

    const std::vector<std::string>& control_columns() const { return controls_; }
    void set_control_columns(std::vector<std::string> names) { controls_ = std::move(names); }

    std::optional<std::size_t> find(const std::string& firm_id, YearMonth month) const;

    // Row indices grouped by month, aligned with months().
    std::vector<std::vector<std::size_t>> rows_by_month() const;

private:
    std::vector<FirmMonthRow> rows_;
    std::vector<YearMonth> months_;
    std::map<std::string, Column> derived_;
    std::vector<std::string> controls_;
    std::set<std::string> base_present_;
    std::map<std::pair<std::string, int>, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Daily prices to monthly returns

struct DailyPrice {
    std::string firm_id;
    Date date;
    double price = 0.0;
};

struct MonthlyReturn {
    std::string firm_id;
    YearMonth month;
    Value ret;  // missing when fewer than min_days daily returns
    std::vector<double> daily_returns;
};

struct MonthlyReturnSeries {
    std::vector<MonthlyReturn> months;
    std::vector<std::string> diagnostics;
};

// Daily return on day d is p_d / p_{d-1} - 1, where d-1 is the previous valid
// observation of the same firm (possibly in the prior month). Input need not
// be grouped; each firm's observations are sorted by date first.
MonthlyReturnSeries compound_monthly_returns(const std::vector<DailyPrice>& prices, int min_days = 10);

// ---------------------------------------------------------------------------
// Variable construction

// Appends log_at, lev, prof, inv, tang and registers them as controls.
// Rows with at <= 0 (or missing) get missing controls.
PanelDataset derive_controls(const PanelDataset& panel);

struct MissingRateEntry {
    std::string column;
    double missing_rate = 0.0;
    bool kept = true;
};

struct FilterResult {
    PanelDataset panel;
    std::vector<MissingRateEntry> report;
};

// Keeps control columns whose panel-wide missing fraction is strictly below
// the threshold.
FilterResult filter_by_missing_rate(const PanelDataset& panel, double threshold = 0.20);

enum class Scope { per_month, pooled };

struct StandardizeOptions {
    double lower_pct = 0.01;
    double upper_pct = 0.99;
    Scope winsor_scope = Scope::per_month;
    Scope zscore_scope = Scope::pooled;
};

struct TransformRecord {
    std::string column;
    double center = 0.0;  // pooled z-score only
    double scale = 1.0;
    std::size_t n_clamped = 0;
    bool degenerate = false;
};

struct StandardizeResult {
    PanelDataset panel;
    std::vector<TransformRecord> transforms;
};

// Winsorizes every control column at the configured percentiles, then
// z-scores it (sample sd). A zero-variance column is centered, left with scale
// 1 and flagged.
StandardizeResult standardize_controls(const PanelDataset& panel, const StandardizeOptions& options = {});

std::string lagged_name(const std::string& column, int lag);

// Adds "<column>_lag<k>": the value of the same firm `lag` calendar months
// earlier, missing when that month is absent. Throws InputError for an
// unknown column.
PanelDataset lag_columns(const PanelDataset& panel, const std::vector<std::string>& columns, int lag = 1);

struct RegimeSeries;

// Adds "excess_ret" = ret - market return of the same month. A row whose month
// is absent from the market series is an error unless allow_uncovered is set,
// in which case its excess return is missing.
PanelDataset compute_excess_returns(const PanelDataset& panel, const RegimeSeries& market,
                                    bool allow_uncovered = false);

// One-hot sector encoding; the lexicographically smallest label is the
// omitted reference.
struct SectorEncoding {
    std::string reference;
    std::vector<std::string> levels;  // non-reference labels, sorted
    bool single_sector = false;

    std::vector<std::string> column_names() const;
    // Indicator row for one label; unknown labels map to all zeros.
    Eigen::RowVectorXd indicators(const std::string& label) const;
};

SectorEncoding encode_sectors(const PanelDataset& panel, const std::vector<std::size_t>& rows);
SectorEncoding encode_sectors(const PanelDataset& panel);
Eigen::MatrixXd sector_fragment(const PanelDataset& panel, const SectorEncoding& encoding,
                                const std::vector<std::size_t>& rows);

}  // namespace tailrisk
