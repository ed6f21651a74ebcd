#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tailrisk/panel.h"

namespace tailrisk {

// Regressor list entries are column names; "a:b" denotes the product of two
// columns.
struct DesignSpec {
    std::string outcome;
    std::vector<std::string> regressors;
    bool intercept = true;
    bool sector_dummies = true;
};

struct Design {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    std::vector<std::string> names;
    std::vector<std::size_t> rows;  // panel row of each design row
    std::vector<int> cluster;       // dense month id per design row
    std::vector<YearMonth> cluster_months;
    SectorEncoding sectors;
    std::vector<std::string> dropped_columns;
    std::size_t n_missing_dropped = 0;

    Eigen::Index column(const std::string& name) const;  // -1 when absent
    int n_clusters() const { return static_cast<int>(cluster_months.size()); }
};

// Rows with any missing outcome/regressor value are excluded and counted.
// Sector dummies are encoded over the surviving rows; dummy columns that are
// identically zero are dropped and listed.
Design build_design(const PanelDataset& panel, const std::vector<std::size_t>& candidate_rows, const DesignSpec& spec);

// Names of columns that are linearly dependent on earlier (pivoted) columns.
// Empty when X has full column rank.
std::vector<std::string> collinear_columns(const Eigen::MatrixXd& X, const std::vector<std::string>& names);

// Dense cluster ids (0..G-1) in order of first appearance of each label.
std::vector<int> dense_ids(const std::vector<int>& labels, int* n_groups = nullptr);

}  // namespace tailrisk
