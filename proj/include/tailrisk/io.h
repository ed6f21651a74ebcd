#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tailrisk/common.h"
#include "tailrisk/panel.h"

namespace tailrisk {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Index of a header column, or -1.
    int find(const std::string& name) const;
};

// RFC 4180 style: comma separated, optional double quotes, CRLF or LF.
CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);
std::string format_csv(const CsvTable& table);

// Shortest round-trip decimal form; missing values are the empty string.
std::string format_number(double x);
std::string format_value(const Value& v);
// Empty string means missing. Throws InputError naming the column otherwise.
Value parse_value(const std::string& cell, const std::string& column);

struct PanelReadReport {
    std::string mode;  // "monthly" or "daily"
    std::size_t n_input_rows = 0;
    std::vector<std::string> diagnostics;
};

// Panel CSV. Monthly rows need firm_id, date, ret, sigma, volume_usd, esg and
// sector; daily rows carry price instead of ret and are compounded into
// months, with sigma the within-month sd of daily returns, volume_usd summed
// over the month and the other fields taken from the month's last row.
// Optional: e_score, s_score, g_score, at, dltt, ib, capx, ppent.
// Throws InputError("missing required column: ...") and for malformed cells.
PanelDataset read_panel_csv(const std::filesystem::path& path, PanelReadReport* report = nullptr,
                            int min_days = 10);
PanelDataset panel_from_csv(const CsvTable& table, PanelReadReport* report = nullptr, int min_days = 10);

// Monthly-mode CSV of the raw fields.
CsvTable panel_to_csv(const PanelDataset& panel);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::ordered_json read_json(const std::filesystem::path& path);

std::string sha256_hex(const std::string& bytes);

}  // namespace tailrisk
