#include "tailrisk/io.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <openssl/evp.h>

#include "tailrisk/regime.h"

namespace tailrisk {

int CsvTable::find(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
}

CsvTable parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool any = false;  // current record has content
    std::size_t i = 0;
    // Skip a UTF-8 byte order mark.
    if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                record.push_back(std::move(field));
                records.push_back(std::move(record));
            }
            record.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted) throw InputError("unterminated quoted CSV field");
    if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    CsvTable t;
    if (records.empty()) return t;
    t.header = std::move(records.front());
    for (auto& h : t.header) {
        while (!h.empty() && (h.back() == ' ' || h.back() == '\t')) h.pop_back();
        while (!h.empty() && (h.front() == ' ' || h.front() == '\t')) h.erase(h.begin());
    }
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size()) {
            throw InputError("CSV line " + std::to_string(r + 1) + " has " + std::to_string(records[r].size()) +
                             " fields, header has " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
    if (!out) throw InputError("failed writing " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path)); }

namespace {

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string format_csv(const CsvTable& table) {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += quote(cells[i]);
        }
        out += '\n';
    };
    line(table.header);
    for (const auto& r : table.rows) line(r);
    return out;
}

std::string format_number(double x) {
    if (std::isnan(x)) return "";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    if (x == 0.0) return "0";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

std::string format_value(const Value& v) { return v ? format_number(*v) : std::string(); }

Value parse_value(const std::string& cell, const std::string& column) {
    std::size_t a = 0, b = cell.size();
    while (a < b && (cell[a] == ' ' || cell[a] == '\t')) ++a;
    while (b > a && (cell[b - 1] == ' ' || cell[b - 1] == '\t')) --b;
    if (a == b) return std::nullopt;
    double x = 0.0;
    const char* first = cell.data() + a;
    if (*first == '+') ++first;
    const auto res = std::from_chars(first, cell.data() + b, x);
    if (res.ec != std::errc() || res.ptr != cell.data() + b) {
        throw InputError("column " + column + ": cannot parse '" + cell + "' as a number");
    }
    return x;
}

namespace {

const std::vector<std::string> kOptional = {"e_score", "s_score", "g_score", "at", "dltt", "ib", "capx", "ppent"};

struct Columns {
    int firm, date, ret, price, sigma, volume, esg, sector;
    std::map<std::string, int> optional;
};

Columns locate(const CsvTable& t) {
    Columns c{};
    auto need = [&](const std::string& name) {
        const int i = t.find(name);
        if (i < 0) throw InputError("missing required column: " + name);
        return i;
    };
    c.firm = need("firm_id");
    c.date = need("date");
    c.ret = t.find("ret");
    c.price = t.find("price");
    if (c.ret < 0 && c.price < 0) throw InputError("missing required column: ret or price");
    c.volume = need("volume_usd");
    c.esg = need("esg");
    c.sector = need("sector");
    c.sigma = t.find("sigma");
    if (c.ret >= 0 && c.sigma < 0) throw InputError("missing required column: sigma (monthly rows need it)");
    for (const auto& name : kOptional) c.optional[name] = t.find(name);
    return c;
}

void fill_optional(FirmMonthRow& row, const std::vector<std::string>& cells, const Columns& c) {
    for (const auto& [name, idx] : c.optional) {
        if (idx < 0) continue;
        const Value v = parse_value(cells[static_cast<std::size_t>(idx)], name);
        if (name == "e_score") {
            row.e_score = v;
        } else if (name == "s_score") {
            row.s_score = v;
        } else if (name == "g_score") {
            row.g_score = v;
        } else {
            row.fundamentals[name] = v;
        }
    }
}

}  // namespace

PanelDataset panel_from_csv(const CsvTable& table, PanelReadReport* report, int min_days) {
    const Columns c = locate(table);
    PanelReadReport local;
    PanelReadReport& rep = report ? *report : local;
    rep.n_input_rows = table.rows.size();
    std::vector<FirmMonthRow> rows;

    if (c.ret >= 0) {
        rep.mode = "monthly";
        for (const auto& cells : table.rows) {
            FirmMonthRow row;
            row.firm_id = cells[static_cast<std::size_t>(c.firm)];
            if (row.firm_id.empty()) throw InputError("empty firm_id");
            row.month = YearMonth::parse(cells[static_cast<std::size_t>(c.date)]);
            row.ret = parse_value(cells[static_cast<std::size_t>(c.ret)], "ret");
            row.sigma = parse_value(cells[static_cast<std::size_t>(c.sigma)], "sigma");
            row.volume_usd = parse_value(cells[static_cast<std::size_t>(c.volume)], "volume_usd");
            row.esg = parse_value(cells[static_cast<std::size_t>(c.esg)], "esg");
            row.sector = cells[static_cast<std::size_t>(c.sector)];
            fill_optional(row, cells, c);
            rows.push_back(std::move(row));
        }
        return PanelDataset(std::move(rows));
    }

    rep.mode = "daily";
    std::vector<DailyPrice> prices;
    // Last row of each firm-month carries the non-price fields.
    std::map<std::pair<std::string, int>, std::pair<Date, const std::vector<std::string>*>> last;
    std::map<std::pair<std::string, int>, double> volume;
    std::map<std::pair<std::string, int>, bool> volume_seen;
    for (const auto& cells : table.rows) {
        const std::string firm = cells[static_cast<std::size_t>(c.firm)];
        if (firm.empty()) throw InputError("empty firm_id");
        const Date date = Date::parse(cells[static_cast<std::size_t>(c.date)]);
        const Value price = parse_value(cells[static_cast<std::size_t>(c.price)], "price");
        if (price) {
            if (*price > 0.0 && std::isfinite(*price)) {
                prices.push_back({firm, date, *price});
            } else {
                rep.diagnostics.push_back(firm + " " + cells[static_cast<std::size_t>(c.date)] +
                                          ": non-positive price rejected");
            }
        }
        const auto key = std::make_pair(firm, date.year_month().index());
        const Value v = parse_value(cells[static_cast<std::size_t>(c.volume)], "volume_usd");
        if (v) {
            volume[key] += *v;
            volume_seen[key] = true;
        }
        auto it = last.find(key);
        if (it == last.end() || !(date < it->second.first)) last[key] = {date, &cells};
    }
    const MonthlyReturnSeries series = compound_monthly_returns(prices, min_days);
    for (const auto& d : series.diagnostics) rep.diagnostics.push_back(d);
    std::map<std::pair<std::string, int>, const MonthlyReturn*> by_month;
    for (const auto& m : series.months) by_month[{m.firm_id, m.month.index()}] = &m;

    for (const auto& [key, entry] : last) {
        const auto& cells = *entry.second;
        FirmMonthRow row;
        row.firm_id = key.first;
        row.month = YearMonth::from_index(key.second);
        if (auto it = by_month.find(key); it != by_month.end()) {
            row.ret = it->second->ret;
            const RealizedVol rv = realized_vol(it->second->daily_returns);
            row.sigma = rv.sigma;
        }
        if (volume_seen[key]) row.volume_usd = volume[key];
        row.esg = parse_value(cells[static_cast<std::size_t>(c.esg)], "esg");
        row.sector = cells[static_cast<std::size_t>(c.sector)];
        fill_optional(row, cells, c);
        rows.push_back(std::move(row));
    }
    return PanelDataset(std::move(rows));
}

PanelDataset read_panel_csv(const std::filesystem::path& path, PanelReadReport* report, int min_days) {
    return panel_from_csv(read_csv(path), report, min_days);
}

CsvTable panel_to_csv(const PanelDataset& panel) {
    CsvTable t;
    t.header = {"firm_id", "date", "ret", "sigma", "volume_usd", "esg", "e_score", "s_score", "g_score"};
    for (const auto& f : kFundamentals) t.header.push_back(f);
    t.header.push_back("sector");
    for (const auto& r : panel.rows()) {
        std::vector<std::string> cells = {r.firm_id,           r.month.str(),        format_value(r.ret),
                                          format_value(r.sigma), format_value(r.volume_usd), format_value(r.esg),
                                          format_value(r.e_score), format_value(r.s_score), format_value(r.g_score)};
        for (const auto& f : kFundamentals) {
            auto it = r.fundamentals.find(f);
            cells.push_back(it == r.fundamentals.end() ? std::string() : format_value(it->second));
        }
        cells.push_back(r.sector);
        t.rows.push_back(std::move(cells));
    }
    return t;
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    write_text(path, j.dump(2) + "\n");
}

nlohmann::ordered_json read_json(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + ": invalid JSON: " + e.what());
    }
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

}  // namespace tailrisk
