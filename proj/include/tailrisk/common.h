#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tailrisk {

// Bad configuration or malformed input. Maps to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An estimator could not produce a value. Maps to exit code 1.
class EstimationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Calendar month. Ordered by (year, month); index() is a dense integer so
// that consecutive calendar months differ by exactly one.
struct YearMonth {
    int year = 1970;
    int month = 1;  // 1..12

    constexpr int index() const { return year * 12 + (month - 1); }
    static constexpr YearMonth from_index(int idx) {
        int y = idx >= 0 ? idx / 12 : -((-idx + 11) / 12);
        return YearMonth{y, idx - y * 12 + 1};
    }
    YearMonth plus(int months) const { return from_index(index() + months); }

    // Accepts yyyy-mm or yyyy-mm-dd.
    static YearMonth parse(const std::string& text);
    std::string str() const;

    friend constexpr auto operator<=>(const YearMonth& a, const YearMonth& b) {
        return a.index() <=> b.index();
    }
    friend constexpr bool operator==(const YearMonth& a, const YearMonth& b) {
        return a.index() == b.index();
    }
};

struct Date {
    int year = 1970;
    int month = 1;
    int day = 1;

    static Date parse(const std::string& text);
    YearMonth year_month() const { return {year, month}; }
    friend constexpr auto operator<=>(const Date&, const Date&) = default;
};

// A value-or-missing cell. Missing values are never sentinel-coded.
using Value = std::optional<double>;
using Column = std::vector<Value>;

}  // namespace tailrisk
