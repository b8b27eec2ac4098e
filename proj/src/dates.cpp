#include "muqar/dates.hpp"

#include <array>
#include <cstdio>
#include <stdexcept>

namespace muqar {

// Howard Hinnant's chrono-compatible civil day algorithms.
std::int64_t days_from_civil(const Date& d) {
    std::int64_t y = d.year;
    const int m = d.month;
    const int dy = d.day;
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + dy - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

Date civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned dy = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(dy)};
}

bool is_leap_year(int year) {
    return (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
}

int days_in_month(int year, int month) {
    static constexpr std::array<int, 12> kDays = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (month < 1 || month > 12) throw std::runtime_error("days_in_month: month out of range");
    if (month == 2 && is_leap_year(year)) return 29;
    return kDays[month - 1];
}

int iso_weekday(const Date& d) {
    // 1970-01-01 was a Thursday.
    std::int64_t z = days_from_civil(d);
    std::int64_t wd = (z + 3) % 7;  // 0 = Monday
    if (wd < 0) wd += 7;
    return static_cast<int>(wd) + 1;
}

int day_of_year(const Date& d) {
    int doy = d.day;
    for (int m = 1; m < d.month; ++m) doy += days_in_month(d.year, m);
    return doy;
}

IsoWeek iso_week_of(const Date& d) {
    const int doy = day_of_year(d);
    const int wd = iso_weekday(d);
    int week = (doy - wd + 10) / 7;
    if (week < 1) {
        // Belongs to the last week of the previous year.
        Date prev{d.year - 1, 12, 31};
        return iso_week_of(prev);
    }
    if (week == 53) {
        // Week 53 exists only if Jan 1 of next year is still in it.
        const int days_in_year = is_leap_year(d.year) ? 366 : 365;
        if (doy - wd + 4 > days_in_year - 3) {
            const int wd_dec31 = iso_weekday(Date{d.year, 12, 31});
            if (wd_dec31 < 4) return IsoWeek{d.year + 1, 1};
        }
    }
    return IsoWeek{d.year, week};
}

Date iso_week_start(const Date& d) {
    const std::int64_t z = days_from_civil(d);
    return civil_from_days(z - (iso_weekday(d) - 1));
}

int season_of(const Date& d) {
    switch (d.month) {
        case 12:
        case 1:
        case 2:
            return 0;
        case 3:
        case 4:
        case 5:
            return 1;
        case 6:
        case 7:
        case 8:
            return 2;
        default:
            return 3;
    }
}

SeasonKey season_key_of(const Date& d) {
    const int s = season_of(d);
    return SeasonKey{d.month == 12 ? d.year + 1 : d.year, s};
}

Date parse_date(const std::string& s) {
    int y = 0, m = 0, dy = 0;
    char sep1 = 0, sep2 = 0, extra = 0;
    const int got = std::sscanf(s.c_str(), "%d%c%d%c%d%c", &y, &sep1, &m, &sep2, &dy, &extra);
    if (got != 5 || sep1 != '-' || sep2 != '-') {
        throw std::runtime_error("parse_date: expected YYYY-MM-DD, got '" + s + "'");
    }
    if (m < 1 || m > 12 || dy < 1 || dy > days_in_month(y, m)) {
        throw std::runtime_error("parse_date: invalid calendar date '" + s + "'");
    }
    return Date{y, m, dy};
}

std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", d.year, d.month, d.day);
    return buf;
}

}  // namespace muqar
