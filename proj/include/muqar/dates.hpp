#pragma once

#include <cstdint>
#include <string>

namespace muqar {

// Calendar date with day-count arithmetic. All conversions use the proleptic
// Gregorian calendar; day numbers count from 1970-01-01 (day 0).
struct Date {
    int year = 1970;
    int month = 1;  // 1..12
    int day = 1;    // 1..31

    bool operator==(const Date&) const = default;
    auto operator<=>(const Date&) const = default;
};

// Days since 1970-01-01 (negative before).
std::int64_t days_from_civil(const Date& d);
Date civil_from_days(std::int64_t days);

bool is_leap_year(int year);
int days_in_month(int year, int month);

// Monday=1 .. Sunday=7 (ISO numbering).
int iso_weekday(const Date& d);

// 1-based ordinal day within the year (1..365/366).
int day_of_year(const Date& d);

// ISO-8601 week: (iso_year, week 1..53).
struct IsoWeek {
    int year = 0;
    int week = 0;

    bool operator==(const IsoWeek&) const = default;
    auto operator<=>(const IsoWeek&) const = default;
};
IsoWeek iso_week_of(const Date& d);

// Monday of the date's ISO week.
Date iso_week_start(const Date& d);

// Meteorological season: 0 winter (Dec-Feb), 1 spring (Mar-May),
// 2 summer (Jun-Aug), 3 autumn (Sep-Nov).
int season_of(const Date& d);

// Season tagged with the year it belongs to; December counts toward the
// winter of the following year so each season is one contiguous span.
struct SeasonKey {
    int year = 0;
    int season = 0;

    bool operator==(const SeasonKey&) const = default;
    auto operator<=>(const SeasonKey&) const = default;
};
SeasonKey season_key_of(const Date& d);

// Strict ISO-8601 "YYYY-MM-DD". Throws std::runtime_error on malformed input.
Date parse_date(const std::string& s);
std::string format_date(const Date& d);

}  // namespace muqar
