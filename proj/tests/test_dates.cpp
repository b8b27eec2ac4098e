#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "muqar/dates.hpp"

using namespace muqar;

TEST_CASE("civil day round trip") {
    CHECK(days_from_civil(Date{1970, 1, 1}) == 0);
    CHECK(days_from_civil(Date{1970, 1, 2}) == 1);
    CHECK(days_from_civil(Date{1969, 12, 31}) == -1);
    for (std::int64_t z = -200000; z <= 200000; z += 317) {
        CHECK(days_from_civil(civil_from_days(z)) == z);
    }
}

TEST_CASE("weekdays and leap years") {
    CHECK(iso_weekday(Date{1970, 1, 1}) == 4);  // Thursday
    CHECK(iso_weekday(Date{2020, 2, 29}) == 6); // Saturday
    CHECK(is_leap_year(2020));
    CHECK(is_leap_year(2000));
    CHECK_FALSE(is_leap_year(1900));
    CHECK_FALSE(is_leap_year(2021));
    CHECK(day_of_year(Date{2020, 2, 29}) == 60);
    CHECK(day_of_year(Date{2021, 12, 31}) == 365);
    CHECK(day_of_year(Date{2020, 12, 31}) == 366);
}

TEST_CASE("iso weeks at year boundaries") {
    // 2021-01-01 (Friday) is in ISO week 53 of 2020.
    CHECK(iso_week_of(Date{2021, 1, 1}) == IsoWeek{2020, 53});
    CHECK(iso_week_of(Date{2021, 1, 4}) == IsoWeek{2021, 1});
    // 2019-12-30 (Monday) starts ISO week 1 of 2020.
    CHECK(iso_week_of(Date{2019, 12, 30}) == IsoWeek{2020, 1});
    CHECK(iso_week_of(Date{2018, 12, 31}) == IsoWeek{2019, 1});
    CHECK(iso_week_of(Date{2017, 1, 1}) == IsoWeek{2016, 52});
    CHECK(iso_week_start(Date{2021, 1, 1}) == Date{2020, 12, 28});
    CHECK(iso_week_start(Date{2020, 12, 28}) == Date{2020, 12, 28});
}

TEST_CASE("meteorological seasons") {
    CHECK(season_of(Date{2020, 1, 15}) == 0);
    CHECK(season_of(Date{2020, 12, 1}) == 0);
    CHECK(season_of(Date{2020, 3, 1}) == 1);
    CHECK(season_of(Date{2020, 7, 4}) == 2);
    CHECK(season_of(Date{2020, 11, 30}) == 3);
    // December belongs to the following year's winter span.
    CHECK(season_key_of(Date{2020, 12, 5}) == SeasonKey{2021, 0});
    CHECK(season_key_of(Date{2021, 1, 5}) == SeasonKey{2021, 0});
    CHECK(season_key_of(Date{2021, 2, 28}) == SeasonKey{2021, 0});
    CHECK(season_key_of(Date{2021, 3, 1}) != season_key_of(Date{2021, 2, 28}));
}

TEST_CASE("parse and format") {
    CHECK(parse_date("2020-02-29") == Date{2020, 2, 29});
    CHECK(format_date(Date{2020, 2, 29}) == "2020-02-29");
    CHECK_THROWS(parse_date("2021-02-29"));
    CHECK_THROWS(parse_date("2021-13-01"));
    CHECK_THROWS(parse_date("not-a-date"));
    CHECK_THROWS(parse_date("2021/01/01"));
}
