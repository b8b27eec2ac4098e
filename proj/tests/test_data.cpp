#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "muqar/data.hpp"

using namespace muqar;
using Rng = std::mt19937_64;

namespace {

// Brute-force oracle: naive nested loops straight off the metric definition,
// independent of the library's indexing. Multiplies reach factors in
// ascending attribute order, matching the documented convention.
std::optional<double> oracle_likability(const InteractionLog& log, int group,
                                        const std::string& product, const Date& day) {
    long pos = 0, neg = 0;
    for (const auto& r : log.records) {
        if (r.group_id == group && r.product_id == product && r.day == day) {
            if (r.positive) {
                ++pos;
            } else {
                ++neg;
            }
        }
    }
    if (pos + neg == 0) return std::nullopt;
    return double(pos) / double(pos + neg);
}

std::optional<double> oracle_reachability(const InteractionLog& log, const Catalog& catalog,
                                          std::vector<int> attrs, int group,
                                          const SeasonKey& season) {
    std::set<std::string> active;
    for (const auto& r : log.records) {
        if (r.group_id == group && season_key_of(r.day) == season) active.insert(r.user_id);
    }
    if (active.empty()) return std::nullopt;
    std::sort(attrs.begin(), attrs.end());
    attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
    double value = 1.0;
    for (int attr : attrs) {
        std::set<std::string> touched;
        for (const auto& r : log.records) {
            if (!r.positive || r.group_id != group || !(season_key_of(r.day) == season)) continue;
            for (const auto& p : catalog.products) {
                if (p.product_id != r.product_id) continue;
                if (std::count(p.attribute_ids.begin(), p.attribute_ids.end(), attr)) {
                    touched.insert(r.user_id);
                }
                break;
            }
        }
        value *= double(touched.size()) / double(active.size());
    }
    return value;
}

std::optional<double> oracle_popularity(const InteractionLog& log, const Catalog& catalog,
                                        const std::string& product, int group, const Date& day) {
    const ProductRecord* rec = nullptr;
    for (const auto& p : catalog.products) {
        if (p.product_id == product) {
            rec = &p;
            break;
        }
    }
    if (!rec) return std::nullopt;
    auto like = oracle_likability(log, group, product, day);
    if (!like) return std::nullopt;
    auto reach = oracle_reachability(log, catalog, rec->attribute_ids, group, season_key_of(day));
    if (!reach) return std::nullopt;
    return *like * *reach;
}

struct ToyData {
    InteractionLog log;
    Catalog catalog;
};

// Group 0, June 2021: 10 active users; 5 touch attribute 1, 4 touch attribute 2.
ToyData make_toy() {
    ToyData d;
    auto product = [&](const std::string& id, std::vector<int> attrs) {
        ProductRecord p;
        p.product_id = id;
        p.attribute_ids = std::move(attrs);
        p.feature_row = 0;
        d.catalog.products.push_back(p);
    };
    product("pa", {1});
    product("pb", {2});
    product("pd", {1, 2});
    d.catalog.features.assign(1, std::vector<double>{0.0});

    auto hit = [&](const std::string& user, const std::string& prod, int day, bool pos) {
        d.log.records.push_back({user, prod, 0, Date{2021, 6, day}, pos});
    };
    for (int u = 0; u < 10; ++u) hit("u" + std::to_string(u), "pc", 1, false);  // active only
    for (int u = 0; u < 5; ++u) hit("u" + std::to_string(u), "pa", 2, true);
    for (int u = 0; u < 4; ++u) hit("u" + std::to_string(u), "pb", 3, true);
    // pd on June 10: 3 positive, 1 negative, interactors already in the sets above
    hit("u0", "pd", 10, true);
    hit("u1", "pd", 10, true);
    hit("u2", "pd", 10, true);
    hit("u5", "pd", 10, false);
    return d;
}

InteractionLog random_log(Rng& rng, Catalog& catalog, int n_records) {
    const int n_users = 12, n_products = 8, n_groups = 3, n_attrs = 6;
    catalog = Catalog{};
    std::uniform_int_distribution<int> attr_count(1, 3), attr_pick(0, n_attrs - 1);
    for (int p = 0; p < n_products; ++p) {
        ProductRecord rec;
        rec.product_id = "p" + std::to_string(p);
        std::set<int> attrs;
        const int cnt = attr_count(rng);
        while (static_cast<int>(attrs.size()) < cnt) attrs.insert(attr_pick(rng));
        rec.attribute_ids.assign(attrs.begin(), attrs.end());
        rec.feature_row = 0;
        catalog.products.push_back(rec);
    }
    catalog.features.assign(1, std::vector<double>{0.0});

    InteractionLog log;
    std::uniform_int_distribution<int> user(0, n_users - 1), prod(0, n_products - 1),
        group(0, n_groups - 1), day_off(0, 400);
    std::bernoulli_distribution positive(0.6);
    const std::int64_t base = days_from_civil(Date{2020, 1, 1});
    for (int i = 0; i < n_records; ++i) {
        log.records.push_back({"u" + std::to_string(user(rng)), "p" + std::to_string(prod(rng)),
                               group(rng), civil_from_days(base + day_off(rng)), positive(rng)});
    }
    return log;
}

}  // namespace

TEST_CASE("likability fixtures") {
    auto d = make_toy();
    const Date day{2021, 6, 10};
    CHECK(*likability(d.log, 0, "pd", day) == doctest::Approx(0.75).epsilon(1e-15));

    InteractionLog all_pos;
    all_pos.records.push_back({"u", "p", 0, day, true});
    all_pos.records.push_back({"v", "p", 0, day, true});
    CHECK(*likability(all_pos, 0, "p", day) == 1.0);

    InteractionLog all_neg;
    all_neg.records.push_back({"u", "p", 0, day, false});
    CHECK(*likability(all_neg, 0, "p", day) == 0.0);

    CHECK_FALSE(likability(all_neg, 0, "missing", day).has_value());
    CHECK_FALSE(likability(all_neg, 1, "p", day).has_value());
}

TEST_CASE("reachability fixtures") {
    auto d = make_toy();
    const SeasonKey summer21{2021, 2};

    // all active users touched pa's attribute? No: 5 of 10 -> 0.5
    CHECK(*reachability(d.log, d.catalog, {1}, 0, summer21) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(*reachability(d.log, d.catalog, {1, 2}, 0, summer21) ==
          doctest::Approx(0.2).epsilon(1e-15));
    // attribute nobody touched annihilates the product
    CHECK(*reachability(d.log, d.catalog, {1, 2, 5}, 0, summer21) == 0.0);
    // empty group-season
    CHECK_FALSE(reachability(d.log, d.catalog, {1}, 2, summer21).has_value());
    CHECK_FALSE(reachability(d.log, d.catalog, {1}, 0, SeasonKey{2021, 0}).has_value());

    // single attribute touched by every active user -> 1.0
    InteractionLog tiny;
    Catalog cat;
    ProductRecord p;
    p.product_id = "q";
    p.attribute_ids = {0};
    p.feature_row = 0;
    cat.products.push_back(p);
    cat.features.assign(1, std::vector<double>{0.0});
    tiny.records.push_back({"a", "q", 0, Date{2021, 6, 1}, true});
    tiny.records.push_back({"b", "q", 0, Date{2021, 6, 2}, true});
    CHECK(*reachability(tiny, cat, {0}, 0, summer21) == 1.0);
}

TEST_CASE("popularity composes likability and reachability") {
    auto d = make_toy();
    const Date day{2021, 6, 10};
    CHECK(*popularity(d.log, d.catalog, "pd", 0, day) == doctest::Approx(0.15).epsilon(1e-15));
    // L == 0 -> popularity 0 regardless of reach
    InteractionLog neg = d.log;
    for (auto& r : neg.records) {
        if (r.product_id == "pd") r.positive = false;
    }
    CHECK(*popularity(neg, d.catalog, "pd", 0, day) == 0.0);
}

TEST_CASE("popularity matches brute-force oracle bit-exactly on random logs") {
    for (int trial = 0; trial < 12; ++trial) {
        Rng rng(5000 + trial);
        Catalog catalog;
        InteractionLog log = random_log(rng, catalog, 400 + trial * 37);
        PopularityIndex index(log, catalog);

        for (const auto& key : index.observed_keys()) {
            auto expect = oracle_popularity(log, catalog, key.product_id, key.group_id, key.day);
            auto direct = popularity(log, catalog, key.product_id, key.group_id, key.day);
            auto indexed = index.popularity(key.product_id, key.group_id, key.day);
            REQUIRE(expect.has_value() == direct.has_value());
            REQUIRE(expect.has_value() == indexed.has_value());
            if (expect) {
                CHECK(*direct == *expect);    // bit-equal
                CHECK(*indexed == *expect);   // bit-equal
            }
        }
    }
}

TEST_CASE("reachability is monotone non-increasing in the attribute set") {
    Rng rng(901);
    Catalog catalog;
    InteractionLog log = random_log(rng, catalog, 600);
    const SeasonKey season{2020, 1};
    std::vector<int> attrs;
    double prev = 1.0;
    for (int a = 0; a < 6; ++a) {
        attrs.push_back(a);
        auto r = reachability(log, catalog, attrs, 0, season);
        REQUIRE(r.has_value());
        CHECK(*r <= prev + 1e-15);
        prev = *r;
    }
}

TEST_CASE("likability invariant under log duplication") {
    Rng rng(902);
    Catalog catalog;
    InteractionLog log = random_log(rng, catalog, 300);
    InteractionLog doubled = log;
    doubled.records.insert(doubled.records.end(), log.records.begin(), log.records.end());
    PopularityIndex index(log, catalog);
    for (const auto& key : index.observed_keys()) {
        auto a = likability(log, key.group_id, key.product_id, key.day);
        auto b = likability(doubled, key.group_id, key.product_id, key.day);
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK(*a == *b);
    }
}

TEST_CASE("normalize_likes") {
    const double lo = std::log1p(0.0), hi = std::log1p(99.0);
    CHECK(normalize_likes(0, lo, hi) == 0.0);
    CHECK(normalize_likes(99, lo, hi) == 1.0);
    CHECK(normalize_likes(9, lo, hi) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(normalize_likes(100000, lo, hi) == 1.0);  // clamped for out-of-range inference inputs
    CHECK_THROWS_AS(normalize_likes(5, 2.0, 2.0), ValidationError);
    CHECK_THROWS_AS(normalize_likes(-1, lo, hi), ValidationError);
}

TEST_CASE("caption tokenizer") {
    Vocabulary vocab = Vocabulary::from_tokens({"red", "dress", "floral", "cotton"});
    auto stops = default_stop_words();
    CHECK(vocab.size() == 4);
    CHECK(vocab.id_of("red") == 1);
    CHECK(vocab.id_of("unknown") == 0);
    CHECK(vocab.token_of(2) == "dress");

    auto ids = tokenize_caption("A red, FLORAL dress!", vocab, stops, 6);
    CHECK(ids == std::vector<int>{1, 3, 2, 0, 0, 0});
    // truncation
    auto trunc = tokenize_caption("red dress floral cotton red", vocab, stops, 3);
    CHECK(trunc == std::vector<int>{1, 2, 3});
    // empty caption -> all PAD
    CHECK(tokenize_caption("", vocab, stops, 4) == std::vector<int>{0, 0, 0, 0});

    vocab.save("vocab_test.txt");
    Vocabulary again = Vocabulary::load("vocab_test.txt");
    CHECK(again.size() == 4);
    CHECK(again.id_of("cotton") == 4);
    std::remove("vocab_test.txt");
}

TEST_CASE("interaction and catalog csv round trips") {
    auto d = make_toy();
    DatasetManifest m;
    m.feature_dim = 1;
    m.num_groups = 1;
    m.num_attributes = 6;
    m.vocab_size = 0;
    m.date_start = Date{2021, 1, 1};
    m.date_end = Date{2021, 12, 31};

    save_interactions_csv("interactions_test.csv", d.log);
    InteractionLog loaded = load_interactions_csv("interactions_test.csv", m);
    REQUIRE(loaded.records.size() == d.log.records.size());
    for (std::size_t i = 0; i < loaded.records.size(); ++i) {
        CHECK(loaded.records[i].user_id == d.log.records[i].user_id);
        CHECK(loaded.records[i].product_id == d.log.records[i].product_id);
        CHECK(loaded.records[i].day == d.log.records[i].day);
        CHECK(loaded.records[i].positive == d.log.records[i].positive);
    }

    d.catalog.products[0].caption = "red dress, with buttons";
    save_catalog_csv("catalog_test.csv", "features_test.bin", d.catalog, m);
    Catalog cat = load_catalog_csv("catalog_test.csv", "features_test.bin", m);
    REQUIRE(cat.products.size() == d.catalog.products.size());
    CHECK(cat.products[0].caption == "red dress, with buttons");
    CHECK(cat.products[2].attribute_ids == std::vector<int>{1, 2});

    std::remove("interactions_test.csv");
    std::remove("catalog_test.csv");
    std::remove("features_test.bin");
}

TEST_CASE("csv validation errors") {
    DatasetManifest m;
    m.feature_dim = 1;
    m.num_groups = 1;
    m.num_attributes = 2;
    m.date_start = Date{2021, 1, 1};
    m.date_end = Date{2021, 12, 31};
    {
        std::ofstream out("bad_interactions.csv");
        out << "user_id,product_id,group_id,date,polarity\n";
        out << "u,p,0,2021-05-01,?\n";
    }
    CHECK_THROWS_AS(load_interactions_csv("bad_interactions.csv", m), ValidationError);
    {
        std::ofstream out("bad_interactions.csv");
        out << "user_id,product_id,group_id,date,polarity\n";
        out << "u,p,7,2021-05-01,+\n";
    }
    CHECK_THROWS_AS(load_interactions_csv("bad_interactions.csv", m), ValidationError);
    {
        std::ofstream out("bad_interactions.csv");
        out << "user_id,product_id,group_id,date,polarity\n";
        out << "u,p,0,2030-05-01,+\n";
    }
    CHECK_THROWS_AS(load_interactions_csv("bad_interactions.csv", m), ValidationError);
    std::remove("bad_interactions.csv");
}
