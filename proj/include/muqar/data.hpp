#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "muqar/dates.hpp"

namespace muqar {

// Raised for malformed inputs and violated preconditions; the CLI maps it to
// exit code 2 (runtime/numeric failures map to 3).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct InteractionRecord {
    std::string user_id;
    std::string product_id;
    int group_id = 0;
    Date day;
    bool positive = false;
};

struct ProductRecord {
    std::string product_id;
    std::vector<int> attribute_ids;   // sorted ascending, unique, all < C
    std::int64_t feature_row = -1;    // row into the sidecar feature file
    std::string caption;              // raw text; tokenized against the vocabulary
};

struct DatasetManifest {
    int feature_dim = 0;       // V (flattened length when spatial)
    int spatial_h = 0;         // 0 when features are plain vectors
    int spatial_w = 0;
    int num_groups = 0;
    int num_attributes = 0;    // C
    int vocab_size = 0;        // W (ids 1..W; 0 is PAD)
    Date date_start;
    Date date_end;
    // min/max of log(likes+1) for like-count datasets; unset when negative.
    double likes_log_min = -1.0;
    double likes_log_max = -1.0;
};

struct InteractionLog {
    std::vector<InteractionRecord> records;
};

struct Catalog {
    std::vector<ProductRecord> products;
    std::vector<std::vector<double>> features;  // row-aligned with feature_row

    const ProductRecord* find(const std::string& product_id) const;
};

// ---- popularity metric ------------------------------------------------------

// Positive-interaction fraction of group `group` with product `product` on
// `day`. Empty when there are no matching interactions (the sample is skipped
// by callers, never imputed as 0).
std::optional<double> likability(const InteractionLog& log, int group,
                                 const std::string& product, const Date& day);

// Product over `attributes` (ascending id order) of the fraction of the
// group's season-active users that interacted positively with each attribute
// during the day's season. Empty when the group has no active user then.
std::optional<double> reachability(const InteractionLog& log, const Catalog& catalog,
                                   const std::vector<int>& attributes, int group,
                                   const SeasonKey& season);

// likability * reachability; empty when either factor is undefined.
std::optional<double> popularity(const InteractionLog& log, const Catalog& catalog,
                                 const std::string& product, int group, const Date& day);

// Precomputed index over one log for repeated popularity queries. Produces
// results bit-identical to the plain functions above.
class PopularityIndex {
public:
    PopularityIndex(const InteractionLog& log, const Catalog& catalog);

    std::optional<double> likability(int group, const std::string& product, const Date& day) const;
    std::optional<double> reachability(const std::vector<int>& attributes, int group,
                                       const SeasonKey& season) const;
    std::optional<double> popularity(const std::string& product, int group, const Date& day) const;

    // Every (product, group, day) key with at least one interaction.
    struct SampleKey {
        std::string product_id;
        int group_id;
        Date day;
    };
    std::vector<SampleKey> observed_keys() const;

private:
    struct Counts {
        std::int64_t pos = 0;
        std::int64_t neg = 0;
    };
    std::map<std::tuple<int, std::string, std::int64_t>, Counts> day_counts_;
    // (group, season) -> active user count; (group, season, attribute) -> positive user count
    std::map<std::pair<int, SeasonKey>, std::int64_t> active_users_;
    std::map<std::tuple<int, SeasonKey, int>, std::int64_t> attr_users_;
    std::map<std::string, std::vector<int>> product_attrs_;
};

// (log(likes+1) - lo) / (hi - lo), clamped to [0,1]. lo/hi are dataset
// min/max of the transformed counts; lo == hi is rejected at manifest-build
// time via ValidationError.
double normalize_likes(std::int64_t likes, double lo, double hi);

// ---- caption tokenizer ------------------------------------------------------

// Token id table: file line i (1-based) maps token -> id i; id 0 is PAD.
class Vocabulary {
public:
    static Vocabulary load(const std::string& path);
    static Vocabulary from_tokens(const std::vector<std::string>& tokens);
    void save(const std::string& path) const;

    int size() const { return static_cast<int>(tokens_.size()); }  // excludes PAD
    int id_of(const std::string& token) const;                     // 0 when unknown
    const std::string& token_of(int id) const;

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
};

// Lower-cases, strips punctuation, drops stop words, then maps to ids and
// pads/truncates to target_len (PAD = 0). Unknown tokens are dropped.
std::vector<int> tokenize_caption(const std::string& caption, const Vocabulary& vocab,
                                  const std::set<std::string>& stop_words, int target_len);

std::set<std::string> load_stop_words(const std::string& path);
std::set<std::string> default_stop_words();

// ---- file IO ------------------------------------------------------------------

// interactions.csv: user_id,product_id,group_id,date,polarity with polarity
// one of '+' or '-'.
InteractionLog load_interactions_csv(const std::string& path, const DatasetManifest& manifest);
void save_interactions_csv(const std::string& path, const InteractionLog& log);

// catalog.csv: product_id,attribute_ids(';'-joined),feature_row,caption
Catalog load_catalog_csv(const std::string& csv_path, const std::string& features_path,
                         const DatasetManifest& manifest);
void save_catalog_csv(const std::string& csv_path, const std::string& features_path,
                      const Catalog& catalog, const DatasetManifest& manifest);

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

}  // namespace muqar
