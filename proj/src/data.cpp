#include "muqar/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace muqar {

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t max_fields) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (out.size() + 1 < max_fields) {
        const std::size_t comma = line.find(',', pos);
        if (comma == std::string::npos) break;
        out.push_back(line.substr(pos, comma - pos));
        pos = comma + 1;
    }
    out.push_back(line.substr(pos));
    return out;
}

int parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("expected integer for " + what + ", got '" + s + "'");
    }
}

}  // namespace

const ProductRecord* Catalog::find(const std::string& product_id) const {
    for (const ProductRecord& p : products) {
        if (p.product_id == product_id) return &p;
    }
    return nullptr;
}

// ---- popularity metric ------------------------------------------------------

std::optional<double> likability(const InteractionLog& log, int group,
                                 const std::string& product, const Date& day) {
    std::int64_t pos = 0, neg = 0;
    for (const InteractionRecord& r : log.records) {
        if (r.group_id != group || r.product_id != product || !(r.day == day)) continue;
        (r.positive ? pos : neg) += 1;
    }
    if (pos + neg == 0) return std::nullopt;
    return static_cast<double>(pos) / static_cast<double>(pos + neg);
}

std::optional<double> reachability(const InteractionLog& log, const Catalog& catalog,
                                   const std::vector<int>& attributes, int group,
                                   const SeasonKey& season) {
    std::set<std::string> active;
    for (const InteractionRecord& r : log.records) {
        if (r.group_id == group && season_key_of(r.day) == season) active.insert(r.user_id);
    }
    if (active.empty()) return std::nullopt;

    std::vector<int> attrs = attributes;
    std::sort(attrs.begin(), attrs.end());
    attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());

    double value = 1.0;
    for (int attr : attrs) {
        std::set<std::string> touched;
        for (const InteractionRecord& r : log.records) {
            if (!r.positive || r.group_id != group || !(season_key_of(r.day) == season)) continue;
            const ProductRecord* p = catalog.find(r.product_id);
            if (!p) continue;
            if (std::find(p->attribute_ids.begin(), p->attribute_ids.end(), attr) !=
                p->attribute_ids.end()) {
                touched.insert(r.user_id);
            }
        }
        value *= static_cast<double>(touched.size()) / static_cast<double>(active.size());
    }
    return value;
}

std::optional<double> popularity(const InteractionLog& log, const Catalog& catalog,
                                 const std::string& product, int group, const Date& day) {
    const ProductRecord* p = catalog.find(product);
    if (!p) return std::nullopt;
    const auto like = likability(log, group, product, day);
    if (!like) return std::nullopt;
    const auto reach = reachability(log, catalog, p->attribute_ids, group, season_key_of(day));
    if (!reach) return std::nullopt;
    return *like * *reach;
}

// ---- indexed popularity --------------------------------------------------------

PopularityIndex::PopularityIndex(const InteractionLog& log, const Catalog& catalog) {
    // Attribute membership per product for the user-set counts.
    std::map<std::string, const ProductRecord*> by_id;
    for (const ProductRecord& p : catalog.products) {
        by_id[p.product_id] = &p;
        product_attrs_[p.product_id] = p.attribute_ids;
    }

    std::map<std::pair<int, SeasonKey>, std::set<std::string>> active;
    std::map<std::tuple<int, SeasonKey, int>, std::set<std::string>> attr_users;
    for (const InteractionRecord& r : log.records) {
        auto& c = day_counts_[{r.group_id, r.product_id, days_from_civil(r.day)}];
        (r.positive ? c.pos : c.neg) += 1;

        const SeasonKey season = season_key_of(r.day);
        active[{r.group_id, season}].insert(r.user_id);
        if (r.positive) {
            auto it = by_id.find(r.product_id);
            if (it != by_id.end()) {
                for (int attr : it->second->attribute_ids) {
                    attr_users[{r.group_id, season, attr}].insert(r.user_id);
                }
            }
        }
    }
    for (const auto& [key, users] : active) active_users_[key] = static_cast<std::int64_t>(users.size());
    for (const auto& [key, users] : attr_users) attr_users_[key] = static_cast<std::int64_t>(users.size());
}

std::optional<double> PopularityIndex::likability(int group, const std::string& product,
                                                  const Date& day) const {
    const auto it = day_counts_.find({group, product, days_from_civil(day)});
    if (it == day_counts_.end()) return std::nullopt;
    const auto& c = it->second;
    return static_cast<double>(c.pos) / static_cast<double>(c.pos + c.neg);
}

std::optional<double> PopularityIndex::reachability(const std::vector<int>& attributes, int group,
                                                    const SeasonKey& season) const {
    const auto active = active_users_.find({group, season});
    if (active == active_users_.end() || active->second == 0) return std::nullopt;

    std::vector<int> attrs = attributes;
    std::sort(attrs.begin(), attrs.end());
    attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());

    double value = 1.0;
    for (int attr : attrs) {
        const auto it = attr_users_.find({group, season, attr});
        const std::int64_t touched = it == attr_users_.end() ? 0 : it->second;
        value *= static_cast<double>(touched) / static_cast<double>(active->second);
    }
    return value;
}

std::optional<double> PopularityIndex::popularity(const std::string& product, int group,
                                                  const Date& day) const {
    const auto attrs = product_attrs_.find(product);
    if (attrs == product_attrs_.end()) return std::nullopt;
    const auto like = likability(group, product, day);
    if (!like) return std::nullopt;
    const auto reach = reachability(attrs->second, group, season_key_of(day));
    if (!reach) return std::nullopt;
    return *like * *reach;
}

std::vector<PopularityIndex::SampleKey> PopularityIndex::observed_keys() const {
    std::vector<SampleKey> keys;
    keys.reserve(day_counts_.size());
    for (const auto& [key, counts] : day_counts_) {
        keys.push_back(SampleKey{std::get<1>(key), std::get<0>(key),
                                 civil_from_days(std::get<2>(key))});
    }
    return keys;
}

// ---- like-count normalization ---------------------------------------------------

double normalize_likes(std::int64_t likes, double lo, double hi) {
    if (likes < 0) throw ValidationError("normalize_likes: negative like count");
    if (!(hi > lo)) {
        throw ValidationError("normalize_likes: degenerate transform range [" +
                              std::to_string(lo) + "," + std::to_string(hi) + "]");
    }
    const double t = (std::log1p(static_cast<double>(likes)) - lo) / (hi - lo);
    return std::clamp(t, 0.0, 1.0);
}

// ---- caption tokenizer -----------------------------------------------------------

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
    return from_tokens(tokens);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    v.tokens_ = tokens;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].empty()) throw ValidationError("vocabulary has an empty token at line " +
                                                     std::to_string(i + 1));
        if (!v.ids_.emplace(tokens[i], static_cast<int>(i) + 1).second) {
            throw ValidationError("vocabulary has duplicate token '" + tokens[i] + "'");
        }
    }
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write vocabulary file " + path);
    for (const std::string& t : tokens_) out << t << "\n";
}

int Vocabulary::id_of(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? 0 : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    static const std::string pad = "<pad>";
    if (id == 0) return pad;
    if (id < 1 || id > size()) throw ValidationError("token id " + std::to_string(id) + " out of range");
    return tokens_[id - 1];
}

std::vector<int> tokenize_caption(const std::string& caption, const Vocabulary& vocab,
                                  const std::set<std::string>& stop_words, int target_len) {
    std::vector<int> ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            if (!stop_words.count(word)) {
                const int id = vocab.id_of(word);
                if (id != 0) ids.push_back(id);
            }
            word.clear();
        }
    };
    for (char ch : caption) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            word.push_back(static_cast<char>(std::tolower(u)));
        } else {
            flush();
        }
    }
    flush();
    ids.resize(target_len, 0);
    return ids;
}

std::set<std::string> load_stop_words(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read stop-word file " + path);
    std::set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) words.insert(line);
    }
    return words;
}

std::set<std::string> default_stop_words() {
    return {"a",  "an", "and", "are", "as",  "at",   "be",  "by",   "for", "from", "has",
            "in", "is", "it",  "of",  "on",  "or",   "the", "this", "to",  "was",  "with"};
}

// ---- file IO -----------------------------------------------------------------------

InteractionLog load_interactions_csv(const std::string& path, const DatasetManifest& manifest) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read interaction log " + path);
    InteractionLog log;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty interaction log " + path);
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line, 5);
        if (fields.size() != 5) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": expected 5 fields");
        }
        InteractionRecord r;
        r.user_id = fields[0];
        r.product_id = fields[1];
        r.group_id = parse_int(fields[2], "group_id");
        r.day = parse_date(fields[3]);
        if (fields[4] == "+") {
            r.positive = true;
        } else if (fields[4] == "-") {
            r.positive = false;
        } else {
            throw ValidationError(path + ":" + std::to_string(line_no) +
                                  ": polarity must be '+' or '-', got '" + fields[4] + "'");
        }
        if (r.group_id < 0 || r.group_id >= manifest.num_groups) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": group " +
                                  std::to_string(r.group_id) + " outside declared " +
                                  std::to_string(manifest.num_groups) + " groups");
        }
        if (r.day < manifest.date_start || manifest.date_end < r.day) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": date " +
                                  format_date(r.day) + " outside declared span");
        }
        log.records.push_back(std::move(r));
    }
    return log;
}

void save_interactions_csv(const std::string& path, const InteractionLog& log) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write interaction log " + path);
    out << "user_id,product_id,group_id,date,polarity\n";
    for (const InteractionRecord& r : log.records) {
        out << r.user_id << ',' << r.product_id << ',' << r.group_id << ',' << format_date(r.day)
            << ',' << (r.positive ? '+' : '-') << "\n";
    }
}

Catalog load_catalog_csv(const std::string& csv_path, const std::string& features_path,
                         const DatasetManifest& manifest) {
    std::ifstream in(csv_path);
    if (!in) throw ValidationError("cannot read catalog " + csv_path);
    Catalog catalog;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty catalog " + csv_path);
    int line_no = 1;
    std::int64_t max_row = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line, 4);
        if (fields.size() != 4) {
            throw ValidationError(csv_path + ":" + std::to_string(line_no) + ": expected 4 fields");
        }
        ProductRecord p;
        p.product_id = fields[0];
        std::stringstream attrs(fields[1]);
        std::string item;
        while (std::getline(attrs, item, ';')) {
            if (item.empty()) continue;
            const int a = parse_int(item, "attribute id");
            if (a < 0 || a >= manifest.num_attributes) {
                throw ValidationError(csv_path + ":" + std::to_string(line_no) + ": attribute " +
                                      std::to_string(a) + " outside declared " +
                                      std::to_string(manifest.num_attributes));
            }
            p.attribute_ids.push_back(a);
        }
        std::sort(p.attribute_ids.begin(), p.attribute_ids.end());
        p.attribute_ids.erase(std::unique(p.attribute_ids.begin(), p.attribute_ids.end()),
                              p.attribute_ids.end());
        if (p.attribute_ids.empty()) {
            throw ValidationError(csv_path + ":" + std::to_string(line_no) +
                                  ": product has no attributes");
        }
        p.feature_row = parse_int(fields[2], "feature_row");
        max_row = std::max(max_row, p.feature_row);
        p.caption = fields[3];
        catalog.products.push_back(std::move(p));
    }

    std::ifstream feats(features_path, std::ios::binary);
    if (!feats) throw ValidationError("cannot read feature file " + features_path);
    feats.seekg(0, std::ios::end);
    const std::int64_t bytes = feats.tellg();
    feats.seekg(0);
    const std::int64_t row_bytes = static_cast<std::int64_t>(manifest.feature_dim) * 8;
    if (row_bytes <= 0 || bytes % row_bytes != 0) {
        throw ValidationError("feature file size " + std::to_string(bytes) +
                              " is not a multiple of the declared row size");
    }
    const std::int64_t rows = bytes / row_bytes;
    if (max_row >= rows) {
        throw ValidationError("catalog references feature row " + std::to_string(max_row) +
                              " but the feature file has " + std::to_string(rows) + " rows");
    }
    catalog.features.assign(rows, std::vector<double>(manifest.feature_dim));
    for (auto& row : catalog.features) {
        feats.read(reinterpret_cast<char*>(row.data()),
                   static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
    return catalog;
}

void save_catalog_csv(const std::string& csv_path, const std::string& features_path,
                      const Catalog& catalog, const DatasetManifest& manifest) {
    std::ofstream out(csv_path);
    if (!out) throw ValidationError("cannot write catalog " + csv_path);
    out << "product_id,attribute_ids,feature_row,caption\n";
    for (const ProductRecord& p : catalog.products) {
        out << p.product_id << ',';
        for (std::size_t i = 0; i < p.attribute_ids.size(); ++i) {
            out << (i ? ";" : "") << p.attribute_ids[i];
        }
        out << ',' << p.feature_row << ',' << p.caption << "\n";
    }
    std::ofstream feats(features_path, std::ios::binary);
    if (!feats) throw ValidationError("cannot write feature file " + features_path);
    for (const auto& row : catalog.features) {
        if (static_cast<int>(row.size()) != manifest.feature_dim) {
            throw ValidationError("feature row length " + std::to_string(row.size()) +
                                  " does not match declared dimension " +
                                  std::to_string(manifest.feature_dim));
        }
        feats.write(reinterpret_cast<const char*>(row.data()),
                    static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read dataset manifest " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    DatasetManifest m;
    m.feature_dim = j.at("feature_dim");
    m.spatial_h = j.value("spatial_h", 0);
    m.spatial_w = j.value("spatial_w", 0);
    m.num_groups = j.at("num_groups");
    m.num_attributes = j.at("num_attributes");
    m.vocab_size = j.at("vocab_size");
    m.date_start = parse_date(j.at("date_start"));
    m.date_end = parse_date(j.at("date_end"));
    m.likes_log_min = j.value("likes_log_min", -1.0);
    m.likes_log_max = j.value("likes_log_max", -1.0);
    if (m.likes_log_min >= 0.0 && !(m.likes_log_max > m.likes_log_min)) {
        throw ValidationError("manifest declares a degenerate likes range");
    }
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    nlohmann::json j{{"feature_dim", m.feature_dim},
                     {"spatial_h", m.spatial_h},
                     {"spatial_w", m.spatial_w},
                     {"num_groups", m.num_groups},
                     {"num_attributes", m.num_attributes},
                     {"vocab_size", m.vocab_size},
                     {"date_start", format_date(m.date_start)},
                     {"date_end", format_date(m.date_end)}};
    if (m.likes_log_min >= 0.0) {
        j["likes_log_min"] = m.likes_log_min;
        j["likes_log_max"] = m.likes_log_max;
    }
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write dataset manifest " + path);
    out << j.dump(2) << "\n";
}

}  // namespace muqar
