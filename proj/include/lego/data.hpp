#pragma once

// MovieLens loading, attribute binning, leave-one-out splitting, and a
// synthetic generator with planted attribute signal.

#include "lego/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace lego {

struct RatingRecord {
  std::int64_t user = 0;
  std::int64_t item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

struct UserRecord {
  std::int64_t id = 0;
  int age = 0;
  std::string gender;
  std::string occupation;  // ML-100K: name; ML-1M: numeric code as text
};

struct RawRatings {
  std::vector<RatingRecord> ratings;
  std::vector<UserRecord> users;
};

enum class DatasetTag { ml100k, ml1m };

inline DatasetTag parse_dataset_tag(std::string_view tag) {
  if (tag == "ml100k" || tag == "ml-100k") return DatasetTag::ml100k;
  if (tag == "ml1m" || tag == "ml-1m") return DatasetTag::ml1m;
  throw Error("unknown dataset format '" + std::string(tag) + "' (expected ml100k or ml1m)");
}

struct Attribute {
  std::string name;
  int cardinality = 0;
  Labels labels;  // one entry per user, in [0, cardinality)
};

struct AttributeTable {
  std::vector<std::int64_t> user_ids;  // raw id of each row
  std::vector<Attribute> attributes;

  [[nodiscard]] const Attribute& at(std::string_view name) const {
    for (const auto& a : attributes)
      if (a.name == name) return a;
    throw Error("unknown attribute '" + std::string(name) + "'");
  }
  [[nodiscard]] bool contains(std::string_view name) const {
    return std::any_of(attributes.begin(), attributes.end(), [&](const auto& a) { return a.name == name; });
  }
  [[nodiscard]] std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& a : attributes) out.push_back(a.name);
    return out;
  }

  // Rows reordered to follow `raw_ids`; every id must be present.
  [[nodiscard]] AttributeTable select_users(const std::vector<std::int64_t>& raw_ids) const {
    std::unordered_map<std::int64_t, std::size_t> row_of;
    for (std::size_t i = 0; i < user_ids.size(); ++i) row_of[user_ids[i]] = i;
    AttributeTable out;
    out.user_ids = raw_ids;
    for (const auto& a : attributes) out.attributes.push_back({a.name, a.cardinality, {}});
    for (auto id : raw_ids) {
      auto it = row_of.find(id);
      if (it == row_of.end()) throw Error("attribute table has no row for user " + std::to_string(id));
      for (std::size_t k = 0; k < attributes.size(); ++k)
        out.attributes[k].labels.push_back(attributes[k].labels[it->second]);
    }
    return out;
  }
};

struct Interaction {
  int user = 0;
  int item = 0;
};

struct InteractionDataset {
  int num_users = 0;
  int num_items = 0;
  std::vector<std::int64_t> user_ids;  // dense -> raw
  std::vector<std::int64_t> item_ids;  // dense -> raw
  std::vector<Interaction> train;
  std::vector<int> test_item;               // per user, -1 when absent
  std::vector<std::vector<int>> train_items;  // per user, sorted ascending

  [[nodiscard]] int dense_user(std::int64_t raw) const { return dense_of(user_ids, raw, "user"); }
  [[nodiscard]] int dense_item(std::int64_t raw) const { return dense_of(item_ids, raw, "item"); }

  [[nodiscard]] double sparsity() const {
    const double cells = static_cast<double>(num_users) * static_cast<double>(num_items);
    if (cells == 0.0) return 1.0;
    std::size_t tests = 0;
    for (int t : test_item) tests += t >= 0 ? 1 : 0;
    return 1.0 - static_cast<double>(train.size() + tests) / cells;
  }

 private:
  static int dense_of(const std::vector<std::int64_t>& ids, std::int64_t raw, const char* what) {
    auto it = std::lower_bound(ids.begin(), ids.end(), raw);
    if (it == ids.end() || *it != raw) throw Error(std::string("unknown raw ") + what + " id " + std::to_string(raw));
    return static_cast<int>(it - ids.begin());
  }
};

namespace detail {

inline std::vector<std::string> split(const std::string& line, std::string_view sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  T value{};
  std::istringstream in(text);
  in >> value;
  if (!in || !(in >> std::ws).eof()) throw Error(where + ": cannot parse '" + text + "' as a number");
  return value;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  if (!std::filesystem::exists(path)) throw Error("missing file: " + path);
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error("empty file: " + path);
  return lines;
}

inline std::vector<RatingRecord> parse_ratings(const std::string& path, std::string_view sep) {
  std::vector<RatingRecord> out;
  const auto lines = read_lines(path);
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = path + ":" + std::to_string(i + 1);
    const auto f = split(lines[i], sep);
    if (f.size() != 4) throw Error(where + ": expected 4 fields, got " + std::to_string(f.size()));
    RatingRecord r{parse_number<std::int64_t>(f[0], where), parse_number<std::int64_t>(f[1], where),
                   parse_number<double>(f[2], where), parse_number<std::int64_t>(f[3], where)};
    if (r.user < 0 || r.item < 0) throw Error(where + ": negative id");
    out.push_back(r);
  }
  return out;
}

}  // namespace detail

// ML-100K: `u.data` is tab-separated (user, item, rating, timestamp) and
// `u.user` is pipe-separated (id, age, gender, occupation, zip).
inline RawRatings load_ml100k(const std::string& data_path, const std::string& user_path) {
  RawRatings raw;
  raw.ratings = detail::parse_ratings(data_path, "\t");
  const auto lines = detail::read_lines(user_path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = user_path + ":" + std::to_string(i + 1);
    const auto f = detail::split(lines[i], "|");
    if (f.size() != 5) throw Error(where + ": expected 5 fields, got " + std::to_string(f.size()));
    raw.users.push_back({detail::parse_number<std::int64_t>(f[0], where), detail::parse_number<int>(f[1], where),
                         f[2], f[3]});
  }
  return raw;
}

// ML-1M: `ratings.dat` (user::item::rating::timestamp) and `users.dat`
// (user::gender::age::occupation::zip).
inline RawRatings load_ml1m(const std::string& ratings_path, const std::string& users_path) {
  RawRatings raw;
  raw.ratings = detail::parse_ratings(ratings_path, "::");
  const auto lines = detail::read_lines(users_path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = users_path + ":" + std::to_string(i + 1);
    const auto f = detail::split(lines[i], "::");
    if (f.size() != 5) throw Error(where + ": expected 5 fields, got " + std::to_string(f.size()));
    raw.users.push_back({detail::parse_number<std::int64_t>(f[0], where), detail::parse_number<int>(f[2], where),
                         f[1], f[3]});
  }
  return raw;
}

inline RawRatings load_dataset(DatasetTag tag, const std::string& ratings_path, const std::string& users_path) {
  return tag == DatasetTag::ml100k ? load_ml100k(ratings_path, users_path) : load_ml1m(ratings_path, users_path);
}

inline constexpr std::array<std::string_view, 21> kMl100kOccupations = {
    "administrator", "artist",   "doctor",    "educator",   "engineer", "entertainment", "executive",
    "healthcare",    "homemaker", "lawyer",   "librarian",  "marketing", "none",         "other",
    "programmer",    "retired",  "salesman",  "scientist",  "student",  "technician",   "writer"};

// Gender {M:0, F:1}; age in three bins; occupation in 21 categories. Rows
// follow raw user id ascending.
inline AttributeTable bin_attributes(const RawRatings& raw, DatasetTag tag) {
  if (raw.users.empty()) throw Error("bin_attributes: no user records");
  std::vector<UserRecord> users = raw.users;
  std::sort(users.begin(), users.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  AttributeTable table;
  Attribute gender{"gender", 2, {}};
  Attribute age{"age", 3, {}};
  Attribute occupation{"occupation", 21, {}};
  const auto [low, high] = tag == DatasetTag::ml100k ? std::pair{28, 40} : std::pair{25, 35};
  for (const auto& u : users) {
    if (!table.user_ids.empty() && table.user_ids.back() == u.id)
      throw Error("bin_attributes: duplicate user " + std::to_string(u.id));
    table.user_ids.push_back(u.id);
    if (u.gender == "M")
      gender.labels.push_back(0);
    else if (u.gender == "F")
      gender.labels.push_back(1);
    else
      throw Error("bin_attributes: user " + std::to_string(u.id) + " has gender '" + u.gender + "'");
    age.labels.push_back(u.age < low ? 0 : (u.age <= high ? 1 : 2));
    if (tag == DatasetTag::ml100k) {
      auto it = std::find(kMl100kOccupations.begin(), kMl100kOccupations.end(), u.occupation);
      if (it == kMl100kOccupations.end())
        throw Error("bin_attributes: unknown occupation '" + u.occupation + "' for user " + std::to_string(u.id));
      occupation.labels.push_back(static_cast<int>(it - kMl100kOccupations.begin()));
    } else {
      const int code = detail::parse_number<int>(u.occupation, "users.dat user " + std::to_string(u.id));
      if (code < 0 || code > 20) throw Error("bin_attributes: unknown occupation code " + u.occupation);
      occupation.labels.push_back(code);
    }
  }
  table.attributes = {std::move(gender), std::move(age), std::move(occupation)};
  return table;
}

// Implicit feedback: every rating counts as a positive interaction. Users with
// fewer than `min_interactions` distinct items are dropped. Each user's most
// recent interaction is held out (ties: larger item id is "more recent").
inline InteractionDataset preprocess_split(const RawRatings& raw, int min_interactions = 5) {
  if (raw.ratings.empty()) throw Error("preprocess_split: no ratings");
  // Latest timestamp per (user, item); duplicates collapse.
  std::map<std::int64_t, std::map<std::int64_t, std::int64_t>> per_user;
  for (const auto& r : raw.ratings) {
    auto [it, inserted] = per_user[r.user].try_emplace(r.item, r.timestamp);
    if (!inserted) it->second = std::max(it->second, r.timestamp);
  }
  InteractionDataset ds;
  std::vector<std::int64_t> items;
  for (const auto& [user, seen] : per_user) {
    if (static_cast<int>(seen.size()) < min_interactions) continue;
    ds.user_ids.push_back(user);
    for (const auto& [item, ts] : seen) items.push_back(item);
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  ds.item_ids = std::move(items);
  ds.num_users = static_cast<int>(ds.user_ids.size());
  ds.num_items = static_cast<int>(ds.item_ids.size());
  ds.test_item.assign(static_cast<std::size_t>(ds.num_users), -1);
  ds.train_items.resize(static_cast<std::size_t>(ds.num_users));
  for (int u = 0; u < ds.num_users; ++u) {
    const auto& seen = per_user.at(ds.user_ids[static_cast<std::size_t>(u)]);
    std::int64_t best_item = -1;
    std::int64_t best_ts = 0;
    for (const auto& [item, ts] : seen) {
      if (best_item < 0 || ts > best_ts || (ts == best_ts && item > best_item)) {
        best_item = item;
        best_ts = ts;
      }
    }
    auto& mine = ds.train_items[static_cast<std::size_t>(u)];
    for (const auto& [item, ts] : seen) {
      const int dense = ds.dense_item(item);
      if (item == best_item)
        ds.test_item[static_cast<std::size_t>(u)] = dense;
      else
        mine.push_back(dense);
    }
    std::sort(mine.begin(), mine.end());
    for (int i : mine) ds.train.push_back({u, i});
  }
  return ds;
}

inline nlohmann::json dataset_summary(const InteractionDataset& ds, const AttributeTable& attrs) {
  nlohmann::json out;
  out["users"] = ds.num_users;
  out["items"] = ds.num_items;
  out["train_interactions"] = ds.train.size();
  out["test_interactions"] = std::count_if(ds.test_item.begin(), ds.test_item.end(), [](int t) { return t >= 0; });
  out["sparsity"] = ds.sparsity();
  auto& a = out["attributes"];
  for (const auto& attr : attrs.attributes) {
    std::vector<int> counts(static_cast<std::size_t>(attr.cardinality), 0);
    for (int y : attr.labels) ++counts[static_cast<std::size_t>(y)];
    a[attr.name] = {{"cardinality", attr.cardinality}, {"counts", counts}};
  }
  return out;
}

struct SyntheticData {
  InteractionDataset dataset;
  AttributeTable attributes;  // "gender" (2 classes) and "age" (3 classes)
  Matrix user_factors;        // ground-truth preference vectors, N x latent_dim
  Matrix item_factors;        // M x latent_dim
};

// Users get a latent preference vector with attribute signal planted along
// fixed directions: `signal` is the planted magnitude (0 means no signal).
// Each user interacts with their highest-utility items under Gumbel noise.
// `item_loading` scales the item factors on the planted dimensions, i.e. how
// strongly the attributes drive preferences (1 = like any other dimension).
inline SyntheticData synthetic_dataset(int num_users, int num_items, double signal, std::uint64_t seed,
                                       int latent_dim = 8, int interactions_per_user = 12,
                                       double item_loading = 1.0) {
  if (num_users < 4 || num_items < 4) throw Error("synthetic_dataset: need at least 4 users and 4 items");
  if (latent_dim < 2) throw Error("synthetic_dataset: latent_dim must be at least 2");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::extreme_value_distribution<double> gumbel(0.0, 1.0);

  SyntheticData out;
  const int per_user = std::clamp(interactions_per_user, 2, num_items);
  Attribute gender{"gender", 2, {}};
  Attribute age{"age", 3, {}};
  for (int u = 0; u < num_users; ++u) {
    gender.labels.push_back(u % 2);
    age.labels.push_back(u % 3);
  }
  std::shuffle(gender.labels.begin(), gender.labels.end(), rng);
  std::shuffle(age.labels.begin(), age.labels.end(), rng);

  // Three class centroids for age in the plane of dimensions 1 and 2 keep the
  // two attributes on orthogonal-ish directions.
  const std::array<std::pair<double, double>, 3> age_dirs = {
      std::pair{1.0, 0.0}, std::pair{-0.5, 0.8660254037844386}, std::pair{-0.5, -0.8660254037844386}};
  out.user_factors.resize(num_users, latent_dim);
  for (int u = 0; u < num_users; ++u) {
    for (int k = 0; k < latent_dim; ++k) out.user_factors(u, k) = normal(rng);
    out.user_factors(u, 0) += signal * (gender.labels[static_cast<std::size_t>(u)] == 0 ? 1.0 : -1.0);
    if (latent_dim >= 3) {
      const auto [a, b] = age_dirs[static_cast<std::size_t>(age.labels[static_cast<std::size_t>(u)])];
      out.user_factors(u, 1) += signal * a;
      out.user_factors(u, 2) += signal * b;
    }
  }
  out.item_factors.resize(num_items, latent_dim);
  for (Eigen::Index k = 0; k < out.item_factors.size(); ++k) out.item_factors.data()[k] = normal(rng);
  out.item_factors.leftCols(std::min(3, latent_dim)) *= item_loading;

  RawRatings raw;
  for (int u = 0; u < num_users; ++u) {
    std::vector<std::pair<double, int>> utility;
    for (int i = 0; i < num_items; ++i)
      utility.emplace_back(out.user_factors.row(u).dot(out.item_factors.row(i)) + gumbel(rng), i);
    std::partial_sort(utility.begin(), utility.begin() + per_user, utility.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int j = 0; j < per_user; ++j)
      raw.ratings.push_back({u, utility[static_cast<std::size_t>(j)].second, 1.0, j + 1});
  }
  out.dataset = preprocess_split(raw, 1);
  // preprocess_split only indexes items that occur; keep the full catalogue.
  InteractionDataset& ds = out.dataset;
  std::vector<std::int64_t> all_items(static_cast<std::size_t>(num_items));
  for (int i = 0; i < num_items; ++i) all_items[static_cast<std::size_t>(i)] = i;
  for (auto& ix : ds.train) ix.item = static_cast<int>(ds.item_ids[static_cast<std::size_t>(ix.item)]);
  for (auto& t : ds.test_item) t = static_cast<int>(ds.item_ids[static_cast<std::size_t>(t)]);
  for (auto& items : ds.train_items)
    for (auto& i : items) i = static_cast<int>(ds.item_ids[static_cast<std::size_t>(i)]);
  ds.item_ids = std::move(all_items);
  ds.num_items = num_items;

  out.attributes.user_ids = ds.user_ids;
  out.attributes.attributes = {std::move(gender), std::move(age)};
  return out;
}

}  // namespace lego
