#include "p4r/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>

#include <nlohmann/json.hpp>

#include "p4r/digest.hpp"
#include "p4r/error.hpp"

namespace p4r {
namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  Int value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

void check_rating(int rating, std::size_t line) {
  if (rating < 1 || rating > 5) {
    throw ValidationError("line " + std::to_string(line) + ": rating " + std::to_string(rating) +
                          " outside 1..5");
  }
}

InteractionRecord parse_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (fields.size() < 3 || fields.size() > 4) {
    throw ParseError("expected 3 or 4 comma-separated fields, got " + std::to_string(fields.size()),
                     line_no);
  }
  if (fields[0].empty() || fields[1].empty()) throw ParseError("empty user_id or item_id", line_no);
  InteractionRecord rec;
  rec.user_id = std::string(fields[0]);
  rec.item_id = std::string(fields[1]);
  const auto rating = parse_int<int>(fields[2]);
  if (!rating) throw ParseError("rating is not an integer", line_no);
  check_rating(*rating, line_no);
  rec.rating = *rating;
  if (fields.size() == 4 && !fields[3].empty()) {
    const auto ts = parse_int<std::int64_t>(fields[3]);
    if (!ts) throw ParseError("timestamp is not an integer", line_no);
    rec.timestamp = *ts;
  }
  return rec;
}

std::string id_field(const json& obj, const char* key, std::size_t line_no) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("missing key ") + key, line_no);
  if (it->is_string()) {
    auto s = it->get<std::string>();
    if (s.empty()) throw ParseError(std::string("empty ") + key, line_no);
    return s;
  }
  if (it->is_number_integer()) return it->dump();
  throw ParseError(std::string(key) + " must be a string", line_no);
}

InteractionRecord parse_jsonl_line(std::string_view line, std::size_t line_no) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), line_no);
  }
  if (!obj.is_object()) throw ParseError("expected a JSON object", line_no);
  InteractionRecord rec;
  rec.user_id = id_field(obj, "user_id", line_no);
  rec.item_id = id_field(obj, "item_id", line_no);
  const auto r = obj.find("rating");
  if (r == obj.end() || !r->is_number()) throw ParseError("missing numeric rating", line_no);
  const double rv = r->get<double>();
  if (rv != std::floor(rv)) throw ParseError("rating is not an integer", line_no);
  check_rating(static_cast<int>(rv), line_no);
  rec.rating = static_cast<int>(rv);
  if (const auto t = obj.find("timestamp"); t != obj.end() && !t->is_null()) {
    if (!t->is_number_integer()) throw ParseError("timestamp is not an integer", line_no);
    rec.timestamp = t->get<std::int64_t>();
  }
  return rec;
}

AttributeList attribute_block(const ordered_json& obj, const char* key, std::size_t line_no) {
  AttributeList out;
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return out;
  if (!it->is_object()) throw ParseError(std::string(key) + " must be an object", line_no);
  for (const auto& [name, value] : it->items()) {
    out.emplace_back(name, value.is_string() ? value.get<std::string>() : value.dump());
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_split(const std::vector<Interaction>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "user_idx,item_idx,rating\n";
  for (const auto& r : rows) out << r.user << ',' << r.item << ',' << r.rating << '\n';
}

std::vector<Interaction> read_split(const std::filesystem::path& path, const Dataset& ds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Interaction> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) continue;
    const auto body = trim_cr(line);
    if (is_blank(body)) continue;
    const auto c1 = body.find(',');
    const auto c2 = body.find(',', c1 == body.npos ? body.npos : c1 + 1);
    if (c1 == body.npos || c2 == body.npos) throw ParseError("malformed split row", line_no);
    const auto u = parse_int<Index>(body.substr(0, c1));
    const auto i = parse_int<Index>(body.substr(c1 + 1, c2 - c1 - 1));
    const auto r = parse_int<int>(body.substr(c2 + 1));
    if (!u || !i || !r) throw ParseError("malformed split row", line_no);
    if (*u >= ds.n_users || *i >= ds.n_items) throw ValidationError("split index out of range");
    rows.push_back({*u, *i, *r});
  }
  return rows;
}

}  // namespace

InteractionFormat infer_format(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".jsonl" || ext == ".json") ? InteractionFormat::kJsonl : InteractionFormat::kCsv;
}

std::vector<InteractionRecord> parse_interactions(std::istream& in, InteractionFormat format) {
  std::vector<InteractionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim_cr(line);
    if (is_blank(body)) continue;
    if (format == InteractionFormat::kCsv) {
      if (line_no == 1 && body.rfind("user_id", 0) == 0) continue;
      records.push_back(parse_csv_line(body, line_no));
    } else {
      records.push_back(parse_jsonl_line(body, line_no));
    }
  }
  return records;
}

std::vector<InteractionRecord> parse_interactions(const std::filesystem::path& path,
                                                  InteractionFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return parse_interactions(in, format);
}

std::vector<ItemMetadata> parse_item_metadata(std::istream& in) {
  std::vector<ItemMetadata> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim_cr(line);
    if (is_blank(body)) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(body);
    } catch (const ordered_json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!obj.is_object()) throw ParseError("expected a JSON object", line_no);
    ItemMetadata meta;
    meta.item_id = id_field(json(obj), "item_id", line_no);
    meta.intrinsic = attribute_block(obj, "intrinsic", line_no);
    meta.extrinsic = attribute_block(obj, "extrinsic", line_no);
    for (const auto& [key, _] : meta.intrinsic) {
      const bool clash = std::any_of(meta.extrinsic.begin(), meta.extrinsic.end(),
                                     [&](const auto& kv) { return kv.first == key; });
      if (clash) {
        throw ValidationError("line " + std::to_string(line_no) + ": attribute '" + key +
                              "' is both intrinsic and extrinsic");
      }
    }
    items.push_back(std::move(meta));
  }
  return items;
}

std::vector<ItemMetadata> parse_item_metadata(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return parse_item_metadata(in);
}

std::vector<ItemProfile> parse_profiles(std::istream& in) {
  std::vector<ItemProfile> out;
  std::string line;
  std::size_t line_no = 0;
  const auto text_field = [&](const json& obj, const char* key) -> std::string {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return {};
    if (!it->is_string()) throw ParseError(std::string("field '") + key + "' must be a string", line_no);
    return it->get<std::string>();
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim_cr(line);
    if (is_blank(body)) continue;
    json obj;
    try {
      obj = json::parse(body);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!obj.is_object()) throw ParseError("expected a JSON object", line_no);
    ItemProfile p;
    p.item_id = id_field(obj, "item_id", line_no);
    p.summary = text_field(obj, "summary");
    p.preference_prediction = text_field(obj, "preference_prediction");
    p.reasoning = text_field(obj, "reasoning");
    p.raw_text = text_field(obj, "raw_text");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ItemProfile> parse_profiles(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return parse_profiles(in);
}

std::string profile_text(const ItemProfile& profile) {
  if (!profile.raw_text.empty()) return profile.raw_text;
  std::string out;
  for (const auto* part : {&profile.summary, &profile.preference_prediction, &profile.reasoning}) {
    if (part->empty()) continue;
    if (!out.empty()) out.push_back('\n');
    out += *part;
  }
  return out;
}

std::string metadata_text(const ItemMetadata& meta) {
  std::string out;
  for (const auto* block : {&meta.intrinsic, &meta.extrinsic}) {
    for (const auto& [_, value] : *block) {
      if (!out.empty()) out.push_back(' ');
      out += value;
    }
  }
  return out;
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::optional<Index> Dataset::find_user(const std::string& raw_id) const {
  const auto it = user_index.find(raw_id);
  if (it == user_index.end()) return std::nullopt;
  return it->second;
}

std::optional<Index> Dataset::find_item(const std::string& raw_id) const {
  const auto it = item_index.find(raw_id);
  if (it == item_index.end()) return std::nullopt;
  return it->second;
}

const std::vector<Interaction>& Dataset::split(Split which) const {
  switch (which) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return train;
}

std::vector<std::vector<Index>> Dataset::items_by_user(Split which) const {
  std::vector<std::vector<Index>> out(n_users);
  for (const auto& r : split(which)) out[r.user].push_back(r.item);
  for (auto& items : out) std::sort(items.begin(), items.end());
  return out;
}

Dataset build_dataset(const std::vector<InteractionRecord>& records, const BuildOptions& options) {
  if (records.empty()) throw ValidationError("no interaction records");

  // Last occurrence of each (user, item) pair wins.
  std::unordered_map<std::string, std::size_t> last_pos;
  last_pos.reserve(records.size());
  for (std::size_t p = 0; p < records.size(); ++p) {
    std::string key = records[p].user_id;
    key.push_back('\x1f');
    key += records[p].item_id;
    last_pos[std::move(key)] = p;
  }
  std::vector<std::size_t> kept;
  kept.reserve(last_pos.size());
  for (const auto& [_, p] : last_pos) kept.push_back(p);
  std::sort(kept.begin(), kept.end());

  if (options.sample_users > 0) {
    std::vector<std::string> users;
    std::unordered_map<std::string, bool> seen;
    for (auto p : kept) {
      if (seen.emplace(records[p].user_id, false).second) users.push_back(records[p].user_id);
    }
    if (options.sample_users < users.size()) {
      std::mt19937_64 rng(options.seed);
      std::shuffle(users.begin(), users.end(), rng);
      users.resize(options.sample_users);
      for (const auto& u : users) seen[u] = true;
      std::erase_if(kept, [&](std::size_t p) { return !seen[records[p].user_id]; });
    }
  }

  // Iterative degree pruning to a fixed point.
  while (true) {
    std::unordered_map<std::string_view, std::size_t> udeg, ideg;
    for (auto p : kept) {
      ++udeg[records[p].user_id];
      ++ideg[records[p].item_id];
    }
    const auto before = kept.size();
    std::erase_if(kept, [&](std::size_t p) {
      return udeg[records[p].user_id] < options.min_user_deg ||
             ideg[records[p].item_id] < options.min_item_deg;
    });
    if (kept.size() == before) break;
  }
  if (kept.empty()) throw ValidationError("dataset is empty after filtering");

  Dataset ds;
  ds.interactions.reserve(kept.size());
  for (auto p : kept) {
    const auto& rec = records[p];
    auto [uit, unew] = ds.user_index.emplace(rec.user_id, static_cast<Index>(ds.user_ids.size()));
    if (unew) ds.user_ids.push_back(rec.user_id);
    auto [iit, inew] = ds.item_index.emplace(rec.item_id, static_cast<Index>(ds.item_ids.size()));
    if (inew) ds.item_ids.push_back(rec.item_id);
    ds.interactions.push_back({uit->second, iit->second, rec.rating});
  }
  ds.n_users = ds.user_ids.size();
  ds.n_items = ds.item_ids.size();
  return ds;
}

Dataset split_dataset(Dataset dataset, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ValidationError("split ratios must be non-negative and sum to 1");
  }
  std::vector<std::vector<Interaction>> per_user(dataset.n_users);
  for (const auto& r : dataset.interactions) per_user[r.user].push_back(r);

  dataset.train.clear();
  dataset.val.clear();
  dataset.test.clear();
  std::mt19937_64 rng(seed);
  // Guards floor() against products like 0.29 * 100 = 28.999999999999996.
  constexpr double kSlack = 1e-9;
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& rows = per_user[u];
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n = static_cast<double>(rows.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * ratios.val + kSlack));
    const auto n_test = static_cast<std::size_t>(std::floor(n * ratios.test + kSlack));
    if (n_val + n_test >= rows.size()) {
      throw ValidationError("user '" + dataset.user_ids[u] +
                            "' would have no train interactions under these ratios");
    }
    const auto n_train = rows.size() - n_val - n_test;
    dataset.train.insert(dataset.train.end(), rows.begin(), rows.begin() + n_train);
    dataset.val.insert(dataset.val.end(), rows.begin() + n_train, rows.begin() + n_train + n_val);
    dataset.test.insert(dataset.test.end(), rows.begin() + n_train + n_val, rows.end());
  }
  return dataset;
}

double sparsity(std::size_t n_users, std::size_t n_items, std::size_t n_interactions) {
  if (n_users == 0 || n_items == 0) throw DomainError("sparsity: empty user or item set");
  const double cells = static_cast<double>(n_users) * static_cast<double>(n_items);
  if (static_cast<double>(n_interactions) > cells) {
    throw DomainError("sparsity: more interactions than user-item pairs");
  }
  return 1.0 - static_cast<double>(n_interactions) / cells;
}

std::string sparsity_percent(std::size_t n_users, std::size_t n_items, std::size_t n_interactions) {
  sparsity(n_users, n_items, n_interactions);  // validates
  using Wide = unsigned __int128;
  const Wide cells = static_cast<Wide>(n_users) * n_items;
  const Wide scaled = (cells - n_interactions) * Wide{100'000'000} / cells;
  const auto whole = static_cast<std::uint64_t>(scaled / 1'000'000);
  const auto frac = static_cast<std::uint64_t>(scaled % 1'000'000);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%llu.%06llu", static_cast<unsigned long long>(whole),
                static_cast<unsigned long long>(frac));
  return buf;
}

std::string write_prepared(const Dataset& dataset, const PrepareInfo& info,
                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json splits = ordered_json::object();
  for (auto which : {Split::kTrain, Split::kVal, Split::kTest}) {
    const std::string file = std::string(split_name(which)) + ".csv";
    write_split(dataset.split(which), dir / file);
    splits[split_name(which)] = {{"file", file},
                                 {"rows", dataset.split(which).size()},
                                 {"sha256", sha256_file(dir / file)}};
  }
  ordered_json manifest = {
      {"format", "p4r-dataset"},
      {"version", 1},
      {"n_users", dataset.n_users},
      {"n_items", dataset.n_items},
      {"n_interactions", dataset.interactions.size()},
      {"sparsity", sparsity(dataset.n_users, dataset.n_items, dataset.interactions.size())},
      {"build",
       {{"min_user_deg", info.build.min_user_deg},
        {"min_item_deg", info.build.min_item_deg},
        {"sample_users", info.build.sample_users},
        {"seed", info.build.seed}}},
      {"split", {{"ratios", {info.ratios.train, info.ratios.val, info.ratios.test}},
                 {"seed", info.split_seed}}},
      {"splits", splits},
      {"user_ids", dataset.user_ids},
      {"item_ids", dataset.item_ids},
  };
  const std::string text = manifest.dump(1) + "\n";
  open_out(dir / "manifest.json") << text;
  return sha256_hex(text);
}

PreparedDataset load_prepared(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw Error("cannot open " + manifest_path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what(), 0);
  }
  if (manifest.value("format", "") != "p4r-dataset") {
    throw ValidationError(manifest_path.string() + " is not a dataset manifest");
  }

  PreparedDataset out;
  auto& ds = out.dataset;
  ds.user_ids = manifest.at("user_ids").get<std::vector<std::string>>();
  ds.item_ids = manifest.at("item_ids").get<std::vector<std::string>>();
  ds.n_users = ds.user_ids.size();
  ds.n_items = ds.item_ids.size();
  if (ds.n_users != manifest.at("n_users").get<std::size_t>() ||
      ds.n_items != manifest.at("n_items").get<std::size_t>()) {
    throw ValidationError("manifest counts disagree with its index maps");
  }
  for (Index u = 0; u < ds.n_users; ++u) {
    if (!ds.user_index.emplace(ds.user_ids[u], u).second) {
      throw ValidationError("duplicate user id in manifest: " + ds.user_ids[u]);
    }
  }
  for (Index i = 0; i < ds.n_items; ++i) {
    if (!ds.item_index.emplace(ds.item_ids[i], i).second) {
      throw ValidationError("duplicate item id in manifest: " + ds.item_ids[i]);
    }
  }

  const auto& splits = manifest.at("splits");
  for (auto which : {Split::kTrain, Split::kVal, Split::kTest}) {
    const auto& entry = splits.at(split_name(which));
    const auto path = dir / entry.at("file").get<std::string>();
    if (sha256_file(path) != entry.at("sha256").get<std::string>()) {
      throw ValidationError(path.string() + " does not match the manifest hash");
    }
    auto rows = read_split(path, ds);
    switch (which) {
      case Split::kTrain: ds.train = std::move(rows); break;
      case Split::kVal: ds.val = std::move(rows); break;
      case Split::kTest: ds.test = std::move(rows); break;
    }
  }
  ds.interactions = ds.train;
  ds.interactions.insert(ds.interactions.end(), ds.val.begin(), ds.val.end());
  ds.interactions.insert(ds.interactions.end(), ds.test.begin(), ds.test.end());
  out.manifest_hash = sha256_hex(text);
  return out;
}

}  // namespace p4r
