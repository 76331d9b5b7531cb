#pragma once

// Interaction logs, item metadata, indexed datasets and their splits.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace p4r {

using Index = std::uint32_t;

struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  int rating = 0;
  std::optional<std::int64_t> timestamp;

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

enum class InteractionFormat { kCsv, kJsonl };

// Picks the format from the file extension (.jsonl/.json -> jsonl, else csv).
InteractionFormat infer_format(const std::filesystem::path& path);

std::vector<InteractionRecord> parse_interactions(std::istream& in, InteractionFormat format);
std::vector<InteractionRecord> parse_interactions(const std::filesystem::path& path,
                                                  InteractionFormat format);

// Attribute maps keep the order in which they appear in the source file.
using AttributeList = std::vector<std::pair<std::string, std::string>>;

struct ItemMetadata {
  std::string item_id;
  AttributeList intrinsic;  // name, categories, brand, location, ...
  AttributeList extrinsic;  // average rating, review count, reviews, ...
};

std::vector<ItemMetadata> parse_item_metadata(std::istream& in);
std::vector<ItemMetadata> parse_item_metadata(const std::filesystem::path& path);

// All attribute values joined by single spaces, intrinsic first.
std::string metadata_text(const ItemMetadata& meta);

// One line of the profiles jsonl written by the profiler.
struct ItemProfile {
  std::string item_id;
  std::string summary;
  std::string preference_prediction;
  std::string reasoning;
  std::string raw_text;
};

std::vector<ItemProfile> parse_profiles(std::istream& in);
std::vector<ItemProfile> parse_profiles(const std::filesystem::path& path);

// raw_text, or the three sections joined by newlines when raw_text is empty.
std::string profile_text(const ItemProfile& profile);

struct Interaction {
  Index user = 0;
  Index item = 0;
  int rating = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split split);

struct Dataset {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  // Dense index -> raw identifier.
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, Index> user_index;
  std::unordered_map<std::string, Index> item_index;

  // Deduplicated, pruned interactions in retained record order.
  std::vector<Interaction> interactions;
  std::vector<Interaction> train;
  std::vector<Interaction> val;
  std::vector<Interaction> test;

  std::optional<Index> find_user(const std::string& raw_id) const;
  std::optional<Index> find_item(const std::string& raw_id) const;
  const std::vector<Interaction>& split(Split which) const;

  // Per-user item lists (ascending) for one split.
  std::vector<std::vector<Index>> items_by_user(Split which) const;
};

struct BuildOptions {
  std::size_t min_user_deg = 1;
  std::size_t min_item_deg = 1;
  // Keep a seeded uniform sample of this many users before pruning (0 keeps everyone).
  std::size_t sample_users = 0;
  std::uint64_t seed = 0;
};

// Deduplicates (last occurrence wins), samples, prunes to the degree fixed point
// and assigns dense indices in first-appearance order. Splits are left empty.
Dataset build_dataset(const std::vector<InteractionRecord>& records, const BuildOptions& options);

// Per-user seeded shuffle, then floor-rounded val/test shares with the
// remainder going to train.
Dataset split_dataset(Dataset dataset, const SplitRatios& ratios, std::uint64_t seed);

// 1 - interactions / (users * items).
double sparsity(std::size_t n_users, std::size_t n_items, std::size_t n_interactions);

// Sparsity as a percentage truncated (not rounded) to six decimals, computed in
// integer arithmetic: "99.291235".
std::string sparsity_percent(std::size_t n_users, std::size_t n_items, std::size_t n_interactions);

struct PrepareInfo {
  BuildOptions build;
  SplitRatios ratios;
  std::uint64_t split_seed = 0;
};

// Writes manifest.json plus train.csv/val.csv/test.csv into `dir`.
// Returns the hex SHA-256 of the written manifest.
std::string write_prepared(const Dataset& dataset, const PrepareInfo& info,
                           const std::filesystem::path& dir);

struct PreparedDataset {
  Dataset dataset;
  std::string manifest_hash;
};

// Reads what write_prepared emitted; split file hashes are cross-checked.
PreparedDataset load_prepared(const std::filesystem::path& dir);

}  // namespace p4r
