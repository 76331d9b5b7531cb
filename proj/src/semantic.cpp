#include "p4r/semantic.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

namespace p4r {
namespace {

using json = nlohmann::json;

constexpr std::array<char, 4> kMagic = {'P', '4', 'R', 'E'};
constexpr std::uint32_t kVersion = 1;

template <typename UInt>
UInt read_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(UInt)> buf{};
  if (!in.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw ParseError(std::string("embedding binary: truncated ") + what, 0);
  }
  UInt v = 0;
  for (std::size_t k = 0; k < sizeof(UInt); ++k) v |= static_cast<UInt>(buf[k]) << (8 * k);
  return v;
}

template <typename UInt>
void write_le(std::ostream& out, UInt v) {
  std::array<unsigned char, sizeof(UInt)> buf{};
  for (std::size_t k = 0; k < sizeof(UInt); ++k) buf[k] = static_cast<unsigned char>(v >> (8 * k));
  out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

struct StoreBuilder {
  const Dataset& dataset;
  SemanticEmbeddingStore store;

  explicit StoreBuilder(const Dataset& ds) : dataset(ds) {
    store.coverage.assign(ds.n_items, 0);
  }

  void set_dim(std::size_t dim) {
    store.dim_raw = dim;
    store.vectors = Matrix<double>::Zero(static_cast<Eigen::Index>(dataset.n_items),
                                         static_cast<Eigen::Index>(dim));
  }

  template <typename Range>
  void put(Index item, const Range& values, const std::string& who) {
    if (store.coverage[item]) throw ValidationError("embeddings: duplicate record for " + who);
    Eigen::Index c = 0;
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericError("embeddings: non-finite value in " + who);
      store.vectors(item, c++) = v;
    }
    store.coverage[item] = 1;
  }
};

SemanticEmbeddingStore load_binary(std::istream& in, const Dataset& dataset,
                                   const EmbeddingLoadOptions& options) {
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw ValidationError("embedding binary: unsupported version " + std::to_string(version));
  }
  const auto dim = read_le<std::uint32_t>(in, "dimension");
  const auto count = read_le<std::uint64_t>(in, "record count");
  StoreBuilder builder(dataset);
  builder.set_dim(dim);
  std::vector<double> row(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto item = read_le<std::uint32_t>(in, "item index");
    for (auto& v : row) v = static_cast<double>(std::bit_cast<float>(read_le<std::uint32_t>(in, "vector")));
    if (item >= dataset.n_items) {
      if (options.skip_unknown) continue;
      throw ValidationError("embeddings: unknown item index " + std::to_string(item));
    }
    builder.put(item, row, "item index " + std::to_string(item));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError("embedding binary: trailing bytes after the last record", 0);
  }
  return std::move(builder.store);
}

SemanticEmbeddingStore load_jsonl(std::istream& in, const Dataset& dataset,
                                  const EmbeddingLoadOptions& options) {
  StoreBuilder builder(dataset);
  bool have_dim = false;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> row;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!obj.is_object() || !obj.contains("item_id") || !obj.contains("vector") ||
        !obj["vector"].is_array()) {
      throw ParseError("expected {\"item_id\", \"vector\"}", line_no);
    }
    const auto& id_json = obj["item_id"];
    const std::string item_id = id_json.is_string() ? id_json.get<std::string>() : id_json.dump();
    const auto& vec = obj["vector"];
    if (!have_dim) {
      builder.set_dim(vec.size());
      row.resize(vec.size());
      have_dim = true;
    }
    if (vec.size() != builder.store.dim_raw) {
      throw ValidationError("embeddings line " + std::to_string(line_no) + ": item '" + item_id +
                            "' has dimension " + std::to_string(vec.size()) + ", expected " +
                            std::to_string(builder.store.dim_raw));
    }
    for (std::size_t k = 0; k < vec.size(); ++k) {
      if (!vec[k].is_number()) {
        throw NumericError("embeddings line " + std::to_string(line_no) + ": item '" + item_id +
                           "' has a non-numeric entry");
      }
      row[k] = vec[k].get<double>();
    }
    const auto item = dataset.find_item(item_id);
    if (!item) {
      if (options.skip_unknown) continue;
      throw ValidationError("embeddings line " + std::to_string(line_no) + ": unknown item '" +
                            item_id + "'");
    }
    builder.put(*item, row, "item '" + item_id + "'");
  }
  if (!have_dim) builder.set_dim(0);
  return std::move(builder.store);
}

}  // namespace

std::size_t SemanticEmbeddingStore::covered_count() const {
  return static_cast<std::size_t>(std::count(coverage.begin(), coverage.end(), 1));
}

SemanticEmbeddingStore SemanticEmbeddingStore::empty(std::size_t n_items, std::size_t dim_raw) {
  SemanticEmbeddingStore store;
  store.dim_raw = dim_raw;
  store.vectors = Matrix<double>::Zero(static_cast<Eigen::Index>(n_items),
                                       static_cast<Eigen::Index>(dim_raw));
  store.coverage.assign(n_items, 0);
  return store;
}

SemanticEmbeddingStore load_embeddings(std::istream& in, const Dataset& dataset,
                                       const EmbeddingLoadOptions& options) {
  std::array<char, 4> head{};
  in.read(head.data(), head.size());
  if (in.gcount() == 4 && head == kMagic) return load_binary(in, dataset, options);
  in.clear();
  in.seekg(0);
  return load_jsonl(in, dataset, options);
}

SemanticEmbeddingStore load_embeddings(const std::filesystem::path& path, const Dataset& dataset,
                                       const EmbeddingLoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_embeddings(in, dataset, options);
}

void write_embeddings_jsonl(const SemanticEmbeddingStore& store, const Dataset& dataset,
                            std::ostream& out) {
  for (Index i = 0; i < store.n_items(); ++i) {
    if (!store.covered(i)) continue;
    json rec;
    rec["item_id"] = dataset.item_ids.at(i);
    auto& vec = rec["vector"] = json::array();
    for (Eigen::Index c = 0; c < store.vectors.cols(); ++c) vec.push_back(store.vectors(i, c));
    out << rec.dump() << '\n';
  }
}

void write_embeddings_binary(const SemanticEmbeddingStore& store, std::ostream& out) {
  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim_raw));
  write_le<std::uint64_t>(out, store.covered_count());
  for (Index i = 0; i < store.n_items(); ++i) {
    if (!store.covered(i)) continue;
    write_le<std::uint32_t>(out, i);
    for (Eigen::Index c = 0; c < store.vectors.cols(); ++c) {
      write_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(store.vectors(i, c))));
    }
  }
}

}  // namespace p4r
