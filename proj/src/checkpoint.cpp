#include "p4r/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

namespace p4r {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::array<char, 4> kMagic = {'P', '4', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename UInt>
void write_le(std::ostream& out, UInt v) {
  std::array<unsigned char, sizeof(UInt)> buf{};
  for (std::size_t k = 0; k < sizeof(UInt); ++k) buf[k] = static_cast<unsigned char>(v >> (8 * k));
  out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

template <typename UInt>
UInt read_le(std::istream& in) {
  std::array<unsigned char, sizeof(UInt)> buf{};
  if (!in.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw ParseError("checkpoint: truncated file", 0);
  }
  UInt v = 0;
  for (std::size_t k = 0; k < sizeof(UInt); ++k) v |= static_cast<UInt>(buf[k]) << (8 * k);
  return v;
}

template <typename Derived>
void write_block(std::ostream& out, const Eigen::PlainObjectBase<Derived>& m) {
  // Row-major traversal regardless of storage order.
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(m(r, c)));
  }
}

template <typename Derived>
void read_block(std::istream& in, Eigen::PlainObjectBase<Derived>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = std::bit_cast<float>(read_le<std::uint32_t>(in));
  }
}

}  // namespace

const char* inject_name(Inject inject) {
  return inject == Inject::kEveryLayer ? "every-layer" : "first-layer";
}

const char* readout_name(Readout readout) { return readout == Readout::kSum ? "sum" : "mean"; }

Inject parse_inject(const std::string& name) {
  if (name == "every-layer") return Inject::kEveryLayer;
  if (name == "first-layer") return Inject::kFirstLayer;
  throw ValidationError("unknown inject mode '" + name + "' (every-layer | first-layer)");
}

Readout parse_readout(const std::string& name) {
  if (name == "sum") return Readout::kSum;
  if (name == "mean") return Readout::kMean;
  throw ValidationError("unknown readout '" + name + "' (sum | mean)");
}

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  const auto& p = ckpt.params;
  const auto& cfg = p.config;
  const ordered_json header = {
      {"format", "p4r-checkpoint"},
      {"config",
       {{"dim", cfg.dim},
        {"n_layers", cfg.n_layers},
        {"alpha", cfg.alpha},
        {"beta", cfg.beta},
        {"inject", inject_name(cfg.inject)},
        {"readout", readout_name(cfg.readout)},
        {"train_projection", cfg.train_projection}}},
      {"n_users", p.user_emb.rows()},
      {"n_items", p.item_emb.rows()},
      {"dim_raw", p.head.dim_raw()},
      {"seed", ckpt.seed},
      {"manifest_hash", ckpt.manifest_hash},
  };
  const std::string text = header.dump();
  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_block(out, p.user_emb);
  write_block(out, p.item_emb);
  write_block(out, p.head.weight);
  write_block(out, p.head.bias);
  if (!out) throw Error("checkpoint: write failed");
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  save_checkpoint(ckpt, out);
}

Checkpoint load_checkpoint(std::istream& in, const std::optional<std::string>& expected_manifest_hash) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ParseError("checkpoint: bad magic bytes", 0);
  }
  if (const auto version = read_le<std::uint32_t>(in); version != kVersion) {
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto len = read_le<std::uint64_t>(in);
  if (len > (1u << 26)) throw ParseError("checkpoint: implausible header length", 0);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError("checkpoint: truncated header", 0);

  ordered_json header;
  try {
    header = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 0);
  }
  Checkpoint ckpt;
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.manifest_hash = header.at("manifest_hash").get<std::string>();
  if (expected_manifest_hash && *expected_manifest_hash != ckpt.manifest_hash) {
    throw ValidationError("checkpoint was trained against dataset manifest " + ckpt.manifest_hash +
                          ", not " + *expected_manifest_hash);
  }
  const auto& c = header.at("config");
  auto& cfg = ckpt.params.config;
  cfg.dim = c.at("dim").get<std::size_t>();
  cfg.n_layers = c.at("n_layers").get<std::size_t>();
  cfg.alpha = c.at("alpha").get<double>();
  cfg.beta = c.at("beta").get<double>();
  cfg.inject = parse_inject(c.at("inject").get<std::string>());
  cfg.readout = parse_readout(c.at("readout").get<std::string>());
  cfg.train_projection = c.at("train_projection").get<bool>();

  const auto n_users = header.at("n_users").get<Eigen::Index>();
  const auto n_items = header.at("n_items").get<Eigen::Index>();
  const auto dim_raw = header.at("dim_raw").get<Eigen::Index>();
  const auto dim = static_cast<Eigen::Index>(cfg.dim);
  auto& p = ckpt.params;
  p.user_emb.resize(n_users, dim);
  p.item_emb.resize(n_items, dim);
  p.head.weight.resize(dim, dim_raw);
  p.head.bias.resize(dim);
  read_block(in, p.user_emb);
  read_block(in, p.item_emb);
  read_block(in, p.head.weight);
  read_block(in, p.head.bias);
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("checkpoint: trailing bytes", 0);
  if (!p.all_finite()) throw NumericError("checkpoint: non-finite parameters");
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_manifest_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_checkpoint(in, expected_manifest_hash);
}

}  // namespace p4r
