#include "p4r/app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "p4r/checkpoint.hpp"
#include "p4r/corpus.hpp"
#include "p4r/digest.hpp"
#include "p4r/error.hpp"
#include "p4r/graph.hpp"
#include "p4r/metrics.hpp"
#include "p4r/model.hpp"
#include "p4r/report.hpp"
#include "p4r/semantic.hpp"
#include "p4r/train.hpp"

namespace fs = std::filesystem;

namespace p4r::cli {
namespace {

using json = nlohmann::ordered_json;

const std::vector<std::string> kSubcommands = {"prepare", "train", "eval", "rouge", "recommend"};

// JSON config: top-level keys are global options, and an object named after
// a subcommand holds that subcommand's options. Sections for other
// subcommands are ignored so one file can drive a whole pipeline.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::string active) : active_(std::move(active)) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json root;
    try {
      root = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("config: ") + e.what(), 0);
    }
    if (!root.is_object()) throw ValidationError("config: top level must be a JSON object");
    if (!root.contains("seed")) throw ValidationError("config: 'seed' is required");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : root.items()) {
      const bool is_section =
          std::find(kSubcommands.begin(), kSubcommands.end(), key) != kSubcommands.end();
      if (is_section) {
        if (!value.is_object()) throw ValidationError("config: section '" + key + "' must be an object");
        if (key != active_) continue;
        for (const auto& [sub_key, sub_value] : value.items()) items.push_back(item({key}, sub_key, sub_value));
      } else {
        items.push_back(item({}, key, value));
      }
    }
    return items;
  }

 private:
  static std::string scalar(const json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw ValidationError("config: '" + key + "' must be a string, number, boolean or list of those");
  }

  static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& key, const json& v) {
    CLI::ConfigItem ci;
    ci.parents = std::move(parents);
    ci.name = key;
    if (v.is_array()) {
      for (const auto& e : v) ci.inputs.push_back(scalar(e, key));
    } else {
      ci.inputs.push_back(scalar(v, key));
    }
    return ci;
  }

  std::string active_;
};

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  bool quiet = false;
};

struct PrepareArgs {
  std::string interactions;
  std::string format = "auto";
  std::size_t min_user_deg = 1;
  std::size_t min_item_deg = 1;
  std::size_t sample_users = 0;
  std::vector<double> ratios{0.8, 0.1, 0.1};
};

struct ModelArgs {
  std::size_t dim = 64;
  std::size_t layers = 2;
  double alpha = 1.0;
  double beta = 1.0;
  std::string inject = "every-layer";
  std::string readout = "sum";
  bool freeze_projection = false;
};

struct TrainArgs {
  std::string data;
  std::string embeddings;
  ModelArgs model;
  double lr = 1e-3;
  std::size_t batch_size = 2048;
  std::size_t epochs = 300;
  std::size_t patience = 10;
  std::string eval_metric = "ndcg@10";
  double l2 = 0.0;
};

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string embeddings;
  std::string mode = "p4r";
  std::string split = "both";
  std::vector<std::size_t> ks{10, 20};
};

struct RougeArgs {
  std::string profiles;
  std::string metadata;
  std::string aggregate = "mean";
};

struct RecommendArgs {
  std::string data;
  std::string checkpoint;
  std::string embeddings;
  std::vector<std::string> users;
  std::size_t k = 10;
};

class Logger {
 public:
  Logger(std::ostream& err, bool quiet) : err_(err), quiet_(quiet) {}
  void info(const std::string& msg) const {
    if (!quiet_) err_ << msg << '\n';
  }
  void warn(const std::string& msg) const { err_ << "warning: " << msg << '\n'; }

 private:
  std::ostream& err_;
  bool quiet_;
};

fs::path require_out(const Globals& g, const char* command) {
  if (g.out.empty()) throw ValidationError(std::string(command) + " needs --out");
  fs::create_directories(g.out);
  return g.out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

SemanticEmbeddingStore maybe_embeddings(const std::string& path, const Dataset& ds, const Logger& log) {
  if (path.empty()) return SemanticEmbeddingStore::empty(ds.n_items, 0);
  auto store = load_embeddings(fs::path(path), ds);
  log.info("embeddings: " + std::to_string(store.covered_count()) + "/" + std::to_string(ds.n_items) +
           " items covered, dim " + std::to_string(store.dim_raw));
  if (store.covered_count() < ds.n_items) {
    log.warn(std::to_string(ds.n_items - store.covered_count()) + " items have no profile embedding; their e_s is zero");
  }
  return store;
}

struct LoadedModel {
  PreparedDataset prepared;
  Checkpoint checkpoint;
  SemanticEmbeddingStore store;
  ForwardState<float> state;
};

LoadedModel load_model(const std::string& data, const std::string& checkpoint, const std::string& embeddings,
                       const Logger& log) {
  LoadedModel m;
  m.prepared = load_prepared(data);
  const auto& ds = m.prepared.dataset;
  m.checkpoint = load_checkpoint(fs::path(checkpoint), m.prepared.manifest_hash);
  const auto& params = m.checkpoint.params;
  const bool needs_semantic = params.config.beta != 0.0 && params.head.dim_raw() > 0;
  if (needs_semantic && embeddings.empty()) {
    throw ValidationError("checkpoint was trained with beta=" + format_fixed(params.config.beta, 3) +
                          " and needs --embeddings");
  }
  m.store = maybe_embeddings(embeddings, ds, log);
  if (needs_semantic && m.store.dim_raw != params.head.dim_raw()) {
    throw ValidationError("embedding dimension " + std::to_string(m.store.dim_raw) +
                          " does not match the checkpoint's " + std::to_string(params.head.dim_raw()));
  }
  m.state = forward(params, build_graph(ds), SemanticInput<float>(m.store));
  return m;
}

int cmd_prepare(const Globals& g, const PrepareArgs& a, std::ostream& out, const Logger& log) {
  const fs::path dir = require_out(g, "prepare");
  const fs::path src(a.interactions);
  InteractionFormat format;
  if (a.format == "auto") format = infer_format(src);
  else if (a.format == "csv") format = InteractionFormat::kCsv;
  else if (a.format == "jsonl") format = InteractionFormat::kJsonl;
  else throw ValidationError("unknown --format '" + a.format + "' (auto | csv | jsonl)");
  if (a.ratios.size() != 3) throw ValidationError("--ratios takes train,val,test");

  PrepareInfo info;
  info.build = {a.min_user_deg, a.min_item_deg, a.sample_users, g.seed};
  info.ratios = {a.ratios[0], a.ratios[1], a.ratios[2]};
  info.split_seed = g.seed;
  const auto records = parse_interactions(src, format);
  log.info("read " + std::to_string(records.size()) + " records from " + src.string());
  const auto ds = split_dataset(build_dataset(records, info.build), info.ratios, info.split_seed);
  const auto hash = write_prepared(ds, info, dir);

  out << "users " << ds.n_users << '\n'
      << "items " << ds.n_items << '\n'
      << "interactions " << ds.interactions.size() << '\n'
      << "sparsity " << sparsity_percent(ds.n_users, ds.n_items, ds.interactions.size()) << "%\n"
      << "train " << ds.train.size() << " val " << ds.val.size() << " test " << ds.test.size() << '\n'
      << "manifest " << hash << '\n';
  return kOk;
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out, const Logger& log) {
  if (a.model.beta != 0.0 && a.embeddings.empty()) {
    throw ValidationError("--beta " + format_fixed(a.model.beta, 3) +
                          " injects item profiles but no --embeddings file was given (use --beta 0 to train without them)");
  }
  const fs::path dir = require_out(g, "train");
  const auto prepared = load_prepared(a.data);
  const auto& ds = prepared.dataset;
  const auto store = maybe_embeddings(a.embeddings, ds, log);

  ModelConfig mc;
  mc.dim = a.model.dim;
  mc.n_layers = a.model.layers;
  mc.alpha = a.model.alpha;
  mc.beta = a.model.beta;
  mc.inject = parse_inject(a.model.inject);
  mc.readout = parse_readout(a.model.readout);
  mc.train_projection = !a.model.freeze_projection;
  if (mc.dim == 0) throw ValidationError("--dim must be >= 1");

  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch_size;
  tc.max_epochs = a.epochs;
  tc.patience = a.patience;
  tc.eval_metric = parse_metric_key(a.eval_metric);
  tc.seed = g.seed;
  tc.l2 = a.l2;
  if (ds.val.empty()) log.warn("validation split is empty; early stopping is off and the last epoch is kept");

  const auto graph = build_graph(ds);
  const std::string metric_label = tc.eval_metric.str();
  const auto result = fit<float>(ds, graph, store, mc, tc, [&](const EpochRecord& rec) {
    std::string line = "epoch " + std::to_string(rec.epoch) + " loss " + format_fixed(rec.train_loss);
    if (rec.val_metric) line += " val " + metric_label + " " + format_fixed(*rec.val_metric);
    log.info(line);
  });

  const auto model_path = dir / "model.p4rc";
  save_checkpoint({result.params, g.seed, prepared.manifest_hash}, model_path);
  std::ofstream hist(dir / "history.jsonl", std::ios::binary);
  write_history_jsonl(result.history, hist);
  if (!hist) throw Error("cannot write history.jsonl");

  if (result.best_epoch) out << "best_epoch " << *result.best_epoch << '\n';
  if (result.best_metric) out << "best_val_" << metric_label << ' ' << format_fixed(*result.best_metric) << '\n';
  out << "epochs " << result.history.size() << '\n';
  out << "checkpoint " << model_path.string() << '\n';
  out << "sha256 " << sha256_file(model_path) << '\n';
  return kOk;
}

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out, const Logger& log) {
  const bool p4r = a.mode == "p4r", wt = a.mode == "wt", random = a.mode == "random";
  if (!p4r && !wt && !random) throw ValidationError("unknown --mode '" + a.mode + "' (p4r | wt | random)");
  std::vector<Split> splits;
  if (a.split == "val" || a.split == "both") splits.push_back(Split::kVal);
  if (a.split == "test" || a.split == "both") splits.push_back(Split::kTest);
  if (splits.empty()) throw ValidationError("unknown --split '" + a.split + "' (val | test | both)");
  if (a.ks.empty()) throw ValidationError("--ks needs at least one cutoff");

  std::optional<LoadedModel> model;
  PreparedDataset prepared;
  SemanticEmbeddingStore store;
  if (p4r) {
    if (a.checkpoint.empty()) throw ValidationError("--mode p4r needs --checkpoint");
    model = load_model(a.data, a.checkpoint, a.embeddings, log);
  } else {
    prepared = load_prepared(a.data);
    if (wt) {
      if (a.embeddings.empty()) throw ValidationError("--mode wt needs --embeddings");
      store = maybe_embeddings(a.embeddings, prepared.dataset, log);
    }
  }
  const Dataset& ds = model ? model->prepared.dataset : prepared.dataset;
  const fs::path dir = g.out.empty() ? fs::path() : require_out(g, "eval");

  for (Split split : splits) {
    if (ds.split(split).empty()) {
      if (a.split != "both") throw ValidationError(std::string("split '") + split_name(split) + "' is empty");
      log.warn(std::string("skipping empty split '") + split_name(split) + "'");
      continue;
    }
    MetricReport report;
    if (p4r) report = evaluate(model->state, ds, split, a.ks);
    else if (wt) report = evaluate_wt(store, ds, split, a.ks);
    else report = evaluate_random(ds, split, a.ks, g.seed);
    const ReportContext ctx{split_name(split), a.mode};
    write_report_text(report, ctx, out);
    if (!dir.empty()) {
      const std::string stem = std::string("eval_") + split_name(split) + "_" + a.mode;
      std::ofstream txt(dir / (stem + ".txt"), std::ios::binary), jl(dir / (stem + ".jsonl"), std::ios::binary);
      write_report_text(report, ctx, txt);
      write_report_jsonl(report, ctx, jl);
      if (!txt || !jl) throw Error("cannot write reports in " + dir.string());
    }
  }
  return kOk;
}

int cmd_rouge(const Globals& g, const RougeArgs& a, std::ostream& out, const Logger& log) {
  RougeAggregate aggregate;
  if (a.aggregate == "mean") aggregate = RougeAggregate::kMean;
  else if (a.aggregate == "micro") aggregate = RougeAggregate::kMicro;
  else throw ValidationError("unknown --aggregate '" + a.aggregate + "' (mean | micro)");

  const auto metadata = parse_item_metadata(fs::path(a.metadata));
  std::unordered_map<std::string, std::string> refs;
  for (const auto& m : metadata) refs.emplace(m.item_id, metadata_text(m));
  const auto profiles = parse_profiles(fs::path(a.profiles));

  std::vector<std::string> ids, cands;
  std::vector<const std::string*> ref_texts;
  std::size_t missing = 0;
  for (const auto& p : profiles) {
    const auto it = refs.find(p.item_id);
    if (it == refs.end()) {
      ++missing;
      continue;
    }
    ids.push_back(p.item_id);
    cands.push_back(profile_text(p));
    ref_texts.push_back(&it->second);
  }
  if (missing) log.warn(std::to_string(missing) + " profiles have no metadata record and were skipped");
  if (ids.empty()) log.warn("no profile/metadata pairs to score");

  std::vector<RougePair> pairs;
  for (std::size_t k = 0; k < ids.size(); ++k) pairs.push_back({*ref_texts[k], cands[k]});
  const auto total = rouge1_corpus(pairs, aggregate);

  out << "pairs " << pairs.size() << '\n'
      << "aggregate " << a.aggregate << '\n'
      << "precision " << format_fixed(total.precision) << '\n'
      << "recall " << format_fixed(total.recall) << '\n'
      << "f1 " << format_fixed(total.f1) << '\n';

  if (!g.out.empty()) {
    const fs::path dir = require_out(g, "rouge");
    const json summary = {{"pairs", pairs.size()},     {"aggregate", a.aggregate}, {"precision", total.precision},
                          {"recall", total.recall}, {"f1", total.f1}};
    write_file(dir / "rouge.json", summary.dump(1) + "\n");
    std::string rows;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto s = rouge1(pairs[k].reference, pairs[k].candidate);
      rows += json({{"item_id", ids[k]}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}}).dump();
      rows += '\n';
    }
    write_file(dir / "rouge_items.jsonl", rows);
  }
  return kOk;
}

int cmd_recommend(const Globals& g, const RecommendArgs& a, std::ostream& out, const Logger& log) {
  if (a.k == 0) throw ValidationError("--k must be >= 1");
  const auto model = load_model(a.data, a.checkpoint, a.embeddings, log);
  const auto& ds = model.prepared.dataset;
  const auto seen = ds.items_by_user(Split::kTrain);

  std::string rows;
  for (const auto& raw : a.users) {
    json row = {{"user_id", raw}};
    if (const auto u = ds.find_user(raw)) {
      json items = json::array();
      for (const auto& s : recommend_topk(model.state, *u, a.k, std::span<const Index>(seen[*u]))) {
        items.push_back({{"item_id", ds.item_ids[s.item]}, {"score", s.score}});
      }
      row["items"] = std::move(items);
    } else {
      row["error"] = "unknown user";
    }
    rows += row.dump();
    rows += '\n';
  }
  if (g.out.empty()) {
    out << rows;
  } else {
    const auto path = require_out(g, "recommend") / "recommendations.jsonl";
    write_file(path, rows);
    out << "wrote " << a.users.size() << " rows to " << path.string() << '\n';
  }
  return kOk;
}

void add_model_options(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--dim", m.dim, "Embedding dimension")->capture_default_str();
  sub->add_option("--layers", m.layers, "Propagation layers K")->capture_default_str();
  sub->add_option("--alpha", m.alpha, "Item-side propagation scale")->capture_default_str();
  sub->add_option("--beta", m.beta, "Semantic injection weight (0 disables profiles)")->capture_default_str();
  sub->add_option("--inject", m.inject, "every-layer | first-layer")->capture_default_str();
  sub->add_option("--readout", m.readout, "sum | mean")->capture_default_str();
  sub->add_flag("--freeze-projection", m.freeze_projection, "Keep the projection head at its initial weights");
}

std::string active_subcommand(const std::vector<std::string>& args) {
  for (const auto& a : args) {
    if (std::find(kSubcommands.begin(), kSubcommands.end(), a) != kSubcommands.end()) return a;
  }
  return {};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"P4R: graph recommender with LLM item-profile embeddings", "p4r"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.config_formatter(std::make_shared<JsonConfig>(active_subcommand(args)));
  app.set_config("--config", "", "JSON config file (must set 'seed')");
  // A repeated flag overrides the earlier value.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for sampling, splitting, initialization and shuffles")
      ->capture_default_str();
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress messages");

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "Filter, index and split an interaction log");
  prepare->add_option("--interactions", pa.interactions, "Interaction file (csv or jsonl)")->required();
  prepare->add_option("--format", pa.format, "auto | csv | jsonl")->capture_default_str();
  prepare->add_option("--min-user-deg", pa.min_user_deg, "Minimum interactions per user")->capture_default_str();
  prepare->add_option("--min-item-deg", pa.min_item_deg, "Minimum interactions per item")->capture_default_str();
  prepare->add_option("--sample-users", pa.sample_users, "Keep a seeded sample of this many users (0 = all)")
      ->capture_default_str();
  prepare->add_option("--ratios", pa.ratios, "train,val,test fractions")->delimiter(',')->expected(3)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on a prepared dataset");
  train->add_option("--data", ta.data, "Prepared dataset directory")->required();
  train->add_option("--embeddings", ta.embeddings, "Item profile embeddings (jsonl or binary)");
  add_model_options(train, ta.model);
  train->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--batch-size", ta.batch_size, "Triples per step")->capture_default_str();
  train->add_option("--epochs", ta.epochs, "Maximum epochs")->capture_default_str();
  train->add_option("--patience", ta.patience, "Epochs without improvement before stopping")->capture_default_str();
  train->add_option("--eval-metric", ta.eval_metric, "Validation metric for early stopping")->capture_default_str();
  train->add_option("--l2", ta.l2, "L2 penalty on layer-0 rows in each batch")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Full-ranking evaluation");
  eval->add_option("--data", ea.data, "Prepared dataset directory")->required();
  eval->add_option("--checkpoint", ea.checkpoint, "Model checkpoint (mode p4r)");
  eval->add_option("--embeddings", ea.embeddings, "Item profile embeddings");
  eval->add_option("--mode", ea.mode, "p4r | wt | random")->capture_default_str();
  eval->add_option("--split", ea.split, "val | test | both")->capture_default_str();
  eval->add_option("--ks", ea.ks, "Cutoffs")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  RougeArgs ra;
  auto* rouge = app.add_subcommand("rouge", "ROUGE-1 of item profiles against their metadata");
  rouge->add_option("--profiles", ra.profiles, "Profiles jsonl")->required();
  rouge->add_option("--metadata", ra.metadata, "Item metadata jsonl")->required();
  rouge->add_option("--aggregate", ra.aggregate, "mean | micro")->capture_default_str();

  RecommendArgs rc;
  auto* recommend = app.add_subcommand("recommend", "Top-k unseen items for users");
  recommend->add_option("--data", rc.data, "Prepared dataset directory")->required();
  recommend->add_option("--checkpoint", rc.checkpoint, "Model checkpoint")->required();
  recommend->add_option("--embeddings", rc.embeddings, "Item profile embeddings");
  recommend->add_option("--users", rc.users, "Raw user ids")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->required();
  recommend->add_option("--k", rc.k, "List length")->capture_default_str();

  for (auto* sub : {prepare, train, eval, rouge, recommend}) {
    sub->allow_config_extras(CLI::config_extras_mode::error);
  }

  std::vector<const char*> argv{"p4r"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsageOrValidation;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsageOrValidation;
  }

  const Logger log(err, g.quiet);
  try {
    if (prepare->parsed()) return cmd_prepare(g, pa, out, log);
    if (train->parsed()) return cmd_train(g, ta, out, log);
    if (eval->parsed()) return cmd_eval(g, ea, out, log);
    if (rouge->parsed()) return cmd_rouge(g, ra, out, log);
    if (recommend->parsed()) return cmd_recommend(g, rc, out, log);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsageOrValidation;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsageOrValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsageOrValidation;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int k = 1; k < argc; ++k) args.emplace_back(argv[k]);
  return run(args, out, err);
}

}  // namespace p4r::cli
