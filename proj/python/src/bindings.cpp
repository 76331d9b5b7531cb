#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "p4r/app.hpp"
#include "p4r/checkpoint.hpp"
#include "p4r/corpus.hpp"
#include "p4r/error.hpp"
#include "p4r/graph.hpp"
#include "p4r/metrics.hpp"
#include "p4r/model.hpp"
#include "p4r/semantic.hpp"
#include "p4r/train.hpp"

namespace py = pybind11;
using namespace p4r;

namespace {

using Edges = std::vector<std::pair<Index, Index>>;

std::vector<Interaction> to_interactions(const Edges& edges) {
  std::vector<Interaction> out;
  out.reserve(edges.size());
  for (auto [u, i] : edges) out.push_back({u, i, 0});
  return out;
}

Edges to_edges(const std::vector<Interaction>& rows) {
  Edges out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.emplace_back(r.user, r.item);
  return out;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  for (const auto& [name, value] : r.rows()) d[py::str(name)] = value;
  return d;
}

SemanticInput<double> semantic_input(const std::optional<Matrix<double>>& raw,
                                     const std::optional<std::vector<std::uint8_t>>& coverage, std::size_t n_items) {
  SemanticInput<double> input;
  if (!raw) return input;
  if (static_cast<std::size_t>(raw->rows()) != n_items) throw DomainError("raw vectors must have one row per item");
  input.raw = *raw;
  input.coverage = coverage.value_or(std::vector<std::uint8_t>(n_items, 1));
  if (input.coverage.size() != n_items) throw DomainError("coverage must have one entry per item");
  return input;
}

// A trained model bound to the dataset and profile vectors it scores against.
struct Model {
  ModelParams<float> params;
  const Dataset* dataset = nullptr;
  py::object keep_dataset;
  SemanticEmbeddingStore store;
  ForwardState<float> state;
  std::vector<EpochRecord> history;
  std::optional<std::size_t> best_epoch;
  std::optional<double> best_metric;
  std::uint64_t seed = 0;

  void refresh() { state = forward(params, build_graph(*dataset), SemanticInput<float>(store)); }
};

SemanticEmbeddingStore store_or_empty(const std::optional<SemanticEmbeddingStore>& store, const Dataset& ds) {
  return store ? *store : SemanticEmbeddingStore::empty(ds.n_items);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "P4R recommender core";

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("sparsity", &sparsity, py::arg("n_users"), py::arg("n_items"), py::arg("n_interactions"));
  m.def("sparsity_percent", &sparsity_percent, py::arg("n_users"), py::arg("n_items"), py::arg("n_interactions"));
  m.def("norm_coeff", &norm_coeff, py::arg("deg_u"), py::arg("deg_i"));

  auto metric = [](auto fn) {
    return [fn](const std::vector<Index>& ranked, const std::vector<Index>& relevant, std::size_t k) {
      return fn(ranked, relevant, k);
    };
  };
  m.def("recall_at_k", metric(&recall_at_k), py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def("ndcg_at_k", metric(&ndcg_at_k), py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def("mrr_at_k", metric(&mrr_at_k), py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def("hit_at_k", metric(&hit_at_k), py::arg("ranked"), py::arg("relevant"), py::arg("k"));

  m.def("rouge_tokens", [](const std::string& text) { return rouge_tokens(text); });
  m.def(
      "rouge1",
      [](const std::string& reference, const std::string& candidate) {
        const auto s = rouge1(reference, candidate);
        return py::make_tuple(s.precision, s.recall, s.f1);
      },
      py::arg("reference"), py::arg("candidate"), "Returns (precision, recall, f1).");

  py::class_<Dataset>(m, "Dataset")
      .def_static(
          "from_records",
          [](const std::vector<std::tuple<std::string, std::string, int>>& records, std::size_t min_user_deg,
             std::size_t min_item_deg, std::tuple<double, double, double> ratios, std::uint64_t seed) {
            std::vector<InteractionRecord> rows;
            rows.reserve(records.size());
            for (const auto& [u, i, r] : records) rows.push_back({u, i, r, std::nullopt});
            BuildOptions opts;
            opts.min_user_deg = min_user_deg;
            opts.min_item_deg = min_item_deg;
            opts.seed = seed;
            const auto [tr, va, te] = ratios;
            return split_dataset(build_dataset(rows, opts), {tr, va, te}, seed);
          },
          py::arg("records"), py::arg("min_user_deg") = 1, py::arg("min_item_deg") = 1,
          py::arg("ratios") = std::make_tuple(0.8, 0.1, 0.1), py::arg("seed") = 0,
          "Builds and splits a dataset from (user_id, item_id, rating) tuples.")
      .def_static(
          "load", [](const std::filesystem::path& dir) { return load_prepared(dir).dataset; }, py::arg("dir"),
          "Loads a directory written by `p4r prepare`.")
      .def_readonly("n_users", &Dataset::n_users)
      .def_readonly("n_items", &Dataset::n_items)
      .def_readonly("user_ids", &Dataset::user_ids)
      .def_readonly("item_ids", &Dataset::item_ids)
      .def_property_readonly("train", [](const Dataset& d) { return to_edges(d.train); })
      .def_property_readonly("val", [](const Dataset& d) { return to_edges(d.val); })
      .def_property_readonly("test", [](const Dataset& d) { return to_edges(d.test); })
      .def_property_readonly("sparsity",
                             [](const Dataset& d) { return sparsity(d.n_users, d.n_items, d.interactions.size()); })
      .def("__repr__", [](const Dataset& d) {
        return "<Dataset users=" + std::to_string(d.n_users) + " items=" + std::to_string(d.n_items) +
               " interactions=" + std::to_string(d.interactions.size()) + ">";
      });

  py::class_<SemanticEmbeddingStore>(m, "Embeddings")
      .def_static(
          "load",
          [](const std::filesystem::path& path, const Dataset& ds, bool skip_unknown) {
            EmbeddingLoadOptions opts;
            opts.skip_unknown = skip_unknown;
            return load_embeddings(path, ds, opts);
          },
          py::arg("path"), py::arg("dataset"), py::arg("skip_unknown") = false)
      .def_static(
          "from_array",
          [](const Matrix<double>& vectors, std::optional<std::vector<std::uint8_t>> coverage) {
            SemanticEmbeddingStore s = SemanticEmbeddingStore::empty(static_cast<std::size_t>(vectors.rows()),
                                                                     static_cast<std::size_t>(vectors.cols()));
            s.vectors = vectors;
            if (coverage) {
              if (coverage->size() != s.coverage.size()) throw DomainError("coverage must have one entry per row");
              s.coverage = *coverage;
            } else {
              std::fill(s.coverage.begin(), s.coverage.end(), 1);
            }
            for (Index i = 0; i < s.coverage.size(); ++i)
              if (!s.coverage[i]) s.vectors.row(i).setZero();
            return s;
          },
          py::arg("vectors"), py::arg("coverage") = py::none(),
          "Rows are dataset item indices; uncovered rows are zeroed.")
      .def_readonly("dim", &SemanticEmbeddingStore::dim_raw)
      .def_readonly("vectors", &SemanticEmbeddingStore::vectors)
      .def_readonly("coverage", &SemanticEmbeddingStore::coverage)
      .def_property_readonly("covered_count", &SemanticEmbeddingStore::covered_count);

  m.def(
      "propagate_layer",
      [](std::size_t n_users, std::size_t n_items, const Edges& edges, const Matrix<double>& users,
         const Matrix<double>& items, const std::optional<Matrix<double>>& semantic, double alpha, double beta) {
        const auto rows = to_interactions(edges);
        const BipartiteGraph g(n_users, n_items, rows);
        return propagate_layer<double>(g, users, items, semantic ? &*semantic : nullptr, alpha, beta);
      },
      py::arg("n_users"), py::arg("n_items"), py::arg("edges"), py::arg("users"), py::arg("items"),
      py::arg("semantic") = py::none(), py::arg("alpha") = 1.0, py::arg("beta") = 1.0,
      "One propagation step in float64. Returns (users, items).");

  m.def(
      "forward",
      [](std::size_t n_users, std::size_t n_items, const Edges& edges, const Matrix<double>& users,
         const Matrix<double>& items, const std::optional<Matrix<double>>& weight,
         const std::optional<Vector<double>>& bias, const std::optional<Matrix<double>>& raw,
         const std::optional<std::vector<std::uint8_t>>& coverage, std::size_t layers, double alpha, double beta,
         const std::string& inject, const std::string& readout) {
        ModelParams<double> p;
        p.config.dim = static_cast<std::size_t>(users.cols());
        p.config.n_layers = layers;
        p.config.alpha = alpha;
        p.config.beta = beta;
        p.config.inject = parse_inject(inject);
        p.config.readout = parse_readout(readout);
        p.user_emb = users;
        p.item_emb = items;
        if (weight) {
          p.head.weight = *weight;
          p.head.bias = bias.value_or(Vector<double>::Zero(weight->rows()));
        }
        const auto rows = to_interactions(edges);
        const auto st = forward(p, BipartiteGraph(n_users, n_items, rows), semantic_input(raw, coverage, n_items));
        return py::make_tuple(st.final_user, st.final_item);
      },
      py::arg("n_users"), py::arg("n_items"), py::arg("edges"), py::arg("users"), py::arg("items"),
      py::arg("weight") = py::none(), py::arg("bias") = py::none(), py::arg("raw") = py::none(),
      py::arg("coverage") = py::none(), py::arg("layers") = 2, py::arg("alpha") = 1.0, py::arg("beta") = 1.0,
      py::arg("inject") = "every-layer", py::arg("readout") = "sum",
      "Full forward pass in float64. Returns the final (users, items) embeddings.");

  py::class_<Model>(m, "Model")
      .def_static(
          "fit",
          [](py::object dataset_obj, std::optional<SemanticEmbeddingStore> embeddings, std::size_t dim,
             std::size_t layers, double alpha, double beta, const std::string& inject, const std::string& readout,
             bool train_projection, double lr, std::size_t batch_size, std::size_t epochs, std::size_t patience,
             const std::string& eval_metric, double l2, std::uint64_t seed,
             std::optional<std::function<void(std::size_t, double, std::optional<double>)>> on_epoch) {
            const Dataset& ds = dataset_obj.cast<const Dataset&>();
            if (beta != 0.0 && !embeddings) throw ValidationError("beta != 0 needs embeddings (or pass beta=0)");
            ModelConfig mc;
            mc.dim = dim;
            mc.n_layers = layers;
            mc.alpha = alpha;
            mc.beta = beta;
            mc.inject = parse_inject(inject);
            mc.readout = parse_readout(readout);
            mc.train_projection = train_projection;
            TrainConfig tc;
            tc.learning_rate = lr;
            tc.batch_size = batch_size;
            tc.max_epochs = epochs;
            tc.patience = patience;
            tc.eval_metric = parse_metric_key(eval_metric);
            tc.l2 = l2;
            tc.seed = seed;
            Model model;
            model.dataset = &ds;
            model.keep_dataset = dataset_obj;
            model.store = store_or_empty(embeddings, ds);
            EpochCallback cb;
            if (on_epoch) cb = [&](const EpochRecord& r) { (*on_epoch)(r.epoch, r.train_loss, r.val_metric); };
            auto res = fit<float>(ds, build_graph(ds), model.store, mc, tc, cb);
            model.params = std::move(res.params);
            model.history = std::move(res.history);
            model.best_epoch = res.best_epoch;
            model.best_metric = res.best_metric;
            model.seed = seed;
            model.refresh();
            return model;
          },
          py::arg("dataset"), py::arg("embeddings") = py::none(), py::kw_only(), py::arg("dim") = 64,
          py::arg("layers") = 2, py::arg("alpha") = 1.0, py::arg("beta") = 1.0, py::arg("inject") = "every-layer",
          py::arg("readout") = "sum", py::arg("train_projection") = true, py::arg("lr") = 1e-3,
          py::arg("batch_size") = 2048, py::arg("epochs") = 300, py::arg("patience") = 10,
          py::arg("eval_metric") = "ndcg@10", py::arg("l2") = 0.0, py::arg("seed") = 0,
          py::arg("on_epoch") = py::none())
      .def_static(
          "load",
          [](const std::filesystem::path& path, py::object dataset_obj,
             std::optional<SemanticEmbeddingStore> embeddings) {
            const Dataset& ds = dataset_obj.cast<const Dataset&>();
            auto ck = load_checkpoint(path);
            if (ck.params.user_emb.rows() != static_cast<Eigen::Index>(ds.n_users) ||
                ck.params.item_emb.rows() != static_cast<Eigen::Index>(ds.n_items))
              throw ValidationError("checkpoint shapes do not match the dataset");
            Model model;
            model.params = std::move(ck.params);
            model.seed = ck.seed;
            model.dataset = &ds;
            model.keep_dataset = dataset_obj;
            model.store = store_or_empty(embeddings, ds);
            model.refresh();
            return model;
          },
          py::arg("path"), py::arg("dataset"), py::arg("embeddings") = py::none())
      .def("save",
           [](const Model& mdl, const std::filesystem::path& path, const std::string& manifest_hash) {
             save_checkpoint({mdl.params, mdl.seed, manifest_hash}, path);
           },
           py::arg("path"), py::arg("manifest_hash") = "")
      .def_property_readonly("user_embeddings", [](const Model& mdl) { return mdl.state.final_user; })
      .def_property_readonly("item_embeddings", [](const Model& mdl) { return mdl.state.final_item; })
      .def_property_readonly("best_epoch", [](const Model& mdl) { return mdl.best_epoch; })
      .def_property_readonly("best_metric", [](const Model& mdl) { return mdl.best_metric; })
      .def_property_readonly("history",
                             [](const Model& mdl) {
                               py::list out;
                               for (const auto& r : mdl.history) {
                                 py::dict d;
                                 d["epoch"] = r.epoch;
                                 d["train_loss"] = r.train_loss;
                                 d["val_metric"] = r.val_metric;
                                 d["seconds"] = r.seconds;
                                 out.append(d);
                               }
                               return out;
                             })
      .def("scores", [](const Model& mdl, Index user) {
        if (user >= mdl.dataset->n_users) throw DomainError("user index out of range");
        return Vector<float>(user_scores(mdl.state, user));
      })
      .def(
          "recommend",
          [](const Model& mdl, const std::string& user_id, std::size_t k) {
            const auto u = mdl.dataset->find_user(user_id);
            if (!u) throw ValidationError("unknown user '" + user_id + "'");
            auto seen = mdl.dataset->items_by_user(Split::kTrain)[*u];
            std::sort(seen.begin(), seen.end());
            std::vector<std::pair<std::string, float>> out;
            for (const auto& s : recommend_topk(mdl.state, *u, k, seen))
              out.emplace_back(mdl.dataset->item_ids[s.item], s.score);
            return out;
          },
          py::arg("user_id"), py::arg("k") = 10, "Top-k unseen items as (item_id, score).")
      .def(
          "evaluate",
          [](const Model& mdl, const std::string& split, const std::vector<std::size_t>& ks) {
            return report_dict(evaluate(mdl.state, *mdl.dataset, parse_split(split), ks));
          },
          py::arg("split") = "test", py::arg("ks") = std::vector<std::size_t>{10, 20});

  m.def(
      "evaluate_wt",
      [](const SemanticEmbeddingStore& store, const Dataset& ds, const std::string& split,
         const std::vector<std::size_t>& ks) { return report_dict(evaluate_wt(store, ds, parse_split(split), ks)); },
      py::arg("embeddings"), py::arg("dataset"), py::arg("split") = "test",
      py::arg("ks") = std::vector<std::size_t>{10, 20});
  m.def(
      "evaluate_random",
      [](const Dataset& ds, const std::string& split, const std::vector<std::size_t>& ks, std::uint64_t seed) {
        return report_dict(evaluate_random(ds, parse_split(split), ks, seed));
      },
      py::arg("dataset"), py::arg("split") = "test", py::arg("ks") = std::vector<std::size_t>{10, 20},
      py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line in-process. Returns (exit_code, stdout, stderr).");
}
