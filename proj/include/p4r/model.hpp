#pragma once

// Graph propagation model: layer-0 embedding tables, item-side semantic
// injection, layer-sum readout and dot-product scoring.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "p4r/error.hpp"
#include "p4r/graph.hpp"
#include "p4r/linalg.hpp"
#include "p4r/semantic.hpp"

namespace p4r {

enum class Inject { kEveryLayer, kFirstLayer };
enum class Readout { kSum, kMean };

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t n_layers = 2;
  double alpha = 1.0;
  double beta = 1.0;
  Inject inject = Inject::kEveryLayer;
  Readout readout = Readout::kSum;
  // When false the projection head keeps its initial weights.
  bool train_projection = true;
};

// Raw encoder vectors cast once to the model's scalar type.
template <typename T>
struct SemanticInput {
  Matrix<T> raw;  // n_items x dim_raw
  std::vector<std::uint8_t> coverage;

  SemanticInput() = default;
  explicit SemanticInput(const SemanticEmbeddingStore& store)
      : raw(store.vectors.cast<T>()), coverage(store.coverage) {}

  std::size_t dim_raw() const noexcept { return static_cast<std::size_t>(raw.cols()); }
  bool any_covered() const {
    return std::any_of(coverage.begin(), coverage.end(), [](std::uint8_t c) { return c != 0; });
  }
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Matrix<T> user_emb;  // n_users x dim, layer 0
  Matrix<T> item_emb;  // n_items x dim, layer 0
  ProjectionHead<T> head;

  // Glorot-normal tables (std sqrt(2 / (rows + dim))) and a Glorot-uniform head, all from `seed`.
  static ModelParams init(const ModelConfig& config, std::size_t n_users, std::size_t n_items,
                          std::size_t dim_raw, std::uint64_t seed) {
    if (config.dim == 0) throw ValidationError("model dim must be >= 1");
    ModelParams p;
    p.config = config;
    std::mt19937_64 rng(seed);
    auto normal_table = [&](std::size_t rows) {
      Matrix<T> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(config.dim));
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(rows + config.dim)));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<T>(dist(rng));
      }
      return m;
    };
    p.user_emb = normal_table(n_users);
    p.item_emb = normal_table(n_items);
    p.head = ProjectionHead<T>::glorot(config.dim, dim_raw, rng);
    return p;
  }

  template <typename U>
  ModelParams<U> cast() const {
    return {config, user_emb.template cast<U>(), item_emb.template cast<U>(), head.template cast<U>()};
  }

  bool all_finite() const {
    return user_emb.allFinite() && item_emb.allFinite() && head.weight.allFinite() &&
           head.bias.allFinite();
  }

  // Whether the semantic term contributes anything for this configuration.
  bool uses_semantic(const SemanticInput<T>& input) const {
    return config.beta != 0.0 && head.dim_raw() > 0 && input.dim_raw() == head.dim_raw();
  }
};

template <typename T>
struct ForwardState {
  std::vector<Matrix<T>> user_layers;  // K + 1 entries
  std::vector<Matrix<T>> item_layers;
  Matrix<T> final_user;
  Matrix<T> final_item;
  // e_s and its pre-activations; empty when the semantic term is inactive.
  Matrix<T> semantic;
  Matrix<T> semantic_pre;
};

// One propagation step. `semantic` may be null (or beta zero) to drop the e_s term.
//   items'[i] = sum_{u in N_i} c_ui * alpha * (users[u] + beta * e_s[i])
//   users'[u] = sum_{i in N_u} c_ui * items[i]
template <typename T>
std::pair<Matrix<T>, Matrix<T>> propagate_layer(const BipartiteGraph& graph, const Matrix<T>& users,
                                                const Matrix<T>& items, const Matrix<T>* semantic,
                                                double alpha, double beta) {
  if (static_cast<std::size_t>(users.rows()) != graph.n_users() ||
      static_cast<std::size_t>(items.rows()) != graph.n_items() || users.cols() != items.cols()) {
    throw DomainError("propagate_layer: embedding shapes do not match the graph");
  }
  const bool inject = semantic != nullptr && beta != 0.0;
  if (inject && (semantic->rows() != items.rows() || semantic->cols() != items.cols())) {
    throw DomainError("propagate_layer: semantic matrix shape mismatch");
  }
  const auto dim = users.cols();
  Matrix<T> next_items = Matrix<T>::Zero(items.rows(), dim);
  Matrix<T> next_users = Matrix<T>::Zero(users.rows(), dim);
  const T a = static_cast<T>(alpha);
  const T ab = static_cast<T>(alpha * beta);

  for (Index i = 0; i < graph.n_items(); ++i) {
    const auto nbrs = graph.item_neighbors(i);
    const auto norms = graph.item_norms(i);
    auto row = next_items.row(i);
    for (std::size_t k = 0; k < nbrs.size(); ++k) row.noalias() += static_cast<T>(norms[k]) * users.row(nbrs[k]);
    row *= a;
    if (inject && !nbrs.empty()) row.noalias() += (ab * static_cast<T>(graph.item_norm_sum(i))) * semantic->row(i);
  }
  for (Index u = 0; u < graph.n_users(); ++u) {
    const auto nbrs = graph.user_neighbors(u);
    const auto norms = graph.user_norms(u);
    auto row = next_users.row(u);
    for (std::size_t k = 0; k < nbrs.size(); ++k) row.noalias() += static_cast<T>(norms[k]) * items.row(nbrs[k]);
  }
  return {std::move(next_users), std::move(next_items)};
}

inline bool injects_at(const ModelConfig& config, std::size_t layer) {
  return config.inject == Inject::kEveryLayer || layer == 0;
}

template <typename T>
T readout_scale(const ModelConfig& config) {
  return config.readout == Readout::kMean ? T(1) / static_cast<T>(config.n_layers + 1) : T(1);
}

template <typename T>
ForwardState<T> forward(const ModelParams<T>& params, const BipartiteGraph& graph,
                        const SemanticInput<T>& input) {
  const auto& cfg = params.config;
  if (static_cast<std::size_t>(params.item_emb.rows()) != graph.n_items() ||
      static_cast<std::size_t>(params.user_emb.rows()) != graph.n_users()) {
    throw DomainError("forward: parameter tables do not match the graph");
  }
  ForwardState<T> state;
  const bool use_semantic = params.uses_semantic(input);
  if (use_semantic) {
    if (input.raw.rows() != params.item_emb.rows()) throw DomainError("forward: semantic row count mismatch");
    state.semantic_pre = semantic_preactivations(params.head, input.raw, input.coverage);
    state.semantic = state.semantic_pre.cwiseMax(T(0));
  }
  state.user_layers.reserve(cfg.n_layers + 1);
  state.item_layers.reserve(cfg.n_layers + 1);
  state.user_layers.push_back(params.user_emb);
  state.item_layers.push_back(params.item_emb);
  for (std::size_t k = 0; k < cfg.n_layers; ++k) {
    const Matrix<T>* sem = use_semantic && injects_at(cfg, k) ? &state.semantic : nullptr;
    auto [u, i] = propagate_layer(graph, state.user_layers.back(), state.item_layers.back(), sem,
                                  cfg.alpha, cfg.beta);
    state.user_layers.push_back(std::move(u));
    state.item_layers.push_back(std::move(i));
  }
  state.final_user = state.user_layers[0];
  state.final_item = state.item_layers[0];
  for (std::size_t k = 1; k <= cfg.n_layers; ++k) {
    state.final_user += state.user_layers[k];
    state.final_item += state.item_layers[k];
  }
  const T scale = readout_scale<T>(cfg);
  if (scale != T(1)) {
    state.final_user *= scale;
    state.final_item *= scale;
  }
  return state;
}

template <typename T>
ForwardState<T> forward(const ModelParams<T>& params, const BipartiteGraph& graph,
                        const SemanticEmbeddingStore& store) {
  return forward(params, graph, SemanticInput<T>(store));
}

template <typename T>
T score(const ForwardState<T>& state, Index user, Index item) {
  return state.final_user.row(user).dot(state.final_item.row(item));
}

template <typename T>
struct ScoredItem {
  Index item;
  T score;
  friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

// Top-k of `scores` over items not in `exclude` (ascending indices), by
// descending score then ascending index.
template <typename T>
std::vector<ScoredItem<T>> top_k_excluding(std::span<const T> scores, std::size_t k,
                                           std::span<const Index> exclude) {
  std::vector<ScoredItem<T>> cands;
  cands.reserve(scores.size());
  std::size_t e = 0;
  for (Index i = 0; i < scores.size(); ++i) {
    while (e < exclude.size() && exclude[e] < i) ++e;
    if (e < exclude.size() && exclude[e] == i) continue;
    cands.push_back({i, scores[i]});
  }
  const auto before = [](const ScoredItem<T>& a, const ScoredItem<T>& b) {
    return a.score > b.score || (a.score == b.score && a.item < b.item);
  };
  const auto n = std::min(k, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(n), cands.end(), before);
  cands.resize(n);
  return cands;
}

template <typename T>
Vector<T> user_scores(const ForwardState<T>& state, Index user) {
  return state.final_item * state.final_user.row(user).transpose();
}

// `exclude` must be sorted ascending.
template <typename T>
std::vector<ScoredItem<T>> recommend_topk(const ForwardState<T>& state, Index user, std::size_t k,
                                          std::span<const Index> exclude) {
  if (k == 0) throw DomainError("recommend_topk: k must be >= 1");
  const Vector<T> scores = user_scores(state, user);
  return top_k_excluding<T>(std::span<const T>(scores.data(), static_cast<std::size_t>(scores.size())),
                            k, exclude);
}

}  // namespace p4r
