#pragma once

// BPR training: negative sampling, loss, backpropagation through the
// propagation layers and the projection head, Adam, early stopping.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "p4r/corpus.hpp"
#include "p4r/error.hpp"
#include "p4r/graph.hpp"
#include "p4r/metrics.hpp"
#include "p4r/model.hpp"

namespace p4r {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 2048;
  std::size_t max_epochs = 300;
  std::size_t patience = 10;
  MetricKey eval_metric{Metric::kNdcg, 10};
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Penalty 0.5 * l2 * |e^(0)|^2 on the batch's layer-0 rows; off by default.
  double l2 = 0.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
    if (patience == 0) throw ValidationError("patience must be >= 1");
    if (l2 < 0.0) throw ValidationError("l2 must be >= 0");
  }
};

struct TrainTriple {
  Index user = 0;
  Index pos = 0;
  Index neg = 0;
};

// Uniform over items outside `train_items` (sorted ascending), by rejection.
template <typename Rng>
Index sample_negative(Index user, std::span<const Index> train_items, std::size_t n_items, Rng& rng) {
  if (train_items.size() >= n_items) {
    throw ValidationError("user " + std::to_string(user) + " has interacted with every item");
  }
  std::uniform_int_distribution<Index> dist(0, static_cast<Index>(n_items - 1));
  while (true) {
    const Index j = dist(rng);
    if (!std::binary_search(train_items.begin(), train_items.end(), j)) return j;
  }
}

// ln(1 + e^{-x}) without overflow for large |x|.
inline double softplus_neg(double x) {
  return x > 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -sum ln sigma(f_u(i) - f_u(j)).
template <typename T>
double bpr_loss(const ForwardState<T>& state, std::span<const TrainTriple> triples) {
  double loss = 0.0;
  for (const auto& t : triples) {
    const double x = static_cast<double>(score(state, t.user, t.pos)) - static_cast<double>(score(state, t.user, t.neg));
    loss += softplus_neg(x);
  }
  return loss;
}

template <typename T>
struct Gradients {
  Matrix<T> user;
  Matrix<T> item;
  Matrix<T> weight;  // empty when the head is not trained
  Vector<T> bias;

  bool has_head() const { return weight.size() > 0; }
};

// dL/d(final_user), dL/d(final_item) for the BPR sum.
template <typename T>
std::pair<Matrix<T>, Matrix<T>> bpr_output_grads(const ForwardState<T>& state,
                                                 std::span<const TrainTriple> triples) {
  Matrix<T> gu = Matrix<T>::Zero(state.final_user.rows(), state.final_user.cols());
  Matrix<T> gi = Matrix<T>::Zero(state.final_item.rows(), state.final_item.cols());
  for (const auto& t : triples) {
    const double x = static_cast<double>(score(state, t.user, t.pos)) - static_cast<double>(score(state, t.user, t.neg));
    const T w = static_cast<T>(sigmoid(-x));  // -dL/dx
    gu.row(t.user).noalias() -= w * (state.final_item.row(t.pos) - state.final_item.row(t.neg));
    gi.row(t.pos).noalias() -= w * state.final_user.row(t.user);
    gi.row(t.neg).noalias() += w * state.final_user.row(t.user);
  }
  return {std::move(gu), std::move(gi)};
}

inline bool trains_head(const ModelConfig& config) { return config.train_projection && config.beta != 0.0; }

// Reverse pass of forward() given gradients at the readout.
template <typename T>
Gradients<T> backward(const ModelParams<T>& params, const BipartiteGraph& graph,
                      const SemanticInput<T>& input, const ForwardState<T>& state,
                      const Matrix<T>& grad_final_user, const Matrix<T>& grad_final_item) {
  const auto& cfg = params.config;
  const T scale = readout_scale<T>(cfg);
  const T a = static_cast<T>(cfg.alpha);
  const T ab = static_cast<T>(cfg.alpha * cfg.beta);
  const bool semantic_active = state.semantic.size() > 0;
  const bool head_grad = semantic_active && trains_head(cfg);

  Matrix<T> gu = scale * grad_final_user;
  Matrix<T> gi = scale * grad_final_item;
  Matrix<T> gs;
  if (head_grad) gs = Matrix<T>::Zero(state.semantic.rows(), state.semantic.cols());

  for (std::size_t layer = cfg.n_layers; layer-- > 0;) {
    // gu/gi hold dL/d(layer + 1); walk back to dL/d(layer).
    Matrix<T> prev_u = scale * grad_final_user;
    Matrix<T> prev_i = scale * grad_final_item;
    for (Index i = 0; i < graph.n_items(); ++i) {
      const auto nbrs = graph.item_neighbors(i);
      const auto norms = graph.item_norms(i);
      auto row = prev_i.row(i);
      for (std::size_t k = 0; k < nbrs.size(); ++k) row.noalias() += static_cast<T>(norms[k]) * gu.row(nbrs[k]);
    }
    for (Index u = 0; u < graph.n_users(); ++u) {
      const auto nbrs = graph.user_neighbors(u);
      const auto norms = graph.user_norms(u);
      auto row = prev_u.row(u);
      for (std::size_t k = 0; k < nbrs.size(); ++k) row.noalias() += (a * static_cast<T>(norms[k])) * gi.row(nbrs[k]);
    }
    if (head_grad && injects_at(cfg, layer)) {
      for (Index i = 0; i < graph.n_items(); ++i) {
        const double sum = graph.item_norm_sum(i);
        if (sum != 0.0) gs.row(i).noalias() += (ab * static_cast<T>(sum)) * gi.row(i);
      }
    }
    gu = std::move(prev_u);
    gi = std::move(prev_i);
  }

  Gradients<T> grads;
  grads.user = std::move(gu);
  grads.item = std::move(gi);
  if (head_grad) {
    // Rectifier subgradient is 0 at 0; uncovered rows have zero pre-activation.
    const Matrix<T> gz = (state.semantic_pre.array() > T(0)).select(gs.array(), T(0)).matrix();
    grads.weight = gz.transpose() * input.raw;
    grads.bias = gz.colwise().sum().transpose();
  }
  return grads;
}

template <typename T>
struct LossAndGrad {
  double loss = 0.0;  // BPR + optional L2
  Gradients<T> grads;
};

template <typename T>
LossAndGrad<T> loss_and_gradients(const ModelParams<T>& params, const BipartiteGraph& graph,
                                  const SemanticInput<T>& input, std::span<const TrainTriple> triples,
                                  double l2 = 0.0) {
  const auto state = forward(params, graph, input);
  LossAndGrad<T> out;
  out.loss = bpr_loss(state, triples);
  auto [gu, gi] = bpr_output_grads(state, triples);
  out.grads = backward(params, graph, input, state, gu, gi);
  if (l2 > 0.0) {
    const T lam = static_cast<T>(l2);
    for (const auto& t : triples) {
      out.loss += 0.5 * l2 *
                  static_cast<double>(params.user_emb.row(t.user).squaredNorm() +
                                      params.item_emb.row(t.pos).squaredNorm() +
                                      params.item_emb.row(t.neg).squaredNorm());
      out.grads.user.row(t.user) += lam * params.user_emb.row(t.user);
      out.grads.item.row(t.pos) += lam * params.item_emb.row(t.pos);
      out.grads.item.row(t.neg) += lam * params.item_emb.row(t.neg);
    }
  }
  return out;
}

// Bias-corrected Adam over the four parameter blocks.
template <typename T>
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const ModelParams<T>& params)
      : m_user_(Matrix<T>::Zero(params.user_emb.rows(), params.user_emb.cols())),
        v_user_(m_user_),
        m_item_(Matrix<T>::Zero(params.item_emb.rows(), params.item_emb.cols())),
        v_item_(m_item_),
        m_weight_(Matrix<T>::Zero(params.head.weight.rows(), params.head.weight.cols())),
        v_weight_(m_weight_),
        m_bias_(Vector<T>::Zero(params.head.bias.size())),
        v_bias_(m_bias_) {}

  std::size_t steps() const noexcept { return step_; }

  void apply(ModelParams<T>& params, const Gradients<T>& grads, const TrainConfig& cfg) {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step_));
    update(params.user_emb, grads.user, m_user_, v_user_, cfg, c1, c2);
    update(params.item_emb, grads.item, m_item_, v_item_, cfg, c1, c2);
    if (grads.has_head()) {
      update(params.head.weight, grads.weight, m_weight_, v_weight_, cfg, c1, c2);
      update(params.head.bias, grads.bias, m_bias_, v_bias_, cfg, c1, c2);
    }
  }

  const Matrix<T>& user_first_moment() const { return m_user_; }

 private:
  template <typename P>
  static void update(P& param, const P& grad, P& m, P& v, const TrainConfig& cfg, double c1, double c2) {
    const T b1 = static_cast<T>(cfg.adam_beta1), b2 = static_cast<T>(cfg.adam_beta2);
    m.array() = b1 * m.array() + (T(1) - b1) * grad.array();
    v.array() = b2 * v.array() + (T(1) - b2) * grad.array().square();
    const T lr = static_cast<T>(cfg.learning_rate);
    const T eps = static_cast<T>(cfg.adam_epsilon);
    param.array() -= lr * (m.array() / static_cast<T>(c1)) /
                     ((v.array() / static_cast<T>(c2)).sqrt() + eps);
  }

  std::size_t step_ = 0;
  Matrix<T> m_user_, v_user_, m_item_, v_item_, m_weight_, v_weight_;
  Vector<T> m_bias_, v_bias_;
};

template <typename T>
void check_finite(const Gradients<T>& g) {
  if (!g.user.allFinite()) throw NumericError("non-finite gradient in user embeddings");
  if (!g.item.allFinite()) throw NumericError("non-finite gradient in item embeddings");
  if (g.has_head() && !g.weight.allFinite()) throw NumericError("non-finite gradient in projection weights");
  if (g.has_head() && !g.bias.allFinite()) throw NumericError("non-finite gradient in projection bias");
}

// One Adam step on `batch`. Returns the batch loss before the update.
template <typename T>
double grad_step(ModelParams<T>& params, const BipartiteGraph& graph, const SemanticInput<T>& input,
                 std::span<const TrainTriple> batch, AdamState<T>& adam, const TrainConfig& cfg) {
  if (batch.empty()) throw DomainError("grad_step: empty batch");
  auto lg = loss_and_gradients(params, graph, input, batch, cfg.l2);
  check_finite(lg.grads);
  if (!std::isfinite(lg.loss)) throw NumericError("training loss is not finite");
  adam.apply(params, lg.grads, cfg);
  return lg.loss;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean BPR loss per triple over the epoch
  std::optional<double> val_metric;
  double seconds = 0.0;
};

template <typename T>
struct FitResult {
  ModelParams<T> params;  // best validation checkpoint
  std::vector<EpochRecord> history;
  std::optional<std::size_t> best_epoch;
  std::optional<double> best_metric;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

template <typename T>
FitResult<T> fit(const Dataset& dataset, const BipartiteGraph& graph, const SemanticEmbeddingStore& store,
                 const ModelConfig& model_config, const TrainConfig& train_config,
                 const EpochCallback& on_epoch = {}) {
  train_config.validate();
  if (store.n_items() != dataset.n_items) throw DomainError("fit: embedding store does not match dataset");
  const SemanticInput<T> input(store);
  FitResult<T> result;
  result.params = ModelParams<T>::init(model_config, dataset.n_users, dataset.n_items, store.dim_raw,
                                       train_config.seed);
  if (train_config.max_epochs == 0) return result;

  const auto train_items = dataset.items_by_user(Split::kTrain);
  const bool validate = !dataset.val.empty();
  const std::size_t kval[] = {train_config.eval_metric.k};
  std::mt19937_64 rng(train_config.seed ^ 0x9E3779B97F4A7C15ULL);
  AdamState<T> adam(result.params);
  ModelParams<T> params = result.params;
  std::vector<Interaction> order = dataset.train;
  std::vector<TrainTriple> batch;
  batch.reserve(train_config.batch_size);
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < train_config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
      const auto stop = std::min(order.size(), start + train_config.batch_size);
      batch.clear();
      for (auto p = start; p < stop; ++p) {
        const auto& r = order[p];
        batch.push_back({r.user, r.item, sample_negative(r.user, std::span<const Index>(train_items[r.user]),
                                                         dataset.n_items, rng)});
      }
      loss_sum += grad_step(params, graph, input, batch, adam, train_config);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    bool improved = !validate;
    if (validate) {
      const auto report = evaluate(forward(params, graph, input), dataset, Split::kVal, kval);
      rec.val_metric = report.get(train_config.eval_metric);
      improved = !result.best_metric || *rec.val_metric > *result.best_metric;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (improved) {
      result.params = params;
      result.best_epoch = epoch;
      result.best_metric = rec.val_metric;
      since_best = 0;
    } else if (++since_best >= train_config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace p4r
