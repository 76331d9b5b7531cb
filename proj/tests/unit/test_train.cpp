#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "p4r/train.hpp"

using namespace p4r;

namespace {

ForwardState<double> fixed_scores(std::initializer_list<double> items) {
  ForwardState<double> st;
  st.final_user = Matrix<double>::Ones(1, 1);
  st.final_item.resize(static_cast<Eigen::Index>(items.size()), 1);
  Eigen::Index r = 0;
  for (double v : items) st.final_item(r++, 0) = v;
  return st;
}

// Users 0,1 share items {0,1}; user 2 holds {2,3}. Val/test are empty.
Dataset block_dataset() {
  return fixtures::dataset_from_edges(3, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 2}, {2, 3}});
}

// Two blocks of users and items with a held-out item per user in val.
Dataset clustered_dataset(std::mt19937_64& rng) {
  const std::size_t n = 24, m = 30;
  std::vector<oracle::Edge> edges;
  for (std::uint32_t u = 0; u < n; ++u)
    for (std::uint32_t i = 0; i < m; ++i)
      if ((u % 2) == (i % 2) && rng() % 2 == 0) edges.emplace_back(u, i);
  auto ds = fixtures::dataset_from_edges(n, m, edges);
  ds.train.clear();
  std::vector<int> seen(n, 0);
  for (auto [u, i] : edges) {
    if (seen[u]++ == 1) {
      ds.val.push_back({u, i, 5});
    } else {
      ds.train.push_back({u, i, 5});
    }
  }
  return ds;
}

}  // namespace

TEST_CASE("sample_negative with a single candidate") {
  std::mt19937_64 rng(1);
  const std::vector<Index> seen{0};
  for (int k = 0; k < 100; ++k) CHECK(sample_negative(0, std::span<const Index>(seen), 2, rng) == 1);
}

TEST_CASE("sample_negative is uniform over unseen items") {
  std::mt19937_64 rng(2);
  const std::vector<Index> seen{0};
  std::array<int, 4> counts{};
  const int draws = 30000;
  for (int k = 0; k < draws; ++k) ++counts[sample_negative(0, std::span<const Index>(seen), 4, rng)];
  CHECK(counts[0] == 0);
  const double p = 1.0 / 3.0, sigma = std::sqrt(draws * p * (1 - p));
  double chi2 = 0.0;
  for (int i = 1; i < 4; ++i) {
    CHECK(std::abs(counts[i] - draws * p) < 3 * sigma);
    chi2 += (counts[i] - draws * p) * (counts[i] - draws * p) / (draws * p);
  }
  // 2 degrees of freedom, 0.999 quantile.
  CHECK(chi2 < 13.82);
}

TEST_CASE("sample_negative with nothing left") {
  std::mt19937_64 rng(3);
  const std::vector<Index> seen{0, 1, 2};
  CHECK_THROWS_AS(sample_negative(0, std::span<const Index>(seen), 3, rng), ValidationError);
}

TEST_CASE("bpr_loss values") {
  const auto st = fixed_scores({0.4, 0.4, 1.4, -2.0});
  const std::vector<TrainTriple> equal{{0, 0, 1}}, diff{{0, 2, 1}}, none;
  CHECK(bpr_loss(st, std::span<const TrainTriple>(equal)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bpr_loss(st, std::span<const TrainTriple>(diff)) == doctest::Approx(0.31326168751822286).epsilon(1e-14));
  CHECK(bpr_loss(st, std::span<const TrainTriple>(none)) == 0.0);

  const std::vector<TrainTriple> many{{0, 0, 1}, {0, 1, 0}, {0, 0, 1}};
  CHECK(bpr_loss(st, std::span<const TrainTriple>(many)) == doctest::Approx(3 * std::log(2.0)));

  // Large margins do not overflow.
  const auto far = fixed_scores({1000.0, -1000.0});
  const std::vector<TrainTriple> win{{0, 0, 1}}, lose{{0, 1, 0}};
  CHECK(bpr_loss(far, std::span<const TrainTriple>(win)) == 0.0);
  CHECK(bpr_loss(far, std::span<const TrainTriple>(lose)) == doctest::Approx(2000.0));
}

TEST_CASE("bpr_loss depends only on score differences") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    auto st = fixed_scores({d(rng), d(rng), d(rng)});
    const std::vector<TrainTriple> t{{0, 0, 1}, {0, 2, 0}, {0, 1, 2}};
    const double before = bpr_loss(st, std::span<const TrainTriple>(t));
    CHECK(before >= 0.0);
    st.final_item.array() += d(rng);
    CHECK(bpr_loss(st, std::span<const TrainTriple>(t)) == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const auto r = gradcheck::check(gradcheck::random_instance(rng));
    CHECK(r.user < 1e-4);
    CHECK(r.item < 1e-4);
    CHECK(r.weight < 1e-4);
    CHECK(r.bias < 1e-4);
  }
}

TEST_CASE("K = 0 user gradient has the closed form") {
  std::mt19937_64 rng(5);
  ModelParams<double> p;
  p.config.dim = 3;
  p.config.n_layers = 0;
  p.config.beta = 0.0;
  p.user_emb = Matrix<double>::Random(2, 3);
  p.item_emb = Matrix<double>::Random(3, 3);
  const auto g = fixtures::graph_from_edges(2, 3, {{0, 0}, {1, 2}});
  const std::vector<TrainTriple> t{{1, 0, 2}};
  const auto lg = loss_and_gradients(p, g, SemanticInput<double>{}, std::span<const TrainTriple>(t));
  const double x = p.user_emb.row(1).dot(p.item_emb.row(0) - p.item_emb.row(2));
  const Eigen::RowVectorXd expect = -sigmoid(-x) * (p.item_emb.row(0) - p.item_emb.row(2));
  CHECK((lg.grads.user.row(1) - expect).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(lg.grads.user.row(0).isZero());
  CHECK_FALSE(lg.grads.has_head());
}

TEST_CASE("zero-gradient batch leaves parameters unchanged") {
  ModelConfig cfg;
  cfg.dim = 4;
  auto params = ModelParams<double>::init(cfg, 2, 3, 5, 7);
  const auto before = params;
  const auto g = fixtures::graph_from_edges(2, 3, {{0, 0}, {1, 1}, {1, 2}});
  SemanticInput<double> input;
  input.raw = Matrix<double>::Random(3, 5);
  input.coverage.assign(3, 1);
  // pos == neg: the pair's contributions cancel exactly.
  const std::vector<TrainTriple> batch{{0, 1, 1}, {1, 2, 2}};
  AdamState<double> adam(params);
  TrainConfig tc;
  const double loss = grad_step(params, g, input, std::span<const TrainTriple>(batch), adam, tc);
  CHECK(loss == doctest::Approx(2 * std::log(2.0)));
  CHECK(params.user_emb == before.user_emb);
  CHECK(params.item_emb == before.item_emb);
  CHECK(params.head.weight == before.head.weight);
  CHECK(params.head.bias == before.head.bias);
  CHECK(adam.steps() == 1);
  CHECK(adam.user_first_moment().isZero());
}

TEST_CASE("lr = 0 repeats the same loss") {
  ModelConfig cfg;
  cfg.dim = 4;
  auto params = ModelParams<double>::init(cfg, 3, 4, 2, 1);
  const auto g = fixtures::graph_from_edges(3, 4, {{0, 0}, {1, 1}, {2, 2}, {2, 3}});
  SemanticInput<double> input;
  input.raw = Matrix<double>::Random(4, 2);
  input.coverage.assign(4, 1);
  const std::vector<TrainTriple> batch{{0, 0, 3}, {2, 2, 1}};
  AdamState<double> adam(params);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  const double a = grad_step(params, g, input, std::span<const TrainTriple>(batch), adam, tc);
  const double b = grad_step(params, g, input, std::span<const TrainTriple>(batch), adam, tc);
  CHECK(a == b);
}

TEST_CASE("one Adam step moves each coordinate by about lr") {
  ModelConfig cfg;
  cfg.dim = 2;
  cfg.n_layers = 0;
  cfg.beta = 0.0;
  auto params = ModelParams<double>::init(cfg, 1, 2, 0, 3);
  const auto before = params.user_emb;
  const auto g = fixtures::graph_from_edges(1, 2, {{0, 0}});
  const std::vector<TrainTriple> batch{{0, 0, 1}};
  AdamState<double> adam(params);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  grad_step(params, g, SemanticInput<double>{}, std::span<const TrainTriple>(batch), adam, tc);
  const auto moved = (params.user_emb - before).cwiseAbs();
  CHECK(moved.maxCoeff() == doctest::Approx(0.01).epsilon(1e-4));
}

TEST_CASE("non-finite gradients name the block") {
  ModelConfig cfg;
  cfg.dim = 2;
  auto params = ModelParams<double>::init(cfg, 2, 2, 0, 3);
  params.config.beta = 0.0;
  params.user_emb(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto g = fixtures::graph_from_edges(2, 2, {{0, 0}, {1, 1}});
  const std::vector<TrainTriple> batch{{0, 0, 1}};
  AdamState<double> adam(params);
  CHECK_THROWS_WITH_AS(grad_step(params, g, SemanticInput<double>{}, std::span<const TrainTriple>(batch), adam,
                                 TrainConfig{}),
                       doctest::Contains("embeddings"), NumericError);
  const std::vector<TrainTriple> empty;
  CHECK_THROWS_AS(grad_step(params, g, SemanticInput<double>{}, std::span<const TrainTriple>(empty), adam,
                            TrainConfig{}),
                  DomainError);
}

TEST_CASE("l2 adds the penalty and its gradient") {
  ModelConfig cfg;
  cfg.dim = 3;
  cfg.beta = 0.0;
  const auto params = ModelParams<double>::init(cfg, 2, 3, 0, 11);
  const auto g = fixtures::graph_from_edges(2, 3, {{0, 0}, {1, 1}});
  const std::vector<TrainTriple> t{{0, 0, 2}};
  const auto plain = loss_and_gradients(params, g, SemanticInput<double>{}, std::span<const TrainTriple>(t));
  const auto reg = loss_and_gradients(params, g, SemanticInput<double>{}, std::span<const TrainTriple>(t), 0.1);
  const double pen = 0.05 * (params.user_emb.row(0).squaredNorm() + params.item_emb.row(0).squaredNorm() +
                             params.item_emb.row(2).squaredNorm());
  CHECK(reg.loss == doctest::Approx(plain.loss + pen).epsilon(1e-14));
  CHECK((reg.grads.user.row(0) - plain.grads.user.row(0) - 0.1 * params.user_emb.row(0)).cwiseAbs().maxCoeff() <
        1e-15);
  CHECK(reg.grads.user.row(1) == plain.grads.user.row(1));
}

TEST_CASE("fit with zero epochs returns the initial parameters") {
  const auto ds = block_dataset();
  const auto g = build_graph(ds);
  ModelConfig mc;
  mc.dim = 8;
  mc.beta = 0.0;
  TrainConfig tc;
  tc.max_epochs = 0;
  tc.seed = 9;
  const auto res = fit<float>(ds, g, SemanticEmbeddingStore::empty(4, 0), mc, tc);
  CHECK(res.history.empty());
  const auto init = ModelParams<float>::init(mc, 3, 4, 0, 9);
  CHECK(res.params.user_emb == init.user_emb);
  CHECK(res.params.item_emb == init.item_emb);
}

TEST_CASE("fit on the block dataset lowers the loss and is deterministic") {
  const auto ds = block_dataset();
  const auto g = build_graph(ds);
  ModelConfig mc;
  mc.dim = 8;
  mc.beta = 0.0;
  TrainConfig tc;
  tc.max_epochs = 200;
  tc.seed = 4;
  tc.learning_rate = 1e-2;
  const auto a = fit<float>(ds, g, SemanticEmbeddingStore::empty(4, 0), mc, tc);
  const auto b = fit<float>(ds, g, SemanticEmbeddingStore::empty(4, 0), mc, tc);
  REQUIRE(a.history.size() == 200);
  CHECK(a.history.back().train_loss < a.history.front().train_loss);
  REQUIRE(b.history.size() == a.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) CHECK(a.history[e].train_loss == b.history[e].train_loss);
  CHECK(a.params.user_emb == b.params.user_emb);
  CHECK(a.params.item_emb == b.params.item_emb);
  CHECK_FALSE(a.best_metric.has_value());
}

TEST_CASE("early stopping keeps the best validation checkpoint") {
  std::mt19937_64 rng(6);
  const auto ds = clustered_dataset(rng);
  const auto g = build_graph(ds);
  ModelConfig mc;
  mc.dim = 8;
  mc.beta = 0.0;
  TrainConfig tc;
  tc.max_epochs = 80;
  tc.patience = 3;
  tc.learning_rate = 5e-2;
  tc.batch_size = 64;
  tc.seed = 1;
  std::size_t callbacks = 0;
  const auto res = fit<double>(ds, g, SemanticEmbeddingStore::empty(ds.n_items, 0), mc, tc,
                               [&](const EpochRecord&) { ++callbacks; });
  REQUIRE(res.best_epoch.has_value());
  CHECK(callbacks == res.history.size());
  double running = -1.0;
  for (const auto& rec : res.history) {
    REQUIRE(rec.val_metric.has_value());
    if (rec.epoch <= *res.best_epoch) running = std::max(running, *rec.val_metric);
  }
  CHECK(*res.best_metric == running);
  for (const auto& rec : res.history) CHECK(*rec.val_metric <= *res.best_metric);
  CHECK(res.history.size() <= *res.best_epoch + tc.patience + 1);
  if (res.history.size() < tc.max_epochs) CHECK(res.history.size() == *res.best_epoch + tc.patience + 1);

  const std::size_t k10[] = {10};
  const auto report = evaluate(forward(res.params, g, SemanticInput<double>{}), ds, Split::kVal, k10);
  CHECK(report.get(Metric::kNdcg, 10) == *res.best_metric);
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = {};
  tc.learning_rate = -1;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = {};
  tc.l2 = -0.5;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
}
