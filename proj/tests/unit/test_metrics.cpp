#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "p4r/metrics.hpp"
#include "rouge_fixtures.hpp"

using namespace p4r;

namespace {

using List = std::vector<Index>;

double recall(const List& r, const List& rel, std::size_t k) { return recall_at_k(r, rel, k); }
double ndcg(const List& r, const List& rel, std::size_t k) { return ndcg_at_k(r, rel, k); }
double mrr(const List& r, const List& rel, std::size_t k) { return mrr_at_k(r, rel, k); }
double hit(const List& r, const List& rel, std::size_t k) { return hit_at_k(r, rel, k); }

struct Instance {
  std::size_t n_users, n_items;
  std::vector<oracle::Edge> train, val, test;
  oracle::Dense scores;
};

Dataset to_dataset(const Instance& in) {
  auto ds = fixtures::dataset_from_edges(in.n_users, in.n_items, in.train);
  for (auto [u, i] : in.val) ds.val.push_back({u, i, 5});
  for (auto [u, i] : in.test) ds.test.push_back({u, i, 5});
  return ds;
}

// Every (user, item) pair lands in one of train/val/test/unobserved; integer
// scores on a small range force ties.
Instance random_instance(std::mt19937_64& rng) {
  Instance in;
  in.n_users = 1 + rng() % 5;
  in.n_items = 2 + rng() % 7;
  for (std::uint32_t u = 0; u < in.n_users; ++u) {
    for (std::uint32_t i = 0; i < in.n_items; ++i) {
      switch (rng() % 5) {
        case 0: in.train.emplace_back(u, i); break;
        case 1: in.val.emplace_back(u, i); break;
        case 2: in.test.emplace_back(u, i); break;
        default: break;
      }
    }
  }
  in.scores = oracle::zeros(in.n_users, in.n_items);
  for (auto& row : in.scores)
    for (auto& x : row) x = static_cast<double>(rng() % 4);
  return in;
}

MetricReport run(const Instance& in, const Dataset& ds, Split split, const std::vector<std::size_t>& ks) {
  return evaluate_scores(ds, split, ks, [&](Index u, std::span<double> out) {
    std::copy(in.scores[u].begin(), in.scores[u].end(), out.begin());
  });
}

}  // namespace

TEST_CASE("recall examples") {
  CHECK(recall({3, 1, 2}, {1, 3}, 3) == 1.0);
  CHECK(recall({4, 1, 2, 7}, {1, 7}, 3) == 0.5);
  CHECK(recall({4, 5}, {1, 7}, 2) == 0.0);
}

TEST_CASE("ndcg examples") {
  CHECK(ndcg({5, 1, 2}, {5}, 10) == 1.0);
  CHECK(ndcg({1, 2, 5, 3}, {5}, 10) == 0.5);
  CHECK(ndcg({1, 2}, {5}, 10) == 0.0);
  // Two relevant, at ranks 1 and 3.
  const double expect = (1.0 + 0.5) / (1.0 + 1.0 / std::log2(3.0));
  CHECK(ndcg({7, 0, 9}, {7, 9}, 3) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("mrr examples") {
  CHECK(mrr({2, 0}, {2}, 5) == 1.0);
  CHECK(mrr({0, 1, 3, 2}, {2}, 5) == 0.25);
  CHECK(mrr({0, 1, 3, 2}, {2}, 3) == 0.0);
}

TEST_CASE("hit examples and averaging") {
  CHECK(hit({0, 1}, {1}, 2) == 1.0);
  CHECK(hit({0, 1}, {2}, 2) == 0.0);

  // Two users, one relevant item each.
  Instance both{2, 3, {}, {}, {{0, 0}, {1, 1}}, {{1, 0, 0}, {0, 1, 0}}};
  const std::vector<std::size_t> k1{1};
  CHECK(run(both, to_dataset(both), Split::kTest, k1).get(Metric::kHit, 1) == 1.0);
  Instance one{2, 3, {}, {}, {{0, 0}, {1, 2}}, {{1, 0, 0}, {0, 1, 0}}};
  const auto r = run(one, to_dataset(one), Split::kTest, k1);
  CHECK(r.get(Metric::kHit, 1) == 0.5);
  CHECK(r.n_users_evaluated == 2);
}

TEST_CASE("metrics match the oracle on every relevant subset") {
  const std::size_t n = 8;
  std::mt19937_64 rng(10);
  List ranked(n);
  std::iota(ranked.begin(), ranked.end(), 0);
  for (int perm = 0; perm < 6; ++perm) {
    std::shuffle(ranked.begin(), ranked.end(), rng);
    const std::vector<std::uint32_t> oranked(ranked.begin(), ranked.end());
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      List rel;
      std::set<std::uint32_t> orel;
      for (Index i = 0; i < n; ++i)
        if (mask & (1u << i)) {
          rel.push_back(i);
          orel.insert(i);
        }
      double prev[4] = {-1, -1, -1, -1};
      for (std::size_t k = 1; k <= n; ++k) {
        const auto m = oracle::metrics_at(oranked, orel, k);
        const double got[4] = {recall(ranked, rel, k), ndcg(ranked, rel, k), mrr(ranked, rel, k), hit(ranked, rel, k)};
        CHECK(got[0] == m.recall);
        CHECK(got[1] == m.ndcg);
        CHECK(got[2] == m.mrr);
        CHECK(got[3] == m.hit);
        CHECK(got[3] >= got[0]);
        // ndcg normalizes by the ideal at k, so only the others are monotone.
        for (int j : {0, 2, 3}) {
          CHECK(got[j] >= prev[j]);
          prev[j] = got[j];
        }
        // ndcg = 1 iff the top min(k, |rel|) are all relevant.
        bool top_ok = true;
        for (std::size_t p = 0; p < std::min(k, rel.size()); ++p) top_ok = top_ok && orel.count(ranked[p]);
        CHECK((got[1] == 1.0) == top_ok);
      }
    }
  }
}

TEST_CASE("single relevant item ranked first") {
  Instance in{1, 4, {{0, 3}}, {}, {{0, 1}}, {{0, 9, 1, 5}}};
  const std::vector<std::size_t> ks{1, 2, 3};
  const auto r = run(in, to_dataset(in), Split::kTest, ks);
  for (const auto& [name, v] : r.rows()) CHECK_MESSAGE(v == 1.0, name);
  CHECK(r.rows().size() == 12);
}

TEST_CASE("evaluate matches the brute-force oracle") {
  std::mt19937_64 rng(123);
  const std::vector<std::size_t> ks{1, 2, 3, 4, 5, 6, 7, 8};
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto in = random_instance(rng);
    const auto ds = to_dataset(in);
    for (Split split : {Split::kVal, Split::kTest}) {
      const auto& target = split == Split::kVal ? in.val : in.test;
      const auto expect =
          oracle::evaluate_brute(in.n_users, in.scores, in.train, in.val, target, split == Split::kTest, ks);
      const auto got = run(in, ds, split, ks);
      for (std::size_t j = 0; j < ks.size(); ++j) {
        CHECK(got.recall[j] == expect[0][j]);
        CHECK(got.ndcg[j] == expect[1][j]);
        CHECK(got.mrr[j] == expect[2][j]);
        CHECK(got.hit[j] == expect[3][j]);
      }
      ++checked;
    }
  }
  CHECK(checked == 600);
}

TEST_CASE("evaluate is invariant under item relabeling") {
  std::mt19937_64 rng(77);
  const std::vector<std::size_t> ks{1, 3, 5};
  for (int trial = 0; trial < 50; ++trial) {
    auto in = random_instance(rng);
    // Distinct scores so relabeling cannot change tie order.
    for (auto& row : in.scores)
      for (auto& x : row) x = std::uniform_real_distribution<double>(0, 1)(rng);
    std::vector<std::uint32_t> perm(in.n_items);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Instance p = in;
    for (auto* part : {&p.train, &p.val, &p.test})
      for (auto& e : *part) e.second = perm[e.second];
    for (std::size_t u = 0; u < in.n_users; ++u)
      for (std::size_t i = 0; i < in.n_items; ++i) p.scores[u][perm[i]] = in.scores[u][i];
    const auto a = run(in, to_dataset(in), Split::kTest, ks);
    const auto b = run(p, to_dataset(p), Split::kTest, ks);
    CHECK(a.rows() == b.rows());
  }
}

TEST_CASE("evaluate on model state") {
  ForwardState<double> st;
  st.final_user = Matrix<double>::Identity(2, 2);
  st.final_item.resize(3, 2);
  st.final_item << 1, 0, 0, 1, 0.5, 0.5;
  Instance in{2, 3, {}, {}, {{0, 0}, {1, 2}}, {}};
  const auto ds = to_dataset(in);
  const std::vector<std::size_t> ks{1, 2};
  const auto r = evaluate(st, ds, Split::kTest, ks);
  CHECK(r.get(Metric::kHit, 1) == 0.5);
  CHECK(r.get(Metric::kMrr, 2) == 0.75);
}

TEST_CASE("random mode") {
  std::mt19937_64 rng(5);
  const auto in = random_instance(rng);
  const auto ds = to_dataset(in);
  const std::vector<std::size_t> ks{in.n_items};
  const auto r = evaluate_random(ds, Split::kTest, ks, 17);
  if (r.n_users_evaluated > 0) CHECK(r.get(Metric::kRecall, in.n_items) == 1.0);
  const std::vector<std::size_t> small{1, 2};
  CHECK(evaluate_random(ds, Split::kVal, small, 3).rows() == evaluate_random(ds, Split::kVal, small, 3).rows());
}

TEST_CASE("cutoff validation") {
  Instance in{1, 2, {}, {}, {{0, 0}}, {{0, 1}}};
  const auto ds = to_dataset(in);
  const std::vector<std::size_t> none, zero{0};
  CHECK_THROWS_AS(evaluate_random(ds, Split::kTest, none, 1), DomainError);
  CHECK_THROWS_AS(evaluate_random(ds, Split::kTest, zero, 1), DomainError);
}

TEST_CASE("metric keys") {
  const auto k = parse_metric_key("recall@20");
  CHECK(k.metric == Metric::kRecall);
  CHECK(k.k == 20);
  CHECK(parse_metric_key("ndcg@10").str() == "ndcg@10");
  CHECK_THROWS_AS(parse_metric_key("ndcg10"), ValidationError);
  CHECK_THROWS_AS(parse_metric_key("auc@5"), ValidationError);
  CHECK_THROWS_AS(parse_metric_key("mrr@0"), ValidationError);
  CHECK_THROWS_AS(parse_metric_key("hit@3x"), ValidationError);
}

TEST_CASE("wt cosine scores") {
  const auto ds = fixtures::dataset_from_edges(1, 4, {{0, 0}});
  auto store = SemanticEmbeddingStore::empty(4, 2);
  store.vectors << 1, 0, 1, 1, 0, 3, 4, 0;
  store.coverage = {1, 1, 1, 1};
  const List train{0};
  CHECK(p4r_wt_score(store, train, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(p4r_wt_score(store, train, 2) == 0.0);
  CHECK(p4r_wt_score(store, train, 3) == doctest::Approx(1.0));
  store.coverage[0] = 0;
  CHECK(p4r_wt_score(store, train, 1) == 0.0);
  store.coverage = {1, 0, 1, 1};
  CHECK(p4r_wt_score(store, train, 1) == 0.0);
}

TEST_CASE("wt mode ranks by cosine") {
  auto ds = fixtures::dataset_from_edges(1, 4, {{0, 0}});
  ds.test.push_back({0, 3, 5});
  auto store = SemanticEmbeddingStore::empty(4, 2);
  store.vectors << 1, 0, 1, 1, 0, 3, 4, 0.1;
  store.coverage = {1, 1, 1, 1};
  const std::vector<std::size_t> ks{1};
  CHECK(evaluate_wt(store, ds, Split::kTest, ks).get(Metric::kHit, 1) == 1.0);
  store.coverage[3] = 0;
  CHECK(evaluate_wt(store, ds, Split::kTest, ks).get(Metric::kHit, 1) == 0.0);
}

TEST_CASE("rouge tokens") {
  CHECK(rouge_tokens("Hello, WORLD! 42x") == std::vector<std::string>{"hello", "world", "42x"});
  CHECK(rouge_tokens("  ").empty());
  CHECK(rouge_tokens("na\xc3\xafve") == std::vector<std::string>{"na\xc3\xafve"});
}

TEST_CASE("rouge1 fixtures") {
  for (const auto& p : rouge_fixtures::kPairs) {
    const auto got = rouge1(p.reference, p.candidate);
    const auto want = oracle::rouge_by_hand(p.overlap, p.ref_len, p.cand_len);
    CHECK_MESSAGE(got.precision == want.precision, p.reference);
    CHECK_MESSAGE(got.recall == want.recall, p.reference);
    CHECK_MESSAGE(got.f1 == want.f1, p.reference);
  }
  const auto abc = rouge1("a b c", "a b b d");
  CHECK(abc.precision == 0.5);
  CHECK(abc.recall == 2.0 / 3.0);
  CHECK(abc.f1 == doctest::Approx(4.0 / 7.0).epsilon(1e-15));
  const auto same = rouge1("good tacos", "good tacos");
  CHECK(same.f1 == 1.0);
  CHECK(rouge1("one", "two").f1 == 0.0);
}

TEST_CASE("rouge1 recall is 1 when the candidate covers the reference") {
  std::mt19937_64 rng(8);
  const char* words[] = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string ref, cand;
    const auto n = 1 + rng() % 6;
    for (std::size_t k = 0; k < n; ++k) ref += std::string(words[rng() % 5]) + " ";
    cand = ref;
    for (std::size_t k = 0; k < rng() % 4; ++k) cand += std::string(words[rng() % 5]) + " ";
    CHECK(rouge1(ref, cand).recall == 1.0);
  }
}

TEST_CASE("rouge corpus aggregation") {
  const RougePair pairs[] = {{"a b c", "a b b d"}, {"x y", "x y"}};
  const auto mean = rouge1_corpus(pairs, RougeAggregate::kMean);
  CHECK(mean.f1 == doctest::Approx((4.0 / 7.0 + 1.0) / 2.0).epsilon(1e-15));
  CHECK(mean.precision == doctest::Approx(0.75));
  const auto micro = rouge1_corpus(pairs, RougeAggregate::kMicro);
  CHECK(micro.precision == doctest::Approx(4.0 / 6.0));
  CHECK(micro.recall == doctest::Approx(4.0 / 5.0));
  CHECK(rouge1_corpus({}, RougeAggregate::kMean).f1 == 0.0);
}
