#pragma once

// Full-ranking top-K metrics and ROUGE-1.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "p4r/corpus.hpp"
#include "p4r/model.hpp"
#include "p4r/semantic.hpp"

namespace p4r {

// `ranked` is best-first; `relevant` must be sorted ascending and non-empty.
double recall_at_k(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t k);
double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t k);
double mrr_at_k(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t k);
double hit_at_k(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t k);

enum class Metric { kRecall, kNdcg, kMrr, kHit };

const char* metric_name(Metric metric);

struct MetricKey {
  Metric metric = Metric::kNdcg;
  std::size_t k = 10;
  std::string str() const;
};

// "ndcg@10" -> {kNdcg, 10}.
MetricKey parse_metric_key(const std::string& text);

struct MetricReport {
  std::vector<std::size_t> ks;
  // Indexed like `ks`.
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::vector<double> mrr;
  std::vector<double> hit;
  std::size_t n_users_evaluated = 0;

  double get(Metric metric, std::size_t k) const;
  double get(const MetricKey& key) const { return get(key.metric, key.k); }
  // (name@k, value), metric-major in the order recall, ndcg, mrr, hit.
  std::vector<std::pair<std::string, double>> rows() const;
};

// Fills one score per item for `user`.
using ScoreFn = std::function<void(Index user, std::span<double> scores)>;

// Candidates are all items minus the user's train items (and val items when
// evaluating test). Users with no relevant items in `split` are skipped.
MetricReport evaluate_scores(const Dataset& dataset, Split split, std::span<const std::size_t> ks,
                             const ScoreFn& score_fn);

// Ranks each user's candidates by a seeded uniform shuffle.
MetricReport evaluate_random(const Dataset& dataset, Split split, std::span<const std::size_t> ks,
                             std::uint64_t seed);

// Ranks candidates by cosine similarity to the user's mean raw profile vector.
MetricReport evaluate_wt(const SemanticEmbeddingStore& store, const Dataset& dataset, Split split,
                         std::span<const std::size_t> ks);

template <typename T>
MetricReport evaluate(const ForwardState<T>& state, const Dataset& dataset, Split split,
                      std::span<const std::size_t> ks) {
  return evaluate_scores(dataset, split, ks, [&](Index user, std::span<double> out) {
    const Vector<T> s = user_scores(state, user);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(s[static_cast<Eigen::Index>(i)]);
  });
}

// Cosine between the mean raw vector of the user's covered train items and
// `item`'s raw vector; 0 when either side is uncovered or degenerate.
double p4r_wt_score(const SemanticEmbeddingStore& store, std::span<const Index> user_train_items,
                    Index item);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Lowercased maximal alphanumeric runs. Bytes >= 0x80 count as word
// characters so UTF-8 words stay whole.
std::vector<std::string> rouge_tokens(std::string_view text);

RougeScore rouge1(std::string_view reference, std::string_view candidate);

enum class RougeAggregate { kMean, kMicro };

struct RougePair {
  std::string_view reference;
  std::string_view candidate;
};

// kMean averages the per-pair scores; kMicro pools overlaps and lengths.
RougeScore rouge1_corpus(std::span<const RougePair> pairs, RougeAggregate aggregate);

}  // namespace p4r
