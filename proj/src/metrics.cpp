#include "p4r/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <unordered_map>

#include "p4r/error.hpp"

namespace p4r {
namespace {

bool contains(std::span<const Index> sorted, Index item) {
  return std::binary_search(sorted.begin(), sorted.end(), item);
}

std::size_t cutoff(std::span<const Index> ranked, std::size_t k) { return std::min(k, ranked.size()); }

std::vector<Index> merged_exclusions(const std::vector<Index>& a, const std::vector<Index>* b) {
  if (b == nullptr || b->empty()) return a;
  std::vector<Index> out;
  out.reserve(a.size() + b->size());
  std::merge(a.begin(), a.end(), b->begin(), b->end(), std::back_inserter(out));
  return out;
}

std::size_t max_k(std::span<const std::size_t> ks) {
  if (ks.empty()) throw DomainError("evaluate: no cutoffs given");
  if (std::find(ks.begin(), ks.end(), std::size_t{0}) != ks.end()) {
    throw DomainError("evaluate: cutoffs must be >= 1");
  }
  return *std::max_element(ks.begin(), ks.end());
}

class ReportAccumulator {
 public:
  explicit ReportAccumulator(std::span<const std::size_t> ks) {
    report_.ks.assign(ks.begin(), ks.end());
    report_.recall.assign(ks.size(), 0.0);
    report_.ndcg.assign(ks.size(), 0.0);
    report_.mrr.assign(ks.size(), 0.0);
    report_.hit.assign(ks.size(), 0.0);
  }

  void add(std::span<const Index> ranked, std::span<const Index> relevant) {
    for (std::size_t j = 0; j < report_.ks.size(); ++j) {
      const auto k = report_.ks[j];
      report_.recall[j] += recall_at_k(ranked, relevant, k);
      report_.ndcg[j] += ndcg_at_k(ranked, relevant, k);
      report_.mrr[j] += mrr_at_k(ranked, relevant, k);
      report_.hit[j] += hit_at_k(ranked, relevant, k);
    }
    ++report_.n_users_evaluated;
  }

  MetricReport finish() && {
    if (report_.n_users_evaluated > 0) {
      const double n = static_cast<double>(report_.n_users_evaluated);
      for (auto* v : {&report_.recall, &report_.ndcg, &report_.mrr, &report_.hit}) {
        for (auto& x : *v) x /= n;
      }
    }
    return std::move(report_);
  }

 private:
  MetricReport report_;
};

struct EvalLists {
  std::vector<std::vector<Index>> train;
  std::vector<std::vector<Index>> val;
  std::vector<std::vector<Index>> relevant;

  EvalLists(const Dataset& ds, Split split)
      : train(ds.items_by_user(Split::kTrain)),
        val(split == Split::kTest ? ds.items_by_user(Split::kVal) : std::vector<std::vector<Index>>{}),
        relevant(ds.items_by_user(split)) {}

  std::vector<Index> exclusions(Index u) const {
    return merged_exclusions(train[u], val.empty() ? nullptr : &val[u]);
  }
};

std::unordered_map<std::string, std::size_t> token_counts(std::string_view text, std::size_t& total) {
  std::unordered_map<std::string, std::size_t> counts;
  total = 0;
  for (auto& tok : rouge_tokens(text)) {
    ++counts[std::move(tok)];
    ++total;
  }
  return counts;
}

std::size_t clipped_overlap(const std::unordered_map<std::string, std::size_t>& ref,
                            const std::unordered_map<std::string, std::size_t>& cand) {
  std::size_t overlap = 0;
  for (const auto& [tok, n] : cand) {
    if (const auto it = ref.find(tok); it != ref.end()) overlap += std::min(n, it->second);
  }
  return overlap;
}

RougeScore make_score(std::size_t overlap, std::size_t ref_len, std::size_t cand_len) {
  RougeScore s;
  s.precision = cand_len ? static_cast<double>(overlap) / static_cast<double>(cand_len) : 0.0;
  s.recall = ref_len ? static_cast<double>(overlap) / static_cast<double>(ref_len) : 0.0;
  const double denom = s.precision + s.recall;
  s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

}  // namespace

double recall_at_k(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t p = 0; p < cutoff(ranked, k); ++p) hits += contains(relevant, ranked[p]);
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  double dcg = 0.0;
  for (std::size_t p = 0; p < cutoff(ranked, k); ++p) {
    if (contains(relevant, ranked[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  }
  double idcg = 0.0;
  for (std::size_t p = 0; p < std::min(k, relevant.size()); ++p) {
    idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  }
  return dcg / idcg;
}

double mrr_at_k(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t k) {
  for (std::size_t p = 0; p < cutoff(ranked, k); ++p) {
    if (contains(relevant, ranked[p])) return 1.0 / static_cast<double>(p + 1);
  }
  return 0.0;
}

double hit_at_k(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t k) {
  for (std::size_t p = 0; p < cutoff(ranked, k); ++p) {
    if (contains(relevant, ranked[p])) return 1.0;
  }
  return 0.0;
}

const char* metric_name(Metric metric) {
  switch (metric) {
    case Metric::kRecall: return "recall";
    case Metric::kNdcg: return "ndcg";
    case Metric::kMrr: return "mrr";
    case Metric::kHit: return "hit";
  }
  return "?";
}

std::string MetricKey::str() const { return std::string(metric_name(metric)) + "@" + std::to_string(k); }

MetricKey parse_metric_key(const std::string& text) {
  const auto at = text.find('@');
  if (at == std::string::npos) throw ValidationError("metric '" + text + "' must look like ndcg@10");
  const auto name = text.substr(0, at);
  MetricKey key;
  if (name == "recall") key.metric = Metric::kRecall;
  else if (name == "ndcg") key.metric = Metric::kNdcg;
  else if (name == "mrr") key.metric = Metric::kMrr;
  else if (name == "hit") key.metric = Metric::kHit;
  else throw ValidationError("unknown metric '" + name + "'");
  try {
    std::size_t used = 0;
    const auto k = std::stoul(text.substr(at + 1), &used);
    if (used != text.size() - at - 1 || k == 0) throw std::invalid_argument("k");
    key.k = k;
  } catch (const std::logic_error&) {
    throw ValidationError("metric '" + text + "' has an invalid cutoff");
  }
  return key;
}

double MetricReport::get(Metric metric, std::size_t k) const {
  const auto it = std::find(ks.begin(), ks.end(), k);
  if (it == ks.end()) throw DomainError("report has no cutoff @" + std::to_string(k));
  const auto j = static_cast<std::size_t>(it - ks.begin());
  switch (metric) {
    case Metric::kRecall: return recall[j];
    case Metric::kNdcg: return ndcg[j];
    case Metric::kMrr: return mrr[j];
    case Metric::kHit: return hit[j];
  }
  return 0.0;
}

std::vector<std::pair<std::string, double>> MetricReport::rows() const {
  std::vector<std::pair<std::string, double>> out;
  for (auto m : {Metric::kRecall, Metric::kNdcg, Metric::kMrr, Metric::kHit}) {
    for (auto k : ks) out.emplace_back(MetricKey{m, k}.str(), get(m, k));
  }
  return out;
}

MetricReport evaluate_scores(const Dataset& dataset, Split split, std::span<const std::size_t> ks,
                             const ScoreFn& score_fn) {
  const auto kmax = max_k(ks);
  const EvalLists lists(dataset, split);
  ReportAccumulator acc(ks);
  std::vector<double> scores(dataset.n_items);
  std::vector<Index> ranked;
  for (Index u = 0; u < dataset.n_users; ++u) {
    if (lists.relevant[u].empty()) continue;
    score_fn(u, scores);
    const auto exclude = lists.exclusions(u);
    const auto top = top_k_excluding<double>(scores, kmax, exclude);
    ranked.clear();
    for (const auto& s : top) ranked.push_back(s.item);
    acc.add(ranked, lists.relevant[u]);
  }
  return std::move(acc).finish();
}

MetricReport evaluate_random(const Dataset& dataset, Split split, std::span<const std::size_t> ks,
                             std::uint64_t seed) {
  const auto kmax = max_k(ks);
  const EvalLists lists(dataset, split);
  ReportAccumulator acc(ks);
  std::mt19937_64 rng(seed);
  std::vector<Index> cands;
  for (Index u = 0; u < dataset.n_users; ++u) {
    if (lists.relevant[u].empty()) continue;
    const auto exclude = lists.exclusions(u);
    cands.clear();
    for (Index i = 0; i < dataset.n_items; ++i) {
      if (!contains(exclude, i)) cands.push_back(i);
    }
    std::shuffle(cands.begin(), cands.end(), rng);
    if (cands.size() > kmax) cands.resize(kmax);
    acc.add(cands, lists.relevant[u]);
  }
  return std::move(acc).finish();
}

double p4r_wt_score(const SemanticEmbeddingStore& store, std::span<const Index> user_train_items,
                    Index item) {
  if (!store.covered(item) || store.dim_raw == 0) return 0.0;
  Vector<double> mean = Vector<double>::Zero(static_cast<Eigen::Index>(store.dim_raw));
  std::size_t n = 0;
  for (auto i : user_train_items) {
    if (!store.covered(i)) continue;
    mean += store.vectors.row(i).transpose();
    ++n;
  }
  if (n == 0) return 0.0;
  mean /= static_cast<double>(n);
  const auto cand = store.vectors.row(item);
  const double denom = mean.norm() * cand.norm();
  return denom > 0.0 ? cand.dot(mean) / denom : 0.0;
}

MetricReport evaluate_wt(const SemanticEmbeddingStore& store, const Dataset& dataset, Split split,
                         std::span<const std::size_t> ks) {
  if (store.n_items() != dataset.n_items) throw DomainError("evaluate_wt: store does not match dataset");
  const auto train = dataset.items_by_user(Split::kTrain);
  Vector<double> norms = store.vectors.rowwise().norm();
  return evaluate_scores(dataset, split, ks, [&](Index u, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    if (store.dim_raw == 0) return;
    Vector<double> mean = Vector<double>::Zero(static_cast<Eigen::Index>(store.dim_raw));
    std::size_t n = 0;
    for (auto i : train[u]) {
      if (!store.covered(i)) continue;
      mean += store.vectors.row(i).transpose();
      ++n;
    }
    if (n == 0) return;
    mean /= static_cast<double>(n);
    const double mean_norm = mean.norm();
    if (mean_norm == 0.0) return;
    const Vector<double> dots = store.vectors * mean;
    for (Index i = 0; i < out.size(); ++i) {
      const double d = mean_norm * norms[i];
      out[i] = store.covered(i) && d > 0.0 ? dots[i] / d : 0.0;
    }
  });
}

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

RougeScore rouge1(std::string_view reference, std::string_view candidate) {
  std::size_t ref_len = 0, cand_len = 0;
  const auto ref = token_counts(reference, ref_len);
  const auto cand = token_counts(candidate, cand_len);
  return make_score(clipped_overlap(ref, cand), ref_len, cand_len);
}

RougeScore rouge1_corpus(std::span<const RougePair> pairs, RougeAggregate aggregate) {
  if (pairs.empty()) return {};
  if (aggregate == RougeAggregate::kMean) {
    RougeScore mean;
    for (const auto& p : pairs) {
      const auto s = rouge1(p.reference, p.candidate);
      mean.precision += s.precision;
      mean.recall += s.recall;
      mean.f1 += s.f1;
    }
    const double n = static_cast<double>(pairs.size());
    mean.precision /= n;
    mean.recall /= n;
    mean.f1 /= n;
    return mean;
  }
  std::size_t overlap = 0, ref_total = 0, cand_total = 0;
  for (const auto& p : pairs) {
    std::size_t ref_len = 0, cand_len = 0;
    const auto ref = token_counts(p.reference, ref_len);
    const auto cand = token_counts(p.candidate, cand_len);
    overlap += clipped_overlap(ref, cand);
    ref_total += ref_len;
    cand_total += cand_len;
  }
  return make_score(overlap, ref_total, cand_total);
}

}  // namespace p4r
