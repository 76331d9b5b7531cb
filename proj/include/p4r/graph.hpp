#pragma once

// User-item bipartite interaction graph in CSR form with cached symmetric
// normalization coefficients.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "p4r/corpus.hpp"

namespace p4r {

// 1 / (sqrt(deg_u) * sqrt(deg_i)); both degrees must be >= 1.
double norm_coeff(std::size_t deg_u, std::size_t deg_i);

class BipartiteGraph {
 public:
  BipartiteGraph() = default;

  // Builds from train edges; duplicates are rejected. Nodes without edges stay isolated.
  BipartiteGraph(std::size_t n_users, std::size_t n_items, std::span<const Interaction> edges);

  std::size_t n_users() const noexcept { return n_users_; }
  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t edge_count() const noexcept { return user_items_.size(); }

  std::size_t user_degree(Index u) const { return user_offsets_[u + 1] - user_offsets_[u]; }
  std::size_t item_degree(Index i) const { return item_offsets_[i + 1] - item_offsets_[i]; }

  // Neighbors and per-edge coefficients, sorted by neighbor index.
  std::span<const Index> user_neighbors(Index u) const {
    return {user_items_.data() + user_offsets_[u], user_degree(u)};
  }
  std::span<const double> user_norms(Index u) const {
    return {user_norm_.data() + user_offsets_[u], user_degree(u)};
  }
  std::span<const Index> item_neighbors(Index i) const {
    return {item_users_.data() + item_offsets_[i], item_degree(i)};
  }
  std::span<const double> item_norms(Index i) const {
    return {item_norm_.data() + item_offsets_[i], item_degree(i)};
  }

  // Sum of the coefficients on the edges incident to item i (0 when isolated).
  double item_norm_sum(Index i) const { return item_norm_sum_[i]; }

  // Tab-separated `u<TAB>i<TAB>norm`, one line per edge in user order.
  void dump_edges(std::ostream& out) const;

  friend bool operator==(const BipartiteGraph&, const BipartiteGraph&) = default;

 private:
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::vector<std::size_t> user_offsets_{0};
  std::vector<Index> user_items_;
  std::vector<double> user_norm_;
  std::vector<std::size_t> item_offsets_{0};
  std::vector<Index> item_users_;
  std::vector<double> item_norm_;
  std::vector<double> item_norm_sum_;
};

BipartiteGraph build_graph(const Dataset& dataset);

}  // namespace p4r
