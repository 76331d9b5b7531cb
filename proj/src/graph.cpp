#include "p4r/graph.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "p4r/error.hpp"

namespace p4r {

double norm_coeff(std::size_t deg_u, std::size_t deg_i) {
  if (deg_u == 0 || deg_i == 0) throw DomainError("norm_coeff: zero degree");
  return 1.0 / (std::sqrt(static_cast<double>(deg_u)) * std::sqrt(static_cast<double>(deg_i)));
}

BipartiteGraph::BipartiteGraph(std::size_t n_users, std::size_t n_items,
                               std::span<const Interaction> edges)
    : n_users_(n_users), n_items_(n_items) {
  if (edges.empty()) throw ValidationError("cannot build a graph from an empty split");
  std::vector<std::size_t> udeg(n_users, 0), ideg(n_items, 0);
  for (const auto& e : edges) {
    if (e.user >= n_users || e.item >= n_items) {
      throw ValidationError("edge (" + std::to_string(e.user) + ", " + std::to_string(e.item) +
                            ") out of range");
    }
    ++udeg[e.user];
    ++ideg[e.item];
  }

  user_offsets_.assign(n_users + 1, 0);
  item_offsets_.assign(n_items + 1, 0);
  for (std::size_t u = 0; u < n_users; ++u) user_offsets_[u + 1] = user_offsets_[u] + udeg[u];
  for (std::size_t i = 0; i < n_items; ++i) item_offsets_[i + 1] = item_offsets_[i] + ideg[i];

  user_items_.resize(edges.size());
  item_users_.resize(edges.size());
  {
    auto ucur = std::vector<std::size_t>(user_offsets_.begin(), user_offsets_.end() - 1);
    auto icur = std::vector<std::size_t>(item_offsets_.begin(), item_offsets_.end() - 1);
    for (const auto& e : edges) {
      user_items_[ucur[e.user]++] = e.item;
      item_users_[icur[e.item]++] = e.user;
    }
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    auto first = user_items_.begin() + static_cast<std::ptrdiff_t>(user_offsets_[u]);
    auto last = user_items_.begin() + static_cast<std::ptrdiff_t>(user_offsets_[u + 1]);
    std::sort(first, last);
    if (std::adjacent_find(first, last) != last) {
      throw ValidationError("duplicate edge for user " + std::to_string(u));
    }
  }
  for (std::size_t i = 0; i < n_items; ++i) {
    std::sort(item_users_.begin() + static_cast<std::ptrdiff_t>(item_offsets_[i]),
              item_users_.begin() + static_cast<std::ptrdiff_t>(item_offsets_[i + 1]));
  }

  user_norm_.resize(edges.size());
  item_norm_.resize(edges.size());
  item_norm_sum_.assign(n_items, 0.0);
  for (std::size_t u = 0; u < n_users; ++u) {
    for (auto e = user_offsets_[u]; e < user_offsets_[u + 1]; ++e) {
      user_norm_[e] = norm_coeff(udeg[u], ideg[user_items_[e]]);
    }
  }
  for (std::size_t i = 0; i < n_items; ++i) {
    double sum = 0.0;
    for (auto e = item_offsets_[i]; e < item_offsets_[i + 1]; ++e) {
      item_norm_[e] = norm_coeff(udeg[item_users_[e]], ideg[i]);
      sum += item_norm_[e];
    }
    item_norm_sum_[i] = sum;
  }
}

void BipartiteGraph::dump_edges(std::ostream& out) const {
  const auto old = out.precision(17);
  for (Index u = 0; u < n_users_; ++u) {
    const auto items = user_neighbors(u);
    const auto norms = user_norms(u);
    for (std::size_t k = 0; k < items.size(); ++k) {
      out << u << '\t' << items[k] << '\t' << norms[k] << '\n';
    }
  }
  out.precision(old);
}

BipartiteGraph build_graph(const Dataset& dataset) {
  return BipartiteGraph(dataset.n_users, dataset.n_items, dataset.train);
}

}  // namespace p4r
