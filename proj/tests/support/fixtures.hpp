#pragma once

// Glue between oracle types and library types.

#include <string>
#include <vector>

#include "oracles.hpp"
#include "p4r/corpus.hpp"
#include "p4r/graph.hpp"
#include "p4r/linalg.hpp"

namespace fixtures {

inline p4r::Matrix<double> to_matrix(const oracle::Dense& d) {
  const auto rows = static_cast<Eigen::Index>(d.size());
  const auto cols = static_cast<Eigen::Index>(d.empty() ? 0 : d[0].size());
  p4r::Matrix<double> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = d[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

template <typename Derived>
double max_abs_diff(const Eigen::MatrixBase<Derived>& m, const oracle::Dense& d) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      worst = std::max(worst, std::abs(static_cast<double>(m(r, c)) -
                                       d[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]));
  return worst;
}

// A dataset whose train split is exactly `edges`; ids are "u<k>" / "i<k>".
inline p4r::Dataset dataset_from_edges(std::size_t n_users, std::size_t n_items,
                                       const std::vector<oracle::Edge>& edges) {
  p4r::Dataset ds;
  ds.n_users = n_users;
  ds.n_items = n_items;
  for (p4r::Index u = 0; u < n_users; ++u) {
    ds.user_ids.push_back("u" + std::to_string(u));
    ds.user_index[ds.user_ids.back()] = u;
  }
  for (p4r::Index i = 0; i < n_items; ++i) {
    ds.item_ids.push_back("i" + std::to_string(i));
    ds.item_index[ds.item_ids.back()] = i;
  }
  for (auto [u, i] : edges) ds.train.push_back({u, i, 5});
  ds.interactions = ds.train;
  return ds;
}

inline p4r::BipartiteGraph graph_from_edges(std::size_t n_users, std::size_t n_items,
                                            const std::vector<oracle::Edge>& edges) {
  std::vector<p4r::Interaction> rows;
  for (auto [u, i] : edges) rows.push_back({u, i, 5});
  return p4r::BipartiteGraph(n_users, n_items, rows);
}

}  // namespace fixtures
