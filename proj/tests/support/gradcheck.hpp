#pragma once

// Finite-difference gradient check on small random instances. The numeric
// side differentiates oracle::bpr_loss; the analytic side is the library.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "p4r/train.hpp"

namespace gradcheck {

struct Instance {
  std::size_t n_users = 0, n_items = 0;
  std::vector<oracle::Edge> edges;
  oracle::DenseModel model;
  std::vector<oracle::Triple> triples;
};

struct Result {
  double user = 0, item = 0, weight = 0, bias = 0;
  double worst() const { return std::max({user, item, weight, bias}); }
};

// Pre-activations are kept at least `margin` away from the rectifier kink.
inline Instance random_instance(std::mt19937_64& rng, double margin = 1e-2) {
  Instance in;
  in.n_users = 1 + rng() % 5;
  in.n_items = 2 + rng() % 5;
  const std::size_t d = 1 + rng() % 4, ds = 1 + rng() % 4;
  in.edges = oracle::random_edges(in.n_users, in.n_items, 0.5, rng);
  auto& m = in.model;
  m.layers = rng() % 3;
  m.alpha = 0.5 + static_cast<double>(rng() % 100) / 100.0;
  m.beta = 0.25 + static_cast<double>(rng() % 100) / 50.0;
  m.first_layer_only = rng() % 4 == 0;
  m.mean_readout = rng() % 4 == 0;
  m.users = oracle::random_dense(in.n_users, d, rng);
  m.items = oracle::random_dense(in.n_items, d, rng);
  m.raw = oracle::random_dense(in.n_items, ds, rng);
  m.covered.assign(in.n_items, 1);
  m.covered[rng() % in.n_items] = rng() % 2;
  while (true) {
    m.weight = oracle::random_dense(d, ds, rng);
    m.bias = oracle::random_dense(1, d, rng)[0];
    bool ok = true;
    for (std::size_t i = 0; i < in.n_items && ok; ++i) {
      if (!m.covered[i]) continue;
      for (std::size_t r = 0; r < d && ok; ++r) {
        double z = m.bias[r];
        for (std::size_t c = 0; c < ds; ++c) z += m.weight[r][c] * m.raw[i][c];
        ok = std::abs(z) > margin;
      }
    }
    if (ok) break;
  }
  const auto n_triples = 1 + rng() % 6;
  for (std::size_t t = 0; t < n_triples; ++t) {
    const auto u = static_cast<std::uint32_t>(rng() % in.n_users);
    const auto i = static_cast<std::uint32_t>(rng() % in.n_items);
    auto j = static_cast<std::uint32_t>(rng() % in.n_items);
    if (j == i) j = (j + 1) % static_cast<std::uint32_t>(in.n_items);
    in.triples.push_back({u, i, j});
  }
  return in;
}

inline double block_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
    na += analytic[k] * analytic[k];
    nn += numeric[k] * numeric[k];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nn));
  return scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

template <typename Derived>
std::vector<double> flatten(const Eigen::MatrixBase<Derived>& m) {
  std::vector<double> out;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

inline Result check(Instance in, double h = 1e-5) {
  auto& m = in.model;
  p4r::ModelParams<double> params;
  params.config.dim = m.users[0].size();
  params.config.n_layers = m.layers;
  params.config.alpha = m.alpha;
  params.config.beta = m.beta;
  params.config.inject = m.first_layer_only ? p4r::Inject::kFirstLayer : p4r::Inject::kEveryLayer;
  params.config.readout = m.mean_readout ? p4r::Readout::kMean : p4r::Readout::kSum;
  params.user_emb = fixtures::to_matrix(m.users);
  params.item_emb = fixtures::to_matrix(m.items);
  params.head.weight = fixtures::to_matrix(m.weight);
  params.head.bias = Eigen::Map<const p4r::Vector<double>>(m.bias.data(), static_cast<Eigen::Index>(m.bias.size()));
  p4r::SemanticInput<double> input;
  input.raw = fixtures::to_matrix(m.raw);
  input.coverage.assign(m.covered.begin(), m.covered.end());
  std::vector<p4r::TrainTriple> triples;
  for (auto t : in.triples) triples.push_back({t.user, t.pos, t.neg});

  const auto graph = fixtures::graph_from_edges(in.n_users, in.n_items, in.edges);
  const auto lg = p4r::loss_and_gradients(params, graph, input, std::span<const p4r::TrainTriple>(triples));

  const auto a = oracle::normalized_adjacency(in.n_users, in.n_items, in.edges);
  const auto loss = [&] { return oracle::bpr_loss(m, a, in.triples); };
  auto numeric = [&](oracle::Dense& block) {
    std::vector<double> g;
    for (auto& row : block)
      for (auto& x : row) g.push_back(oracle::central_difference(x, h, loss));
    return g;
  };
  Result r;
  r.user = block_error(flatten(lg.grads.user), numeric(m.users));
  r.item = block_error(flatten(lg.grads.item), numeric(m.items));
  std::vector<double> nw = numeric(m.weight), nb;
  for (auto& x : m.bias) nb.push_back(oracle::central_difference(x, h, loss));
  if (lg.grads.has_head()) {
    r.weight = block_error(flatten(lg.grads.weight), nw);
    r.bias = block_error(flatten(lg.grads.bias.transpose()), nb);
  } else {
    // No head gradient means the loss must not depend on W or b.
    r.weight = block_error(std::vector<double>(nw.size(), 0.0), nw);
    r.bias = block_error(std::vector<double>(nb.size(), 0.0), nb);
  }
  return r;
}

}  // namespace gradcheck
