#pragma once

// Per-item text-encoder vectors and the projection into model space.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "p4r/corpus.hpp"
#include "p4r/error.hpp"
#include "p4r/linalg.hpp"

namespace p4r {

struct SemanticEmbeddingStore {
  std::size_t dim_raw = 0;
  // n_items x dim_raw; uncovered rows are zero.
  Matrix<double> vectors;
  std::vector<std::uint8_t> coverage;

  std::size_t n_items() const noexcept { return coverage.size(); }
  bool covered(Index item) const { return coverage[item] != 0; }
  std::size_t covered_count() const;

  // An all-uncovered store of the given shape, used when no profiles exist.
  static SemanticEmbeddingStore empty(std::size_t n_items, std::size_t dim_raw = 0);
};

struct EmbeddingLoadOptions {
  // Ignore records whose item is not in the dataset instead of failing.
  bool skip_unknown = false;
};

// Reads either the jsonl form or the `P4RE` binary form (detected from the magic bytes).
SemanticEmbeddingStore load_embeddings(const std::filesystem::path& path, const Dataset& dataset,
                                       const EmbeddingLoadOptions& options = {});
SemanticEmbeddingStore load_embeddings(std::istream& in, const Dataset& dataset,
                                       const EmbeddingLoadOptions& options = {});

// Writers for covered rows only, ascending item index.
void write_embeddings_jsonl(const SemanticEmbeddingStore& store, const Dataset& dataset,
                            std::ostream& out);
void write_embeddings_binary(const SemanticEmbeddingStore& store, std::ostream& out);

// e_s = max(0, W x + b).
template <typename T>
struct ProjectionHead {
  Matrix<T> weight;  // dim x dim_raw
  Vector<T> bias;    // dim

  std::size_t dim() const noexcept { return static_cast<std::size_t>(weight.rows()); }
  std::size_t dim_raw() const noexcept { return static_cast<std::size_t>(weight.cols()); }

  // Glorot-uniform weights in +-sqrt(6 / (dim + dim_raw)), zero bias.
  static ProjectionHead glorot(std::size_t dim, std::size_t dim_raw, std::mt19937_64& rng) {
    ProjectionHead head;
    head.weight.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim_raw));
    head.bias = Vector<T>::Zero(static_cast<Eigen::Index>(dim));
    if (dim_raw > 0) {
      const double limit = std::sqrt(6.0 / static_cast<double>(dim + dim_raw));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index r = 0; r < head.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < head.weight.cols(); ++c) head.weight(r, c) = static_cast<T>(dist(rng));
      }
    }
    return head;
  }

  template <typename U>
  ProjectionHead<U> cast() const {
    return {weight.template cast<U>(), bias.template cast<U>()};
  }
};

template <typename T, typename Derived>
Vector<T> project(const ProjectionHead<T>& head, const Eigen::MatrixBase<Derived>& x) {
  if (static_cast<std::size_t>(x.size()) != head.dim_raw()) {
    throw DomainError("project: input has " + std::to_string(x.size()) + " entries, head expects " +
                      std::to_string(head.dim_raw()));
  }
  Vector<T> pre = head.weight * x.template cast<T>() + head.bias;
  return pre.cwiseMax(T(0));
}

// e_s for one item; zero when the item has no profile vector.
template <typename T>
Vector<T> semantic_vector(const ProjectionHead<T>& head, const SemanticEmbeddingStore& store,
                          Index item) {
  if (!store.covered(item)) return Vector<T>::Zero(static_cast<Eigen::Index>(head.dim()));
  return project(head, store.vectors.row(item).transpose());
}

// Pre-activations (W x + b) for every covered item; uncovered rows are zero.
template <typename T>
Matrix<T> semantic_preactivations(const ProjectionHead<T>& head, const Matrix<T>& raw,
                                  const std::vector<std::uint8_t>& coverage) {
  if (static_cast<std::size_t>(raw.cols()) != head.dim_raw()) {
    throw DomainError("semantic_preactivations: raw dimension mismatch");
  }
  Matrix<T> pre = raw * head.weight.transpose();
  for (Eigen::Index i = 0; i < pre.rows(); ++i) {
    if (coverage[static_cast<std::size_t>(i)]) {
      pre.row(i) += head.bias.transpose();
    } else {
      pre.row(i).setZero();
    }
  }
  return pre;
}

// e_s for every item (n_items x dim).
template <typename T>
Matrix<T> semantic_matrix(const ProjectionHead<T>& head, const SemanticEmbeddingStore& store) {
  if (store.dim_raw == 0) {
    return Matrix<T>::Zero(static_cast<Eigen::Index>(store.n_items()),
                           static_cast<Eigen::Index>(head.dim()));
  }
  return semantic_preactivations(head, Matrix<T>(store.vectors.cast<T>()), store.coverage)
      .cwiseMax(T(0));
}

}  // namespace p4r
