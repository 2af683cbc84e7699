#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "drex/tensor.hpp"

namespace drex {

// Fixed-width id -> vector map; unknown ids resolve to a zero vector.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::map<std::string, Tensor> vectors;
  Tensor oov;

  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim_) : dim(dim_), oov(Tensor::zeros({dim_})) {}

  bool has(const std::string& id) const { return vectors.count(id) != 0; }
  const Tensor& lookup(const std::string& id) const;
  void insert(const std::string& id, Tensor v);
};

// One line per id: `id v1 ... v_dim`, whitespace-separated. A duplicate
// id keeps the last occurrence and warns on stderr.
EmbeddingTable load_text_embeddings(const std::string& path, std::size_t dim);
void save_text_embeddings(const std::string& path, const EmbeddingTable& table);

struct Triple {
  std::string head_id;
  std::string relation;
  std::string tail_id;
};

struct TranseResult {
  EmbeddingTable entities;
  EmbeddingTable relations;
  // Full-objective value at the start of each epoch (fixed per-triple
  // corruptions), plus one final value after the last epoch.
  std::vector<double> epoch_losses;
};

// Margin-based translation training: minimizes
// hinge(margin + |h+r-t| - |h'+r-t'|) with one uniformly corrupted
// entity per positive per step, L2 distance, SGD, and unit-L2
// projection of entity vectors after initialization and each step.
// Corruptions are drawn once per triple and reused every epoch so the
// recorded objective is comparable across epochs.
TranseResult train_transe(const std::vector<Triple>& triples, std::size_t dim, double margin,
                          std::int64_t epochs, double lr, std::uint64_t seed);

// r* = t - h.
Tensor implicit_relation(const Tensor& head, const Tensor& tail);

}  // namespace drex
