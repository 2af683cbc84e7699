#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "drex/tensor.hpp"

namespace drex {

// Reserved labels. The root anchors layer 4 of every relation path; NA
// marks "no relation" and never enters the real tree — NA bags are
// routed, not classified.
inline constexpr const char* kRootId = "<root>";
inline constexpr const char* kNaLabel = "NA";

struct Sentence {
  std::vector<std::string> tokens;
  std::size_t head_pos = 0;
  std::size_t tail_pos = 0;
  std::string head_id;
  std::string tail_id;

  bool operator==(const Sentence&) const = default;
};

struct Bag {
  std::string head_id;
  std::string tail_id;
  std::string relation;
  std::vector<Sentence> sentences;
  // Synthetic ground truth; empty when unknown. true = planted noise.
  std::vector<bool> noise_flags;

  bool operator==(const Bag&) const = default;
};

// Four node identifiers ordered root (layer 4) -> leaf (layer 1). Each
// deeper identifier extends the previous one.
struct RelationPath {
  std::array<std::string, 4> layers;

  const std::string& root() const { return layers[0]; }
  const std::string& at_layer(int k) const { return layers[static_cast<std::size_t>(4 - k)]; }
  const std::string& leaf() const { return layers[3]; }
};

// Maps a "/"-delimited label onto the fixed 4-layer tree: 3-segment
// labels use their two proper prefixes; shorter labels repeat their
// deepest prefix downward; deeper labels keep the first two prefixes
// and the full label. "NA" maps to the reserved path under root.
RelationPath parse_relation_path(const std::string& label);

struct TaxonomyNode {
  std::string id;
  int layer = 0;
  std::vector<std::string> children;  // ids one layer below, sorted
};

struct Taxonomy {
  // nodes[k] holds layer k (1 = leaves, 4 = the root alone).
  std::array<std::map<std::string, TaxonomyNode>, 5> nodes;
  // Sorted ids per layer; fixed enumeration order for scoring.
  std::array<std::vector<std::string>, 5> layer_ids;
  // Training instances (sentences) per leaf relation.
  std::map<std::string, std::int64_t> train_counts;

  bool has_node(int layer, const std::string& id) const;
  const TaxonomyNode& node(int layer, const std::string& id) const;
  const std::vector<std::string>& leaves() const { return layer_ids[1]; }
  std::int64_t train_count(const std::string& leaf) const;
  std::size_t node_count() const;
};

// Union of the labels' relation paths. NA labels are skipped: the
// reserved NA path never materializes as tree nodes.
Taxonomy build_taxonomy(const std::vector<std::string>& labels,
                        const std::map<std::string, std::int64_t>& train_counts);

// One JSON object per line: {head_id, tail_id, relation, tokens,
// head_pos, tail_pos}. Sentences sharing (head_id, tail_id, relation)
// group into one bag, in first-occurrence order. A sidecar flags file
// at path+".flags" (one 0/1 line per sentence line), when present, is
// attached as noise_flags.
std::vector<Bag> load_corpus(const std::string& path);
// Inverse of load_corpus; writes the sidecar when any bag carries flags.
void write_corpus(const std::string& path, const std::vector<Bag>& bags);

struct GeneratorSpec {
  std::int64_t num_relations = 12;
  std::int64_t taxonomy_branching = 3;  // children of the root
  // Mid-layer nodes per branch; 0 picks a near-square layout.
  std::int64_t mid_branching = 0;
  std::int64_t vocab_size = 200;
  std::int64_t num_entity_pairs = 500;
  std::int64_t bag_size_min = 4;
  std::int64_t bag_size_max = 10;
  double noise_rate = 0.2;
  double longtail_exponent = 1.5;
  std::int64_t embedding_dim = 16;
};

struct SyntheticCorpus {
  std::vector<Bag> bags;
  Taxonomy taxonomy;  // counts over all generated bags
  // Gold vectors satisfying tail - head = r_leaf + eps, |eps| <= 0.05.
  std::map<std::string, Tensor> gold_entities;
  std::map<std::string, Tensor> gold_relations;
};

// Deterministic synthetic corpus: leaf relations named /g{b}/s{m}/r{k}
// spread round-robin over branches, bag counts apportioned by a power
// law (every relation gets at least one bag), and exactly
// round(noise_rate * bag_size) sentences per bag resampled from a
// different relation's template and flagged.
SyntheticCorpus generate_synthetic(const GeneratorSpec& spec, std::uint64_t seed);

// Per-relation split preserving bag order: the first round(fraction*n)
// bags of each relation train (clamped so both sides stay non-empty),
// except that a single-bag relation goes entirely to train.
void split_corpus(const std::vector<Bag>& bags, double train_fraction, std::vector<Bag>* train,
                  std::vector<Bag>* test);

// Relations with training-instance count below threshold, restricted to
// relations that actually occur in the given test bags.
std::set<std::string> longtail_subset(const std::vector<Bag>& test_bags, const Taxonomy& taxonomy,
                                      std::int64_t threshold);

}  // namespace drex
