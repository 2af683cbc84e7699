#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "drex/corpus.hpp"
#include "drex/embeddings.hpp"
#include "drex/params.hpp"
#include "drex/rng.hpp"
#include "drex/tape.hpp"
#include "drex/tensor.hpp"

namespace drex {

struct HrsConfig {
  std::size_t sentence_dim = 690;  // bag embedding width
  std::size_t relation_dim = 50;   // relation embedding width
  std::size_t cell_dim = 50;       // memory cell width

  std::size_t fuse_input_dim() const { return sentence_dim + relation_dim; }
  std::size_t gate_input_dim() const { return sentence_dim + cell_dim; }
};

// Relation tree over the four taxonomy layers: per-node embedding plus a
// per-node memory cell. Leaves carry their pretrained relation
// embeddings; internal embeddings are child means; cells start at zero.
// Keyed by [layer][id] because short labels repeat one id on several
// layers, and those nodes are distinct.
struct RelationTree {
  Taxonomy taxonomy;
  std::array<std::map<std::string, Tensor>, 5> embedding;
  std::array<std::map<std::string, Tensor>, 5> cell;
  std::size_t relation_dim = 0;
  std::size_t cell_dim = 0;

  const Tensor& embedding_at(int layer, const std::string& id) const;
  const Tensor& cell_at(int layer, const std::string& id) const;
};

struct HrsAblations {
  bool no_weighted_loss = false;     // alpha_k -> 1/3 each
  bool no_gated_memory = false;      // Z -> G, cells never written
  bool no_implicit_relation = false; // r* -> zeros inside fuse
};

struct HrsOptions {
  double margin = 0.5;  // mu in the ranking loss
  std::size_t max_outside_negatives = 5;
  Rng* negative_rng = nullptr;  // required when max_outside_negatives > 0
  bool train_mode = false;      // write memory cells along the true path
  HrsAblations ablations;
};

struct PathScore {
  std::vector<std::string> node_ids;   // chosen node per descent, layer 3 -> 1
  std::vector<double> probabilities;   // renormalized child probability of each choice
  double path_probability = 1.0;
};

// Registers hrs.fuse_* plus the three per-layer gate/scoring groups.
void init_hrs_params(ParameterStore& store, const HrsConfig& config, std::uint64_t seed);
// Parameter names for layer k (2..4), e.g. "hrs.input_gate_weight.2".
std::vector<std::string> hrs_param_names(const HrsConfig& config);

// Leaf embeddings come from the pretrained relation table; internal
// nodes are filled bottom-up (layer 2, then 3, then 4) with child means.
RelationTree build_tree(const Taxonomy& taxonomy, const EmbeddingTable& leaf_embeddings,
                        std::size_t cell_dim);

// G = tanh(W_G [x_hat; r*] + b_G)
Tensor fuse(const Tensor& x_hat, const Tensor& r_star, const ParameterStore& store,
            const HrsConfig& config);

// One gated read/update at an internal node (layer 2..4):
//   i = sigma(W_i [x_hat; C_old] + b_i), C_new = i*G + (1-i)*C_old,
//   o = sigma(W_o [x_hat; C_new] + b_o), Z = o*C_new + (1-o)*G.
// The cell is overwritten with C_new only when train_mode is set.
Tensor gate_step(const Tensor& x_hat, int layer, const std::string& node_id, RelationTree& tree,
                 const Tensor& g, const ParameterStore& store, const HrsConfig& config,
                 bool train_mode);

// Softmax over every node of layer `layer` (logit = Z . W_f r_node, with
// W_f taken from the parent layer `layer`+1).
std::map<std::string, double> layer_scores(const Tensor& z, int layer, const RelationTree& tree,
                                           const ParameterStore& store, const HrsConfig& config);
// Probabilities renormalized to the given candidates (equals a softmax
// over just their logits).
std::map<std::string, double> score_children(const Tensor& z, int layer,
                                             const std::vector<std::string>& candidates,
                                             const RelationTree& tree, const ParameterStore& store,
                                             const HrsConfig& config);

// Greedy top-down decode from the root; ties break toward the
// lexicographically smallest node id. Gates are read-only.
PathScore decode_path(const Tensor& x_hat, const Tensor& r_star, RelationTree& tree,
                      const ParameterStore& store, const HrsConfig& config,
                      const HrsAblations& ablations = {});

// Ranking loss at one layer: sum of hinge(f(neg) + mu - f(true)) over
// sibling and outside negatives, with f the layer-global softmax score.
double layer_loss(const Tensor& z, int parent_layer, const std::string& true_child,
                  const std::vector<std::string>& sibling_negatives,
                  const std::vector<std::string>& outside_negatives, double mu,
                  const RelationTree& tree, const ParameterStore& store, const HrsConfig& config);

// alpha_k = (|N_k(r)| + k - 1) / sum_j (|N_j(r)| + j - 1) for k = 2,3,4.
std::array<double, 3> layer_weights(const RelationPath& path, const Taxonomy& taxonomy);

// Records the weighted ranking loss for one bag on the caller's tape so
// several bags can share one backward pass. Walks the true path with
// gated reads (writing cells when opts.train_mode), scoring each layer
// globally. Returns a scalar var.
Tape::Var record_total_loss(Tape& tape, const Tensor& x_hat, const Tensor& r_star,
                            const RelationPath& path, RelationTree& tree, ParameterStore& store,
                            const HrsConfig& config, const HrsOptions& opts);
// Same, but the bag embedding is already a variable on the caller's
// tape (an encoder output, say), so gradients reach its producers.
Tape::Var record_total_loss(Tape& tape, Tape::Var x_hat, const Tensor& r_star,
                            const RelationPath& path, RelationTree& tree, ParameterStore& store,
                            const HrsConfig& config, const HrsOptions& opts);

double total_loss(const Tensor& x_hat, const Tensor& r_star, const RelationPath& path,
                  RelationTree& tree, ParameterStore& store, const HrsConfig& config,
                  const HrsOptions& opts);

// Product of the renormalized child probabilities along the leaf's path;
// read-only gates. Used as the detector's reward during joint training.
double path_probability(const Tensor& x_hat, const Tensor& r_star, const std::string& leaf_id,
                        RelationTree& tree, const ParameterStore& store, const HrsConfig& config,
                        const HrsAblations& ablations = {});

// Text rendering: one node per line with layer, child count, and the
// norms of its embedding and memory cell.
std::string render_tree(const RelationTree& tree);

}  // namespace drex
