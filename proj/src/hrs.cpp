#include "drex/hrs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "drex/errors.hpp"

namespace drex {

namespace {

constexpr int kLeafLayer = 1;
constexpr int kRootLayer = 4;

Tensor glorot_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     const std::string& name) {
  Rng rng(seed, "init:" + name);
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

std::string layer_name(const char* stem, int layer) {
  return std::string("hrs.") + stem + "." + std::to_string(layer);
}

// Tape handles for the full parameter bundle; frozen paths bind the
// current values as constants so const stores work and no gradient is
// recorded.
struct LayerVars {
  Tape::Var in_w, in_b, out_w, out_b, score_w;
};

struct HrsVars {
  Tape::Var fuse_w, fuse_b;
  std::map<int, LayerVars> layer;
};

HrsVars bind_params(Tape& tape, ParameterStore& store) {
  HrsVars vars;
  vars.fuse_w = tape.param(store.get("hrs.fuse_weight"));
  vars.fuse_b = tape.param(store.get("hrs.fuse_bias"));
  for (int k = 2; k <= kRootLayer; ++k) {
    vars.layer[k] = {tape.param(store.get(layer_name("input_gate_weight", k))),
                     tape.param(store.get(layer_name("input_gate_bias", k))),
                     tape.param(store.get(layer_name("output_gate_weight", k))),
                     tape.param(store.get(layer_name("output_gate_bias", k))),
                     tape.param(store.get(layer_name("score_weight", k)))};
  }
  return vars;
}

// Plain forward twins of the tape recipes below. They make the same
// tensor calls in the same order, so inference matches the training
// arithmetic bit for bit while skipping tape bookkeeping — recording
// would copy every bound parameter tensor per call, which dwarfs the
// actual math on the per-sentence inference loops.
Tensor forward_fuse(const Tensor& x_hat, const Tensor& r_star, const ParameterStore& store) {
  const Tensor input = concat({&x_hat, &r_star});
  Tensor g =
      add(matvec(store.get("hrs.fuse_weight").value, input), store.get("hrs.fuse_bias").value);
  for (double& v : g.data) v = std::tanh(v);
  return g;
}

Tensor forward_gate(const Tensor& x_hat, int layer, const Tensor& c_old, const Tensor& g,
                    const ParameterStore& store, Tensor* c_new_out) {
  const Tensor& in_w = store.get(layer_name("input_gate_weight", layer)).value;
  const Tensor& in_b = store.get(layer_name("input_gate_bias", layer)).value;
  const Tensor& out_w = store.get(layer_name("output_gate_weight", layer)).value;
  const Tensor& out_b = store.get(layer_name("output_gate_bias", layer)).value;
  const Tensor ones = Tensor::full(c_old.shape, 1.0);

  const Tensor gate_in = concat({&x_hat, &c_old});
  Tensor i = add(matvec(in_w, gate_in), in_b);
  for (double& v : i.data) v = detail::sigmoid_scalar(v);
  const Tensor c_new = add(mul(i, g), mul(sub(ones, i), c_old));
  const Tensor gate_out = concat({&x_hat, &c_new});
  Tensor o = add(matvec(out_w, gate_out), out_b);
  for (double& v : o.data) v = detail::sigmoid_scalar(v);
  Tensor z = add(mul(o, c_new), mul(sub(ones, o), g));
  if (c_new_out) *c_new_out = c_new;
  return z;
}

// Softmaxed scores for `ids` of `layer`; the scoring matrix belongs to
// the parent layer, mirroring record_layer_logits.
Tensor forward_child_probs(const Tensor& z, int layer, const std::vector<std::string>& ids,
                           const RelationTree& tree, const ParameterStore& store) {
  const Tensor& score_w = store.get(layer_name("score_weight", layer + 1)).value;
  Tensor logits = Tensor::zeros({ids.size()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    logits.data[i] = dot(z, matvec(score_w, tree.embedding_at(layer, ids[i])));
  }
  return activate(logits, Activation::SoftmaxLastAxis);
}

Tape::Var record_fuse(Tape& tape, const HrsVars& vars, Tape::Var x_hat, Tape::Var r_star) {
  const Tape::Var input = tape.concat({x_hat, r_star});
  return tape.tanh(tape.add(tape.matvec(vars.fuse_w, input), vars.fuse_b));
}

struct GateOut {
  Tape::Var z;
  Tape::Var c_new;
};

// One gated step; C_old enters as a constant, so no gradient crosses
// bag boundaries through the memory.
GateOut record_gate(Tape& tape, const HrsVars& vars, int layer, Tape::Var x_hat, Tape::Var g,
                    const Tensor& c_old, bool no_gated_memory) {
  const Tape::Var c_old_var = tape.constant(c_old);
  if (no_gated_memory) return {g, c_old_var};
  const LayerVars& lv = vars.layer.at(layer);
  const Tape::Var ones = tape.constant(Tensor::full(c_old.shape, 1.0));

  const Tape::Var gate_in = tape.concat({x_hat, c_old_var});
  const Tape::Var i = tape.sigmoid(tape.add(tape.matvec(lv.in_w, gate_in), lv.in_b));
  const Tape::Var c_new = tape.add(tape.mul(i, g), tape.mul(tape.sub(ones, i), c_old_var));
  const Tape::Var gate_out = tape.concat({x_hat, c_new});
  const Tape::Var o = tape.sigmoid(tape.add(tape.matvec(lv.out_w, gate_out), lv.out_b));
  const Tape::Var z = tape.add(tape.mul(o, c_new), tape.mul(tape.sub(ones, o), g));
  return {z, c_new};
}

// Logits for the given nodes of `layer`; the scoring matrix belongs to
// the parent layer.
std::vector<Tape::Var> record_layer_logits(Tape& tape, const HrsVars& vars, int layer,
                                           Tape::Var z, const RelationTree& tree,
                                           const std::vector<std::string>& ids) {
  const Tape::Var score_w = vars.layer.at(layer + 1).score_w;
  std::vector<Tape::Var> logits;
  logits.reserve(ids.size());
  for (const std::string& id : ids) {
    const Tape::Var r = tape.constant(tree.embedding_at(layer, id));
    logits.push_back(tape.dot(z, tape.matvec(score_w, r)));
  }
  return logits;
}

std::size_t index_of(const std::vector<std::string>& ids, const std::string& id,
                     const char* what) {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) {
    throw ValidationError(std::string("relation tree: ") + what + " '" + id +
                          "' is not a node of the expected layer");
  }
  return static_cast<std::size_t>(it - ids.begin());
}

void check_tree(const RelationTree& tree) {
  if (tree.taxonomy.leaves().empty()) {
    throw ValidationError("relation tree: taxonomy has no leaf relations");
  }
}

void check_bag_inputs(const Tensor& x_hat, const Tensor& r_star, const HrsConfig& config) {
  if (x_hat.size() != config.sentence_dim) {
    throw DimensionError("relation tree: bag embedding has size " + std::to_string(x_hat.size()) +
                         ", expected " + std::to_string(config.sentence_dim));
  }
  if (r_star.size() != config.relation_dim) {
    throw DimensionError("relation tree: implicit relation has size " +
                         std::to_string(r_star.size()) + ", expected " +
                         std::to_string(config.relation_dim));
  }
}

void check_path(const RelationPath& path, const Taxonomy& taxonomy) {
  for (int k = kRootLayer; k >= kLeafLayer; --k) {
    if (!taxonomy.has_node(k, path.at_layer(k))) {
      throw ValidationError("relation tree: path node '" + path.at_layer(k) +
                            "' is missing at layer " + std::to_string(k));
    }
  }
}

const Tensor& tree_entry(const std::array<std::map<std::string, Tensor>, 5>& table, int layer,
                         const std::string& id, const char* what) {
  if (layer < kLeafLayer || layer > kRootLayer) {
    throw ValidationError("relation tree: layer must be 1-4");
  }
  const auto& per_layer = table[static_cast<std::size_t>(layer)];
  const auto it = per_layer.find(id);
  if (it == per_layer.end()) {
    throw ValidationError(std::string("relation tree: no ") + what + " for node '" + id +
                          "' at layer " + std::to_string(layer));
  }
  return it->second;
}

}  // namespace

const Tensor& RelationTree::embedding_at(int layer, const std::string& id) const {
  return tree_entry(embedding, layer, id, "embedding");
}

const Tensor& RelationTree::cell_at(int layer, const std::string& id) const {
  return tree_entry(cell, layer, id, "memory cell");
}

void init_hrs_params(ParameterStore& store, const HrsConfig& config, std::uint64_t seed) {
  if (config.sentence_dim == 0 || config.relation_dim == 0 || config.cell_dim == 0) {
    throw ValidationError("hrs config dimensions must be positive");
  }
  store.add("hrs.fuse_weight",
            glorot_matrix(config.cell_dim, config.fuse_input_dim(), seed, "hrs.fuse_weight"));
  store.add("hrs.fuse_bias", Tensor::zeros({config.cell_dim}));
  for (int k = 2; k <= kRootLayer; ++k) {
    const std::string in_w = layer_name("input_gate_weight", k);
    const std::string out_w = layer_name("output_gate_weight", k);
    const std::string score_w = layer_name("score_weight", k);
    store.add(in_w, glorot_matrix(config.cell_dim, config.gate_input_dim(), seed, in_w));
    store.add(layer_name("input_gate_bias", k), Tensor::zeros({config.cell_dim}));
    store.add(out_w, glorot_matrix(config.cell_dim, config.gate_input_dim(), seed, out_w));
    store.add(layer_name("output_gate_bias", k), Tensor::zeros({config.cell_dim}));
    store.add(score_w, glorot_matrix(config.cell_dim, config.relation_dim, seed, score_w));
  }
}

std::vector<std::string> hrs_param_names(const HrsConfig&) {
  std::vector<std::string> names = {"hrs.fuse_weight", "hrs.fuse_bias"};
  for (int k = 2; k <= kRootLayer; ++k) {
    names.push_back(layer_name("input_gate_weight", k));
    names.push_back(layer_name("input_gate_bias", k));
    names.push_back(layer_name("output_gate_weight", k));
    names.push_back(layer_name("output_gate_bias", k));
    names.push_back(layer_name("score_weight", k));
  }
  std::sort(names.begin(), names.end());
  return names;
}

RelationTree build_tree(const Taxonomy& taxonomy, const EmbeddingTable& leaf_embeddings,
                        std::size_t cell_dim) {
  if (taxonomy.leaves().empty()) {
    throw ValidationError("relation tree: taxonomy has no leaf relations");
  }
  if (cell_dim == 0) throw ValidationError("relation tree: cell width must be positive");
  RelationTree tree;
  tree.taxonomy = taxonomy;
  tree.relation_dim = leaf_embeddings.dim;
  tree.cell_dim = cell_dim;

  for (const std::string& leaf : taxonomy.leaves()) {
    if (!leaf_embeddings.has(leaf)) {
      throw MissingEmbeddingError("relation tree: no pretrained embedding for leaf '" + leaf +
                                  "'");
    }
    tree.embedding[kLeafLayer][leaf] = leaf_embeddings.lookup(leaf);
  }
  // Child means, bottom-up: layer 2 from the leaves, then 3, then 4.
  for (int k = 2; k <= kRootLayer; ++k) {
    for (const std::string& id : taxonomy.layer_ids[static_cast<std::size_t>(k)]) {
      const TaxonomyNode& node = taxonomy.node(k, id);
      Tensor mean = Tensor::zeros({tree.relation_dim});
      for (const std::string& child : node.children) {
        mean = add(mean, tree.embedding_at(k - 1, child));
      }
      tree.embedding[static_cast<std::size_t>(k)][id] =
          scale(mean, 1.0 / static_cast<double>(node.children.size()));
    }
  }
  for (int k = kLeafLayer; k <= kRootLayer; ++k) {
    for (const std::string& id : taxonomy.layer_ids[static_cast<std::size_t>(k)]) {
      tree.cell[static_cast<std::size_t>(k)][id] = Tensor::zeros({cell_dim});
    }
  }
  return tree;
}

Tensor fuse(const Tensor& x_hat, const Tensor& r_star, const ParameterStore& store,
            const HrsConfig& config) {
  check_bag_inputs(x_hat, r_star, config);
  return forward_fuse(x_hat, r_star, store);
}

Tensor gate_step(const Tensor& x_hat, int layer, const std::string& node_id, RelationTree& tree,
                 const Tensor& g, const ParameterStore& store, const HrsConfig& config,
                 bool train_mode) {
  (void)config;
  if (layer < 2 || layer > kRootLayer) {
    throw ValidationError("relation tree: gate steps apply to layers 2-4");
  }
  const Tensor& c_old = tree.cell_at(layer, node_id);
  Tensor c_new;
  Tensor z = forward_gate(x_hat, layer, c_old, g, store, &c_new);
  if (train_mode) tree.cell[static_cast<std::size_t>(layer)][node_id] = std::move(c_new);
  return z;
}

std::map<std::string, double> layer_scores(const Tensor& z, int layer, const RelationTree& tree,
                                           const ParameterStore& store, const HrsConfig& config) {
  check_tree(tree);
  (void)config;
  if (layer < kLeafLayer || layer >= kRootLayer) {
    throw ValidationError("relation tree: scored layer must be 1, 2, or 3");
  }
  const std::vector<std::string>& ids = tree.taxonomy.layer_ids[static_cast<std::size_t>(layer)];
  if (ids.empty()) throw ValidationError("relation tree: scored layer is empty");
  const Tensor p = forward_child_probs(z, layer, ids, tree, store);
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = p.at(i);
  return out;
}

std::map<std::string, double> score_children(const Tensor& z, int layer,
                                             const std::vector<std::string>& candidates,
                                             const RelationTree& tree, const ParameterStore& store,
                                             const HrsConfig& config) {
  check_tree(tree);
  (void)config;
  if (candidates.empty()) {
    throw ValidationError("relation tree: scoring needs at least one candidate");
  }
  if (layer < kLeafLayer || layer >= kRootLayer) {
    throw ValidationError("relation tree: scored layer must be 1, 2, or 3");
  }
  const Tensor p = forward_child_probs(z, layer, candidates, tree, store);
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) out[candidates[i]] = p.at(i);
  return out;
}

PathScore decode_path(const Tensor& x_hat, const Tensor& r_star, RelationTree& tree,
                      const ParameterStore& store, const HrsConfig& config,
                      const HrsAblations& ablations) {
  check_tree(tree);
  check_bag_inputs(x_hat, r_star, config);
  const Tensor r_eff =
      ablations.no_implicit_relation ? Tensor::zeros({config.relation_dim}) : r_star;
  const Tensor g = fuse(x_hat, r_eff, store, config);

  PathScore result;
  std::string current = kRootId;
  for (int k = kRootLayer; k >= 2; --k) {
    const Tensor z = ablations.no_gated_memory
                         ? g
                         : gate_step(x_hat, k, current, tree, g, store, config,
                                     /*train_mode=*/false);
    const std::vector<std::string>& children = tree.taxonomy.node(k, current).children;
    const std::map<std::string, double> probs =
        score_children(z, k - 1, children, tree, store, config);
    // Children are sorted, so keeping the first strict maximum breaks
    // ties toward the lexicographically smallest id.
    std::string best = children.front();
    for (const std::string& c : children) {
      if (probs.at(c) > probs.at(best)) best = c;
    }
    result.node_ids.push_back(best);
    result.probabilities.push_back(probs.at(best));
    result.path_probability *= probs.at(best);
    current = best;
  }
  return result;
}

double layer_loss(const Tensor& z, int parent_layer, const std::string& true_child,
                  const std::vector<std::string>& sibling_negatives,
                  const std::vector<std::string>& outside_negatives, double mu,
                  const RelationTree& tree, const ParameterStore& store, const HrsConfig& config) {
  const std::map<std::string, double> f = layer_scores(z, parent_layer - 1, tree, store, config);
  const auto true_it = f.find(true_child);
  if (true_it == f.end()) {
    throw ValidationError("relation tree: true child '" + true_child +
                          "' is not a node of the scored layer");
  }
  double loss = 0.0;
  for (const std::vector<std::string>* group : {&sibling_negatives, &outside_negatives}) {
    for (const std::string& neg : *group) {
      if (neg == true_child) {
        throw ValidationError("relation tree: the true child cannot be its own negative");
      }
      loss += std::max(0.0, f.at(neg) + mu - true_it->second);
    }
  }
  return loss;
}

std::array<double, 3> layer_weights(const RelationPath& path, const Taxonomy& taxonomy) {
  check_path(path, taxonomy);
  std::array<double, 3> raw{};
  double total = 0.0;
  for (int k = 2; k <= kRootLayer; ++k) {
    const TaxonomyNode& node = taxonomy.node(k, path.at_layer(k));
    raw[static_cast<std::size_t>(k - 2)] =
        static_cast<double>(node.children.size()) + static_cast<double>(k) - 1.0;
    total += raw[static_cast<std::size_t>(k - 2)];
  }
  for (double& v : raw) v /= total;
  return raw;
}

Tape::Var record_total_loss(Tape& tape, const Tensor& x_hat, const Tensor& r_star,
                            const RelationPath& path, RelationTree& tree, ParameterStore& store,
                            const HrsConfig& config, const HrsOptions& opts) {
  return record_total_loss(tape, tape.constant(x_hat), r_star, path, tree, store, config, opts);
}

Tape::Var record_total_loss(Tape& tape, Tape::Var x_hat, const Tensor& r_star,
                            const RelationPath& path, RelationTree& tree, ParameterStore& store,
                            const HrsConfig& config, const HrsOptions& opts) {
  check_tree(tree);
  check_bag_inputs(tape.value(x_hat), r_star, config);
  check_path(path, tree.taxonomy);
  if (opts.margin < 0.0) throw ValidationError("relation tree: margin must be non-negative");
  if (opts.max_outside_negatives > 0 && opts.negative_rng == nullptr) {
    throw ValidationError("relation tree: outside-negative sampling needs an rng");
  }

  const HrsVars vars = bind_params(tape, store);
  const Tape::Var x_hat_var = x_hat;
  const Tape::Var r_star_var = tape.constant(
      opts.ablations.no_implicit_relation ? Tensor::zeros({config.relation_dim}) : r_star);
  const Tape::Var g = record_fuse(tape, vars, x_hat_var, r_star_var);
  const Tape::Var mu = tape.constant(Tensor::scalar(opts.margin));

  std::array<double, 3> alpha{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  if (!opts.ablations.no_weighted_loss) alpha = layer_weights(path, tree.taxonomy);

  std::vector<Tape::Var> weighted_layers;
  for (int k = kRootLayer; k >= 2; --k) {
    const std::string& node_id = path.at_layer(k);
    const std::string& true_child = path.at_layer(k - 1);
    const GateOut gate = record_gate(tape, vars, k, x_hat_var, g, tree.cell_at(k, node_id),
                                     opts.ablations.no_gated_memory);
    if (opts.train_mode && !opts.ablations.no_gated_memory) {
      tree.cell[static_cast<std::size_t>(k)][node_id] = tape.value(gate.c_new);
    }

    const std::vector<std::string>& layer_ids =
        tree.taxonomy.layer_ids[static_cast<std::size_t>(k - 1)];
    const std::vector<Tape::Var> logits =
        record_layer_logits(tape, vars, k - 1, gate.z, tree, layer_ids);
    const Tape::Var probs = tape.softmax(tape.concat(logits));
    const std::size_t true_idx = index_of(layer_ids, true_child, "true child");
    const Tape::Var f_true = tape.pick(probs, true_idx);

    // Sibling negatives: the true parent's other children. Outside
    // negatives: a seeded sample of the rest of the layer.
    const std::vector<std::string>& siblings = tree.taxonomy.node(k, node_id).children;
    std::vector<std::size_t> negative_idx;
    for (const std::string& sib : siblings) {
      if (sib != true_child) negative_idx.push_back(index_of(layer_ids, sib, "sibling"));
    }
    std::vector<std::size_t> outside;
    for (std::size_t i = 0; i < layer_ids.size(); ++i) {
      if (std::find(siblings.begin(), siblings.end(), layer_ids[i]) == siblings.end()) {
        outside.push_back(i);
      }
    }
    if (!outside.empty() && opts.max_outside_negatives > 0) {
      const std::size_t want = std::min(opts.max_outside_negatives, outside.size());
      for (std::size_t pick :
           opts.negative_rng->sample_without_replacement(outside.size(), want)) {
        negative_idx.push_back(outside[pick]);
      }
    }

    Tape::Var layer_total = tape.constant(Tensor::scalar(0.0));
    if (!negative_idx.empty()) {
      std::vector<Tape::Var> terms;
      terms.reserve(negative_idx.size());
      for (std::size_t idx : negative_idx) {
        const Tape::Var f_neg = tape.pick(probs, idx);
        terms.push_back(tape.hinge(tape.add(tape.sub(f_neg, f_true), mu)));
      }
      layer_total = tape.add_n(terms);
    }
    weighted_layers.push_back(tape.scale(layer_total, alpha[static_cast<std::size_t>(k - 2)]));
  }
  return tape.sum(tape.concat(weighted_layers));
}

double total_loss(const Tensor& x_hat, const Tensor& r_star, const RelationPath& path,
                  RelationTree& tree, ParameterStore& store, const HrsConfig& config,
                  const HrsOptions& opts) {
  Tape tape;
  return tape.scalar(record_total_loss(tape, x_hat, r_star, path, tree, store, config, opts));
}

double path_probability(const Tensor& x_hat, const Tensor& r_star, const std::string& leaf_id,
                        RelationTree& tree, const ParameterStore& store, const HrsConfig& config,
                        const HrsAblations& ablations) {
  check_tree(tree);
  check_bag_inputs(x_hat, r_star, config);
  if (!tree.taxonomy.has_node(kLeafLayer, leaf_id)) {
    throw ValidationError("relation tree: '" + leaf_id + "' is not a leaf relation");
  }
  const RelationPath path = parse_relation_path(leaf_id);
  check_path(path, tree.taxonomy);
  const Tensor r_eff =
      ablations.no_implicit_relation ? Tensor::zeros({config.relation_dim}) : r_star;
  const Tensor g = fuse(x_hat, r_eff, store, config);

  double product = 1.0;
  for (int k = kRootLayer; k >= 2; --k) {
    const std::string& node_id = path.at_layer(k);
    const Tensor z = ablations.no_gated_memory
                         ? g
                         : gate_step(x_hat, k, node_id, tree, g, store, config,
                                     /*train_mode=*/false);
    const std::vector<std::string>& children = tree.taxonomy.node(k, node_id).children;
    const std::map<std::string, double> probs =
        score_children(z, k - 1, children, tree, store, config);
    product *= probs.at(path.at_layer(k - 1));
  }
  return product;
}

std::string render_tree(const RelationTree& tree) {
  std::ostringstream out;
  auto emit = [&](const auto& self, const std::string& id, int layer, int depth) -> void {
    const TaxonomyNode& node = tree.taxonomy.node(layer, id);
    char norms[96];
    std::snprintf(norms, sizeof norms, "|r|=%.4f |C|=%.4f",
                  l2_norm(tree.embedding_at(layer, id)), l2_norm(tree.cell_at(layer, id)));
    out << std::string(static_cast<std::size_t>(depth) * 2, ' ') << id << "  [layer " << layer
        << ", children " << node.children.size() << ", " << norms << "]\n";
    for (const std::string& child : node.children) self(self, child, layer - 1, depth + 1);
  };
  emit(emit, kRootId, kRootLayer, 0);
  return out.str();
}

}  // namespace drex
