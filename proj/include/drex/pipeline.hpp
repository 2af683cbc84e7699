#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drex/corpus.hpp"
#include "drex/detector.hpp"
#include "drex/embeddings.hpp"
#include "drex/encoder.hpp"
#include "drex/gradcheck.hpp"
#include "drex/hrs.hpp"
#include "drex/params.hpp"

namespace drex {

// Every knob of the end-to-end system. A JSON config may set any subset
// of these fields; the rest keep the defaults below. Dimensions and
// rates must be positive, epoch/iteration counts non-negative, dropout
// in [0,1), and the ranking margin in [0,1].
struct PipelineConfig {
  // Architecture.
  std::size_t word_dim = 50;
  std::size_t pos_dim = 5;
  std::size_t filters = 230;
  int window = 3;
  std::int64_t max_rel_dist = 30;
  std::size_t relation_dim = 50;  // also the memory-cell width default twin
  std::size_t cell_dim = 50;
  std::size_t detector_extra_dim = 64;
  // Optimization.
  std::size_t batch_size = 64;
  double lr_pretrain = 0.02;
  double lr_joint = 0.01;
  double dropout = 0.5;
  double margin = 0.5;  // ranking-loss margin
  std::int64_t pretrain_epochs = 5;
  std::int64_t joint_iterations = 30;
  std::size_t max_outside_negatives = 5;
  std::uint64_t seed = 1;
  // Entity/relation vector pretraining (translation embeddings over the
  // distinct training facts).
  double transe_margin = 1.0;
  std::int64_t transe_epochs = 50;
  double transe_lr = 0.01;
  // Ablations.
  bool no_rl = false;  // skip the detector entirely; bags enter whole
  bool no_ir = false;  // implicit relation replaced by zeros everywhere
  bool no_gm = false;  // memory gates bypassed, cells never written
  bool no_wl = false;  // uniform layer weights in the ranking loss

  EncoderConfig encoder() const;
  DetectorConfig detector() const;
  HrsConfig hrs() const;
  HrsAblations ablations() const;
  void validate() const;
};

// Strict JSON mapping: unknown keys raise ValidationError so typos
// cannot silently fall back to defaults.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);
nlohmann::json config_to_json(const PipelineConfig& config);

// A fully materialized system: every trainable parameter, the frozen
// lookup tables, the relation taxonomy and tree, and the detector's
// reward baseline.
struct Model {
  PipelineConfig config;
  ParameterStore params;
  EmbeddingTable words;      // frozen after init
  EmbeddingTable entities;   // frozen after init
  EmbeddingTable relations;  // frozen after init; the tree's leaves
  Taxonomy taxonomy;         // built from the training bags
  RelationTree tree;
  double baseline = 0.0;
  bool baseline_initialized = false;

  // t - h from the entity table (zeros under no_ir or for unknown ids).
  Tensor implicit_relation_for(const Bag& bag) const;
};

// Optional substitutes for the internally derived lookup tables,
// dimension-checked against the config; useful for controlled
// experiments with pinned vectors.
struct InitOverrides {
  const EmbeddingTable* words = nullptr;
  const EmbeddingTable* entities = nullptr;
  const EmbeddingTable* relations = nullptr;
};

// Builds the vocabulary and entity/relation vectors from the training
// bags, registers every parameter group (encoder, leaf classifier,
// detector, relation tree), and assembles the tree. Requires at least
// one non-NA bag.
Model init_model(const std::vector<Bag>& train_bags, const PipelineConfig& config,
                 const InitOverrides& overrides = {});

// Cross-entropy pretraining of the encoder plus a linear-softmax leaf
// classifier; every sentence carries its bag's label, NA bags are
// skipped, dropout applies to the sentence embedding. Returns the mean
// training cross-entropy of each epoch.
std::vector<double> pretrain_encoder(Model& model, const std::vector<Bag>& train_bags);

// Policy-gradient pretraining of the detector with rewards from the
// frozen pretrained classifier: reward = mean log p(bag label | kept
// sentence). Returns the mean terminal reward of each epoch. Under
// no_rl this is a no-op returning an empty vector.
std::vector<double> pretrain_detector(Model& model, const std::vector<Bag>& train_bags);

// Iterative joint schedule; per batch of bags: (1) sampled detector
// episodes choose each bag's correct set, (2) the relation tree takes an
// Adam step on the mean ranking loss of the selected-mean embeddings
// (memory cells update along each true path, in batch order), (3) fresh
// per-sentence path probabilities of the bag label reward the episodes,
// (4) the detector takes a policy-gradient step. The encoder stays
// frozen throughout; under no_rl steps 1, 3 and 4 disappear and whole
// bags enter. Returns the mean ranking loss of each iteration.
std::vector<double> joint_train(Model& model, const std::vector<Bag>& train_bags);

struct PrPoint {
  double confidence = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Per-bag evaluation record, in test-bag order.
struct BagOutcome {
  std::string gold_relation;
  bool predicted_na = false;
  // 1-based rank of the gold leaf among all leaves by descending
  // confidence (ties toward smaller ids); 0 when NA was predicted or
  // the gold label is NA/absent from the tree.
  std::size_t gold_rank = 0;
  std::vector<std::size_t> selected;  // kept sentence indices, ascending
  std::size_t num_sentences = 0;
};

// Micro-averaged noise identification vs planted flags: a sentence is
// predicted noisy iff the detector dropped it. Empty denominators score
// 1.0 when the other side is empty too, else 0.0.
struct DenoiseStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t true_positives = 0;
  std::int64_t predicted_noisy = 0;
  std::int64_t planted_noisy = 0;
};

inline constexpr std::array<std::int64_t, 3> kPrecisionCutoffs{100, 200, 300};
inline constexpr std::array<int, 3> kHitsKs{10, 15, 20};
inline constexpr std::array<std::int64_t, 2> kHitsThresholds{100, 200};

struct EvalReport {
  // One point per (bag, leaf relation) pair, ordered by descending
  // confidence with ties broken by bag index then relation id; NA is
  // never a candidate. Recall is non-decreasing down the list.
  std::vector<PrPoint> pr_points;
  std::int64_t gold_facts = 0;
  std::map<std::int64_t, double> p_at_n;  // keys kPrecisionCutoffs
  double p_at_n_average = 0.0;
  // training-instance threshold -> K -> macro Hits@K over the long-tail
  // relations present in the test bags.
  std::map<std::int64_t, std::map<int, double>> macro_hits;
  bool has_denoise = false;
  DenoiseStats denoise;
  std::vector<BagOutcome> bags;
};

// Held-out evaluation: greedy detection without forced selection (an
// emptied bag is predicted NA with zero confidence for every relation),
// then a path probability per non-NA leaf. Read-only on the model's
// memory cells.
EvalReport evaluate(Model& model, const std::vector<Bag>& test_bags);

// Precision among the top n points (the whole list when shorter; 0.0
// when the list is empty).
double precision_at(const EvalReport& report, std::int64_t n);
// Macro Hits@K over an explicit relation subset; relations without test
// bags are skipped, an effectively empty subset scores 0.0.
double macro_hits_at(const EvalReport& report, const std::set<std::string>& subset, int k);

// Writes pr_curve.csv (confidence,precision,recall), metrics.json, and
// pr_curve.svg under out_dir. Two exports of one report are
// byte-identical.
void export_report(const EvalReport& report, const std::string& out_dir);

// Checkpointing: parameters with optimizer state, the three lookup
// tables, memory cells, detector baseline, config, and the taxonomy.
// Round-trips are bit-exact; mismatched contents raise
// CompatibilityError on load.
void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

// Central-difference audit of a composite loss touching every parameter
// group at once: encoder -> classifier cross-entropy, encoder -> bag
// mean -> tree ranking loss, and the teacher-forced policy surrogate,
// all on one tape (dropout disabled). Dimensions come from the config,
// the two-bag fixture is fixed.
GradCheckReport composite_grad_check(const PipelineConfig& config);

// Compact dimensions sized so the full-coordinate audit finishes in
// seconds; used by the CLI and the acceptance suite when no config is
// supplied.
PipelineConfig compact_audit_config();

}  // namespace drex
