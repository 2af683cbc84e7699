#include "drex/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <utility>

#include "drex/errors.hpp"
#include "drex/rng.hpp"

namespace drex {

namespace {

Tensor glorot_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     const std::string& label) {
  Rng rng(seed, label);
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

std::uint64_t want_u64(const nlohmann::json& v, const char* key) {
  // In-memory json may carry a non-negative value as a signed integer.
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ValidationError(std::string("config: ") + key + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::int64_t want_i64(const nlohmann::json& v, const char* key) {
  if (!v.is_number_integer())
    throw ValidationError(std::string("config: ") + key + " must be an integer");
  return v.get<std::int64_t>();
}

double want_double(const nlohmann::json& v, const char* key) {
  if (!v.is_number()) throw ValidationError(std::string("config: ") + key + " must be a number");
  return v.get<double>();
}

bool want_bool(const nlohmann::json& v, const char* key) {
  if (!v.is_boolean()) throw ValidationError(std::string("config: ") + key + " must be a boolean");
  return v.get<bool>();
}

void require_positive(double v, const char* key) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw ValidationError(std::string("config: ") + key + " must be positive");
}

}  // namespace

EncoderConfig PipelineConfig::encoder() const {
  EncoderConfig e;
  e.word_dim = word_dim;
  e.pos_dim = pos_dim;
  e.filters = filters;
  e.window = window;
  e.max_rel_dist = max_rel_dist;
  return e;
}

DetectorConfig PipelineConfig::detector() const {
  DetectorConfig d;
  d.sentence_dim = 3 * filters;
  d.relation_dim = relation_dim;
  d.extra_dim = detector_extra_dim;
  return d;
}

HrsConfig PipelineConfig::hrs() const {
  HrsConfig h;
  h.sentence_dim = 3 * filters;
  h.relation_dim = relation_dim;
  h.cell_dim = cell_dim;
  return h;
}

HrsAblations PipelineConfig::ablations() const {
  HrsAblations a;
  a.no_weighted_loss = no_wl;
  a.no_gated_memory = no_gm;
  a.no_implicit_relation = no_ir;
  return a;
}

void PipelineConfig::validate() const {
  if (word_dim == 0) throw ValidationError("config: word_dim must be positive");
  if (pos_dim == 0) throw ValidationError("config: pos_dim must be positive");
  if (filters == 0) throw ValidationError("config: filters must be positive");
  if (window < 1) throw ValidationError("config: window must be positive");
  if (max_rel_dist < 1) throw ValidationError("config: max_rel_dist must be positive");
  if (relation_dim == 0) throw ValidationError("config: relation_dim must be positive");
  if (cell_dim == 0) throw ValidationError("config: cell_dim must be positive");
  if (detector_extra_dim == 0)
    throw ValidationError("config: detector_extra_dim must be positive");
  if (batch_size == 0) throw ValidationError("config: batch_size must be positive");
  require_positive(lr_pretrain, "lr_pretrain");
  require_positive(lr_joint, "lr_joint");
  require_positive(transe_lr, "transe_lr");
  require_positive(transe_margin, "transe_margin");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ValidationError("config: dropout must lie in [0, 1)");
  if (!(margin >= 0.0 && margin <= 1.0))
    throw ValidationError("config: margin must lie in [0, 1]");
  if (pretrain_epochs < 0) throw ValidationError("config: pretrain_epochs must be non-negative");
  if (joint_iterations < 0)
    throw ValidationError("config: joint_iterations must be non-negative");
  if (transe_epochs < 0) throw ValidationError("config: transe_epochs must be non-negative");
}

PipelineConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  PipelineConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "word_dim") c.word_dim = want_u64(value, "word_dim");
    else if (key == "pos_dim") c.pos_dim = want_u64(value, "pos_dim");
    else if (key == "filters") c.filters = want_u64(value, "filters");
    else if (key == "window") c.window = static_cast<int>(want_i64(value, "window"));
    else if (key == "max_rel_dist") c.max_rel_dist = want_i64(value, "max_rel_dist");
    else if (key == "relation_dim") c.relation_dim = want_u64(value, "relation_dim");
    else if (key == "cell_dim") c.cell_dim = want_u64(value, "cell_dim");
    else if (key == "detector_extra_dim")
      c.detector_extra_dim = want_u64(value, "detector_extra_dim");
    else if (key == "batch_size") c.batch_size = want_u64(value, "batch_size");
    else if (key == "lr_pretrain") c.lr_pretrain = want_double(value, "lr_pretrain");
    else if (key == "lr_joint") c.lr_joint = want_double(value, "lr_joint");
    else if (key == "dropout") c.dropout = want_double(value, "dropout");
    else if (key == "margin") c.margin = want_double(value, "margin");
    else if (key == "pretrain_epochs") c.pretrain_epochs = want_i64(value, "pretrain_epochs");
    else if (key == "joint_iterations") c.joint_iterations = want_i64(value, "joint_iterations");
    else if (key == "max_outside_negatives")
      c.max_outside_negatives = want_u64(value, "max_outside_negatives");
    else if (key == "seed") c.seed = want_u64(value, "seed");
    else if (key == "transe_margin") c.transe_margin = want_double(value, "transe_margin");
    else if (key == "transe_epochs") c.transe_epochs = want_i64(value, "transe_epochs");
    else if (key == "transe_lr") c.transe_lr = want_double(value, "transe_lr");
    else if (key == "no_rl") c.no_rl = want_bool(value, "no_rl");
    else if (key == "no_ir") c.no_ir = want_bool(value, "no_ir");
    else if (key == "no_gm") c.no_gm = want_bool(value, "no_gm");
    else if (key == "no_wl") c.no_wl = want_bool(value, "no_wl");
    else throw ValidationError("config: unknown key: " + key);
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["word_dim"] = c.word_dim;
  j["pos_dim"] = c.pos_dim;
  j["filters"] = c.filters;
  j["window"] = c.window;
  j["max_rel_dist"] = c.max_rel_dist;
  j["relation_dim"] = c.relation_dim;
  j["cell_dim"] = c.cell_dim;
  j["detector_extra_dim"] = c.detector_extra_dim;
  j["batch_size"] = c.batch_size;
  j["lr_pretrain"] = c.lr_pretrain;
  j["lr_joint"] = c.lr_joint;
  j["dropout"] = c.dropout;
  j["margin"] = c.margin;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["joint_iterations"] = c.joint_iterations;
  j["max_outside_negatives"] = c.max_outside_negatives;
  j["seed"] = c.seed;
  j["transe_margin"] = c.transe_margin;
  j["transe_epochs"] = c.transe_epochs;
  j["transe_lr"] = c.transe_lr;
  j["no_rl"] = c.no_rl;
  j["no_ir"] = c.no_ir;
  j["no_gm"] = c.no_gm;
  j["no_wl"] = c.no_wl;
  return j;
}

Tensor Model::implicit_relation_for(const Bag& bag) const {
  if (config.no_ir) return Tensor::zeros({config.relation_dim});
  return implicit_relation(entities.lookup(bag.head_id), entities.lookup(bag.tail_id));
}

namespace {

// Frozen per-bag features shared by the training and evaluation passes.
struct BagFeatures {
  const Bag* bag = nullptr;
  std::vector<Tensor> embeddings;
  Tensor r_star;
  RelationPath path;
  std::size_t leaf_index = 0;
};

std::size_t leaf_index_of(const Taxonomy& taxonomy, const std::string& leaf) {
  const std::vector<std::string>& leaves = taxonomy.leaves();
  auto it = std::lower_bound(leaves.begin(), leaves.end(), leaf);
  if (it == leaves.end() || *it != leaf) {
    throw ValidationError("pipeline: relation label not in the model's taxonomy: " + leaf);
  }
  return static_cast<std::size_t>(it - leaves.begin());
}

// Labeled, non-empty bags with their frozen encoder outputs.
std::vector<BagFeatures> featurize_training(const Model& model, const std::vector<Bag>& bags) {
  const EncoderConfig enc = model.config.encoder();
  std::vector<BagFeatures> out;
  for (const Bag& bag : bags) {
    if (bag.relation == kNaLabel || bag.sentences.empty()) continue;
    BagFeatures f;
    f.bag = &bag;
    f.embeddings.reserve(bag.sentences.size());
    for (const Sentence& s : bag.sentences) {
      f.embeddings.push_back(encode_sentence(s, model.words, model.params, enc));
    }
    f.r_star = model.implicit_relation_for(bag);
    f.path = parse_relation_path(bag.relation);
    f.leaf_index = leaf_index_of(model.taxonomy, f.path.leaf());
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

Model init_model(const std::vector<Bag>& train_bags, const PipelineConfig& config,
                 const InitOverrides& overrides) {
  config.validate();
  if (train_bags.empty()) throw ValidationError("pipeline: training corpus is empty");

  std::vector<std::string> labels;
  std::map<std::string, std::int64_t> counts;
  for (const Bag& bag : train_bags) {
    if (bag.relation == kNaLabel) continue;
    labels.push_back(bag.relation);
    counts[bag.relation] += static_cast<std::int64_t>(bag.sentences.size());
  }
  if (labels.empty())
    throw ValidationError("pipeline: training corpus has no non-NA bags");

  Model m;
  m.config = config;

  // Vocabulary and word vectors.
  if (overrides.words != nullptr) {
    if (overrides.words->dim != config.word_dim)
      throw CompatibilityError("pipeline: word table width does not match word_dim");
    m.words = *overrides.words;
  } else {
    std::set<std::string> vocab;
    for (const Bag& bag : train_bags) {
      for (const Sentence& s : bag.sentences) vocab.insert(s.tokens.begin(), s.tokens.end());
    }
    m.words = EmbeddingTable(config.word_dim);
    Rng rng(config.seed, "init:words");
    const double sigma = 1.0 / std::sqrt(static_cast<double>(config.word_dim));
    for (const std::string& token : vocab) {
      Tensor v = Tensor::zeros({config.word_dim});
      for (double& x : v.data) x = rng.normal() * sigma;
      m.words.insert(token, std::move(v));
    }
    if (!m.words.has(kPadToken)) m.words.insert(kPadToken, Tensor::zeros({config.word_dim}));
  }

  // Entity/relation vectors from the distinct training facts.
  if (overrides.entities == nullptr || overrides.relations == nullptr) {
    std::vector<Triple> triples;
    std::set<std::string> seen;
    for (const Bag& bag : train_bags) {
      if (bag.relation == kNaLabel) continue;
      std::string key = bag.head_id + '\x1f' + bag.relation + '\x1f' + bag.tail_id;
      if (seen.insert(std::move(key)).second) {
        triples.push_back(Triple{bag.head_id, bag.relation, bag.tail_id});
      }
    }
    TranseResult pretrained = train_transe(triples, config.relation_dim, config.transe_margin,
                                           config.transe_epochs, config.transe_lr, config.seed);
    if (overrides.entities == nullptr) m.entities = std::move(pretrained.entities);
    if (overrides.relations == nullptr) m.relations = std::move(pretrained.relations);
  }
  if (overrides.entities != nullptr) {
    if (overrides.entities->dim != config.relation_dim)
      throw CompatibilityError("pipeline: entity table width does not match relation_dim");
    m.entities = *overrides.entities;
  }
  if (overrides.relations != nullptr) {
    if (overrides.relations->dim != config.relation_dim)
      throw CompatibilityError("pipeline: relation table width does not match relation_dim");
    m.relations = *overrides.relations;
  }

  m.taxonomy = build_taxonomy(labels, counts);
  m.tree = build_tree(m.taxonomy, m.relations, config.cell_dim);

  init_encoder_params(m.params, config.encoder(), config.seed);
  init_detector_params(m.params, config.detector(), config.seed);
  init_hrs_params(m.params, config.hrs(), config.seed);
  const std::size_t n_leaves = m.taxonomy.leaves().size();
  m.params.add("classifier.weight",
               glorot_matrix(n_leaves, 3 * config.filters, config.seed, "init:classifier.weight"));
  m.params.add("classifier.bias", Tensor::zeros({n_leaves}));
  return m;
}

std::vector<double> pretrain_encoder(Model& model, const std::vector<Bag>& train_bags) {
  if (train_bags.empty()) throw ValidationError("pipeline: training corpus is empty");
  if (model.config.pretrain_epochs == 0) return {};

  struct Item {
    const Sentence* sentence;
    std::size_t label;
  };
  std::vector<Item> items;
  for (const Bag& bag : train_bags) {
    if (bag.relation == kNaLabel) continue;
    const std::size_t label =
        leaf_index_of(model.taxonomy, parse_relation_path(bag.relation).leaf());
    for (const Sentence& s : bag.sentences) items.push_back(Item{&s, label});
  }
  if (items.empty()) throw ValidationError("pipeline: no labeled sentences to pretrain on");

  const PipelineConfig& config = model.config;
  const EncoderConfig enc = config.encoder();
  model.params.zero_grads();
  Rng shuffle_rng(config.seed, "pretrain-encoder:shuffle");
  Rng dropout_rng(config.seed, "pretrain-encoder:dropout");
  AdamOptions opt;
  opt.lr = config.lr_pretrain;
  static const char* kStepped[] = {"encoder.filters", "encoder.filter_bias",
                                   "encoder.position_table", "classifier.weight",
                                   "classifier.bias"};

  std::vector<double> losses;
  std::vector<std::size_t> order = all_indices(items.size());
  for (std::int64_t epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      Tape::Var weight = tape.param(model.params.get("classifier.weight"));
      Tape::Var bias = tape.param(model.params.get("classifier.bias"));
      std::vector<Tape::Var> terms;
      terms.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Item& item = items[order[i]];
        Tape::Var sent = encode_sentence_tape(tape, *item.sentence, model.words, model.params,
                                              enc, config.dropout, &dropout_rng);
        Tape::Var probs = tape.softmax(tape.add(tape.matvec(weight, sent), bias));
        terms.push_back(tape.scale(tape.log(tape.pick(probs, item.label)), -1.0));
      }
      Tape::Var batch_loss = tape.mean(tape.concat(terms));
      tape.backward(batch_loss);
      epoch_sum += tape.scalar(batch_loss) * static_cast<double>(terms.size());
      for (const char* name : kStepped) adam_step(model.params.get(name), opt);
    }
    losses.push_back(epoch_sum / static_cast<double>(items.size()));
  }
  return losses;
}

namespace {

// p(bag label | sentence) under the frozen pretrained classifier.
std::vector<std::vector<double>> classifier_gold_probs(const Model& model,
                                                       const std::vector<BagFeatures>& features) {
  const Tensor& weight = model.params.get("classifier.weight").value;
  const Tensor& bias = model.params.get("classifier.bias").value;
  std::vector<std::vector<double>> out(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    out[i].reserve(features[i].embeddings.size());
    for (const Tensor& emb : features[i].embeddings) {
      const Tensor probs = activate(add(matvec(weight, emb), bias), Activation::SoftmaxLastAxis);
      out[i].push_back(probs.data[features[i].leaf_index]);
    }
  }
  return out;
}

std::vector<int> trajectory_actions(const Trajectory& trajectory) {
  std::vector<int> actions;
  actions.reserve(trajectory.steps.size());
  for (const TrajectoryStep& step : trajectory.steps) actions.push_back(step.action);
  return actions;
}

}  // namespace

std::vector<double> pretrain_detector(Model& model, const std::vector<Bag>& train_bags) {
  if (model.config.no_rl) return {};
  if (train_bags.empty()) throw ValidationError("pipeline: training corpus is empty");
  if (model.config.pretrain_epochs == 0) return {};

  const std::vector<BagFeatures> features = featurize_training(model, train_bags);
  if (features.empty()) throw ValidationError("pipeline: no labeled bags to pretrain on");
  const std::vector<std::vector<double>> gold_probs = classifier_gold_probs(model, features);

  const PipelineConfig& config = model.config;
  const DetectorConfig det = config.detector();
  model.params.zero_grads();
  Rng shuffle_rng(config.seed, "pretrain-detector:shuffle");
  Rng episode_rng(config.seed, "pretrain-detector:episodes");
  AdamOptions opt;
  opt.lr = config.lr_pretrain;

  std::vector<double> epoch_rewards;
  std::vector<std::size_t> order = all_indices(features.size());
  for (std::int64_t epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double reward_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<ReinforceItem> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const BagFeatures& f = features[order[i]];
        EpisodeMode mode;
        mode.kind = EpisodeMode::Kind::Sample;
        mode.rng = &episode_rng;
        mode.force_select = true;
        const EpisodeResult episode = run_episode(f.embeddings, f.r_star, model.params, det, mode);
        std::vector<double> probs;
        probs.reserve(episode.selected.size());
        for (std::size_t j : episode.selected) probs.push_back(gold_probs[order[i]][j]);
        ReinforceItem item;
        item.embeddings = &f.embeddings;
        item.r_star = &f.r_star;
        item.actions = trajectory_actions(episode.trajectory);
        item.reward = reward_mean_log(probs);
        reward_sum += item.reward;
        batch.push_back(std::move(item));
      }
      reinforce_update(batch, model.params, det, opt, &model.baseline,
                       &model.baseline_initialized);
    }
    epoch_rewards.push_back(reward_sum / static_cast<double>(features.size()));
  }
  return epoch_rewards;
}

std::vector<double> joint_train(Model& model, const std::vector<Bag>& train_bags) {
  if (train_bags.empty()) throw ValidationError("pipeline: training corpus is empty");
  if (model.config.joint_iterations == 0) return {};

  const std::vector<BagFeatures> features = featurize_training(model, train_bags);
  if (features.empty()) throw ValidationError("pipeline: no labeled bags to train on");

  const PipelineConfig& config = model.config;
  const DetectorConfig det = config.detector();
  const HrsConfig hrs_cfg = config.hrs();
  const HrsAblations ablations = config.ablations();
  const std::vector<std::string> tree_params = hrs_param_names(hrs_cfg);
  model.params.zero_grads();
  Rng shuffle_rng(config.seed, "joint:shuffle");
  Rng episode_rng(config.seed, "joint:episodes");
  Rng negative_rng(config.seed, "joint:negatives");
  AdamOptions opt;
  opt.lr = config.lr_joint;

  std::vector<double> iteration_losses;
  std::vector<std::size_t> order = all_indices(features.size());
  for (std::int64_t iter = 0; iter < config.joint_iterations; ++iter) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t count = end - start;

      // (1) The detector picks each bag's correct set.
      std::vector<std::vector<std::size_t>> selections(count);
      std::vector<std::vector<int>> actions(count);
      for (std::size_t i = 0; i < count; ++i) {
        const BagFeatures& f = features[order[start + i]];
        if (config.no_rl) {
          selections[i] = all_indices(f.embeddings.size());
        } else {
          EpisodeMode mode;
          mode.kind = EpisodeMode::Kind::Sample;
          mode.rng = &episode_rng;
          mode.force_select = true;
          const EpisodeResult episode =
              run_episode(f.embeddings, f.r_star, model.params, det, mode);
          selections[i] = episode.selected;
          actions[i] = trajectory_actions(episode.trajectory);
        }
      }

      // (2) The relation tree trains on the selected means; memory cells
      // update along each true path in batch order.
      HrsOptions hrs_opts;
      hrs_opts.margin = config.margin;
      hrs_opts.max_outside_negatives = config.max_outside_negatives;
      hrs_opts.negative_rng = &negative_rng;
      hrs_opts.train_mode = true;
      hrs_opts.ablations = ablations;
      Tape tape;
      std::vector<Tape::Var> terms;
      terms.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        const BagFeatures& f = features[order[start + i]];
        const Tensor x_hat = encode_bag_mean(f.embeddings, selections[i]);
        terms.push_back(record_total_loss(tape, x_hat, f.r_star, f.path, model.tree,
                                          model.params, hrs_cfg, hrs_opts));
      }
      Tape::Var batch_loss = tape.mean(tape.concat(terms));
      tape.backward(batch_loss);
      loss_sum += tape.scalar(batch_loss) * static_cast<double>(count);
      for (const std::string& name : tree_params) adam_step(model.params.get(name), opt);

      // (3) Fresh path probabilities reward the episodes, (4) and the
      // detector takes its policy-gradient step.
      if (!config.no_rl) {
        std::vector<ReinforceItem> batch;
        batch.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
          const BagFeatures& f = features[order[start + i]];
          std::vector<double> probs;
          probs.reserve(selections[i].size());
          for (std::size_t j : selections[i]) {
            probs.push_back(path_probability(f.embeddings[j], f.r_star, f.path.leaf(), model.tree,
                                             model.params, hrs_cfg, ablations));
          }
          ReinforceItem item;
          item.embeddings = &f.embeddings;
          item.r_star = &f.r_star;
          item.actions = std::move(actions[i]);
          item.reward = reward_mean_log(probs);
          batch.push_back(std::move(item));
        }
        reinforce_update(batch, model.params, det, opt, &model.baseline,
                         &model.baseline_initialized);
      }
    }
    iteration_losses.push_back(loss_sum / static_cast<double>(features.size()));
  }
  return iteration_losses;
}

double precision_at(const EvalReport& report, std::int64_t n) {
  if (n <= 0 || report.pr_points.empty()) return 0.0;
  const std::size_t idx =
      std::min(static_cast<std::size_t>(n), report.pr_points.size()) - 1;
  return report.pr_points[idx].precision;
}

double macro_hits_at(const EvalReport& report, const std::set<std::string>& subset, int k) {
  double sum = 0.0;
  std::size_t relations = 0;
  for (const std::string& relation : subset) {
    std::int64_t total = 0;
    std::int64_t hits = 0;
    for (const BagOutcome& bag : report.bags) {
      if (bag.gold_relation != relation) continue;
      ++total;
      if (bag.gold_rank >= 1 && bag.gold_rank <= static_cast<std::size_t>(k)) ++hits;
    }
    if (total == 0) continue;
    sum += static_cast<double>(hits) / static_cast<double>(total);
    ++relations;
  }
  return relations == 0 ? 0.0 : sum / static_cast<double>(relations);
}

namespace {

// Confidence of every leaf for one bag embedding, sharing the gated
// read and child softmax of each internal node across the leaves below
// it. Factor for factor this matches path_probability: same calls on
// the same inputs, just computed once per node instead of once per leaf.
std::vector<double> leaf_confidences(const Tensor& x_hat, const Tensor& r_star, Model& model,
                                     const HrsConfig& hrs_cfg, const HrsAblations& ablations) {
  const std::vector<std::string>& leaves = model.taxonomy.leaves();
  const Tensor r_eff =
      ablations.no_implicit_relation ? Tensor::zeros({hrs_cfg.relation_dim}) : r_star;
  const Tensor g = fuse(x_hat, r_eff, model.params, hrs_cfg);
  std::array<std::map<std::string, std::map<std::string, double>>, 5> child_probs;
  for (int layer = 4; layer >= 2; --layer) {
    for (const auto& [id, node] : model.taxonomy.nodes[static_cast<std::size_t>(layer)]) {
      const Tensor z = ablations.no_gated_memory
                           ? g
                           : gate_step(x_hat, layer, id, model.tree, g, model.params, hrs_cfg,
                                       /*train_mode=*/false);
      child_probs[static_cast<std::size_t>(layer)][id] =
          score_children(z, layer - 1, node.children, model.tree, model.params, hrs_cfg);
    }
  }
  std::vector<double> confidence(leaves.size(), 0.0);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const RelationPath path = parse_relation_path(leaves[li]);
    double product = 1.0;
    for (int layer = 4; layer >= 2; --layer) {
      product *= child_probs[static_cast<std::size_t>(layer)]
                     .at(path.at_layer(layer))
                     .at(path.at_layer(layer - 1));
    }
    confidence[li] = product;
  }
  return confidence;
}

}  // namespace

EvalReport evaluate(Model& model, const std::vector<Bag>& test_bags) {
  const PipelineConfig& config = model.config;
  const EncoderConfig enc = config.encoder();
  const DetectorConfig det = config.detector();
  const HrsConfig hrs_cfg = config.hrs();
  const HrsAblations ablations = config.ablations();
  const std::vector<std::string>& leaves = model.taxonomy.leaves();

  EvalReport report;
  report.bags.reserve(test_bags.size());

  struct Candidate {
    double confidence;
    std::size_t bag;
    std::size_t relation;
    bool correct;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(test_bags.size() * leaves.size());
  std::int64_t true_positives = 0;
  std::int64_t predicted_noisy = 0;
  std::int64_t planted_noisy = 0;
  bool any_flags = false;

  for (std::size_t bi = 0; bi < test_bags.size(); ++bi) {
    const Bag& bag = test_bags[bi];
    BagOutcome outcome;
    outcome.gold_relation = bag.relation;
    outcome.num_sentences = bag.sentences.size();

    std::vector<Tensor> embeddings;
    embeddings.reserve(bag.sentences.size());
    for (const Sentence& s : bag.sentences) {
      embeddings.push_back(encode_sentence(s, model.words, model.params, enc));
    }
    const Tensor r_star = model.implicit_relation_for(bag);

    if (config.no_rl) {
      outcome.selected = all_indices(embeddings.size());
    } else {
      EpisodeMode mode;
      mode.kind = EpisodeMode::Kind::Greedy;
      mode.force_select = false;  // an emptied bag means NA at inference
      outcome.selected = run_episode(embeddings, r_star, model.params, det, mode).selected;
    }

    std::vector<double> confidence(leaves.size(), 0.0);
    if (outcome.selected.empty()) {
      outcome.predicted_na = true;
    } else {
      const Tensor x_hat = encode_bag_mean(embeddings, outcome.selected);
      confidence = leaf_confidences(x_hat, r_star, model, hrs_cfg, ablations);
    }

    if (!outcome.predicted_na && bag.relation != kNaLabel) {
      const std::string leaf = parse_relation_path(bag.relation).leaf();
      auto it = std::lower_bound(leaves.begin(), leaves.end(), leaf);
      if (it != leaves.end() && *it == leaf) {
        const std::size_t gi = static_cast<std::size_t>(it - leaves.begin());
        std::size_t rank = 1;
        for (std::size_t li = 0; li < leaves.size(); ++li) {
          if (confidence[li] > confidence[gi] || (confidence[li] == confidence[gi] && li < gi)) {
            ++rank;
          }
        }
        outcome.gold_rank = rank;
      }
    }

    for (std::size_t li = 0; li < leaves.size(); ++li) {
      candidates.push_back(Candidate{confidence[li], bi, li, leaves[li] == bag.relation});
    }

    if (!bag.noise_flags.empty()) {
      any_flags = true;
      std::vector<bool> kept(bag.sentences.size(), false);
      for (std::size_t j : outcome.selected) kept[j] = true;
      for (std::size_t j = 0; j < bag.sentences.size(); ++j) {
        const bool predicted = !kept[j];
        const bool planted = bag.noise_flags[j];
        predicted_noisy += predicted ? 1 : 0;
        planted_noisy += planted ? 1 : 0;
        true_positives += (predicted && planted) ? 1 : 0;
      }
    }

    if (bag.relation != kNaLabel) ++report.gold_facts;
    report.bags.push_back(std::move(outcome));
  }

  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.bag != b.bag) return a.bag < b.bag;
    return a.relation < b.relation;
  });
  report.pr_points.reserve(candidates.size());
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    correct += candidates[i].correct ? 1 : 0;
    PrPoint point;
    point.confidence = candidates[i].confidence;
    point.precision = static_cast<double>(correct) / static_cast<double>(i + 1);
    point.recall = report.gold_facts > 0
                       ? static_cast<double>(correct) / static_cast<double>(report.gold_facts)
                       : 0.0;
    report.pr_points.push_back(point);
  }

  double p_sum = 0.0;
  for (std::int64_t n : kPrecisionCutoffs) {
    report.p_at_n[n] = precision_at(report, n);
    p_sum += report.p_at_n[n];
  }
  report.p_at_n_average = p_sum / static_cast<double>(kPrecisionCutoffs.size());

  for (std::int64_t threshold : kHitsThresholds) {
    const std::set<std::string> subset = longtail_subset(test_bags, model.taxonomy, threshold);
    for (int k : kHitsKs) report.macro_hits[threshold][k] = macro_hits_at(report, subset, k);
  }

  report.has_denoise = any_flags;
  if (any_flags) {
    DenoiseStats& d = report.denoise;
    d.true_positives = true_positives;
    d.predicted_noisy = predicted_noisy;
    d.planted_noisy = planted_noisy;
    d.precision = predicted_noisy > 0
                      ? static_cast<double>(true_positives) / static_cast<double>(predicted_noisy)
                      : (planted_noisy == 0 ? 1.0 : 0.0);
    d.recall = planted_noisy > 0
                   ? static_cast<double>(true_positives) / static_cast<double>(planted_noisy)
                   : (predicted_noisy == 0 ? 1.0 : 0.0);
    d.f1 = (d.precision + d.recall) > 0.0 ? 2.0 * d.precision * d.recall / (d.precision + d.recall)
                                          : 0.0;
  }
  return report;
}

namespace {

std::string format_double(double v, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("failed while writing: " + path);
}

std::string render_pr_svg(const EvalReport& report) {
  // Fixed 640x480 canvas; the unit square maps onto the plot area.
  const double x0 = 60.0, y0 = 420.0, width = 540.0, height = 370.0;
  auto px = [&](double recall) { return x0 + recall * width; };
  auto py = [&](double precision) { return y0 - precision * height; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
         "viewBox=\"0 0 640 480\">\n";
  svg << "  <rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  svg << "  <line x1=\"60\" y1=\"420\" x2=\"600\" y2=\"420\" stroke=\"black\"/>\n";
  svg << "  <line x1=\"60\" y1=\"50\" x2=\"60\" y2=\"420\" stroke=\"black\"/>\n";
  for (double tick : {0.0, 0.5, 1.0}) {
    svg << "  <line x1=\"" << format_double(px(tick), "%.2f")
        << "\" y1=\"420\" x2=\"" << format_double(px(tick), "%.2f")
        << "\" y2=\"426\" stroke=\"black\"/>\n";
    svg << "  <text x=\"" << format_double(px(tick), "%.2f")
        << "\" y=\"440\" font-size=\"12\" text-anchor=\"middle\">"
        << format_double(tick, "%.1f") << "</text>\n";
    svg << "  <line x1=\"54\" y1=\"" << format_double(py(tick), "%.2f")
        << "\" x2=\"60\" y2=\"" << format_double(py(tick), "%.2f")
        << "\" stroke=\"black\"/>\n";
    svg << "  <text x=\"48\" y=\"" << format_double(py(tick) + 4.0, "%.2f")
        << "\" font-size=\"12\" text-anchor=\"end\">" << format_double(tick, "%.1f")
        << "</text>\n";
  }
  svg << "  <text x=\"330\" y=\"466\" font-size=\"14\" text-anchor=\"middle\">recall</text>\n";
  svg << "  <text x=\"20\" y=\"235\" font-size=\"14\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 20 235)\">precision</text>\n";
  svg << "  <polyline fill=\"none\" stroke=\"#1f6feb\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < report.pr_points.size(); ++i) {
    if (i > 0) svg << ' ';
    svg << format_double(px(report.pr_points[i].recall), "%.2f") << ','
        << format_double(py(report.pr_points[i].precision), "%.2f");
  }
  svg << "\"/>\n</svg>\n";
  return svg.str();
}

}  // namespace

void export_report(const EvalReport& report, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

  std::string csv = "confidence,precision,recall\n";
  for (const PrPoint& p : report.pr_points) {
    csv += format_double(p.confidence, "%.17g");
    csv += ',';
    csv += format_double(p.precision, "%.17g");
    csv += ',';
    csv += format_double(p.recall, "%.17g");
    csv += '\n';
  }
  write_file(out_dir + "/pr_curve.csv", csv);

  nlohmann::json metrics;
  metrics["counts"]["gold_facts"] = report.gold_facts;
  metrics["counts"]["pr_points"] = report.pr_points.size();
  metrics["counts"]["test_bags"] = report.bags.size();
  for (const auto& [n, value] : report.p_at_n) metrics["p_at_n"][std::to_string(n)] = value;
  metrics["p_at_n"]["average"] = report.p_at_n_average;
  for (const auto& [threshold, by_k] : report.macro_hits) {
    for (const auto& [k, value] : by_k) {
      metrics["macro_hits"][std::to_string(threshold)][std::to_string(k)] = value;
    }
  }
  if (report.has_denoise) {
    metrics["denoise"]["precision"] = report.denoise.precision;
    metrics["denoise"]["recall"] = report.denoise.recall;
    metrics["denoise"]["f1"] = report.denoise.f1;
    metrics["denoise"]["true_positives"] = report.denoise.true_positives;
    metrics["denoise"]["predicted_noisy"] = report.denoise.predicted_noisy;
    metrics["denoise"]["planted_noisy"] = report.denoise.planted_noisy;
  }
  write_file(out_dir + "/metrics.json", metrics.dump(2) + "\n");

  write_file(out_dir + "/pr_curve.svg", render_pr_svg(report));
}

namespace {

constexpr const char* kWordsPrefix = "tables.words.";
constexpr const char* kEntitiesPrefix = "tables.entities.";
constexpr const char* kRelationsPrefix = "tables.relations.";
constexpr const char* kCellPrefix = "tree.cell.";

bool strip_prefix(const std::string& name, const char* prefix, std::string* rest) {
  const std::size_t len = std::string_view(prefix).size();
  if (name.compare(0, len, prefix) != 0) return false;
  *rest = name.substr(len);
  return true;
}

// Reference parameter inventory for a config: shapes via a scratch
// initialization, so load-time verification can never drift from the
// real initializers.
ParameterStore reference_params(const PipelineConfig& config, std::size_t n_leaves) {
  ParameterStore store;
  init_encoder_params(store, config.encoder(), 0);
  init_detector_params(store, config.detector(), 0);
  init_hrs_params(store, config.hrs(), 0);
  store.add("classifier.weight", Tensor::zeros({n_leaves, 3 * config.filters}));
  store.add("classifier.bias", Tensor::zeros({n_leaves}));
  return store;
}

}  // namespace

void save_model(const std::string& path, const Model& model) {
  std::map<std::string, Tensor> extras;
  for (const auto& [id, v] : model.words.vectors) extras.emplace(kWordsPrefix + id, v);
  for (const auto& [id, v] : model.entities.vectors) extras.emplace(kEntitiesPrefix + id, v);
  for (const auto& [id, v] : model.relations.vectors) extras.emplace(kRelationsPrefix + id, v);
  for (int layer = 1; layer <= 4; ++layer) {
    for (const auto& [id, cell] : model.tree.cell[static_cast<std::size_t>(layer)]) {
      extras.emplace(kCellPrefix + std::to_string(layer) + "." + id, cell);
    }
  }
  extras.emplace("detector.baseline", Tensor::scalar(model.baseline));
  extras.emplace("detector.baseline_initialized",
                 Tensor::scalar(model.baseline_initialized ? 1.0 : 0.0));

  nlohmann::json meta;
  meta["kind"] = "rhnet-model";
  meta["version"] = 1;
  meta["config"] = config_to_json(model.config);
  meta["taxonomy"]["labels"] = model.taxonomy.leaves();
  meta["taxonomy"]["train_counts"] = model.taxonomy.train_counts;
  save_checkpoint(path, model.params, extras, meta);
}

Model load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.is_object() || ck.meta.value("kind", std::string()) != "rhnet-model") {
    throw CompatibilityError("not a model checkpoint: " + path);
  }

  Model m;
  try {
    m.config = config_from_json(ck.meta.at("config"));
    const auto labels = ck.meta.at("taxonomy").at("labels").get<std::vector<std::string>>();
    const auto counts = ck.meta.at("taxonomy")
                            .at("train_counts")
                            .get<std::map<std::string, std::int64_t>>();
    m.taxonomy = build_taxonomy(labels, counts);
  } catch (const nlohmann::json::exception& e) {
    throw CompatibilityError(std::string("model checkpoint meta is malformed: ") + e.what());
  }

  m.words = EmbeddingTable(m.config.word_dim);
  m.entities = EmbeddingTable(m.config.relation_dim);
  m.relations = EmbeddingTable(m.config.relation_dim);
  std::map<int, std::map<std::string, Tensor>> pending_cells;
  bool saw_baseline = false;
  bool saw_baseline_flag = false;
  for (auto& [name, tensor] : ck.extras) {
    std::string rest;
    if (strip_prefix(name, kWordsPrefix, &rest)) {
      if (tensor.size() != m.config.word_dim)
        throw CompatibilityError("word vector width mismatch for " + rest);
      m.words.insert(rest, std::move(tensor));
    } else if (strip_prefix(name, kEntitiesPrefix, &rest)) {
      if (tensor.size() != m.config.relation_dim)
        throw CompatibilityError("entity vector width mismatch for " + rest);
      m.entities.insert(rest, std::move(tensor));
    } else if (strip_prefix(name, kRelationsPrefix, &rest)) {
      if (tensor.size() != m.config.relation_dim)
        throw CompatibilityError("relation vector width mismatch for " + rest);
      m.relations.insert(rest, std::move(tensor));
    } else if (strip_prefix(name, kCellPrefix, &rest)) {
      const std::size_t dot = rest.find('.');
      if (dot == std::string::npos)
        throw CompatibilityError("malformed memory-cell entry: " + name);
      int layer = 0;
      try {
        layer = std::stoi(rest.substr(0, dot));
      } catch (const std::exception&) {
        throw CompatibilityError("malformed memory-cell layer: " + name);
      }
      if (layer < 1 || layer > 4)
        throw CompatibilityError("memory-cell layer out of range: " + name);
      if (tensor.size() != m.config.cell_dim)
        throw CompatibilityError("memory-cell width mismatch: " + name);
      pending_cells[layer].emplace(rest.substr(dot + 1), std::move(tensor));
    } else if (name == "detector.baseline") {
      m.baseline = tensor.data.at(0);
      saw_baseline = true;
    } else if (name == "detector.baseline_initialized") {
      m.baseline_initialized = tensor.data.at(0) != 0.0;
      saw_baseline_flag = true;
    } else {
      throw CompatibilityError("unknown checkpoint entry: " + name);
    }
  }
  if (!saw_baseline || !saw_baseline_flag) {
    throw CompatibilityError("model checkpoint lacks the detector baseline");
  }

  try {
    m.tree = build_tree(m.taxonomy, m.relations, m.config.cell_dim);
  } catch (const MissingEmbeddingError& e) {
    throw CompatibilityError(std::string("model checkpoint relation table is incomplete: ") +
                             e.what());
  }
  for (auto& [layer, cells] : pending_cells) {
    auto& layer_cells = m.tree.cell[static_cast<std::size_t>(layer)];
    for (auto& [id, cell] : cells) {
      auto it = layer_cells.find(id);
      if (it == layer_cells.end())
        throw CompatibilityError("memory cell for unknown tree node: " + id);
      it->second = std::move(cell);
    }
  }

  const ParameterStore reference = reference_params(m.config, m.taxonomy.leaves().size());
  if (ck.params.size() != reference.size()) {
    throw CompatibilityError("model checkpoint parameter inventory does not match the config");
  }
  for (const auto& [name, expected] : reference) {
    if (!ck.params.has(name))
      throw CompatibilityError("model checkpoint lacks parameter: " + name);
    if (ck.params.get(name).value.shape != expected.value.shape)
      throw CompatibilityError("parameter shape mismatch: " + name);
  }
  m.params = std::move(ck.params);
  return m;
}

namespace {

// Fixed two-bag corpus for the composite audit: four leaf relations over
// two branches so sibling and outside negatives both exist.
struct AuditFixture {
  std::vector<Bag> bags;
  std::vector<std::string> labels;
};

AuditFixture audit_fixture() {
  AuditFixture fx;
  fx.labels = {"/ga/sa/r0", "/ga/sa/r1", "/ga/sb/r2", "/gb/sc/r3"};
  Bag bag0;
  bag0.head_id = "e0";
  bag0.tail_id = "e1";
  bag0.relation = fx.labels[0];
  bag0.sentences.push_back(Sentence{{"t0", "t1", "t2", "t3"}, 0, 3, "e0", "e1"});
  bag0.sentences.push_back(Sentence{{"t2", "t4", "t0", "t5", "t1"}, 1, 4, "e0", "e1"});
  Bag bag1;
  bag1.head_id = "e2";
  bag1.tail_id = "e3";
  bag1.relation = fx.labels[3];
  bag1.sentences.push_back(Sentence{{"t5", "t0", "t3"}, 0, 2, "e2", "e3"});
  bag1.sentences.push_back(Sentence{{"t1", "t2", "t3", "t4"}, 2, 0, "e2", "e3"});
  bag1.sentences.push_back(Sentence{{"t4", "t5", "t2", "t0", "t3"}, 4, 1, "e2", "e3"});
  fx.bags = {std::move(bag0), std::move(bag1)};
  return fx;
}

EmbeddingTable random_table(const std::vector<std::string>& ids, std::size_t dim,
                            std::uint64_t seed, const std::string& label, double scale) {
  EmbeddingTable table(dim);
  Rng rng(seed, label);
  for (const std::string& id : ids) {
    Tensor v = Tensor::zeros({dim});
    for (double& x : v.data) x = rng.normal() * scale;
    table.insert(id, std::move(v));
  }
  return table;
}

}  // namespace

PipelineConfig compact_audit_config() {
  PipelineConfig c;
  c.word_dim = 6;
  c.pos_dim = 2;
  c.filters = 4;
  c.window = 3;
  c.max_rel_dist = 4;
  c.relation_dim = 5;
  c.cell_dim = 5;
  c.detector_extra_dim = 7;
  c.batch_size = 2;
  c.pretrain_epochs = 1;
  c.joint_iterations = 1;
  c.transe_epochs = 5;
  c.seed = 7;
  return c;
}

GradCheckReport composite_grad_check(const PipelineConfig& config) {
  config.validate();
  const AuditFixture fx = audit_fixture();
  const std::vector<std::string> vocab = {"t0", "t1", "t2", "t3", "t4", "t5"};
  const std::vector<std::string> entity_ids = {"e0", "e1", "e2", "e3"};

  Model model;
  model.config = config;
  model.config.dropout = 0.0;  // the audit is strictly deterministic
  model.words = random_table(vocab, config.word_dim, config.seed, "audit:words",
                             1.0 / std::sqrt(static_cast<double>(config.word_dim)));
  model.words.insert(kPadToken, Tensor::zeros({config.word_dim}));
  model.entities = random_table(entity_ids, config.relation_dim, config.seed, "audit:entities", 0.5);
  model.relations =
      random_table(fx.labels, config.relation_dim, config.seed, "audit:relations", 0.5);
  std::map<std::string, std::int64_t> counts;
  for (const std::string& label : fx.labels) counts[label] = 1;
  model.taxonomy = build_taxonomy(fx.labels, counts);
  model.tree = build_tree(model.taxonomy, model.relations, config.cell_dim);
  // Nonzero memory so the gate path is exercised away from its fixpoint.
  Rng cell_rng(config.seed, "audit:cells");
  for (int layer = 2; layer <= 4; ++layer) {
    for (auto& [id, cell] : model.tree.cell[static_cast<std::size_t>(layer)]) {
      for (double& v : cell.data) v = cell_rng.normal() * 0.3;
    }
  }
  init_encoder_params(model.params, config.encoder(), config.seed);
  init_detector_params(model.params, config.detector(), config.seed);
  init_hrs_params(model.params, config.hrs(), config.seed);
  model.params.add("classifier.weight",
                   glorot_matrix(fx.labels.size(), 3 * config.filters, config.seed,
                                 "init:classifier.weight"));
  model.params.add("classifier.bias", Tensor::zeros({fx.labels.size()}));

  const EncoderConfig enc = config.encoder();
  const DetectorConfig det = config.detector();
  const HrsConfig hrs_cfg = config.hrs();
  const std::vector<int> surrogate_actions = {1, 0, 1};
  const double surrogate_advantage = 0.7;

  auto build = [&](Tape& tape) -> Tape::Var {
    Rng negative_rng(config.seed, "audit:negatives");
    HrsOptions hrs_opts;
    hrs_opts.margin = config.margin;
    hrs_opts.max_outside_negatives = config.max_outside_negatives;
    hrs_opts.negative_rng = &negative_rng;
    hrs_opts.train_mode = false;

    std::vector<Tape::Var> terms;
    std::vector<std::vector<Tape::Var>> sentences(fx.bags.size());
    for (std::size_t b = 0; b < fx.bags.size(); ++b) {
      const Bag& bag = fx.bags[b];
      for (const Sentence& s : bag.sentences) {
        sentences[b].push_back(
            encode_sentence_tape(tape, s, model.words, model.params, enc, 0.0, nullptr));
      }
      Tape::Var x_hat = tape.scale(tape.add_n(sentences[b]),
                                   1.0 / static_cast<double>(sentences[b].size()));
      const Tensor r_star = model.implicit_relation_for(bag);
      terms.push_back(record_total_loss(tape, x_hat, r_star, parse_relation_path(bag.relation),
                                        model.tree, model.params, hrs_cfg, hrs_opts));
    }

    // Classifier cross-entropy on the first bag's first sentence.
    {
      Tape::Var weight = tape.param(model.params.get("classifier.weight"));
      Tape::Var bias = tape.param(model.params.get("classifier.bias"));
      Tape::Var probs = tape.softmax(tape.add(tape.matvec(weight, sentences[0][0]), bias));
      const std::size_t label = leaf_index_of(model.taxonomy, fx.bags[0].relation);
      terms.push_back(tape.scale(tape.log(tape.pick(probs, label)), -1.0));
    }

    // Teacher-forced policy surrogate on the second bag, mirroring the
    // detector's recurrence so its parameters and the encoder both feed
    // the objective.
    {
      Tape::Var proj = tape.param(model.params.get("detector.state_proj"));
      Tape::Var select = tape.param(model.params.get("detector.select_weight"));
      Tape::Var r_star = tape.constant(model.implicit_relation_for(fx.bags[1]));
      Tape::Var s_prev = tape.constant(Tensor::zeros({det.state_dim()}));
      std::vector<Tape::Var> kept;
      std::vector<Tape::Var> log_pi;
      for (std::size_t t = 0; t < sentences[1].size(); ++t) {
        Tape::Var x_hat_t =
            kept.empty() ? tape.constant(Tensor::zeros({det.sentence_dim}))
                         : tape.scale(tape.add_n(kept), 1.0 / static_cast<double>(kept.size()));
        Tape::Var hidden =
            tape.tanh(tape.matvec(proj, tape.concat({s_prev, sentences[1][t], r_star})));
        Tape::Var state = tape.concat({hidden, x_hat_t});
        Tape::Var logit = tape.pick(tape.matvec(select, state), 0);
        const int action = surrogate_actions[t % surrogate_actions.size()];
        log_pi.push_back(action == 1 ? tape.log_sigmoid(logit)
                                     : tape.log_sigmoid(tape.scale(logit, -1.0)));
        if (action == 1) kept.push_back(sentences[1][t]);
        s_prev = state;
      }
      terms.push_back(tape.scale(tape.sum(tape.concat(log_pi)), -surrogate_advantage));
    }
    return tape.sum(tape.concat(terms));
  };

  const LossFn loss = [&]() {
    Tape tape;
    return tape.scalar(build(tape));
  };
  const GradFn backward = [&]() {
    Tape tape;
    tape.backward(build(tape));
  };
  return grad_check(model.params, loss, backward, 1e-5);
}

}  // namespace drex
