#include "drex/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "drex/errors.hpp"
#include "drex/rng.hpp"

namespace drex {

RelationPath parse_relation_path(const std::string& label) {
  if (label.empty()) throw FormatError("relation label is empty");
  if (label == kNaLabel) return {{kRootId, kNaLabel, kNaLabel, kNaLabel}};

  // Segment boundaries: position just past each segment. The leaf id is
  // always the verbatim label so corpus lookups stay exact.
  std::vector<std::size_t> ends;
  std::size_t start = label[0] == '/' ? 1 : 0;
  std::size_t seg_begin = start;
  for (std::size_t i = start; i <= label.size(); ++i) {
    if (i == label.size() || label[i] == '/') {
      if (i == seg_begin) throw FormatError("relation label has an empty segment: " + label);
      ends.push_back(i);
      seg_begin = i + 1;
    }
  }

  auto prefix = [&](std::size_t seg) { return label.substr(0, ends[seg]); };
  RelationPath path;
  path.layers[0] = kRootId;
  if (ends.size() == 1) {
    path.layers[1] = label;
    path.layers[2] = label;
  } else if (ends.size() == 2) {
    path.layers[1] = prefix(0);
    path.layers[2] = label;
  } else {
    path.layers[1] = prefix(0);
    path.layers[2] = prefix(1);
  }
  path.layers[3] = label;
  return path;
}

bool Taxonomy::has_node(int layer, const std::string& id) const {
  return layer >= 1 && layer <= 4 && nodes[static_cast<std::size_t>(layer)].count(id) != 0;
}

const TaxonomyNode& Taxonomy::node(int layer, const std::string& id) const {
  if (!has_node(layer, id))
    throw ValidationError("taxonomy has no layer-" + std::to_string(layer) + " node " + id);
  return nodes[static_cast<std::size_t>(layer)].at(id);
}

std::int64_t Taxonomy::train_count(const std::string& leaf) const {
  auto it = train_counts.find(leaf);
  return it == train_counts.end() ? 0 : it->second;
}

std::size_t Taxonomy::node_count() const {
  std::size_t n = 0;
  for (int k = 1; k <= 4; ++k) n += nodes[static_cast<std::size_t>(k)].size();
  return n;
}

Taxonomy build_taxonomy(const std::vector<std::string>& labels,
                        const std::map<std::string, std::int64_t>& train_counts) {
  Taxonomy t;
  t.nodes[4].emplace(kRootId, TaxonomyNode{kRootId, 4, {}});
  std::array<std::map<std::string, std::set<std::string>>, 5> child_sets;
  for (const std::string& label : labels) {
    if (label == kNaLabel) continue;  // routed, never part of the tree
    RelationPath path = parse_relation_path(label);
    for (int k = 4; k >= 2; --k) {
      const std::string& parent = path.at_layer(k);
      const std::string& child = path.at_layer(k - 1);
      t.nodes[static_cast<std::size_t>(k)].try_emplace(parent, TaxonomyNode{parent, k, {}});
      t.nodes[static_cast<std::size_t>(k - 1)].try_emplace(child,
                                                           TaxonomyNode{child, k - 1, {}});
      child_sets[static_cast<std::size_t>(k)][parent].insert(child);
    }
  }
  for (int k = 1; k <= 4; ++k) {
    auto& layer = t.nodes[static_cast<std::size_t>(k)];
    for (auto& [id, node] : layer) {
      const auto& kids = child_sets[static_cast<std::size_t>(k)][id];
      node.children.assign(kids.begin(), kids.end());
      t.layer_ids[static_cast<std::size_t>(k)].push_back(id);
    }
  }
  for (const auto& [label, count] : train_counts)
    if (label != kNaLabel) t.train_counts[label] = count;
  return t;
}

namespace {

std::string bag_key(const std::string& head, const std::string& tail, const std::string& rel) {
  return head + '\x1f' + tail + '\x1f' + rel;
}

}  // namespace

std::vector<Bag> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);

  std::vector<Bag> bags;
  std::map<std::string, std::size_t> bag_index;
  // Per sentence line: which bag it landed in (for flag alignment).
  std::vector<std::size_t> sentence_bag;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Sentence s;
    try {
      s.head_id = j.at("head_id").get<std::string>();
      s.tail_id = j.at("tail_id").get<std::string>();
      s.tokens = j.at("tokens").get<std::vector<std::string>>();
      s.head_pos = j.at("head_pos").get<std::size_t>();
      s.tail_pos = j.at("tail_pos").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    std::string relation;
    try {
      relation = j.at("relation").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (s.tokens.size() < 2)
      throw ValidationError(path + ":" + std::to_string(line_no) + ": fewer than 2 tokens");
    if (!(s.head_pos < s.tail_pos && s.tail_pos < s.tokens.size()))
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": entity positions must satisfy head < tail < token count");

    std::string key = bag_key(s.head_id, s.tail_id, relation);
    auto [it, inserted] = bag_index.emplace(key, bags.size());
    if (inserted) {
      Bag b;
      b.head_id = s.head_id;
      b.tail_id = s.tail_id;
      b.relation = relation;
      bags.push_back(std::move(b));
    }
    sentence_bag.push_back(it->second);
    bags[it->second].sentences.push_back(std::move(s));
  }

  std::string flags_path = path + ".flags";
  if (std::filesystem::exists(flags_path)) {
    std::ifstream fin(flags_path);
    if (!fin) throw IoError("cannot open noise-flag sidecar: " + flags_path);
    std::vector<bool> flags;
    std::string fl;
    std::size_t fl_no = 0;
    while (std::getline(fin, fl)) {
      ++fl_no;
      if (fl.empty()) continue;
      if (fl != "0" && fl != "1")
        throw FormatError(flags_path + ":" + std::to_string(fl_no) + ": expected 0 or 1");
      flags.push_back(fl == "1");
    }
    if (flags.size() != sentence_bag.size())
      throw FormatError(flags_path + ": " + std::to_string(flags.size()) +
                        " flags for " + std::to_string(sentence_bag.size()) + " sentences");
    for (std::size_t i = 0; i < flags.size(); ++i)
      bags[sentence_bag[i]].noise_flags.push_back(flags[i]);
  }
  return bags;
}

void write_corpus(const std::string& path, const std::vector<Bag>& bags) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file: " + path);
  bool any_flags = false;
  for (const Bag& b : bags) {
    if (!b.noise_flags.empty() && b.noise_flags.size() != b.sentences.size())
      throw ValidationError("bag (" + b.head_id + ", " + b.tail_id +
                            "): noise_flags length does not match sentences");
    if (!b.noise_flags.empty()) any_flags = true;
    for (const Sentence& s : b.sentences) {
      nlohmann::json j;
      j["head_id"] = s.head_id;
      j["tail_id"] = s.tail_id;
      j["relation"] = b.relation;
      j["tokens"] = s.tokens;
      j["head_pos"] = s.head_pos;
      j["tail_pos"] = s.tail_pos;
      out << j.dump() << '\n';
    }
  }
  if (!out) throw IoError("failed while writing corpus file: " + path);
  if (any_flags) {
    // The sidecar is all-or-nothing: bags without flags write zeros.
    std::ofstream fout(path + ".flags");
    if (!fout) throw IoError("cannot write noise-flag sidecar: " + path + ".flags");
    for (const Bag& b : bags)
      for (std::size_t i = 0; i < b.sentences.size(); ++i)
        fout << (b.noise_flags.empty() ? 0 : (b.noise_flags[i] ? 1 : 0)) << '\n';
  }
}

namespace {

// Bags per relation: one guaranteed bag each, the rest apportioned to
// the power-law weights by largest remainder (ties to the lower index).
std::vector<std::int64_t> apportion_bags(std::int64_t total, std::int64_t relations,
                                         double exponent) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(relations), 1);
  std::int64_t remaining = total - relations;
  std::vector<double> weights(static_cast<std::size_t>(relations));
  double weight_sum = 0.0;
  for (std::int64_t k = 0; k < relations; ++k) {
    weights[static_cast<std::size_t>(k)] = std::pow(static_cast<double>(k + 1), -exponent);
    weight_sum += weights[static_cast<std::size_t>(k)];
  }
  std::vector<std::pair<double, std::int64_t>> fractional;
  std::int64_t assigned = 0;
  for (std::int64_t k = 0; k < relations; ++k) {
    double ideal = static_cast<double>(remaining) * weights[static_cast<std::size_t>(k)] /
                   weight_sum;
    auto base = static_cast<std::int64_t>(std::floor(ideal));
    counts[static_cast<std::size_t>(k)] += base;
    assigned += base;
    fractional.emplace_back(ideal - static_cast<double>(base), k);
  }
  std::sort(fractional.begin(), fractional.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::int64_t i = 0; i < remaining - assigned; ++i)
    counts[static_cast<std::size_t>(fractional[static_cast<std::size_t>(i)].second)] += 1;
  return counts;
}

std::vector<std::string> make_sentence_tokens(std::int64_t relation, std::int64_t num_relations,
                                              std::int64_t vocab_size, const std::string& head_id,
                                              const std::string& tail_id, Rng& rng,
                                              std::size_t* head_pos, std::size_t* tail_pos) {
  std::int64_t filler_lo = 3 * num_relations;
  auto filler = [&] { return "w" + std::to_string(rng.uniform_int(filler_lo, vocab_size - 1)); };
  std::int64_t n_pre = rng.uniform_int(0, 2);
  std::int64_t n_mid1 = rng.uniform_int(1, 2);
  std::int64_t n_mid2 = rng.uniform_int(1, 2);
  std::int64_t n_post = rng.uniform_int(0, 2);

  std::vector<std::string> tokens;
  for (std::int64_t i = 0; i < n_pre; ++i) tokens.push_back(filler());
  *head_pos = tokens.size();
  tokens.push_back(head_id);
  for (std::int64_t i = 0; i < n_mid1; ++i) tokens.push_back(filler());
  for (std::int64_t j = 0; j < 3; ++j) tokens.push_back("w" + std::to_string(3 * relation + j));
  for (std::int64_t i = 0; i < n_mid2; ++i) tokens.push_back(filler());
  *tail_pos = tokens.size();
  tokens.push_back(tail_id);
  for (std::int64_t i = 0; i < n_post; ++i) tokens.push_back(filler());
  return tokens;
}

Tensor seeded_unit_vector(std::uint64_t seed, const std::string& label, std::size_t dim) {
  Rng rng(seed, label);
  Tensor v = Tensor::zeros({dim});
  for (double& x : v.data) x = rng.normal();
  double n = l2_norm(v);
  if (n == 0.0) v.data[0] = 1.0;
  return n == 0.0 ? v : scale(v, 1.0 / n);
}

}  // namespace

SyntheticCorpus generate_synthetic(const GeneratorSpec& g, std::uint64_t seed) {
  if (g.num_relations < 1) throw SpecError("generate_synthetic: num_relations must be >= 1");
  if (g.taxonomy_branching < 1 || g.taxonomy_branching > g.num_relations)
    throw SpecError("generate_synthetic: taxonomy_branching must be in [1, num_relations]");
  if (g.mid_branching < 0) throw SpecError("generate_synthetic: mid_branching must be >= 0");
  if (!(g.noise_rate >= 0.0 && g.noise_rate < 1.0))
    throw SpecError("generate_synthetic: noise_rate must be in [0, 1)");
  if (!(g.longtail_exponent > 0.0))
    throw SpecError("generate_synthetic: longtail_exponent must be > 0");
  if (g.num_entity_pairs < g.num_relations)
    throw SpecError("generate_synthetic: need at least one entity pair per relation");
  if (g.bag_size_min < 1 || g.bag_size_max < g.bag_size_min)
    throw SpecError("generate_synthetic: bag size range is empty");
  if (g.vocab_size < 3 * g.num_relations + 10)
    throw SpecError("generate_synthetic: vocab_size too small for distinct relation signatures");
  if (g.num_relations == 1 && g.noise_rate > 0.0)
    throw SpecError("generate_synthetic: noise needs a second relation to sample from");
  if (g.embedding_dim < 1) throw SpecError("generate_synthetic: embedding_dim must be >= 1");

  const std::int64_t R = g.num_relations;
  const std::int64_t B = g.taxonomy_branching;
  std::int64_t per_branch = (R + B - 1) / B;
  std::int64_t M = g.mid_branching > 0
                       ? g.mid_branching
                       : std::max<std::int64_t>(
                             1, static_cast<std::int64_t>(
                                    std::floor(std::sqrt(static_cast<double>(per_branch)))));

  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(R));
  for (std::int64_t k = 0; k < R; ++k) {
    std::int64_t branch = k % B;
    std::int64_t mid = (k / B) % M;
    labels.push_back("/g" + std::to_string(branch) + "/s" + std::to_string(mid) + "/r" +
                     std::to_string(k));
  }

  std::vector<std::int64_t> bag_counts = apportion_bags(g.num_entity_pairs, R,
                                                        g.longtail_exponent);

  // Relation assignment per bag: grouped runs shuffled into a mixed order.
  std::vector<std::int64_t> bag_relation;
  for (std::int64_t k = 0; k < R; ++k)
    bag_relation.insert(bag_relation.end(), static_cast<std::size_t>(bag_counts[
                            static_cast<std::size_t>(k)]), k);
  {
    Rng order_rng(seed, "gen:order");
    order_rng.shuffle(bag_relation);
  }

  SyntheticCorpus out;
  auto dim = static_cast<std::size_t>(g.embedding_dim);
  for (std::int64_t k = 0; k < R; ++k)
    out.gold_relations[labels[static_cast<std::size_t>(k)]] =
        seeded_unit_vector(seed, "gen:rel:" + std::to_string(k), dim);

  std::map<std::string, std::int64_t> sentence_counts;
  for (std::size_t i = 0; i < bag_relation.size(); ++i) {
    std::int64_t rel = bag_relation[i];
    const std::string& rel_label = labels[static_cast<std::size_t>(rel)];
    Rng bag_rng(seed, "gen:bag:" + std::to_string(i));

    Bag bag;
    bag.head_id = "h" + std::to_string(i);
    bag.tail_id = "t" + std::to_string(i);
    bag.relation = rel_label;
    auto bag_size = bag_rng.uniform_int(g.bag_size_min, g.bag_size_max);
    auto noisy_count = static_cast<std::size_t>(
        std::llround(g.noise_rate * static_cast<double>(bag_size)));

    Rng noise_rng(seed, "gen:noise:" + std::to_string(i));
    auto noisy_positions =
        noise_rng.sample_without_replacement(static_cast<std::size_t>(bag_size), noisy_count);
    std::set<std::size_t> noisy(noisy_positions.begin(), noisy_positions.end());

    for (std::size_t s = 0; s < static_cast<std::size_t>(bag_size); ++s) {
      std::int64_t sentence_rel = rel;
      bool is_noise = noisy.count(s) != 0;
      if (is_noise) {
        std::int64_t other = noise_rng.uniform_int(0, R - 2);
        sentence_rel = other >= rel ? other + 1 : other;
      }
      Sentence sent;
      sent.head_id = bag.head_id;
      sent.tail_id = bag.tail_id;
      sent.tokens = make_sentence_tokens(sentence_rel, R, g.vocab_size, bag.head_id, bag.tail_id,
                                         bag_rng, &sent.head_pos, &sent.tail_pos);
      bag.sentences.push_back(std::move(sent));
      bag.noise_flags.push_back(is_noise);
    }
    sentence_counts[rel_label] += bag_size;

    Rng ent_rng(seed, "gen:ent:" + std::to_string(i));
    Tensor head = Tensor::zeros({dim});
    for (double& x : head.data) x = ent_rng.normal() * 0.5;
    Tensor eps = Tensor::zeros({dim});
    for (double& x : eps.data) x = ent_rng.normal();
    double eps_norm = l2_norm(eps);
    double target = ent_rng.uniform() * 0.05;
    eps = eps_norm == 0.0 ? eps : scale(eps, target / eps_norm);
    Tensor tail = add(add(head, out.gold_relations.at(rel_label)), eps);
    out.gold_entities[bag.head_id] = std::move(head);
    out.gold_entities[bag.tail_id] = std::move(tail);

    out.bags.push_back(std::move(bag));
  }

  out.taxonomy = build_taxonomy(labels, sentence_counts);
  return out;
}

void split_corpus(const std::vector<Bag>& bags, double train_fraction, std::vector<Bag>* train,
                  std::vector<Bag>* test) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw SpecError("split_corpus: train_fraction must be in (0, 1]");
  std::map<std::string, std::int64_t> totals;
  for (const Bag& b : bags) totals[b.relation] += 1;
  std::map<std::string, std::int64_t> quota;
  for (const auto& [rel, n] : totals) {
    if (n == 1) {
      quota[rel] = 1;  // single-bag relations stay trainable
    } else {
      auto t = std::llround(train_fraction * static_cast<double>(n));
      quota[rel] = std::clamp<std::int64_t>(t, 1, n - 1);
    }
  }
  std::map<std::string, std::int64_t> seen;
  for (const Bag& b : bags) {
    if (seen[b.relation]++ < quota[b.relation])
      train->push_back(b);
    else
      test->push_back(b);
  }
}

std::set<std::string> longtail_subset(const std::vector<Bag>& test_bags, const Taxonomy& taxonomy,
                                      std::int64_t threshold) {
  std::set<std::string> present;
  for (const Bag& b : test_bags)
    if (b.relation != kNaLabel) present.insert(b.relation);
  std::set<std::string> out;
  for (const std::string& rel : present)
    if (taxonomy.has_node(1, rel) && taxonomy.train_count(rel) < threshold) out.insert(rel);
  return out;
}

}  // namespace drex
