#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "drex/corpus.hpp"
#include "drex/errors.hpp"
#include "drex/tensor.hpp"

using namespace drex;

namespace {

std::string temp_path(const std::string& stem) {
  return std::string("/tmp/drex_corpus_") + stem + "_" + std::to_string(::getpid());
}

Sentence make_sentence(std::vector<std::string> tokens, std::size_t head, std::size_t tail,
                       std::string h, std::string t) {
  Sentence s;
  s.tokens = std::move(tokens);
  s.head_pos = head;
  s.tail_pos = tail;
  s.head_id = std::move(h);
  s.tail_id = std::move(t);
  return s;
}

}  // namespace

TEST_CASE("relation path: three-segment label uses its proper prefixes") {
  const RelationPath p = parse_relation_path("/people/person/place_of_birth");
  CHECK(p.root() == kRootId);
  CHECK(p.at_layer(3) == "/people");
  CHECK(p.at_layer(2) == "/people/person");
  CHECK(p.leaf() == "/people/person/place_of_birth");
}

TEST_CASE("relation path: NA maps to the reserved chain") {
  const RelationPath p = parse_relation_path(kNaLabel);
  CHECK(p.root() == kRootId);
  CHECK(p.at_layer(3) == kNaLabel);
  CHECK(p.at_layer(2) == kNaLabel);
  CHECK(p.leaf() == kNaLabel);
}

TEST_CASE("relation path: short labels repeat the deepest prefix downward") {
  const RelationPath two = parse_relation_path("/business/company");
  CHECK(two.at_layer(3) == "/business");
  CHECK(two.at_layer(2) == "/business/company");
  CHECK(two.leaf() == "/business/company");

  const RelationPath one = parse_relation_path("alone");
  CHECK(one.at_layer(3) == "alone");
  CHECK(one.at_layer(2) == "alone");
  CHECK(one.leaf() == "alone");
}

TEST_CASE("relation path: deep labels keep two prefixes plus the full label") {
  const RelationPath p = parse_relation_path("/a/b/c/d");
  CHECK(p.at_layer(3) == "/a");
  CHECK(p.at_layer(2) == "/a/b");
  CHECK(p.leaf() == "/a/b/c/d");
}

TEST_CASE("relation path: malformed labels are rejected") {
  CHECK_THROWS_AS(parse_relation_path(""), FormatError);
  CHECK_THROWS_AS(parse_relation_path("/a//b"), FormatError);
  CHECK_THROWS_AS(parse_relation_path("/"), FormatError);
}

TEST_CASE("relation path: prefix invariant holds for assorted labels") {
  for (const std::string label :
       {"/a/b/c", "/business/company", "solo", "/w/x/y/z", "/people/person/nationality"}) {
    const RelationPath p = parse_relation_path(label);
    CHECK(p.at_layer(2).rfind(p.at_layer(3), 0) == 0);
    CHECK(p.leaf().rfind(p.at_layer(2), 0) == 0);
  }
}

TEST_CASE("taxonomy: shared parent collects both children") {
  const Taxonomy tax = build_taxonomy({"/a/b/c", "/a/b/d"}, {{"/a/b/c", 3}, {"/a/b/d", 7}});
  REQUIRE(tax.has_node(2, "/a/b"));
  const TaxonomyNode& n = tax.node(2, "/a/b");
  CHECK(n.children == std::vector<std::string>{"/a/b/c", "/a/b/d"});
  CHECK(tax.leaves() == std::vector<std::string>{"/a/b/c", "/a/b/d"});
  CHECK(tax.train_count("/a/b/c") == 3);
  CHECK(tax.train_count("/a/b/d") == 7);
}

TEST_CASE("taxonomy: a single label forms a chain of singletons") {
  const Taxonomy tax = build_taxonomy({"/a/b/c"}, {});
  for (int k = 2; k <= 4; ++k) {
    const std::string& id = tax.layer_ids[static_cast<std::size_t>(k)].front();
    CHECK(tax.layer_ids[static_cast<std::size_t>(k)].size() == 1);
    CHECK(tax.node(k, id).children.size() == 1);
  }
}

TEST_CASE("taxonomy: disjoint labels branch at the root") {
  const Taxonomy tax = build_taxonomy({"/a/b/c", "/x/y/z"}, {});
  CHECK(tax.node(4, kRootId).children == std::vector<std::string>{"/a", "/x"});
}

TEST_CASE("taxonomy: duplicate labels are idempotent and NA never materializes") {
  const Taxonomy once = build_taxonomy({"/a/b/c", "NA"}, {});
  const Taxonomy twice = build_taxonomy({"/a/b/c", "/a/b/c", "NA", "NA"}, {});
  CHECK(once.node_count() == twice.node_count());
  CHECK(once.node_count() <= 1 + 3 * 1);
  for (int k = 1; k <= 4; ++k) CHECK_FALSE(once.has_node(k, kNaLabel));
}

TEST_CASE("corpus io: grouping, order, and round-trip") {
  const std::string path = temp_path("roundtrip");
  std::vector<Bag> bags;
  Bag b1;
  b1.head_id = "e1";
  b1.tail_id = "e2";
  b1.relation = "/a/b/c";
  b1.sentences = {make_sentence({"e1", "met", "e2"}, 0, 2, "e1", "e2"),
                  make_sentence({"both", "e1", "and", "e2", "left"}, 1, 3, "e1", "e2")};
  b1.noise_flags = {false, true};
  Bag b2;
  b2.head_id = "e3";
  b2.tail_id = "e4";
  b2.relation = "NA";
  b2.sentences = {make_sentence({"e3", "near", "e4"}, 0, 2, "e3", "e4")};
  b2.noise_flags = {false};
  bags = {b1, b2};

  write_corpus(path, bags);
  const std::vector<Bag> loaded = load_corpus(path);
  CHECK(loaded == bags);
  std::remove(path.c_str());
  std::remove((path + ".flags").c_str());
}

TEST_CASE("corpus io: sentences sharing a key form one bag") {
  const std::string path = temp_path("group");
  {
    std::ofstream out(path);
    out << R"({"head_id":"e1","tail_id":"e2","relation":"r","tokens":["e1","x","e2"],)"
        << R"("head_pos":0,"tail_pos":2})" << "\n";
    out << R"({"head_id":"e9","tail_id":"e8","relation":"q","tokens":["e9","y","e8"],)"
        << R"("head_pos":0,"tail_pos":2})" << "\n";
    out << R"({"head_id":"e1","tail_id":"e2","relation":"r","tokens":["e1","z","w","e2"],)"
        << R"("head_pos":0,"tail_pos":3})" << "\n";
  }
  const std::vector<Bag> bags = load_corpus(path);
  REQUIRE(bags.size() == 2);
  CHECK(bags[0].relation == "r");  // first-occurrence order
  CHECK(bags[0].sentences.size() == 2);
  CHECK(bags[1].sentences.size() == 1);
  CHECK(bags[0].sentences[1].tokens == std::vector<std::string>{"e1", "z", "w", "e2"});
  std::remove(path.c_str());
}

TEST_CASE("corpus io: empty file loads as an empty list") {
  const std::string path = temp_path("empty");
  std::ofstream(path).close();
  CHECK(load_corpus(path).empty());
  std::remove(path.c_str());
}

TEST_CASE("corpus io: malformed line reports its number; bad positions rejected") {
  const std::string path = temp_path("bad");
  {
    std::ofstream out(path);
    out << R"({"head_id":"e1","tail_id":"e2","relation":"r","tokens":["e1","x","e2"],)"
        << R"("head_pos":0,"tail_pos":2})" << "\n";
    out << "this is not json\n";
  }
  try {
    load_corpus(path);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << R"({"head_id":"e1","tail_id":"e2","relation":"r","tokens":["e1","x","e2"],)"
        << R"("head_pos":0,"tail_pos":3})" << "\n";
  }
  CHECK_THROWS_AS(load_corpus(path), ValidationError);
  {
    std::ofstream out(path);
    out << R"({"head_id":"e1","tail_id":"e2","relation":"r","tokens":["e1","x","e2"],)"
        << R"("head_pos":2,"tail_pos":0})" << "\n";
  }
  CHECK_THROWS_AS(load_corpus(path), ValidationError);
  std::remove(path.c_str());
}

TEST_CASE("corpus io: missing file raises an io error") {
  CHECK_THROWS_AS(load_corpus("/nonexistent/dir/corpus.jsonl"), IoError);
}

TEST_CASE("generator: zero noise rate leaves every flag false") {
  GeneratorSpec spec;
  spec.num_relations = 6;
  spec.num_entity_pairs = 40;
  spec.noise_rate = 0.0;
  const SyntheticCorpus corpus = generate_synthetic(spec, 7);
  REQUIRE_FALSE(corpus.bags.empty());
  for (const Bag& b : corpus.bags) {
    REQUIRE(b.noise_flags.size() == b.sentences.size());
    for (bool f : b.noise_flags) CHECK_FALSE(f);
  }
}

TEST_CASE("generator: noise count per bag is exactly round(rate * size)") {
  GeneratorSpec spec;
  spec.num_relations = 6;
  spec.num_entity_pairs = 30;
  spec.bag_size_min = 10;
  spec.bag_size_max = 10;
  spec.noise_rate = 0.5;
  const SyntheticCorpus corpus = generate_synthetic(spec, 11);
  for (const Bag& b : corpus.bags) {
    std::size_t flagged = 0;
    for (bool f : b.noise_flags) flagged += f ? 1 : 0;
    CHECK(flagged == 5);
  }
}

TEST_CASE("generator: same spec and seed reproduce the corpus bit for bit") {
  GeneratorSpec spec;
  spec.num_relations = 9;
  spec.num_entity_pairs = 25;
  const SyntheticCorpus a = generate_synthetic(spec, 3);
  const SyntheticCorpus b = generate_synthetic(spec, 3);
  CHECK(a.bags == b.bags);
  REQUIRE(a.gold_relations.size() == b.gold_relations.size());
  for (const auto& [rel, vec] : a.gold_relations) {
    CHECK(vec.data == b.gold_relations.at(rel).data);
  }
  const SyntheticCorpus c = generate_synthetic(spec, 4);
  CHECK(a.bags != c.bags);
}

TEST_CASE("generator: structural contract of the emitted corpus") {
  GeneratorSpec spec;
  spec.num_relations = 12;
  spec.num_entity_pairs = 60;
  spec.noise_rate = 0.3;
  const SyntheticCorpus corpus = generate_synthetic(spec, 42);

  std::set<std::string> relations;
  std::map<std::string, std::int64_t> sentence_counts;
  for (const Bag& b : corpus.bags) {
    relations.insert(b.relation);
    sentence_counts[b.relation] += static_cast<std::int64_t>(b.sentences.size());
    CHECK(b.sentences.size() >= static_cast<std::size_t>(spec.bag_size_min));
    CHECK(b.sentences.size() <= static_cast<std::size_t>(spec.bag_size_max));
    std::size_t flagged = 0;
    for (bool f : b.noise_flags) flagged += f ? 1 : 0;
    CHECK(flagged == static_cast<std::size_t>(std::llround(
                         spec.noise_rate * static_cast<double>(b.sentences.size()))));
    for (const Sentence& s : b.sentences) {
      CHECK(s.head_id == b.head_id);
      CHECK(s.tail_id == b.tail_id);
      REQUIRE(s.head_pos < s.tail_pos);
      REQUIRE(s.tail_pos < s.tokens.size());
      CHECK(s.tokens[s.head_pos] == b.head_id);
      CHECK(s.tokens[s.tail_pos] == b.tail_id);
    }
  }
  // Every relation occurs, and the taxonomy counts match the bags.
  CHECK(relations.size() == static_cast<std::size_t>(spec.num_relations));
  for (const auto& [rel, count] : sentence_counts) {
    CHECK(corpus.taxonomy.train_count(rel) == count);
  }
  // The power law concentrates mass on the first relations.
  std::vector<std::int64_t> bag_counts;
  std::map<std::string, std::int64_t> per_rel;
  for (const Bag& b : corpus.bags) per_rel[b.relation] += 1;
  for (const auto& [rel, n] : per_rel) bag_counts.push_back(n);
  const auto maximum = *std::max_element(bag_counts.begin(), bag_counts.end());
  const auto minimum = *std::min_element(bag_counts.begin(), bag_counts.end());
  CHECK(maximum > minimum);
  CHECK(minimum >= 1);
}

TEST_CASE("generator: gold embeddings satisfy the translation residual bound") {
  GeneratorSpec spec;
  spec.num_relations = 8;
  spec.num_entity_pairs = 40;
  const SyntheticCorpus corpus = generate_synthetic(spec, 5);
  for (const Bag& b : corpus.bags) {
    if (b.relation == kNaLabel) continue;
    const Tensor& h = corpus.gold_entities.at(b.head_id);
    const Tensor& t = corpus.gold_entities.at(b.tail_id);
    const Tensor& r = corpus.gold_relations.at(b.relation);
    const Tensor residual = sub(sub(t, h), r);
    CHECK(l2_norm(residual) <= 0.05 + 1e-12);
  }
}

TEST_CASE("generator: infeasible specs are rejected") {
  GeneratorSpec spec;
  spec.num_relations = 2;
  spec.taxonomy_branching = 5;  // more branches than relations
  CHECK_THROWS_AS(generate_synthetic(spec, 1), SpecError);

  GeneratorSpec noise;
  noise.noise_rate = 1.0;
  CHECK_THROWS_AS(generate_synthetic(noise, 1), SpecError);

  GeneratorSpec tail;
  tail.longtail_exponent = 0.0;
  CHECK_THROWS_AS(generate_synthetic(tail, 1), SpecError);

  GeneratorSpec sizes;
  sizes.bag_size_min = 6;
  sizes.bag_size_max = 4;
  CHECK_THROWS_AS(generate_synthetic(sizes, 1), SpecError);
}

TEST_CASE("split: per-relation quotas preserve order and keep both sides sane") {
  std::vector<Bag> bags;
  auto push = [&](const std::string& rel, int i) {
    Bag b;
    b.head_id = "h" + std::to_string(i);
    b.tail_id = "t" + std::to_string(i);
    b.relation = rel;
    b.sentences = {make_sentence({b.head_id, "x", b.tail_id}, 0, 2, b.head_id, b.tail_id)};
    bags.push_back(b);
  };
  for (int i = 0; i < 8; ++i) push("ra", i);
  for (int i = 0; i < 2; ++i) push("rb", 100 + i);
  push("rc", 200);  // single bag: train only

  std::vector<Bag> train, test;
  split_corpus(bags, 0.75, &train, &test);
  std::map<std::string, int> train_n, test_n;
  for (const Bag& b : train) train_n[b.relation] += 1;
  for (const Bag& b : test) test_n[b.relation] += 1;
  CHECK(train_n["ra"] == 6);  // round(0.75 * 8)
  CHECK(test_n["ra"] == 2);
  CHECK(train_n["rb"] == 1);  // round(1.5) clamped below n
  CHECK(test_n["rb"] == 1);
  CHECK(train_n["rc"] == 1);
  CHECK(test_n.count("rc") == 0);
  // Order within each side follows the input order.
  CHECK(train.front().head_id == "h0");
  CHECK(test.front().relation == "ra");
  CHECK_THROWS_AS(split_corpus(bags, 0.0, &train, &test), SpecError);
}

TEST_CASE("longtail subset honours the threshold over test-present relations") {
  const Taxonomy tax = build_taxonomy({"/q/w/r1", "/q/w/r2"}, {{"/q/w/r1", 50}, {"/q/w/r2", 150}});
  std::vector<Bag> test_bags;
  for (const std::string rel : {"/q/w/r1", "/q/w/r2", "NA"}) {
    Bag b;
    b.head_id = "h";
    b.tail_id = "t";
    b.relation = rel;
    b.sentences = {make_sentence({"h", "x", "t"}, 0, 2, "h", "t")};
    test_bags.push_back(b);
  }
  CHECK(longtail_subset(test_bags, tax, 100) == std::set<std::string>{"/q/w/r1"});
  CHECK(longtail_subset(test_bags, tax, 200) == std::set<std::string>{"/q/w/r1", "/q/w/r2"});
  CHECK(longtail_subset(test_bags, tax, 0).empty());
}
