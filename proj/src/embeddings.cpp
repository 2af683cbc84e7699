#include "drex/embeddings.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "drex/errors.hpp"
#include "drex/rng.hpp"

namespace drex {

const Tensor& EmbeddingTable::lookup(const std::string& id) const {
  auto it = vectors.find(id);
  return it == vectors.end() ? oov : it->second;
}

void EmbeddingTable::insert(const std::string& id, Tensor v) {
  if (v.size() != dim)
    throw DimensionError("embedding for " + id + " has length " + std::to_string(v.size()) +
                         ", table dim is " + std::to_string(dim));
  ensure_finite(v, "embedding " + id);
  vectors[id] = std::move(v);
}

EmbeddingTable load_text_embeddings(const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path);
  EmbeddingTable table(dim);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    ss >> id;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (id.empty() || values.size() != dim)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected id plus " +
                       std::to_string(dim) + " values, got " + std::to_string(values.size()));
    if (table.has(id))
      std::cerr << "warning: " << path << ":" << line_no << ": duplicate embedding id " << id
                << ", last occurrence wins\n";
    table.insert(id, Tensor::vec(std::move(values)));
  }
  return table;
}

void save_text_embeddings(const std::string& path, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embedding file: " + path);
  out.precision(17);
  for (const auto& [id, v] : table.vectors) {
    out << id;
    for (double x : v.data) out << ' ' << x;
    out << '\n';
  }
  if (!out) throw IoError("failed while writing embedding file: " + path);
}

namespace {

double l2_distance(const Tensor& h, const Tensor& r, const Tensor& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    double d = h.data[i] + r.data[i] - t.data[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

void project_unit(Tensor& v) {
  double n = l2_norm(v);
  if (n > 0.0)
    for (double& x : v.data) x /= n;
}

}  // namespace

TranseResult train_transe(const std::vector<Triple>& triples, std::size_t dim, double margin,
                          std::int64_t epochs, double lr, std::uint64_t seed) {
  if (triples.empty()) throw ValidationError("train_transe: need at least one triple");
  if (dim == 0) throw DimensionError("train_transe: dim must be positive");

  std::set<std::string> entity_ids, relation_ids;
  for (const Triple& t : triples) {
    entity_ids.insert(t.head_id);
    entity_ids.insert(t.tail_id);
    relation_ids.insert(t.relation);
  }
  std::vector<std::string> entity_list(entity_ids.begin(), entity_ids.end());

  TranseResult out;
  out.entities = EmbeddingTable(dim);
  out.relations = EmbeddingTable(dim);
  double bound = 6.0 / std::sqrt(static_cast<double>(dim));
  for (const std::string& id : entity_ids) {
    Rng rng(seed, "transe:entity:" + id);
    Tensor v = Tensor::zeros({dim});
    for (double& x : v.data) x = rng.uniform(-bound, bound);
    project_unit(v);
    out.entities.vectors[id] = std::move(v);
  }
  for (const std::string& id : relation_ids) {
    Rng rng(seed, "transe:relation:" + id);
    Tensor v = Tensor::zeros({dim});
    for (double& x : v.data) x = rng.uniform(-bound, bound);
    project_unit(v);  // relations normalized at init only
    out.relations.vectors[id] = std::move(v);
  }

  // One corrupted triple per positive, fixed across epochs: replace head
  // or tail with a uniformly drawn entity, redrawing while the corrupted
  // triple collides with a real one (a "negative" that is actually
  // positive carries no signal).
  struct Corruption {
    bool corrupt_head;
    std::string entity;
  };
  std::set<std::string> known;
  for (const Triple& t : triples) known.insert(t.head_id + "\x1f" + t.relation + "\x1f" + t.tail_id);
  std::vector<Corruption> corruptions;
  corruptions.reserve(triples.size());
  {
    Rng rng(seed, "transe:corrupt");
    for (std::size_t i = 0; i < triples.size(); ++i) {
      Corruption c;
      for (int attempt = 0; attempt < 100; ++attempt) {
        c.corrupt_head = rng.bernoulli(0.5);
        c.entity = entity_list[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(entity_list.size()) - 1))];
        const std::string head = c.corrupt_head ? c.entity : triples[i].head_id;
        const std::string tail = c.corrupt_head ? triples[i].tail_id : c.entity;
        if (known.count(head + "\x1f" + triples[i].relation + "\x1f" + tail) == 0) break;
      }
      corruptions.push_back(std::move(c));
    }
  }

  auto objective = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < triples.size(); ++i) {
      const Triple& t = triples[i];
      const Corruption& c = corruptions[i];
      const Tensor& h = out.entities.vectors.at(t.head_id);
      const Tensor& r = out.relations.vectors.at(t.relation);
      const Tensor& tl = out.entities.vectors.at(t.tail_id);
      const Tensor& hn = c.corrupt_head ? out.entities.vectors.at(c.entity) : h;
      const Tensor& tn = c.corrupt_head ? tl : out.entities.vectors.at(c.entity);
      double loss = margin + l2_distance(h, r, tl) - l2_distance(hn, r, tn);
      if (loss > 0.0) total += loss;
    }
    return total;
  };

  for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
    out.epoch_losses.push_back(objective());
    for (std::size_t i = 0; i < triples.size(); ++i) {
      const Triple& t = triples[i];
      const Corruption& c = corruptions[i];
      Tensor& h = out.entities.vectors.at(t.head_id);
      Tensor& r = out.relations.vectors.at(t.relation);
      Tensor& tl = out.entities.vectors.at(t.tail_id);
      Tensor& hn = c.corrupt_head ? out.entities.vectors.at(c.entity) : h;
      Tensor& tn = c.corrupt_head ? tl : out.entities.vectors.at(c.entity);

      double d_pos = l2_distance(h, r, tl);
      double d_neg = l2_distance(hn, r, tn);
      if (margin + d_pos - d_neg <= 0.0) continue;

      // Subgradients of the L2 distances; zero when a distance is zero.
      for (std::size_t j = 0; j < dim; ++j) {
        double gp = d_pos > 0.0 ? (h.data[j] + r.data[j] - tl.data[j]) / d_pos : 0.0;
        double gn = d_neg > 0.0 ? (hn.data[j] + r.data[j] - tn.data[j]) / d_neg : 0.0;
        // Apply the negative-part update first so aliased operands
        // (h == hn or tl == tn) accumulate both contributions.
        hn.data[j] += lr * gn;
        tn.data[j] -= lr * gn;
        r.data[j] -= lr * (gp - gn);
        h.data[j] -= lr * gp;
        tl.data[j] += lr * gp;
      }
      project_unit(h);
      project_unit(tl);
      if (c.corrupt_head)
        project_unit(hn);
      else
        project_unit(tn);
    }
  }
  out.epoch_losses.push_back(objective());
  return out;
}

Tensor implicit_relation(const Tensor& head, const Tensor& tail) { return sub(tail, head); }

}  // namespace drex
