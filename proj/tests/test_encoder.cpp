#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "drex/encoder.hpp"
#include "drex/errors.hpp"
#include "drex/gradcheck.hpp"

using namespace drex;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig config;
  config.word_dim = 4;
  config.pos_dim = 2;
  config.filters = 3;
  config.window = 3;
  config.max_rel_dist = 4;
  return config;
}

EmbeddingTable tiny_words(const EncoderConfig& config) {
  EmbeddingTable words(config.word_dim);
  int i = 1;
  for (const std::string id : {"alpha", "beta", "gamma", "delta", "epsilon", kPadToken}) {
    Tensor v = Tensor::zeros({config.word_dim});
    for (std::size_t d = 0; d < config.word_dim; ++d) {
      v.at(d) = 0.1 * static_cast<double>(i) + 0.01 * static_cast<double>(d);
    }
    words.insert(id, v);
    ++i;
  }
  return words;
}

Sentence tiny_sentence() {
  Sentence s;
  s.tokens = {"alpha", "beta", "gamma", "delta", "epsilon"};
  s.head_pos = 1;
  s.tail_pos = 3;
  s.head_id = "beta";
  s.tail_id = "delta";
  return s;
}

}  // namespace

TEST_CASE("token embedding: position columns and clipping") {
  const EncoderConfig config = tiny_config();
  const EmbeddingTable words = tiny_words(config);
  ParameterStore store;
  init_encoder_params(store, config, 1);
  // Make position rows recognizable: row j = [j, j].
  Parameter& pos = store.get("encoder.position_table");
  for (std::size_t r = 0; r < config.position_rows(); ++r) {
    for (std::size_t c = 0; c < config.pos_dim; ++c) {
      pos.value.at(r, c) = static_cast<double>(r);
    }
  }

  const Sentence s = tiny_sentence();
  const Tensor rows = embed_tokens(s, words, store, config);
  REQUIRE(rows.rows() == 5);
  REQUIRE(rows.cols() == config.token_width());
  CHECK(rows.cols() == 8);

  const auto head_rel = [&](std::size_t i) { return rows.at(i, config.word_dim); };
  const auto tail_rel = [&](std::size_t i) { return rows.at(i, config.word_dim + config.pos_dim); };
  // Token at the head position stores pos(0), i.e. table row max_rel_dist.
  CHECK(head_rel(1) == static_cast<double>(config.max_rel_dist));
  CHECK(tail_rel(3) == static_cast<double>(config.max_rel_dist));
  // One step to the left of the head is pos(-1).
  CHECK(head_rel(0) == static_cast<double>(config.max_rel_dist - 1));
  CHECK(head_rel(4) == static_cast<double>(config.max_rel_dist + 3));
  // Word part is the table vector verbatim.
  CHECK(rows.at(0, 0) == words.lookup("alpha").at(0));
  CHECK(rows.at(2, 3) == words.lookup("gamma").at(3));
}

TEST_CASE("token embedding: distances clip at the table edge") {
  EncoderConfig config = tiny_config();
  config.max_rel_dist = 2;
  const EmbeddingTable words = tiny_words(config);
  ParameterStore store;
  init_encoder_params(store, config, 1);
  Parameter& pos = store.get("encoder.position_table");
  for (std::size_t r = 0; r < config.position_rows(); ++r)
    for (std::size_t c = 0; c < config.pos_dim; ++c) pos.value.at(r, c) = static_cast<double>(r);

  Sentence s;
  s.tokens = {"alpha", "beta", "gamma", "delta", "epsilon", "alpha", "beta", "gamma"};
  s.head_pos = 0;
  s.tail_pos = 7;
  const Tensor rows = embed_tokens(s, words, store, config);
  // Distance 7 from the head clips to +2 (the last row).
  CHECK(rows.at(7, config.word_dim) == 4.0);
  // Distance -7 from the tail clips to -2 (row 0).
  CHECK(rows.at(0, config.word_dim + config.pos_dim) == 0.0);
}

TEST_CASE("token embedding: short sentences are padded to the window") {
  const EncoderConfig config = tiny_config();
  const EmbeddingTable words = tiny_words(config);
  ParameterStore store;
  init_encoder_params(store, config, 1);
  Sentence s;
  s.tokens = {"alpha", "beta"};
  s.head_pos = 0;
  s.tail_pos = 1;
  const Tensor rows = embed_tokens(s, words, store, config);
  REQUIRE(rows.rows() == 3);
  for (std::size_t d = 0; d < config.word_dim; ++d) {
    CHECK(rows.at(2, d) == words.lookup(kPadToken).at(d));
  }
}

TEST_CASE("token embedding: default config row width is 60") {
  const EncoderConfig config;  // defaults
  CHECK(config.token_width() == 60);
  CHECK(config.output_dim() == 690);
}

TEST_CASE("convolution: zero filters give zero levels; shapes follow n") {
  const EncoderConfig config = tiny_config();
  const EmbeddingTable words = tiny_words(config);
  ParameterStore store;
  init_encoder_params(store, config, 1);
  store.get("encoder.filters").value.fill(0.0);
  store.get("encoder.filter_bias").value.fill(0.0);

  const Tensor rows = embed_tokens(tiny_sentence(), words, store, config);
  const Tensor levels = convolve(rows, store, config);
  REQUIRE(levels.rows() == config.filters);
  REQUIRE(levels.cols() == 3);  // n=5, window=3
  for (double v : levels.data) CHECK(v == 0.0);

  Sentence three = tiny_sentence();
  three.tokens = {"alpha", "beta", "gamma"};
  three.head_pos = 0;
  three.tail_pos = 2;
  const Tensor one_col = convolve(embed_tokens(three, words, store, config), store, config);
  CHECK(one_col.cols() == 1);
}

TEST_CASE("convolution: a one-hot filter reads a single input cell") {
  const EncoderConfig config = tiny_config();
  ParameterStore store;
  init_encoder_params(store, config, 1);
  Parameter& filters = store.get("encoder.filters");
  filters.value.fill(0.0);
  filters.value.at(0, 0) = 1.0;  // picks x[i][0] for window start i
  store.get("encoder.filter_bias").value.fill(0.0);

  Tensor x = Tensor::zeros({3, config.token_width()});
  x.at(0, 0) = 5.0;
  x.at(1, 0) = 1.0;
  x.at(2, 0) = 2.0;
  const Tensor levels = convolve(x, store, config);
  CHECK(levels.at(0, 0) == 5.0);
}

TEST_CASE("piecewise pooling: segment maxima around the boundaries") {
  Tensor levels = Tensor::matrix({{1, 5, 2, 3, 4, 0}});
  const Tensor pooled = piecewise_pool_raw(levels, 2, 4);
  REQUIRE(pooled.size() == 3);
  CHECK(pooled.at(0) == 5.0);
  CHECK(pooled.at(1) == 3.0);
  CHECK(pooled.at(2) == 4.0);
}

TEST_CASE("piecewise pooling: all-equal rows give three equal maxima") {
  const Tensor pooled = piecewise_pool_raw(Tensor::matrix({{7, 7, 7, 7, 7}}), 1, 3);
  CHECK(pooled.at(0) == 7.0);
  CHECK(pooled.at(1) == 7.0);
  CHECK(pooled.at(2) == 7.0);
}

TEST_CASE("piecewise pooling: two filters produce six entries, tanh bounds them") {
  Tensor levels = Tensor::matrix({{1, 5, 2, 3}, {-9, 0, 4, -2}});
  const Tensor raw = piecewise_pool_raw(levels, 1, 2);
  REQUIRE(raw.size() == 6);
  CHECK(raw.at(0) == 1.0);
  CHECK(raw.at(3) == -9.0);
  const Tensor activated = piecewise_pool(levels, 1, 2);
  for (std::size_t i = 0; i < activated.size(); ++i) {
    CHECK(activated.at(i) == std::tanh(raw.at(i)));
    CHECK(activated.at(i) > -1.0);
    CHECK(activated.at(i) < 1.0);
  }
}

TEST_CASE("piecewise pooling: boundaries clamp into the valid column range") {
  // p1=0 would empty the first segment; clamping keeps all three alive.
  const Tensor pooled = piecewise_pool_raw(Tensor::matrix({{3, 8, 1}}), 0, 5);
  CHECK(pooled.at(0) == 3.0);
  CHECK(pooled.at(1) == 8.0);
  CHECK(pooled.at(2) == 1.0);
}

TEST_CASE("encoder: output is 3K regardless of sentence length") {
  const EncoderConfig config = tiny_config();
  const EmbeddingTable words = tiny_words(config);
  ParameterStore store;
  init_encoder_params(store, config, 2);
  for (std::size_t len : {2u, 3u, 5u, 9u}) {
    Sentence s;
    for (std::size_t i = 0; i < len; ++i) s.tokens.push_back(i % 2 ? "alpha" : "beta");
    s.head_pos = 0;
    s.tail_pos = len - 1;
    const Tensor c = encode_sentence(s, words, store, config);
    CHECK(c.size() == config.output_dim());
    for (double v : c.data) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("encoder: permuting tokens inside one segment is invariant for window 1") {
  EncoderConfig config = tiny_config();
  config.window = 1;
  const EmbeddingTable words = tiny_words(config);
  ParameterStore store;
  init_encoder_params(store, config, 3);
  // Kill the position columns so token identity alone feeds the filters.
  store.get("encoder.position_table").value.fill(0.0);

  Sentence s;
  s.tokens = {"alpha", "beta", "gamma", "delta", "epsilon", "alpha"};
  s.head_pos = 2;
  s.tail_pos = 4;
  Sentence permuted = s;
  std::swap(permuted.tokens[0], permuted.tokens[1]);  // inside segment 1
  const Tensor a = encode_sentence(s, words, store, config);
  const Tensor b = encode_sentence(permuted, words, store, config);
  CHECK(a.data == b.data);
}

TEST_CASE("encoder: bag mean over subsets") {
  const std::vector<Tensor> embeddings = {Tensor::vec({1, 1, 1}), Tensor::vec({3, 3, 3}),
                                          Tensor::vec({5, -1, 2})};
  CHECK(encode_bag_mean(embeddings, {1}).data == std::vector<double>{3, 3, 3});
  CHECK(encode_bag_mean(embeddings, {0, 1}).data == std::vector<double>{2, 2, 2});
  CHECK(encode_bag_mean(embeddings, {}).data == std::vector<double>{0, 0, 0});
  CHECK_THROWS_AS(encode_bag_mean(embeddings, {3}), DimensionError);
  CHECK_THROWS_AS(encode_bag_mean({}, {}), DimensionError);
}

TEST_CASE("encoder: tape twin matches the plain forward pass") {
  const EncoderConfig config = tiny_config();
  const EmbeddingTable words = tiny_words(config);
  ParameterStore store;
  init_encoder_params(store, config, 4);
  const Sentence s = tiny_sentence();
  const Tensor plain = encode_sentence(s, words, store, config);
  Tape tape;
  const Tape::Var var = encode_sentence_tape(tape, s, words, store, config);
  CHECK(tape.value(var).data == plain.data);
}

TEST_CASE("encoder: full gradient check on a small fixture") {
  const EncoderConfig config = tiny_config();
  const EmbeddingTable words = tiny_words(config);
  ParameterStore store;
  init_encoder_params(store, config, 5);
  const Sentence s = tiny_sentence();

  // Scalar readout: mean of the sentence embedding.
  const auto loss_value = [&]() {
    Tape tape;
    const Tape::Var c = encode_sentence_tape(tape, s, words, store, config);
    return tape.scalar(tape.mean(c));
  };
  const auto backward = [&]() {
    Tape tape;
    const Tape::Var c = encode_sentence_tape(tape, s, words, store, config);
    tape.backward(tape.mean(c));
  };
  const GradCheckReport report = grad_check(store, loss_value, backward);
  INFO("worst: ", report.worst_param, "[", report.worst_coord, "] analytic ",
       report.worst_analytic, " numeric ", report.worst_numeric);
  CHECK(report.max_rel_error < 1e-4);
}
