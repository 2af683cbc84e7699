#include "drex/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "drex/errors.hpp"
#include "drex/rng.hpp"

namespace drex {

void init_encoder_params(ParameterStore& store, const EncoderConfig& config, std::uint64_t seed) {
  std::size_t fan_in = static_cast<std::size_t>(config.window) * config.token_width();
  {
    Tensor filters = Tensor::zeros({config.filters, fan_in});
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + config.filters));
    Rng rng(seed, "init:encoder.filters");
    for (double& v : filters.data) v = rng.uniform(-limit, limit);
    store.add("encoder.filters", std::move(filters));
  }
  store.add("encoder.filter_bias", Tensor::zeros({config.filters}));
  {
    Tensor table = Tensor::zeros({config.position_rows(), config.pos_dim});
    Rng rng(seed, "init:encoder.position_table");
    for (double& v : table.data) v = rng.uniform(-0.1, 0.1);
    store.add("encoder.position_table", std::move(table));
  }
}

namespace {

struct TokenInputs {
  Tensor word_rows;  // [n x word_dim]
  std::vector<std::size_t> head_idx;
  std::vector<std::size_t> tail_idx;
};

std::size_t position_index(std::size_t token, std::size_t entity_pos,
                           const EncoderConfig& config) {
  auto rel = static_cast<std::int64_t>(token) - static_cast<std::int64_t>(entity_pos);
  rel = std::clamp(rel, -config.max_rel_dist, config.max_rel_dist);
  return static_cast<std::size_t>(rel + config.max_rel_dist);
}

TokenInputs token_inputs(const Sentence& sentence, const EmbeddingTable& words,
                         const EncoderConfig& config) {
  if (words.dim != config.word_dim)
    throw DimensionError("word table dim " + std::to_string(words.dim) +
                         " does not match configured word_dim " +
                         std::to_string(config.word_dim));
  std::vector<std::string> tokens = sentence.tokens;
  while (tokens.size() < static_cast<std::size_t>(config.window)) tokens.push_back(kPadToken);

  TokenInputs in;
  in.word_rows = Tensor::zeros({tokens.size(), config.word_dim});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Tensor& w = words.lookup(tokens[i]);
    std::copy(w.data.begin(), w.data.end(), in.word_rows.data.begin() + i * config.word_dim);
    in.head_idx.push_back(position_index(i, sentence.head_pos, config));
    in.tail_idx.push_back(position_index(i, sentence.tail_pos, config));
  }
  return in;
}

}  // namespace

Tensor embed_tokens(const Sentence& sentence, const EmbeddingTable& words,
                    const ParameterStore& store, const EncoderConfig& config) {
  TokenInputs in = token_inputs(sentence, words, config);
  const Tensor& table = store.get("encoder.position_table").value;
  std::size_t n = in.word_rows.rows();
  std::size_t width = config.token_width();
  Tensor out = Tensor::zeros({n, width});
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data.data() + i * width;
    std::copy(in.word_rows.data.begin() + i * config.word_dim,
              in.word_rows.data.begin() + (i + 1) * config.word_dim, row);
    const double* hp = table.data.data() + in.head_idx[i] * config.pos_dim;
    const double* tp = table.data.data() + in.tail_idx[i] * config.pos_dim;
    std::copy(hp, hp + config.pos_dim, row + config.word_dim);
    std::copy(tp, tp + config.pos_dim, row + config.word_dim + config.pos_dim);
  }
  return out;
}

Tensor convolve(const Tensor& token_matrix, const ParameterStore& store,
                const EncoderConfig& config) {
  return conv_valid_forward(token_matrix, store.get("encoder.filters").value,
                            store.get("encoder.filter_bias").value, config.window);
}

Tensor piecewise_pool_raw(const Tensor& levels, int p1, int p2) {
  Tape tape;
  return tape.value(tape.piecewise_max(tape.constant(levels), p1, p2));
}

Tensor piecewise_pool(const Tensor& levels, int p1, int p2) {
  return activate(piecewise_pool_raw(levels, p1, p2), Activation::Tanh);
}

Tensor encode_sentence(const Sentence& sentence, const EmbeddingTable& words,
                       const ParameterStore& store, const EncoderConfig& config) {
  Tensor x = embed_tokens(sentence, words, store, config);
  Tensor levels = convolve(x, store, config);
  return piecewise_pool(levels, static_cast<int>(sentence.head_pos),
                        static_cast<int>(sentence.tail_pos));
}

Tape::Var encode_sentence_tape(Tape& tape, const Sentence& sentence, const EmbeddingTable& words,
                               ParameterStore& store, const EncoderConfig& config,
                               double dropout_rate, Rng* dropout_rng) {
  TokenInputs in = token_inputs(sentence, words, config);
  auto x = tape.token_matrix(in.word_rows, tape.param(store.get("encoder.position_table")),
                             std::move(in.head_idx), std::move(in.tail_idx));
  auto levels = tape.conv_valid(x, tape.param(store.get("encoder.filters")),
                                tape.param(store.get("encoder.filter_bias")), config.window);
  auto pooled = tape.piecewise_max(levels, static_cast<int>(sentence.head_pos),
                                   static_cast<int>(sentence.tail_pos));
  auto embedding = tape.tanh(pooled);
  if (dropout_rng != nullptr && dropout_rate > 0.0)
    embedding = tape.dropout(embedding, dropout_rate, *dropout_rng);
  return embedding;
}

Tensor encode_bag_mean(const std::vector<Tensor>& embeddings,
                       const std::vector<std::size_t>& subset) {
  if (embeddings.empty()) throw DimensionError("encode_bag_mean: no embeddings");
  Tensor out = Tensor::zeros(embeddings[0].shape);
  if (subset.empty()) return out;
  for (std::size_t idx : subset) {
    if (idx >= embeddings.size()) throw DimensionError("encode_bag_mean: index out of range");
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += embeddings[idx].data[i];
  }
  return scale(out, 1.0 / static_cast<double>(subset.size()));
}

}  // namespace drex
