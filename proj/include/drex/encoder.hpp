#pragma once

#include <string>
#include <vector>

#include "drex/corpus.hpp"
#include "drex/embeddings.hpp"
#include "drex/params.hpp"
#include "drex/tape.hpp"
#include "drex/tensor.hpp"

namespace drex {

inline constexpr const char* kPadToken = "<pad>";

struct EncoderConfig {
  std::size_t word_dim = 50;
  std::size_t pos_dim = 5;
  std::size_t filters = 230;
  int window = 3;
  std::int64_t max_rel_dist = 30;

  std::size_t token_width() const { return word_dim + 2 * pos_dim; }
  std::size_t output_dim() const { return 3 * filters; }
  std::size_t position_rows() const { return static_cast<std::size_t>(2 * max_rel_dist + 1); }
};

// Registers encoder.filters, encoder.filter_bias, encoder.position_table.
void init_encoder_params(ParameterStore& store, const EncoderConfig& config, std::uint64_t seed);

// Row i = [word(token_i); pos(i - head_pos); pos(i - tail_pos)], with
// relative distances clipped to +/- max_rel_dist. Sentences shorter than
// the window are padded with the reserved pad token.
Tensor embed_tokens(const Sentence& sentence, const EmbeddingTable& words,
                    const ParameterStore& store, const EncoderConfig& config);

// Valid convolution: output [filters x (n - window + 1)].
Tensor convolve(const Tensor& token_matrix, const ParameterStore& store,
                const EncoderConfig& config);

// Per filter, maxima of the three column segments split at p1/p2
// (boundaries clamped so every segment is non-empty); no nonlinearity.
Tensor piecewise_pool_raw(const Tensor& levels, int p1, int p2);
// tanh of the raw pooled vector: the sentence embedding, length 3K.
Tensor piecewise_pool(const Tensor& levels, int p1, int p2);

// Full forward pass for one sentence.
Tensor encode_sentence(const Sentence& sentence, const EmbeddingTable& words,
                       const ParameterStore& store, const EncoderConfig& config);

// Tape twin of encode_sentence; dropout_rng enables inverted dropout on
// the sentence embedding (pretraining only; pass nullptr otherwise).
Tape::Var encode_sentence_tape(Tape& tape, const Sentence& sentence, const EmbeddingTable& words,
                               ParameterStore& store, const EncoderConfig& config,
                               double dropout_rate = 0.0, Rng* dropout_rng = nullptr);

// Mean of the embeddings at `subset`; the zero vector for an empty subset.
Tensor encode_bag_mean(const std::vector<Tensor>& embeddings,
                       const std::vector<std::size_t>& subset);

}  // namespace drex
