#pragma once

#include <vector>

#include "otmatch/autodiff.hpp"
#include "otmatch/rng.hpp"

namespace otmatch {

struct TextEncoderConfig {
  std::size_t vocab_size = 2;
  // Word embedding width, GRU hidden width and the shared matcher width
  // are all the same d so the direction average is well-typed.
  std::size_t d = 64;
};

struct GruDirectionParams {
  Parameter wz, uz, bz;  // update gate
  Parameter wr, ur, br;  // reset gate
  Parameter wh, uh, bh;  // candidate state
};

struct TextEncoderParams {
  Parameter table;  // V x d
  GruDirectionParams fwd, bwd;

  static TextEncoderParams init(const TextEncoderConfig& cfg, Rng& rng);
  std::vector<Parameter*> all();
};

enum class GruDirection { Forward, Backward };

// Row lookup per token id. Throws DataError for ids outside the table.
Tape::Id embed_tokens(Tape& t, const std::vector<int>& tokens,
                      Parameter& table);

// Standard GRU recurrence with h0 = 0:
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   hc = tanh(x Wh + (r*h) Uh + bh)
//   h' = (1-z)*h + z*hc
// Backward direction iterates from the last token; states are returned
// in token order either way (m x d).
Tape::Id gru_direction(Tape& t, Tape::Id inputs, GruDirectionParams& p,
                       GruDirection dir);

// Context-sensitive word embeddings: the elementwise average of the two
// direction states at every position (m x d).
Tape::Id encode_text(Tape& t, const std::vector<int>& tokens,
                     TextEncoderParams& p);

}  // namespace otmatch
