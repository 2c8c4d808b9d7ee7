#include "otmatch/text_encoder.hpp"

#include <string>

#include "otmatch/shape_encoder.hpp"  // glorot

namespace otmatch {

TextEncoderParams TextEncoderParams::init(const TextEncoderConfig& cfg,
                                          Rng& rng) {
  TextEncoderParams p;
  p.table = Parameter("text.table", glorot(cfg.vocab_size, cfg.d, rng));
  const auto dir = [&](const char* tag) {
    GruDirectionParams g;
    const std::string prefix = std::string("text.") + tag + ".";
    g.wz = Parameter(prefix + "wz", glorot(cfg.d, cfg.d, rng));
    g.uz = Parameter(prefix + "uz", glorot(cfg.d, cfg.d, rng));
    g.bz = Parameter(prefix + "bz", Matrix(1, cfg.d));
    g.wr = Parameter(prefix + "wr", glorot(cfg.d, cfg.d, rng));
    g.ur = Parameter(prefix + "ur", glorot(cfg.d, cfg.d, rng));
    g.br = Parameter(prefix + "br", Matrix(1, cfg.d));
    g.wh = Parameter(prefix + "wh", glorot(cfg.d, cfg.d, rng));
    g.uh = Parameter(prefix + "uh", glorot(cfg.d, cfg.d, rng));
    g.bh = Parameter(prefix + "bh", Matrix(1, cfg.d));
    return g;
  };
  p.fwd = dir("fwd");
  p.bwd = dir("bwd");
  return p;
}

std::vector<Parameter*> TextEncoderParams::all() {
  std::vector<Parameter*> out = {&table};
  for (GruDirectionParams* g : {&fwd, &bwd}) {
    out.push_back(&g->wz);
    out.push_back(&g->uz);
    out.push_back(&g->bz);
    out.push_back(&g->wr);
    out.push_back(&g->ur);
    out.push_back(&g->br);
    out.push_back(&g->wh);
    out.push_back(&g->uh);
    out.push_back(&g->bh);
  }
  return out;
}

Tape::Id embed_tokens(Tape& t, const std::vector<int>& tokens,
                      Parameter& table) {
  if (tokens.empty()) throw DataError("embed_tokens: empty token sequence");
  std::vector<std::size_t> rows;
  rows.reserve(tokens.size());
  for (int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.value.rows)
      throw DataError("embed_tokens: token id " + std::to_string(id) +
                      " outside vocabulary of " +
                      std::to_string(table.value.rows));
    rows.push_back(static_cast<std::size_t>(id));
  }
  return t.select_rows(t.param(table), std::move(rows));
}

Tape::Id gru_direction(Tape& t, Tape::Id inputs, GruDirectionParams& p,
                       GruDirection dir) {
  const std::size_t m = t.value(inputs).rows;
  if (m < 1) throw DimensionError("gru_direction: empty input");
  const std::size_t d = p.uz.value.rows;

  Tape::Id wz = t.param(p.wz), uz = t.param(p.uz), bz = t.param(p.bz);
  Tape::Id wr = t.param(p.wr), ur = t.param(p.ur), br = t.param(p.br);
  Tape::Id wh = t.param(p.wh), uh = t.param(p.uh), bh = t.param(p.bh);

  Tape::Id h = t.input(Matrix(1, d));
  std::vector<Tape::Id> states(m);
  for (std::size_t step = 0; step < m; ++step) {
    const std::size_t j = dir == GruDirection::Forward ? step : m - 1 - step;
    Tape::Id x = t.select_rows(inputs, {j});
    Tape::Id z = t.sigmoid(t.add(t.add(t.matmul(x, wz), t.matmul(h, uz)), bz));
    Tape::Id r = t.sigmoid(t.add(t.add(t.matmul(x, wr), t.matmul(h, ur)), br));
    Tape::Id hc = t.tanh(
        t.add(t.add(t.matmul(x, wh), t.matmul(t.mul(r, h), uh)), bh));
    h = t.add(t.mul(t.one_minus(z), h), t.mul(z, hc));
    states[j] = h;
  }
  return t.concat_rows(states);
}

Tape::Id encode_text(Tape& t, const std::vector<int>& tokens,
                     TextEncoderParams& p) {
  Tape::Id embedded = embed_tokens(t, tokens, p.table);
  Tape::Id fwd = gru_direction(t, embedded, p.fwd, GruDirection::Forward);
  Tape::Id bwd = gru_direction(t, embedded, p.bwd, GruDirection::Backward);
  return t.scale(t.add(fwd, bwd), 0.5);
}

}  // namespace otmatch
