#pragma once

#include <vector>

#include "nmt/encoding/codec.hpp"
#include "nmt/gen/grammar.hpp"
#include "nmt/gen/sampling.hpp"
#include "nmt/model/model.hpp"
#include "nmt/train/batches.hpp"

namespace nmt::gen {

// Continues `prompt` (possibly empty; its scheme, meter and resolution are
// used) until the sequence holds `max_tokens` tokens or the model's maximum
// length. Each compound token is produced slot by slot from the sub-decoder,
// masked by the scheme grammar; slots the grammar fixes to IGNORE are never
// sampled. An nb-pf result always ends with its terminal token, and REMI or
// CP results are cut back to the last complete note, so the output decodes.
template <class T>
encoding::TokenSequence generate(const model::Model<T>& m, const encoding::FeatureVocab& v,
                                 const encoding::TokenSequence& prompt, const SamplerConfig& cfg) {
  cfg.validate();
  const auto scheme = prompt.scheme;
  if (train::scheme_vocab(scheme, v).first != m.config().vocab_sizes)
    throw ConfigError(std::string("model vocabulary does not match scheme ") + encoding::scheme_name(scheme));
  const std::size_t limit = std::min(cfg.max_tokens, m.config().max_sequence_length);
  if (prompt.size() > m.config().max_sequence_length)
    throw ConfigError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds max_sequence_length " +
                      std::to_string(m.config().max_sequence_length));
  if (prompt.size() >= limit) throw ConfigError("prompt already fills max_tokens; nothing to generate");
  const bool pitch_first = scheme == encoding::Scheme::kNbPitchFirst;
  if (pitch_first && limit < 2) throw ConfigError("nb-pf generation needs room for a note and the terminal token");

  Grammar grammar(scheme, v, prompt.time_signature);
  for (std::size_t i = 0; i < prompt.size(); ++i) grammar.push(prompt.token(i));

  tensor::NoGradGuard no_grad;
  Rng rng(cfg.seed);
  encoding::TokenSequence out = prompt;
  out.data.reserve(limit * static_cast<std::size_t>(out.width));
  const std::size_t J = grammar.width();
  std::vector<double> logits;
  while (out.size() < limit) {
    const std::size_t n = out.size();
    const bool terminal = pitch_first && n + 1 == limit;
    model::Batch batch{1, n + 1, J, out.data};
    batch.tokens.resize((n + 1) * J, model::kIgnore);
    const auto h = m.hidden(batch);
    std::vector<int> token;
    for (std::size_t j = 0; j < J; ++j) {
      const SlotMask mask = grammar.mask(j, token, terminal);
      if (mask.forced_ignore) {
        token.push_back(model::kIgnore);
        continue;
      }
      const auto raw = m.step_logits(h, batch, n, token);
      logits.assign(raw.size(), kMaskedLogit);
      for (std::size_t x = 0; x < raw.size(); ++x)
        if (mask.allow[x]) logits[x] = static_cast<double>(raw[x]);
      token.push_back(static_cast<int>(nucleus_sample(logits, cfg.top_p, cfg.temperature, rng)));
    }
    grammar.push(token, terminal);
    out.push(token);
  }
  if (scheme == encoding::Scheme::kRemi || scheme == encoding::Scheme::kCp) {
    // Replay to find the longest prefix that ends on a complete note.
    Grammar replay(scheme, v, prompt.time_signature);
    std::size_t keep = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      replay.push(out.token(i));
      if (replay.complete()) keep = i + 1;
    }
    out.data.resize(keep * J);
  }
  return out;
}

// Tokens of the first `measures` measures of `piece` in `scheme`: a prefix of
// the full encoding. Measures are counted on the canonical piece, where
// measures without onsets have been removed.
inline encoding::TokenSequence extract_prompt(const midi::Piece& piece, const encoding::FeatureVocab& v,
                                              encoding::Scheme scheme, int measures = 4) {
  if (measures < 1) throw ConfigError("extract_prompt: measures must be at least 1");
  const auto c = encoding::canonicalize(piece, v);
  const long m_len = c.measure_length();
  const long spanned = c.notes.back().onset / m_len + 1;
  if (spanned < measures)
    throw DataError("piece '" + piece.source_id + "' has " + std::to_string(spanned) + " measures, prompt needs " +
                    std::to_string(measures));
  const long boundary = measures * m_len;
  auto full = encoding::encode(c, v, scheme);
  std::size_t rows = 0;
  switch (scheme) {
    case encoding::Scheme::kNbMetricFirst:
    case encoding::Scheme::kNbPitchFirst:
      for (const auto& n : c.notes) rows += n.onset < boundary;
      break;
    case encoding::Scheme::kCp: {
      std::set<long> positions;
      for (const auto& n : c.notes)
        if (n.onset < boundary) ++rows, positions.insert(n.onset);
      rows += positions.size();
      break;
    }
    case encoding::Scheme::kRemi: {
      int bars = 0;
      for (; rows < full.data.size(); ++rows)
        if (full.data[rows] == encoding::RemiVocab::kBar && ++bars > measures) break;
      break;
    }
  }
  full.data.resize(rows * static_cast<std::size_t>(full.width));
  return full;
}

// Drops the notes of the final measure when the piece spans more than one;
// used when generation stopped at the token limit mid-measure.
inline midi::Piece trim_to_complete_measures(const midi::Piece& p) {
  if (p.notes.empty()) return p;
  const long m_len = p.measure_length();
  const long last = p.notes.back().onset / m_len;
  if (last == 0) return p;
  midi::Piece out = p;
  std::erase_if(out.notes, [&](const midi::NoteEvent& n) { return n.onset / m_len >= last; });
  std::erase_if(out.chords, [&](const midi::ChordEvent& e) { return e.tick / m_len >= last; });
  std::erase_if(out.tempo_changes, [&](const midi::TempoChange& t) { return t.tick > 0 && t.tick / m_len >= last; });
  return out;
}

}  // namespace nmt::gen
