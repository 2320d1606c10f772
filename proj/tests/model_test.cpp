#include <cmath>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "nmt/model/model.hpp"

namespace {

using nmt::Rng;
using nmt::model::Batch;
using nmt::model::Model;
using nmt::model::ModelConfig;
using nmt::model::SubDecoderKind;
using nmt::tensor::Tensor;

const SubDecoderKind kAllKinds[] = {SubDecoderKind::kParallel,      SubDecoderKind::kFeedForward,
                                    SubDecoderKind::kRnn,           SubDecoderKind::kSelfAttention,
                                    SubDecoderKind::kCrossAttention, SubDecoderKind::kNmt};
const SubDecoderKind kSequentialKinds[] = {SubDecoderKind::kFeedForward, SubDecoderKind::kRnn,
                                           SubDecoderKind::kSelfAttention, SubDecoderKind::kCrossAttention,
                                           SubDecoderKind::kNmt};

ModelConfig micro(SubDecoderKind kind, std::vector<int> vocab = {5, 7, 4}) {
  ModelConfig c;
  c.dim = 16;
  c.heads = 2;
  c.main_layers = 2;
  c.sub_layers = 1;
  c.enricher_layers = 1;
  c.window = 3;
  c.max_sequence_length = 32;
  c.vocab_sizes = std::move(vocab);
  c.kind = kind;
  c.dropout = 0.0;
  return c;
}

Batch random_batch(Rng& rng, const ModelConfig& c, std::size_t B, std::size_t L, double ignore_prob = 0.1) {
  Batch b{B, L, c.num_features(), {}};
  for (std::size_t r = 0; r < B * L; ++r)
    for (std::size_t j = 0; j < c.num_features(); ++j)
      b.tokens.push_back(rng.uniform() < ignore_prob ? nmt::model::kIgnore
                                                     : static_cast<int>(rng.uniform_int(0, c.vocab_sizes[j] - 1)));
  return b;
}

template <class T>
Tensor<T>& param(Model<T>& m, const std::string& name) {
  for (auto* p : m.parameters())
    if (p->name == name) return p->value;
  throw std::runtime_error("no parameter " + name);
}

template <class T>
void zero(Tensor<T>& t) {
  std::fill(t.values().begin(), t.values().end(), T(0));
}

std::string kind_label(const ::testing::TestParamInfo<SubDecoderKind>& info) {
  return nmt::model::kind_name(info.param);
}

// ---- embedding ---------------------------------------------------------------

TEST(EmbedCompound, ZeroTablesLeavePositions) {
  Model<double> m(micro(SubDecoderKind::kParallel), 1);
  for (int j = 0; j < 3; ++j) zero(param(m, "emb." + std::to_string(j)));
  const std::vector<int> ids{1, 2, 3, 4, 0, -1};
  const auto x = m.embed_compound(ids);
  const auto& pos = param(m, "pos");
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(x.at(r, c), pos.at(r, c));
}

TEST(EmbedCompound, EqualsHandSummedLookup) {
  Model<double> m(micro(SubDecoderKind::kParallel), 2);
  const std::vector<int> ids{4, 6, 3, 0, -1, 2};
  const auto x = m.embed_compound(ids);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 16; ++c) {
      double expected = param(m, "pos").at(r, c);
      for (std::size_t j = 0; j < 3; ++j)
        if (ids[r * 3 + j] >= 0) expected += param(m, "emb." + std::to_string(j)).at(static_cast<std::size_t>(ids[r * 3 + j]), c);
      EXPECT_NEAR(x.at(r, c), expected, 1e-15);
    }
}

TEST(EmbedCompound, FeatureOrderDoesNotMatter) {
  Model<double> a(micro(SubDecoderKind::kParallel, {6, 6, 4}), 3);
  Model<double> b(micro(SubDecoderKind::kParallel, {6, 6, 4}), 4);
  for (auto* p : b.parameters()) {
    const std::string src = p->name == "emb.0" ? "emb.1" : p->name == "emb.1" ? "emb.0" : p->name;
    std::copy(param(a, src).values().begin(), param(a, src).values().end(), p->value.values().begin());
  }
  const std::vector<int> ids_a{1, 5, 2, 3, 0, 1}, ids_b{5, 1, 2, 0, 3, 1};
  const auto xa = a.embed_compound(ids_a), xb = b.embed_compound(ids_b);
  for (std::size_t i = 0; i < xa.size(); ++i) EXPECT_NEAR(xa.values()[i], xb.values()[i], 1e-15);
}

TEST(EmbedCompound, RejectsOverlongSequences) {
  Model<double> m(micro(SubDecoderKind::kParallel), 1);
  std::vector<int> ids(33 * 3, 0);
  EXPECT_THROW(m.embed_compound(ids), nmt::ConfigError);
  Rng rng(1);
  EXPECT_THROW(m.hidden(random_batch(rng, m.config(), 1, 33)), nmt::ConfigError);
}

// ---- main decoder ------------------------------------------------------------

TEST(MainDecoder, CausalUnderTokenPerturbation) {
  Rng rng(5);
  Model<double> m(micro(SubDecoderKind::kParallel), 5);
  const Batch base = random_batch(rng, m.config(), 2, 10);
  const auto h0 = m.hidden(base);
  for (std::size_t p = 0; p < 10; ++p) {
    Batch pert = base;
    for (std::size_t j = 0; j < 3; ++j) pert.tokens[(1 * 10 + p) * 3 + j] = (pert.tokens[(1 * 10 + p) * 3 + j] + 1 + 1) % 4;
    const auto h1 = m.hidden(pert);
    for (std::size_t q = 0; q < 10; ++q) {
      bool same = true;
      for (std::size_t c = 0; c < 16; ++c) same = same && h0.at(10 + q, c) == h1.at(10 + q, c);
      if (q <= p) EXPECT_TRUE(same) << "p=" << p << " q=" << q;
      if (q == p + 1) EXPECT_FALSE(same) << "p=" << p;
    }
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(h0.at(r, c), h1.at(r, c));
  }
}

TEST(MainDecoder, SingleTokenSequence) {
  Model<double> m(micro(SubDecoderKind::kParallel), 6);
  Batch b{1, 1, 3, {0, 1, 2}};
  const auto h = m.hidden(b);
  EXPECT_EQ(h.rows(), 1u);
  for (double v : h.values()) EXPECT_TRUE(std::isfinite(v));
}

// Closed-form count: embeddings, positions and BOS; 12d^2+13d per pre-norm
// block with a 4d feed-forward; final norm; one logits projection per feature;
// plus the sub-decoder's own parameters.
std::size_t expected_params(const ModelConfig& c) {
  const std::size_t d = c.dim, J = c.num_features();
  std::size_t vocab = 0;
  for (int v : c.vocab_sizes) vocab += static_cast<std::size_t>(v);
  const std::size_t self_block = 12 * d * d + 13 * d;
  const std::size_t cross_block = 12 * d * d + 15 * d;
  std::size_t n = vocab * d + c.max_sequence_length * d + d + c.main_layers * self_block + 2 * d + vocab * (d + 1);
  switch (c.kind) {
    case SubDecoderKind::kParallel: break;
    case SubDecoderKind::kFeedForward: n += 2 * d * d + d; break;
    case SubDecoderKind::kRnn: n += 6 * (d * d + d); break;
    case SubDecoderKind::kSelfAttention: n += d + (J + 1) * d + c.sub_layers * self_block + 2 * d; break;
    case SubDecoderKind::kCrossAttention: n += d + J * d + c.sub_layers * cross_block + 2 * d; break;
    case SubDecoderKind::kNmt: n += d + J * d + c.sub_layers * cross_block + 2 * d + d + c.enricher_layers * cross_block; break;
  }
  return n;
}

TEST(ParameterCount, MatchesClosedForm) {
  for (SubDecoderKind k : kAllKinds) {
    const auto c = micro(k);
    EXPECT_EQ(Model<float>(c, 1).parameter_count(), expected_params(c)) << nmt::model::kind_name(k);
  }
  ModelConfig big = micro(SubDecoderKind::kNmt, {4, 48, 86, 25, 61, 128, 192, 32});
  big.dim = 64;
  big.heads = 8;
  big.main_layers = 3;
  big.max_sequence_length = 100;
  EXPECT_EQ(Model<float>(big, 1).parameter_count(), expected_params(big));
}

TEST(ModelConfig, Validation) {
  auto c = micro(SubDecoderKind::kNmt);
  c.heads = 3;
  EXPECT_THROW(Model<float>(c, 1), nmt::ConfigError);
  c = micro(SubDecoderKind::kNmt);
  c.window = 0;
  EXPECT_THROW(Model<float>(c, 1), nmt::ConfigError);
  c = micro(SubDecoderKind::kNmt);
  EXPECT_EQ(nmt::model::model_config_from_json(nmt::model::to_json(c)), c);
  EXPECT_THROW(nmt::model::model_config_from_json({{"modle_dim", 3}}), nmt::ConfigError);
}

// ---- sub-decoders --------------------------------------------------------------

// Logits for all rows via the teacher-forced path, as plain values [j][row][v].
template <class T>
std::vector<std::vector<std::vector<T>>> teacher_forced(const Model<T>& m, const Batch& b, const Tensor<T>& h) {
  nmt::tensor::NoGradGuard g;
  const auto logits = m.subtoken_logits(h, b);
  std::vector<std::vector<std::vector<T>>> out(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j)
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const auto row = logits[j].values().subspan(r * logits[j].cols(), logits[j].cols());
      out[j].emplace_back(row.begin(), row.end());
    }
  return out;
}

TEST(Parallel, FeatureLogitsIgnoreOtherSubTokens) {
  Rng rng(7);
  Model<double> m(micro(SubDecoderKind::kParallel), 7);
  Batch b = random_batch(rng, m.config(), 1, 4, 0.0);
  const auto h = m.hidden(b);
  const auto a = teacher_forced(m, b, h);
  for (std::size_t j = 0; j < 3; ++j) b.tokens[2 * 3 + j] = (b.tokens[2 * 3 + j] + 1) % 4;
  EXPECT_EQ(teacher_forced(m, b, h), a);
}

TEST(Parallel, ZeroHiddenGivesUniform) {
  Model<double> m(micro(SubDecoderKind::kParallel), 8);
  Batch b{1, 2, 3, {0, 0, 0, 1, 1, 1}};
  const auto logits = teacher_forced(m, b, Tensor<double>::zeros(2, 16));
  for (const auto& feature : logits)
    for (const auto& row : feature)
      for (double v : row) EXPECT_EQ(v, 0.0);
}

TEST(FeedForwardSub, BaseCaseAndZeroEmbeddingAlgebra) {
  Rng rng(9);
  Model<double> m(micro(SubDecoderKind::kFeedForward), 9);
  for (int j = 0; j < 3; ++j) zero(param(m, "emb." + std::to_string(j)));
  const Batch b = random_batch(rng, m.config(), 1, 3, 0.0);
  const auto h = m.hidden(b);
  const auto logits = teacher_forced(m, b, h);
  const auto& W = param(m, "sub.ff.weight");
  const auto& bias = param(m, "sub.ff.bias");
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> state(h.values().begin() + r * 16, h.values().begin() + (r + 1) * 16);
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& Wl = param(m, "logits." + std::to_string(j) + ".weight");
      const auto& bl = param(m, "logits." + std::to_string(j) + ".bias");
      for (std::size_t v = 0; v < Wl.cols(); ++v) {
        double z = bl.at(0, v);
        for (std::size_t c = 0; c < 16; ++c) z += state[c] * Wl.at(c, v);
        EXPECT_NEAR(logits[j][r][v], z, 1e-12);
      }
      // With zero embeddings only the top half of the concatenated input matters.
      std::vector<double> next(16);
      for (std::size_t o = 0; o < 16; ++o) {
        next[o] = bias.at(0, o);
        for (std::size_t c = 0; c < 16; ++c) next[o] += state[c] * W.at(c, o);
      }
      state = next;
    }
  }
}

TEST(RnnSub, BaseCaseAndZeroWeightAlgebra) {
  Rng rng(10);
  Model<double> m(micro(SubDecoderKind::kRnn), 10);
  for (auto* p : m.parameters())
    if (p->name.rfind("sub.gru", 0) == 0) zero(p->value);
  const Batch b = random_batch(rng, m.config(), 1, 3, 0.0);
  const auto h = m.hidden(b);
  const auto logits = teacher_forced(m, b, h);
  // Zero GRU weights: r = z = 1/2 and n = 0, so every step halves the state.
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& Wl = param(m, "logits." + std::to_string(j) + ".weight");
      const auto& bl = param(m, "logits." + std::to_string(j) + ".bias");
      const double factor = std::pow(0.5, static_cast<double>(j + 1));
      for (std::size_t v = 0; v < Wl.cols(); ++v) {
        double z = bl.at(0, v);
        for (std::size_t c = 0; c < 16; ++c) z += factor * h.at(r, c) * Wl.at(c, v);
        EXPECT_NEAR(logits[j][r][v], z, 1e-12);
      }
    }
}

TEST(SelfAttentionSub, FirstFeatureSeesOnlyHiddenAndBos) {
  Rng rng(11);
  Model<double> m(micro(SubDecoderKind::kSelfAttention), 11);
  const Batch b = random_batch(rng, m.config(), 1, 3, 0.0);
  const auto h = m.hidden(b);
  const auto a = teacher_forced(m, b, h);
  Batch other = b;
  for (auto& t : other.tokens) t = (t + 1) % 4;
  const auto c = teacher_forced(m, other, h);
  EXPECT_EQ(a[0], c[0]);
  EXPECT_NE(a[1], c[1]);
}

TEST(CrossAttentionSub, FirstFeatureIsBosValuePlusResidual) {
  Model<double> m(micro(SubDecoderKind::kCrossAttention), 12);
  // Kill the feed-forward sublayer so the block output is h + SubPos(0) + attention(BOS).
  zero(param(m, "sub.0.ff.down.weight"));
  zero(param(m, "sub.0.ff.down.bias"));
  Rng rng(12);
  const Batch b = random_batch(rng, m.config(), 1, 2, 0.0);
  const auto h = m.hidden(b);
  const auto logits = teacher_forced(m, b, h);
  using namespace nmt::tensor;
  NoGradGuard g;
  const auto& p = [&](const std::string& n) -> Tensor<double>& { return param(m, n); };
  const auto kv = layer_norm(p("sub.bos"), p("sub.0.ln_kv.gain"), p("sub.0.ln_kv.bias"));
  const auto value = linear(linear(kv, p("sub.0.attn.v.weight"), p("sub.0.attn.v.bias")), p("sub.0.attn.o.weight"),
                            p("sub.0.attn.o.bias"));
  for (std::size_t r = 0; r < 2; ++r) {
    auto q = add(add(slice_rows(h, r, r + 1), slice_rows(p("sub.pos"), 0, 1)), value);
    const auto expected = linear(layer_norm(q, p("sub.ln_f.gain"), p("sub.ln_f.bias")), p("logits.0.weight"), p("logits.0.bias"));
    for (std::size_t v = 0; v < 5; ++v) EXPECT_NEAR(logits[0][r][v], expected.at(0, v), 1e-12);
  }
}

TEST(CrossAttentionSub, SubPositionMakesIdenticalKeysDistinct) {
  Model<double> m(micro(SubDecoderKind::kCrossAttention, {4, 4}), 13);
  // Sub-token value 0 embeds exactly like BOS and both features share a logits head,
  // so features 0 and 1 see identical key/value content.
  auto& e0 = param(m, "emb.0");
  for (std::size_t c = 0; c < 16; ++c) e0.at(0, c) = param(m, "sub.bos").at(0, c);
  for (const char* part : {".weight", ".bias"}) {
    auto& src = param(m, std::string("logits.0") + part);
    std::copy(src.values().begin(), src.values().end(), param(m, std::string("logits.1") + part).values().begin());
  }
  Batch b{1, 1, 2, {0, 1}};
  const auto h = m.hidden(b);
  const auto distinct = teacher_forced(m, b, h);
  EXPECT_NE(distinct[0][0], distinct[1][0]);
  auto& sp = param(m, "sub.pos");
  for (std::size_t c = 0; c < 16; ++c) sp.at(1, c) = sp.at(0, c);
  const auto same = teacher_forced(m, b, h);
  for (std::size_t v = 0; v < 4; ++v) EXPECT_NEAR(same[0][0][v], same[1][0][v], 1e-12);
}

class AllKinds : public ::testing::TestWithParam<SubDecoderKind> {};

TEST_P(AllKinds, InterTokenCausalityBitwise) {
  Rng rng(20);
  Model<double> m(micro(GetParam()), 20);
  const Batch base = random_batch(rng, m.config(), 2, 8);
  const auto ref = teacher_forced(m, base, m.hidden(base));
  for (std::size_t p = 0; p < 8; ++p) {
    Batch pert = base;
    for (std::size_t j = 0; j < 3; ++j) pert.tokens[(8 + p) * 3 + j] = (std::max(0, pert.tokens[(8 + p) * 3 + j]) + 1) % 4;
    const auto got = teacher_forced(m, pert, m.hidden(pert));
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t q = 0; q < 16; ++q)
        if (q < 8 || q < 8 + p) EXPECT_EQ(got[j][q], ref[j][q]) << "p=" << p << " row=" << q << " j=" << j;
  }
}

TEST_P(AllKinds, IntraTokenCausalityBitwise) {
  Rng rng(21);
  Model<double> m(micro(GetParam()), 21);
  const Batch base = random_batch(rng, m.config(), 1, 6, 0.0);
  const auto h = m.hidden(base);
  const auto ref = teacher_forced(m, base, h);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t jp = 0; jp < 3; ++jp) {
      Batch pert = base;
      pert.tokens[i * 3 + jp] = (pert.tokens[i * 3 + jp] + 1) % 4;
      const auto got = teacher_forced(m, pert, h);
      const std::size_t limit = GetParam() == SubDecoderKind::kParallel ? 3 : jp + 1;
      for (std::size_t j = 0; j < limit; ++j) EXPECT_EQ(got[j][i], ref[j][i]) << "token " << i << " j'=" << jp << " j=" << j;
    }
}

TEST_P(AllKinds, EveryParameterReceivesGradient) {
  Rng rng(22);
  Model<double> m(micro(GetParam()), 22);
  const Batch b = random_batch(rng, m.config(), 2, 6);
  for (auto* p : m.parameters()) p->value.zero_grad();
  m.forward(b).loss.backward();
  for (auto* p : m.parameters()) {
    double norm = 0;
    if (p->value.has_grad())
      for (double g : p->value.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << p->name;
  }
}

TEST_P(AllKinds, ChainRuleMatchesIncrementalScoring) {
  Rng rng(23);
  Model<double> m(micro(GetParam()), 23);
  const Batch b = random_batch(rng, m.config(), 1, 7, 0.0);
  const auto res = m.forward(b);
  const auto h = m.hidden(b);
  double total = 0;
  for (std::size_t i = 0; i < 7; ++i) {
    std::vector<int> prefix;
    for (std::size_t j = 0; j < 3; ++j) {
      const auto logits = m.step_logits(h, b, i, prefix);
      std::vector<double> lp(logits.size());
      nmt::tensor::log_softmax_row<double>(logits, lp);
      total -= lp[static_cast<std::size_t>(b.tokens[i * 3 + j])];
      prefix.push_back(b.tokens[i * 3 + j]);
    }
  }
  double from_forward = 0;
  for (std::size_t j = 0; j < 3; ++j) from_forward += res.feature_nll[j] * static_cast<double>(res.counts[j]);
  EXPECT_NEAR(total, from_forward, 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Kinds, AllKinds, ::testing::ValuesIn(kAllKinds), kind_label);

class SequentialKinds : public ::testing::TestWithParam<SubDecoderKind> {};

template <class T>
double max_incremental_gap(SubDecoderKind kind, std::uint64_t seed) {
  Rng rng(seed);
  Model<T> m(micro(kind), seed);
  const Batch b = random_batch(rng, m.config(), 2, 6);
  const auto h = m.hidden(b);
  const auto tf = teacher_forced(m, b, h);
  double gap = 0;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    std::vector<int> prefix;
    for (std::size_t j = 0; j < 3; ++j) {
      const auto step = m.step_logits(h, b, r, prefix);
      for (std::size_t v = 0; v < step.size(); ++v)
        gap = std::max(gap, static_cast<double>(std::abs(step[v] - tf[j][r][v])));
      prefix.push_back(b.tokens[r * 3 + j]);
    }
  }
  return gap;
}

TEST_P(SequentialKinds, TeacherForcedEqualsIncremental) {
  for (std::uint64_t seed : {30u, 31u, 32u}) {
    EXPECT_LT(max_incremental_gap<float>(GetParam(), seed), 1e-5);
    EXPECT_LT(max_incremental_gap<double>(GetParam(), seed), 1e-10);
  }
}

TEST_P(SequentialKinds, StepRejectsOutOfOrderFeature) {
  Rng rng(33);
  Model<double> m(micro(GetParam()), 33);
  const Batch b = random_batch(rng, m.config(), 1, 2);
  const auto h = m.hidden(b);
  const std::vector<int> too_long{0, 0, 0};
  EXPECT_THROW(m.step_logits(h, b, 0, too_long), nmt::ConfigError);
}

INSTANTIATE_TEST_SUITE_P(Kinds, SequentialKinds, ::testing::ValuesIn(kSequentialKinds), kind_label);

TEST(CrossAttentionSub, KeyResidualSwitchKeepsEquivalenceAndCausality) {
  auto c = micro(SubDecoderKind::kNmt);
  c.key_residual = true;
  Rng rng(34);
  Model<double> m(c, 34);
  const Batch b = random_batch(rng, c, 1, 5, 0.0);
  const auto h = m.hidden(b);
  const auto tf = teacher_forced(m, b, h);
  for (std::size_t r = 0; r < 5; ++r) {
    std::vector<int> prefix;
    for (std::size_t j = 0; j < 3; ++j) {
      const auto step = m.step_logits(h, b, r, prefix);
      for (std::size_t v = 0; v < step.size(); ++v) EXPECT_NEAR(step[v], tf[j][r][v], 1e-10);
      prefix.push_back(b.tokens[r * 3 + j]);
    }
  }
}

// ---- enricher -------------------------------------------------------------------

TEST(Enricher, ContextWindowRows) {
  auto c = micro(SubDecoderKind::kNmt);
  c.window = 1;
  Model<double> m1(c, 1);
  Batch b{2, 6, 3, std::vector<int>(36, 0)};
  EXPECT_EQ(m1.context_rows(b, 9), std::vector<std::size_t>{9});
  c.window = 4;
  Model<double> m4(c, 1);
  EXPECT_EQ(m4.context_rows(b, 6), std::vector<std::size_t>{6});
  EXPECT_EQ(m4.context_rows(b, 0), std::vector<std::size_t>{0});
  EXPECT_EQ(m4.context_rows(b, 11), (std::vector<std::size_t>{8, 9, 10, 11}));
}

TEST(Enricher, OutOfWindowContextIsInvisible) {
  Rng rng(40);
  auto c = micro(SubDecoderKind::kNmt);
  c.window = 2;
  Model<double> m(c, 40);
  const Batch b = random_batch(rng, c, 1, 8, 0.0);
  const auto h = m.hidden(b);
  const auto ref = teacher_forced(m, b, h);
  for (std::size_t i = 2; i < 8; ++i) {
    auto garbage = Tensor<double>::from(h.rows(), h.cols(), std::vector<double>(h.values().begin(), h.values().end()));
    for (std::size_t q = 0; q + 1 < i; ++q)
      for (std::size_t col = 0; col < 16; ++col) garbage.at(q, col) = rng.normal(0, 100);
    const auto got = teacher_forced(m, b, garbage);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(got[j][i], ref[j][i]) << "i=" << i << " j=" << j;
    bool changed = false;
    for (std::size_t j = 1; j < 3; ++j) changed = changed || got[j][i - 1] != ref[j][i - 1];
    EXPECT_TRUE(changed);
  }
}

// ---- teacher-forced loss ----------------------------------------------------------

TEST(Forward, ZeroProjectionsGiveLogVocab) {
  Rng rng(50);
  for (SubDecoderKind k : kAllKinds) {
    Model<double> m(micro(k), 50);
    for (int j = 0; j < 3; ++j) {
      zero(param(m, "logits." + std::to_string(j) + ".weight"));
      zero(param(m, "logits." + std::to_string(j) + ".bias"));
    }
    const auto res = m.forward(random_batch(rng, m.config(), 2, 5));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(res.feature_nll[j], std::log(m.config().vocab_sizes[j]), 1e-12);
  }
}

TEST(Forward, PaddingDoesNotChangeTheLoss) {
  Rng rng(51);
  for (SubDecoderKind k : kAllKinds) {
    Model<double> m(micro(k), 51);
    const Batch b = random_batch(rng, m.config(), 2, 5);
    Batch padded{2, 9, 3, {}};
    for (std::size_t s = 0; s < 2; ++s) {
      padded.tokens.insert(padded.tokens.end(), b.tokens.begin() + static_cast<long>(s * 15),
                           b.tokens.begin() + static_cast<long>((s + 1) * 15));
      padded.tokens.insert(padded.tokens.end(), 12, nmt::model::kPad);
    }
    EXPECT_NEAR(m.forward(b).loss.item(), m.forward(padded).loss.item(), 1e-12) << nmt::model::kind_name(k);
  }
}

TEST(Forward, AllIgnoredBatchIsAnError) {
  Model<double> m(micro(SubDecoderKind::kNmt), 52);
  Batch b{1, 3, 3, std::vector<int>(9, nmt::model::kIgnore)};
  EXPECT_THROW(m.forward(b), nmt::DataError);
  b.tokens[4] = 9;
  EXPECT_THROW(m.forward(b), nmt::DataError);
}

// ---- full-model gradient check --------------------------------------------------

TEST(GradientCheck, NmtMicroModel) {
  Rng rng(60);
  auto c = micro(SubDecoderKind::kNmt);
  Model<double> m(c, 60);
  const Batch b = random_batch(rng, c, 2, 5);
  std::vector<nmt::tensor::Parameter<double>*> params = m.parameters();
  for (auto* p : params) p->value.zero_grad();
  m.forward(b).loss.backward();
  nmt::tensor::NoGradGuard g;
  const double h = 1e-5;
  double worst = 0;
  std::size_t checked = 0;
  for (auto* p : params) {
    auto vals = p->value.values();
    const std::vector<double> grad(p->value.grad().begin(), p->value.grad().end());
    // Up to 12 entries per tensor, chosen at random.
    for (int k = 0; k < 12; ++k) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(vals.size()) - 1));
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = m.forward(b).loss.item();
      vals[i] = saved - h;
      const double down = m.forward(b).loss.item();
      vals[i] = saved;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), 1e-5}));
      ++checked;
    }
  }
  EXPECT_GT(checked, 500u);
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
