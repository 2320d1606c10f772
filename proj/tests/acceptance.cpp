// Acceptance runner: one PASS/FAIL line per criterion. Pass criterion numbers
// on the command line to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "nmt/encoding/chords.hpp"
#include "nmt/encoding/codec.hpp"
#include "nmt/eval/evaluate.hpp"
#include "nmt/gen/generate.hpp"
#include "nmt/model/model.hpp"
#include "nmt/synth/synth.hpp"
#include "nmt/tensor/attention.hpp"
#include "nmt/tensor/layers.hpp"
#include "nmt/train/trainer.hpp"
#include "piece_gen.hpp"
#include "toy_music.hpp"

using namespace nmt;
using encoding::Scheme;
using model::Batch;
using model::Model;
using model::ModelConfig;
using model::SubDecoderKind;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const Scheme kSchemes[] = {Scheme::kRemi, Scheme::kCp, Scheme::kNbMetricFirst, Scheme::kNbPitchFirst};
const SubDecoderKind kAllKinds[] = {SubDecoderKind::kParallel,       SubDecoderKind::kFeedForward,
                                    SubDecoderKind::kRnn,            SubDecoderKind::kSelfAttention,
                                    SubDecoderKind::kCrossAttention, SubDecoderKind::kNmt};

std::vector<midi::Piece> random_corpus(std::uint64_t seed, int count, std::size_t notes) {
  Rng rng(seed);
  std::vector<midi::Piece> out;
  for (int i = 0; i < count; ++i) {
    testutil::PieceSpec spec;
    spec.notes = notes;
    spec.max_duration = 12;
    spec.instruments = {{0, false}, {33, false}, {40, false}, {73, false}, {0, true}};
    auto p = testutil::random_piece(rng, spec);
    p.source_id = "piece" + std::to_string(i);
    p.chords = encoding::detect_chords(p);
    out.push_back(std::move(p));
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1-3: encoding

Outcome round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = random_corpus(101, 120, 100);
  const auto v = encoding::build_vocab(corpus, {});
  std::size_t checked = 0, failed = 0;
  for (const auto& raw : corpus) {
    const auto p = encoding::canonicalize(raw, v);
    for (Scheme s : kSchemes) {
      const auto back = encoding::decode(encoding::encode(p, v, s), v);
      ++checked;
      if (!(back == p) || back.chords != p.chords) ++failed;
    }
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && secs < 60.0,
          fmt("%zu piece/scheme pairs, %zu mismatches, %.1fs (limit 60s)", checked, failed, secs)};
}

Outcome length_laws() {
  Rng rng(102);
  std::vector<midi::Piece> corpus;
  for (int i = 0; i < 60; ++i) {
    testutil::PieceSpec spec;
    spec.notes = 300;
    spec.same_position_prob = 0.6;
    spec.instruments = {{0, false}, {33, false}, {40, false}, {56, false}, {73, false}, {0, true}};
    corpus.push_back(testutil::random_piece(rng, spec));
  }
  const auto v = encoding::build_vocab(corpus, {});
  double nb = 0, cp = 0, remi = 0;
  bool one_per_note = true;
  for (const auto& p : corpus) {
    const auto n = encoding::encode(p, v, Scheme::kNbMetricFirst).size();
    one_per_note = one_per_note && n == encoding::canonicalize(p, v).notes.size();
    nb += static_cast<double>(n);
    cp += static_cast<double>(encoding::encode(p, v, Scheme::kCp).size());
    remi += static_cast<double>(encoding::encode(p, v, Scheme::kRemi).size());
  }
  const double k = static_cast<double>(corpus.size());
  return {one_per_note && remi / nb > 2.0 && nb < cp && cp < remi,
          fmt("|NB-MF|=K on all pieces: %s; mean REMI %.0f, CP %.0f, NB %.0f, REMI/NB %.2f", one_per_note ? "yes" : "no",
              remi / k, cp / k, nb / k, remi / nb)};
}

Outcome pitch_first_shift() {
  const auto corpus = random_corpus(103, 100, 80);
  const auto v = encoding::build_vocab(corpus, {});
  std::size_t bad = 0;
  for (const auto& p : corpus) {
    const auto mf = encoding::encode(p, v, Scheme::kNbMetricFirst);
    const auto pf = encoding::encode(p, v, Scheme::kNbPitchFirst);
    // The pitch-first stream is the metric-first stream delayed by three
    // slots: three leading IGNOREs, and the terminal row's five metric slots.
    std::vector<int> expected(3, encoding::kIgnore);
    expected.insert(expected.end(), mf.data.begin(), mf.data.end());
    expected.insert(expected.end(), 5, encoding::kIgnore);
    bad += pf.data != expected;
  }
  return {bad == 0, fmt("%zu pieces, %zu mismatches", corpus.size(), bad)};
}

// ---------------------------------------------------------------- 4-6: model

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

Batch random_batch(Rng& rng, const ModelConfig& c, std::size_t B, std::size_t L, double ignore_prob) {
  Batch b{B, L, c.num_features(), {}};
  for (std::size_t r = 0; r < B * L; ++r)
    for (std::size_t j = 0; j < c.num_features(); ++j)
      b.tokens.push_back(rng.uniform() < ignore_prob ? model::kIgnore
                                                     : static_cast<int>(rng.uniform_int(0, c.vocab_sizes[j] - 1)));
  return b;
}

// Teacher-forced logits as [feature][row][value].
template <class T>
std::vector<std::vector<std::vector<T>>> teacher_forced(const Model<T>& m, const Batch& b) {
  tensor::NoGradGuard no_grad;
  const auto logits = m.subtoken_logits(m.hidden(b), b);
  std::vector<std::vector<std::vector<T>>> out(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j)
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const auto row = logits[j].values().subspan(r * logits[j].cols(), logits[j].cols());
      out[j].emplace_back(row.begin(), row.end());
    }
  return out;
}

Outcome causality() {
  std::size_t violations = 0, comparisons = 0;
  for (auto kind : kAllKinds) {
    Rng rng(104);
    const Model<double> m(micro(kind), 104);
    const std::size_t L = 8, J = 3;
    // Inter-token: perturbing token p leaves rows < p untouched, bitwise.
    const Batch base = random_batch(rng, m.config(), 1, L, 0.1);
    const auto ref = teacher_forced(m, base);
    for (std::size_t p = 0; p < L; ++p) {
      Batch pert = base;
      for (std::size_t j = 0; j < J; ++j) pert.tokens[p * J + j] = (std::max(0, pert.tokens[p * J + j]) + 1) % 4;
      const auto got = teacher_forced(m, pert);
      for (std::size_t j = 0; j < J; ++j)
        for (std::size_t q = 0; q < p; ++q, ++comparisons) violations += got[j][q] != ref[j][q];
    }
    // Intra-token: perturbing sub-token j' of token i leaves features <= j' of
    // that token untouched (every feature for the parallel head).
    const Batch full = random_batch(rng, m.config(), 1, 6, 0.0);
    const auto fref = teacher_forced(m, full);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t jp = 0; jp < J; ++jp) {
        Batch pert = full;
        pert.tokens[i * J + jp] = (pert.tokens[i * J + jp] + 1) % 4;
        const auto got = teacher_forced(m, pert);
        const std::size_t limit = kind == SubDecoderKind::kParallel ? J : jp + 1;
        for (std::size_t j = 0; j < limit; ++j, ++comparisons) violations += got[j][i] != fref[j][i];
      }
  }
  return {violations == 0, fmt("6 kinds, %zu bitwise row comparisons, %zu violations", comparisons, violations)};
}

Outcome incremental_equivalence() {
  double worst = 0;
  std::string per_kind;
  for (auto kind : kAllKinds) {
    if (kind == SubDecoderKind::kParallel) continue;
    double gap = 0;
    for (std::uint64_t seed : {105u, 106u, 107u}) {
      Rng rng(seed);
      const Model<float> m(micro(kind), seed);
      const Batch b = random_batch(rng, m.config(), 2, 6, 0.1);
      const auto tf = teacher_forced(m, b);
      const auto h = m.hidden(b);
      for (std::size_t r = 0; r < b.rows(); ++r) {
        std::vector<int> prefix;
        for (std::size_t j = 0; j < 3; ++j) {
          const auto step = m.step_logits(h, b, r, prefix);
          for (std::size_t x = 0; x < step.size(); ++x)
            gap = std::max(gap, static_cast<double>(std::abs(step[x] - tf[j][r][x])));
          prefix.push_back(b.tokens[r * 3 + j]);
        }
      }
    }
    worst = std::max(worst, gap);
    per_kind += fmt(" %s=%.1e", model::kind_name(kind), gap);
  }
  return {worst < 1e-5, "max |dlogit| (f32):" + per_kind};
}

Outcome gradient_checks() {
  using testing::check_gradients;
  using testing::probe;
  using testing::random_tensor;
  using namespace tensor;
  const auto t0 = std::chrono::steady_clock::now();
  double worst_op = 0;
  std::size_t ops = 0;
  auto track = [&](const testing::GradCheckResult& r) {
    worst_op = std::max(worst_op, r.max_rel_error);
    ++ops;
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto a = random_tensor(rng, 3, 4), b = random_tensor(rng, 4, 5), c = random_tensor(rng, 3, 4);
    auto row = random_tensor(rng, 1, 4);
    track(check_gradients({a, b}, [&] { return probe(matmul(a, b), seed); }));
    track(check_gradients({a, c}, [&] { return probe(add(a, c), seed); }));
    track(check_gradients({a, row}, [&] { return probe(add(a, row), seed); }));
    track(check_gradients({a, c}, [&] { return probe(sub(a, c), seed); }));
    track(check_gradients({a, c}, [&] { return probe(mul(a, c), seed); }));
    track(check_gradients({a}, [&] { return probe(scale(a, 0.37), seed); }));
    track(check_gradients({a}, [&] { return sum(a); }));
    track(check_gradients({a}, [&] { return probe(sigmoid(a), seed); }));
    track(check_gradients({a}, [&] { return probe(tensor::tanh(a), seed); }));
    track(check_gradients({a}, [&] { return probe(gelu(a), seed); }));
    track(check_gradients({a}, [&] { return probe(softmax(a), seed); }));
    track(check_gradients({a, c}, [&] { return probe(concat_rows<double>({a, c, a}), seed); }));
    track(check_gradients({a, c}, [&] { return probe(concat_cols<double>({a, c}), seed); }));
    track(check_gradients({a}, [&] { return probe(slice_rows(a, 1, 3), seed); }));
    const std::vector<int> idx{2, -1, 0, 2};
    track(check_gradients({a}, [&] { return probe(gather_rows<double>(a, idx), seed); }));
    track(check_gradients({a}, [&] { return probe(embedding_lookup<double>(a, idx), seed); }));
    track(check_gradients({a}, [&] {
      Rng drop_rng(seed);
      return probe(dropout(a, 0.3, true, drop_rng), seed);
    }));
    const std::vector<int> targets{1, kIgnoreIndex, 3};
    track(check_gradients({a}, [&] { return softmax_cross_entropy<double>(a, targets); }));
    auto x = random_tensor(rng, 8, 16), g = random_tensor(rng, 1, 16), bb = random_tensor(rng, 1, 16);
    track(check_gradients({x, g, bb}, [&] { return probe(layer_norm(x, g, bb), seed); }));
    auto q = random_tensor(rng, 5, 8), k = random_tensor(rng, 6, 8), vv = random_tensor(rng, 6, 8);
    AttentionPattern pattern;
    pattern.num_keys = 6;
    pattern.add_row({0});
    pattern.add_row({0, 1, 2});
    pattern.add_row({1, 3, 5});
    pattern.add_row({0, 1, 2, 3, 4, 5});
    pattern.add_row({4});
    track(check_gradients({q, k, vv}, [&] { return probe(attend(q, k, vv, pattern, 2), seed); }));
    ParameterStore<double> store(seed, 0.5);
    MultiHeadAttention<double> mha(store, "mha", 8, 4);
    GruCell<double> cell(store, "gru", 8, 8);
    auto causal = std::make_shared<const AttentionPattern>(AttentionPattern::causal(5));
    auto hx = random_tensor(rng, 5, 8);
    std::vector<Tensor<double>> inputs{q, hx};
    for (auto* p : store.parameters()) inputs.push_back(p->value);
    track(check_gradients(inputs, [&] { return probe(mha(q, q, causal), seed); }));
    track(check_gradients(inputs, [&] { return probe(cell(q, hx), seed); }));
  }

  // Every parameter entry of an NMT micro-model (dim 16, 2 main layers + 1).
  Rng rng(106);
  Model<double> m(micro(SubDecoderKind::kNmt), 106);
  const Batch b = random_batch(rng, m.config(), 2, 5, 0.1);
  auto params = m.parameters();
  for (auto* p : params) p->value.zero_grad();
  m.forward(b).loss.backward();
  NoGradGuard no_grad;
  double worst_model = 0;
  std::size_t entries = 0;
  for (auto* p : params) {
    auto vals = p->value.values();
    const std::vector<double> grad(p->value.grad().begin(), p->value.grad().end());
    for (std::size_t i = 0; i < vals.size(); ++i, ++entries) {
      const double saved = vals[i], h = 1e-5;
      vals[i] = saved + h;
      const double up = m.forward(b).loss.item();
      vals[i] = saved - h;
      const double down = m.forward(b).loss.item();
      vals[i] = saved;
      const double numeric = (up - down) / (2 * h);
      worst_model = std::max(worst_model, std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), 1e-5}));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_op < 1e-4 && worst_model < 1e-4 && secs < 300,
          fmt("%zu op checks max rel %.1e; NMT micro-model %zu entries max rel %.1e; %.0fs (limit 300s)", ops, worst_op,
              entries, worst_model, secs)};
}

// ---------------------------------------------------------------- 7-10: trained behaviour

train::TrainConfig quick_train(long steps, std::size_t batch, std::size_t segment, double lr) {
  train::TrainConfig t;
  t.steps = steps;
  t.warmup_steps = steps / 10;
  t.batch_size = batch;
  t.segment_length = segment;
  t.lr_max = lr;
  t.weight_decay = 0.0;
  t.augment = false;
  t.validate_every = steps;
  t.checkpoint_every = steps;
  t.seed = 7;
  return t;
}

ModelConfig small(SubDecoderKind kind, std::vector<int> vocab, std::size_t dim, std::size_t max_len) {
  ModelConfig c;
  c.dim = dim;
  c.heads = 2;
  c.main_layers = 2;
  c.sub_layers = 1;
  c.enricher_layers = 1;
  c.window = 4;
  c.max_sequence_length = max_len;
  c.vocab_sizes = std::move(vocab);
  c.kind = kind;
  c.dropout = 0.0;
  return c;
}

Outcome chain_rule_oracle() {
  const auto v = testutil::ToyMusic::vocab();
  const auto dist = testutil::ToyMusic::enumerate();
  std::vector<double> probs;
  double remi_tokens = 0;
  for (const auto& [p, prob] : dist) {
    probs.push_back(prob);
    remi_tokens += prob * static_cast<double>(encoding::encode(p, v, Scheme::kRemi).data.size());
  }
  const double rate = testutil::ToyMusic::entropy() / remi_tokens;

  auto encode_all = [&](Scheme s) {
    std::vector<encoding::TokenSequence> seqs;
    for (const auto& [p, prob] : dist) seqs.push_back(encoding::encode(p, v, s));
    return seqs;
  };
  double oracle_gap = 0;
  for (Scheme s : kSchemes) {
    const auto seqs = encode_all(s);
    const testutil::PrefixOracle oracle(seqs, probs);
    oracle_gap = std::max(oracle_gap, std::abs(eval::evaluate_corpus(oracle, seqs, v, 0, 0, probs).mean_over_tokens() - rate));
  }

  // Trained micro-models on samples, scored in expectation over the exact distribution.
  Rng rng(107);
  std::vector<midi::Piece> sample;
  for (int i = 0; i < 3000; ++i) sample.push_back(testutil::ToyMusic::sample(rng));
  auto trained_nll = [&](Scheme s, SubDecoderKind kind) {
    std::vector<std::vector<int>> data;
    for (const auto& p : sample) data.push_back(encoding::encode(p, v, s).data);
    const auto [sizes, names] = train::scheme_vocab(s, v);
    const std::size_t len = s == Scheme::kRemi ? 16 : 8;
    Model<float> m(small(kind, sizes, 32, len), 107);
    train::train_model(m, quick_train(1500, 16, len, 3e-3), train::FixedSource(sizes.size(), data), nullptr);
    const eval::ModelScorer<float> scorer(m, s, v, len, len / 2);
    return eval::evaluate_corpus(scorer, encode_all(s), v, len, len / 2, probs).mean_over_tokens();
  };
  const double nb = trained_nll(Scheme::kNbPitchFirst, SubDecoderKind::kNmt);
  const double remi = trained_nll(Scheme::kRemi, SubDecoderKind::kParallel);
  return {oracle_gap < 1e-9 && std::abs(nb - rate) < 0.1 && std::abs(remi - rate) < 0.1,
          fmt("entropy rate %.4f; oracle max gap %.1e over 4 schemes; trained NB-PF+NMT %.4f, REMI %.4f", rate,
              oracle_gap, nb, remi)};
}

struct SynthRun {
  std::vector<double> features;
  double mean;
};

SynthRun train_on_synth(const synth::SynthCorpus& c, SubDecoderKind kind, long steps) {
  const std::size_t n = c.sequences.size(), held = n / 5;
  const train::FixedSource tr(c.vocab.size(), {c.sequences.begin(), c.sequences.end() - static_cast<long>(held)});
  const train::FixedSource va(c.vocab.size(), {c.sequences.end() - static_cast<long>(held), c.sequences.end()});
  Model<float> m(small(kind, c.vocab, 32, c.length), 108);
  train::train_model(m, quick_train(steps, 8, c.length, 3e-3), tr, nullptr);
  const auto acc = train::evaluate_batches(m, train::evaluation_batches(va, c.length, 8));
  return {acc.features(), acc.mean()};
}

Outcome intra_token_separation() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = synth::synth_corpus({16, 16, 16, 16}, synth::Dependency::kIntra, 250, 32, 108);
  const double marginal = synth::SynthDistribution(c.vocab, c.dependency).marginal_entropy(1);
  const auto cross = train_on_synth(c, SubDecoderKind::kCrossAttention, 400);
  const auto nmt = train_on_synth(c, SubDecoderKind::kNmt, 400);
  const auto par = train_on_synth(c, SubDecoderKind::kParallel, 400);
  const double secs = seconds_since(t0);
  return {cross.features[1] < 0.05 && nmt.features[1] < 0.05 && par.features[1] >= 0.9 * marginal && secs < 600,
          fmt("feature-2 NLL: crossattn %.4f, nmt %.4f (< 0.05); parallel %.4f (>= 0.9 x %.4f); %.0fs", cross.features[1],
              nmt.features[1], par.features[1], marginal, secs)};
}

Outcome nmt_vs_cross() {
  const auto c = synth::synth_corpus({8, 8, 8, 8}, synth::Dependency::kInter, 1500, 32, 109);
  const auto cross = train_on_synth(c, SubDecoderKind::kCrossAttention, 800);
  const auto nmt = train_on_synth(c, SubDecoderKind::kNmt, 800);
  return {nmt.mean <= cross.mean + 0.01,
          fmt("validation NLL: nmt %.4f, crossattn %.4f (entropy %.4f)", nmt.mean, cross.mean, c.entropy)};
}

Outcome overfit_and_regenerate() {
  Rng rng(110);
  testutil::PieceSpec spec;
  spec.notes = 50;
  spec.same_position_prob = 0.3;
  spec.max_gap = 6;
  spec.tempo_changes = false;
  spec.instruments = {{0, false}, {40, false}};
  auto piece = testutil::random_piece(rng, spec);
  piece.chords = encoding::detect_chords(piece);
  const auto v = encoding::build_vocab({piece}, {});
  const auto full = encoding::encode(piece, v, Scheme::kNbPitchFirst);
  const auto [sizes, names] = train::scheme_vocab(Scheme::kNbPitchFirst, v);
  Model<float> m(small(SubDecoderKind::kNmt, sizes, 64, 64), 110);
  const train::FixedSource data(8, {full.data});
  train::train_model(m, quick_train(400, 1, 64, 3e-3), data, nullptr);
  const double nll = train::evaluate_batches(m, train::evaluation_batches(data, 64, 1)).mean();

  const auto prompt = gen::extract_prompt(piece, v, Scheme::kNbPitchFirst, 4);
  gen::SamplerConfig greedy;
  greedy.temperature = 0.0;
  greedy.max_tokens = full.size();
  const auto out = gen::generate(m, v, prompt, greedy);
  std::size_t wrong = 0;
  for (std::size_t k = prompt.data.size(); k < full.data.size(); ++k) wrong += k >= out.data.size() || out.data[k] != full.data[k];
  return {nll < 0.05 && out.data == full.data,
          fmt("%zu-token piece, train NLL %.4f (< 0.05); prompt %zu tokens; %zu of %zu continuation slots differ",
              full.size(), nll, prompt.size(), wrong, full.data.size() - prompt.data.size())};
}

// ---------------------------------------------------------------- 11-13

Outcome sampling_statistics() {
  Rng rng(111);
  std::vector<double> logits(12);
  for (auto& l : logits) l = rng.normal(0, 2);
  const int N = 100000;
  double worst = 0;
  for (double t : {1.0, 1.1, 1.3}) {
    const auto p = gen::nucleus_distribution(logits, 0.99, t);
    std::vector<int> counts(logits.size(), 0);
    for (int i = 0; i < N; ++i) ++counts[gen::nucleus_sample(logits, 0.99, t, rng)];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double sigma = std::sqrt(N * p[k] * (1 - p[k]));
      if (p[k] == 0) worst = std::max(worst, counts[k] > 0 ? 1e9 : 0.0);
      else worst = std::max(worst, std::abs(counts[k] - N * p[k]) / sigma);
    }
  }
  const gen::SamplerConfig d;
  const bool exposed = d.top_p == 0.99 && gen::kTemperatureRange[0] == 1.0 && gen::kTemperatureRange[1] == 1.3;
  return {worst <= 3.0 && exposed, fmt("max deviation %.2f sigma over 3 temperatures x 100k draws; p=%.2f, T range [%.1f, %.1f]",
                                       worst, d.top_p, gen::kTemperatureRange[0], gen::kTemperatureRange[1])};
}

Outcome schedule_values() {
  const train::TrainConfig c;
  const double lr0 = train::lr_schedule(c, 0), lrw = train::lr_schedule(c, c.warmup_steps);
  const long mid = c.warmup_steps + (c.steps - c.warmup_steps) / 2;
  const double lrm = train::lr_schedule(c, mid), want = (c.lr_max + c.min_lr()) / 2;
  bool monotone = true;
  for (long s = c.warmup_steps; s < c.steps; ++s) monotone = monotone && train::lr_schedule(c, s + 1) <= train::lr_schedule(c, s);
  return {lr0 == 0.0 && lrw == 1e-4 && lrm == want && monotone,
          fmt("lr(0)=%g lr(%ld)=%g lr(%ld)=%.17g vs %.17g; monotone after warmup: %s", lr0, c.warmup_steps, lrw, mid, lrm,
              want, monotone ? "yes" : "no")};
}

Outcome parameter_budget() {
  const encoding::FeatureVocab v;  // resolution 4, 4/4, every feature active
  const auto [sizes, names] = train::scheme_vocab(Scheme::kNbPitchFirst, v);
  std::string detail;
  std::size_t nmt_count = 0;
  for (auto kind : kAllKinds) {
    ModelConfig c;
    c.vocab_sizes = sizes;
    c.kind = kind;
    const Model<float> m(c, 1);
    detail += fmt("%s %.2fM, ", model::kind_name(kind), static_cast<double>(m.parameter_count()) / 1e6);
    if (kind == SubDecoderKind::kNmt) nmt_count = m.parameter_count();
  }
  // Vocabulary share: embeddings plus output projections.
  std::size_t vocab_total = 0;
  for (int s : sizes) vocab_total += static_cast<std::size_t>(s);
  const double vocab_share = static_cast<double>(vocab_total * (2 * 512 + 1)) / 1e6;
  const double lo = 0.85 * 40e6, hi = 1.15 * 40e6;
  const double n = static_cast<double>(nmt_count);
  return {n >= lo && n <= hi, detail + fmt("of which %.2fM scale with the %zu-entry vocabulary; NMT within [34M, 46M]",
                                           vocab_share, vocab_total)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"encoding round trip", round_trip},
      {"sequence-length laws", length_laws},
      {"pitch-first shift invariance", pitch_first_shift},
      {"causality suite", causality},
      {"teacher-forced vs incremental", incremental_equivalence},
      {"gradient checks", gradient_checks},
      {"chain-rule comparability oracle", chain_rule_oracle},
      {"intra-token dependency separation", intra_token_separation},
      {"nmt vs cross-attention ordering", nmt_vs_cross},
      {"overfit and regenerate", overfit_and_regenerate},
      {"sampling statistics", sampling_statistics},
      {"schedule values", schedule_values},
      {"parameter budget", parameter_budget},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %2d %-34s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
