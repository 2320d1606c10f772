#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "nmt/tensor/attention.hpp"
#include "nmt/tensor/checkpoint.hpp"
#include "nmt/tensor/layers.hpp"
#include "nmt/tensor/ops.hpp"
#include "nmt/tensor/optim.hpp"

using namespace nmt;
using namespace nmt::tensor;
using nmt::testing::check_gradients;
using nmt::testing::probe;
using nmt::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kSeeds = 10;

TEST(TensorOps, MatmulIdentity) {
  auto eye = Tensor<float>::from(2, 2, {1, 0, 0, 1});
  auto x = Tensor<float>::from(2, 3, {1.5f, -2, 3, 4, 5, -6.25f});
  auto y = matmul(eye, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(TensorOps, SoftmaxOfZerosIsUniform) {
  auto p = softmax(Tensor<float>::zeros(1, 4));
  for (float v : p.values()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(TensorOps, SoftmaxRowsSumToOne) {
  Rng rng(3);
  auto x = Tensor<float>::zeros(16, 9);
  for (auto& v : x.values()) v = static_cast<float>(rng.normal(0, 4));
  auto p = softmax(x);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double total = 0;
    for (std::size_t c = 0; c < p.cols(); ++c) total += p.at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(TensorOps, ShapeMismatchNamesOpAndShapes) {
  auto a = Tensor<float>::zeros(2, 3);
  auto b = Tensor<float>::zeros(4, 5);
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x5]"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(TensorOps, DropoutEvalIsBitwiseIdentity) {
  Rng rng(1);
  auto x = Tensor<float>::from(1, 3, {1, 2, 3});
  auto y = dropout(x, 0.5, false, rng);
  EXPECT_EQ(y.node(), x.node());
  EXPECT_THROW(dropout(x, 1.0, true, rng), ConfigError);
}

TEST(TensorOps, CrossEntropyUniformAndIgnore) {
  auto logits = Tensor<double>::zeros(1, 10);
  std::vector<int> target{3};
  EXPECT_NEAR(softmax_cross_entropy(logits, target).item(), std::log(10.0), 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(logits, target).item(), 2.302585, 1e-6);

  auto two = Tensor<double>::zeros(2, 10, true);
  two.at(1, 4) = 7.0;
  std::vector<int> t2{3, kIgnoreIndex};
  auto loss = softmax_cross_entropy(two, t2, kIgnoreIndex, Reduction::kSum);
  EXPECT_NEAR(loss.item(), std::log(10.0), 1e-12);
  loss.backward();
  for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(two.grad()[10 + c], 0.0);

  std::vector<int> bad{10};
  EXPECT_THROW(softmax_cross_entropy(logits, bad), DataError);
}

TEST(TensorOps, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  Rng rng(5);
  auto logits = random_tensor(rng, 1, 6);
  std::vector<int> target{2};
  softmax_cross_entropy(logits, target).backward();
  std::vector<double> lp(6);
  log_softmax_row<double>(logits.values(), lp);
  for (int c = 0; c < 6; ++c) EXPECT_NEAR(logits.grad()[c], std::exp(lp[c]) - (c == 2 ? 1.0 : 0.0), 1e-12);
}

// Finite-difference oracle over every differentiable op and ten seeds.
class GradCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradCheck, ElementwiseAndShapeOps) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  auto a = random_tensor(rng, 3, 4);
  auto b = random_tensor(rng, 4, 5);
  auto c = random_tensor(rng, 3, 4);
  auto row = random_tensor(rng, 1, 4);
  EXPECT_LT(check_gradients({a, b}, [&] { return probe(matmul(a, b), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a, c}, [&] { return probe(add(a, c), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a, row}, [&] { return probe(add(a, row), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a, c}, [&] { return probe(sub(a, c), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a, c}, [&] { return probe(mul(a, c), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a}, [&] { return probe(scale(a, 0.37), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a}, [&] { return sum(a); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a}, [&] { return probe(sigmoid(a), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a}, [&] { return probe(tensor::tanh(a), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a}, [&] { return probe(gelu(a), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a}, [&] { return probe(softmax(a), seed); }).max_rel_error, kGradTol);
  EXPECT_LT(check_gradients({a, c}, [&] { return probe(concat_rows<double>({a, c, a}), seed); }).max_rel_error,
            kGradTol);
  EXPECT_LT(check_gradients({a, c}, [&] { return probe(concat_cols<double>({a, c}), seed); }).max_rel_error,
            kGradTol);
  EXPECT_LT(check_gradients({a}, [&] { return probe(slice_rows(a, 1, 3), seed); }).max_rel_error, kGradTol);
  std::vector<int> idx{2, -1, 0, 2};
  EXPECT_LT(check_gradients({a}, [&] { return probe(gather_rows<double>(a, idx), seed); }).max_rel_error,
            kGradTol);
  EXPECT_LT(check_gradients({a}, [&] { return probe(embedding_lookup<double>(a, idx), seed); }).max_rel_error,
            kGradTol);
  EXPECT_LT(check_gradients({a}, [&] {
              Rng drop_rng(seed);
              return probe(dropout(a, 0.3, true, drop_rng), seed);
            }).max_rel_error,
            kGradTol);
  std::vector<int> targets{1, kIgnoreIndex, 3};
  EXPECT_LT(check_gradients({a}, [&] { return softmax_cross_entropy<double>(a, targets); }).max_rel_error,
            kGradTol);
}

TEST_P(GradCheck, LayerNorm) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  auto x = random_tensor(rng, 8, 16);
  auto g = random_tensor(rng, 1, 16);
  auto b = random_tensor(rng, 1, 16);
  auto res = check_gradients({x, g, b}, [&] { return probe(layer_norm(x, g, b), seed); });
  EXPECT_LT(res.max_rel_error, kGradTol);
}

TEST_P(GradCheck, MaskedMultiHeadAttention) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  auto q = random_tensor(rng, 5, 8);
  auto k = random_tensor(rng, 6, 8);
  auto v = random_tensor(rng, 6, 8);
  AttentionPattern pattern;
  pattern.num_keys = 6;
  pattern.add_row({0});
  pattern.add_row({0, 1, 2});
  pattern.add_row({1, 3, 5});
  pattern.add_row({0, 1, 2, 3, 4, 5});
  pattern.add_row({4});
  auto res = check_gradients({q, k, v}, [&] { return probe(attend(q, k, v, pattern, 2), seed); });
  EXPECT_LT(res.max_rel_error, kGradTol);

  ParameterStore<double> store(seed, 0.5);
  MultiHeadAttention<double> mha(store, "mha", 8, 4);
  auto causal = std::make_shared<const AttentionPattern>(AttentionPattern::causal(5));
  std::vector<Tensor<double>> inputs{q};
  for (auto* p : store.parameters()) inputs.push_back(p->value);
  EXPECT_LT(check_gradients(inputs, [&] { return probe(mha(q, q, causal), seed); }).max_rel_error, kGradTol);
}

TEST_P(GradCheck, GruCell) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  ParameterStore<double> store(seed, 0.5);
  GruCell<double> cell(store, "gru", 6, 6);
  auto x = random_tensor(rng, 3, 6);
  auto h = random_tensor(rng, 3, 6);
  std::vector<Tensor<double>> inputs{x, h};
  for (auto* p : store.parameters()) inputs.push_back(p->value);
  EXPECT_LT(check_gradients(inputs, [&] { return probe(cell(x, h), seed); }).max_rel_error, kGradTol);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradCheck, ::testing::Range(0, kSeeds));

TEST(Attention, SingleKeyReturnsProjectedValue) {
  ParameterStore<double> store(11, 0.3);
  MultiHeadAttention<double> mha(store, "mha", 4, 2);
  Rng rng(2);
  auto q = random_tensor(rng, 1, 4);
  auto kv = random_tensor(rng, 1, 4);
  auto out = mha(q, kv, std::vector<std::vector<bool>>{{true}});
  auto expected = mha.wo(mha.wv(kv));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.values()[i], expected.values()[i], 1e-14);
}

TEST(Attention, FullyMaskedRowIsAnError) {
  Rng rng(2);
  auto q = random_tensor(rng, 2, 4);
  std::vector<std::vector<bool>> mask{{true, false}, {false, false}};
  EXPECT_THROW(attend(q, q, q, AttentionPattern::from_mask(mask, 2), 2), ShapeError);
}

TEST(Attention, CausalOutputIgnoresFuturePositions) {
  Rng rng(9);
  ParameterStore<double> store(4, 0.3);
  MultiHeadAttention<double> mha(store, "mha", 8, 2);
  auto x = random_tensor(rng, 6, 8);
  auto causal = std::make_shared<const AttentionPattern>(AttentionPattern::causal(6));
  auto before = mha(x, x, causal);
  for (std::size_t t = 0; t < 6; ++t) {
    auto y = x.detach();
    for (std::size_t r = t + 1; r < 6; ++r)
      for (std::size_t c = 0; c < 8; ++c) y.at(r, c) += rng.normal(0, 10);
    auto after = mha(y, y, causal);
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(after.at(r, c), before.at(r, c));
  }
}

TEST(Gru, ZeroWeightsHalveHidden) {
  ParameterStore<double> store(1, 0.0);
  GruCell<double> cell(store, "gru", 4, 4);
  Rng rng(3);
  auto x = random_tensor(rng, 2, 4);
  auto h = random_tensor(rng, 2, 4);
  auto out = cell(x, h);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(out.values()[i], 0.5 * h.values()[i], 1e-15);
}

TEST(Gru, UpdateGateBiasPreservesHidden) {
  ParameterStore<double> store(1, 0.0);
  GruCell<double> cell(store, "gru", 4, 4);
  for (auto& b : cell.iz.bias.values()) b = 30.0;  // sigmoid(30) ~ 1 - 1e-13
  Rng rng(8);
  auto x = random_tensor(rng, 3, 4);
  auto h = random_tensor(rng, 3, 4);
  auto out = cell(x, h);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(out.values()[i], h.values()[i], 1e-6);
  EXPECT_THROW(cell(random_tensor(rng, 3, 5), h), ShapeError);
}

TEST(AdamW, ZeroGradientNoDecayIsFixedPoint) {
  Parameter<double> p("w", Tensor<double>::from(1, 3, {0.5, -1.0, 2.0}), true);
  p.value.grad();  // zero gradient buffer
  std::vector<Parameter<double>*> ps{&p};
  AdamW<double> opt({.lr = 1e-3, .weight_decay = 0.0});
  ASSERT_TRUE(opt.step(ps, 1e-3));
  EXPECT_EQ(p.value.values()[0], 0.5);
  EXPECT_EQ(p.value.values()[1], -1.0);
  EXPECT_EQ(p.value.values()[2], 2.0);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  // t = 1: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  Parameter<double> p("w", Tensor<double>::from(1, 1, {3.0}), false);
  p.value.grad()[0] = 1.0;
  std::vector<Parameter<double>*> ps{&p};
  AdamW<double> opt({.weight_decay = 0.0});
  opt.step(ps, 1e-4);
  EXPECT_NEAR(p.value.values()[0] - 3.0, -1e-4 / (1.0 + 1e-8), 1e-15);
}

TEST(AdamW, NonFiniteGradientRejectsStep) {
  Parameter<double> p("w", Tensor<double>::from(1, 2, {1.0, 2.0}), true);
  p.value.grad()[0] = 1.0;
  p.value.grad()[1] = std::nan("");
  std::vector<Parameter<double>*> ps{&p};
  AdamW<double> opt;
  EXPECT_FALSE(opt.step(ps, 1e-3));
  EXPECT_EQ(opt.rejected_steps(), 1);
  EXPECT_EQ(opt.step_count(), 0);
  EXPECT_EQ(p.value.values()[0], 1.0);
}

TEST(ClipGlobalNorm, ScalesByThresholdOverNorm) {
  Parameter<double> a("a", Tensor<double>::zeros(1, 2), true);
  Parameter<double> b("b", Tensor<double>::zeros(1, 1), true);
  a.value.grad()[0] = 1.2;
  a.value.grad()[1] = 1.6;  // |a| = 2
  b.value.grad()[0] = 0.0;
  std::vector<Parameter<double>*> ps{&a, &b};
  EXPECT_DOUBLE_EQ(clip_global_norm(ps, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(a.value.grad()[0], 0.6);
  EXPECT_DOUBLE_EQ(a.value.grad()[1], 0.8);
  EXPECT_DOUBLE_EQ(clip_global_norm(ps, 5.0), 1.0);
  EXPECT_DOUBLE_EQ(a.value.grad()[0], 0.6);
}

TEST(Checkpoint, RoundTripAndShapeVerification) {
  ParameterStore<float> store(7);
  store.add("w", 3, 4, Init::kNormal, true);
  store.add("b", 1, 4, Init::kZeros, false);
  auto params = store.parameters();
  params[0]->first_moment[2] = 0.25f;
  const auto path = (std::filesystem::temp_directory_path() / "nmt_ckpt_test.bin").string();
  save_checkpoint(path, params, {.metadata = {{"k", 1}}, .optimizer_step = 12, .rejected_steps = 1});

  ParameterStore<double> other(99);
  other.add("w", 3, 4, Init::kZeros, true);
  other.add("b", 1, 4, Init::kOnes, false);
  auto oparams = other.parameters();
  auto state = load_checkpoint(path, oparams);
  EXPECT_EQ(state.optimizer_step, 12);
  EXPECT_EQ(state.metadata.at("k"), 1);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(oparams[0]->value.values()[i], double(params[0]->value.values()[i]));
  EXPECT_EQ(oparams[0]->first_moment[2], 0.25);
  EXPECT_EQ(oparams[1]->value.values()[0], 0.0);

  ParameterStore<double> wrong(1);
  wrong.add("w", 4, 3, Init::kZeros, true);
  wrong.add("b", 1, 4, Init::kZeros, false);
  auto wparams = wrong.parameters();
  EXPECT_THROW(load_checkpoint(path, wparams), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path, wparams), DataError);
}

}  // namespace
