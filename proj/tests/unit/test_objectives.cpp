// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "plora/encoder.hpp"
#include "plora/errors.hpp"
#include "plora/objectives.hpp"

namespace plora {
namespace {

TEST(CrossEntropy, UniformLogitsGiveLogOfClassCount) {
  const CrossEntropy ce = cross_entropy(Vector(4), 2);
  EXPECT_NEAR(ce.loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(ce.grad[0], 0.25, 1e-15);
  EXPECT_NEAR(ce.grad[2], -0.75, 1e-15);
}

TEST(CrossEntropy, SaturatedLogitsStayFinite) {
  const CrossEntropy right = cross_entropy(Vector{1000.0, 0.0, -1000.0}, 0);
  EXPECT_NEAR(right.loss, 0.0, 1e-300);
  const CrossEntropy wrong = cross_entropy(Vector{1000.0, 0.0, -1000.0}, 2);
  EXPECT_NEAR(wrong.loss, 2000.0, 1e-9);
  EXPECT_TRUE(all_finite(wrong.grad.values()));
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector z = oracle::random_vector(5, rng, 3.0);
    const std::size_t y = rng.uniform_index(5);
    const Vector fd = finite_diff_grad([&](const Vector& v) { return cross_entropy(v, y).loss; }, z, 1e-6);
    EXPECT_LT(max_abs_diff(fd, cross_entropy(z, y).grad), 1e-8);
    const auto probs = oracle::softmax(std::vector<double>(z.begin(), z.end()));
    EXPECT_NEAR(cross_entropy(z, y).loss, -std::log(probs[y]), 1e-12);
  }
}

TEST(CrossEntropy, RejectsLabelOutOfRange) { EXPECT_THROW(cross_entropy(Vector(3), 3), InputError); }

TEST(MIM, MseExample) {
  const MIMResult r = mim(Vector{0, 0}, Vector{1, 1}, MIMKind::MSE);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.grad_generic, (Vector{-1, -1}));
  EXPECT_EQ(r.grad_personal, (Vector{1, 1}));
  EXPECT_EQ(mim(Vector{0, 0}, Vector{1, 1}, MIMKind::MSE, true).grad_personal, Vector(2));
}

double kl_oracle(const Vector& generic, const Vector& personal) {
  const auto q = oracle::softmax(std::vector<double>(generic.begin(), generic.end()));
  const auto p = oracle::softmax(std::vector<double>(personal.begin(), personal.end()));
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

TEST(MIM, KlMatchesClosedFormAndGradients) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector g = oracle::random_vector(6, rng, 2.0);
    const Vector p = oracle::random_vector(6, rng, 2.0);
    const MIMResult r = mim(g, p, MIMKind::KL);
    EXPECT_NEAR(r.value, kl_oracle(g, p), 1e-12);
    EXPECT_GE(r.value, 0.0);
    const Vector fd_g = finite_diff_grad([&](const Vector& v) { return kl_oracle(v, p); }, g, 1e-6);
    const Vector fd_p = finite_diff_grad([&](const Vector& v) { return kl_oracle(g, v); }, p, 1e-6);
    EXPECT_LT(max_abs_diff(fd_g, r.grad_generic), 1e-8);
    EXPECT_LT(max_abs_diff(fd_p, r.grad_personal), 1e-8);
  }
  EXPECT_NEAR(mim(Vector{1, 2}, Vector{1, 2}, MIMKind::KL).value, 0.0, 1e-15);
}

TEST(MIM, MatrixFormAveragesRows) {
  Rng rng(3);
  const Matrix g = oracle::random_matrix(3, 4, rng);
  const Matrix p = oracle::random_matrix(3, 4, rng);
  double kl = 0.0;
  double se = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    kl += kl_oracle(g.row_vector(r), p.row_vector(r));
    for (std::size_t c = 0; c < 4; ++c) se += (g(r, c) - p(r, c)) * (g(r, c) - p(r, c));
  }
  EXPECT_NEAR(mim(g, p, MIMKind::KL).value, kl / 3.0, 1e-12);
  EXPECT_NEAR(mim(g, p, MIMKind::MSE).value, se / 12.0, 1e-12);
  EXPECT_THROW(mim(g, Matrix(2, 4), MIMKind::MSE), DimensionError);
}

TEST(MIM, KindNamesRoundTrip) {
  EXPECT_EQ(mim_kind_from_string(to_string(MIMKind::KL)), MIMKind::KL);
  EXPECT_EQ(mim_pairing_from_string(to_string(MIMPairing::All)), MIMPairing::All);
  EXPECT_THROW(mim_kind_from_string("l1"), ConfigError);
}

class FullShot : public ::testing::Test {
 protected:
  FullShot() {
    EncoderConfig c;
    c.vocab_size = 30;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 8;
    c.max_len = 8;
    c.n_classes = 3;
    c.plora = PLoRAConfig{.d_in = 8, .d_out = 8, .rank = 2, .d_p = 4, .alpha_r = 4.0, .init_std = 0.3};
    model = EncoderModel::create(c, 5);
    Rng rng(6);
    for (std::size_t i = 0; i < model.n_plora(); ++i) {
      model.plora(i).out() = oracle::random_matrix(2, 8, rng, 0.5);
    }
    model.mark_modified();
    p = oracle::random_vector(4, rng);
  }
  EncoderModel model;
  Vector p;
  const TokenSequence tokens{4, 8, 15, 16, 23};
};

TEST_F(FullShot, TotalIsCrossEntropyPlusWeightedMim) {
  const ForwardTrace pers = model.forward(tokens, p);
  const ForwardTrace gen = model.forward(tokens, Vector(4));
  const FullShotLoss l = fullshot_loss(pers, &gen, 1, {.alpha = 2.5});
  EXPECT_GT(l.report.mim, 0.0);
  EXPECT_NEAR(l.report.mim, mim(gen.pooled, pers.pooled, MIMKind::MSE).value, 1e-15);
  EXPECT_DOUBLE_EQ(l.report.total, l.report.ce + 2.5 * l.report.mim);
  EXPECT_DOUBLE_EQ(l.report.ce, cross_entropy(pers.logits, 1).loss);
}

TEST_F(FullShot, ZeroAlphaIsPureCrossEntropy) {
  const ForwardTrace pers = model.forward(tokens, p);
  const ForwardTrace gen = model.forward(tokens, Vector(4));
  const FullShotLoss l = fullshot_loss(pers, &gen, 0, {.alpha = 0.0});
  EXPECT_DOUBLE_EQ(l.report.total, l.report.ce);
  EXPECT_TRUE(model.backward(gen, l.generic_seeds).all_zero());
}

TEST_F(FullShot, MaskedSampleHasNoMimTerm) {
  const ForwardTrace masked = model.forward(tokens, Vector(4));
  const FullShotLoss l = fullshot_loss(masked, nullptr, 2, {.alpha = 2.5});
  EXPECT_EQ(l.report.mim, 0.0);
  EXPECT_EQ(l.report.total, l.report.ce);
  EXPECT_TRUE(l.generic_seeds.d_logits.empty());
}

TEST_F(FullShot, AllPairingAddsBlockTerms) {
  const ForwardTrace pers = model.forward(tokens, p);
  const ForwardTrace gen = model.forward(tokens, Vector(4));
  const double pooled = fullshot_loss(pers, &gen, 0, {.alpha = 1.0}).report.mim;
  double expected = pooled;
  for (std::size_t b = 0; b < model.n_plora(); ++b) {
    expected += mim(gen.plora_output(b), pers.plora_output(b), MIMKind::MSE).value;
  }
  EXPECT_NEAR(fullshot_loss(pers, &gen, 0, {.alpha = 1.0, .pairing = MIMPairing::All}).report.mim, expected, 1e-15);
}

TEST_F(FullShot, RejectsMismatchedTraces) {
  const ForwardTrace pers = model.forward(tokens, p);
  const ForwardTrace other = model.forward(TokenSequence{1, 2}, Vector(4));
  EXPECT_THROW(fullshot_loss(pers, &other, 0, {.alpha = 1.0}), InputError);
  const ForwardTrace not_generic = model.forward(tokens, p);
  EXPECT_THROW(fullshot_loss(pers, &not_generic, 0, {.alpha = 1.0}), InputError);
  EXPECT_THROW(fullshot_loss(pers, nullptr, 0, {.alpha = -1.0}), ParameterError);
}

}  // namespace
}  // namespace plora
