// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "plora/datagen.hpp"
#include "plora/encoder.hpp"
#include "plora/errors.hpp"
#include "plora/kv_config.hpp"
#include "plora/trainer.hpp"

namespace plora {
namespace {

TEST(KvConfig, ParsesCommentsAndWhitespace) {
  const KeyValues kv = parse_kv("# run\n\n omega = 0.5 \nregime=lora\n  # tail\n");
  EXPECT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("omega"), "0.5");
  EXPECT_EQ(kv.at("regime"), "lora");
}

TEST(KvConfig, MalformedLineNamesSourceAndLine) {
  try {
    parse_kv("a=1\nnot a pair\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_kv("=3\n"), ConfigError);
}

TEST(KvConfig, DoublesRoundTripExactly) {
  for (double v : {0.1, 1e-3, 2.5, -1.5, 1.0 / 3.0, 6.02214076e23}) {
    double back = 0.0;
    const std::string s = format_double(v);
    back = std::stod(s);
    EXPECT_EQ(back, v) << s;
  }
}

TEST(KvConfig, RunConfigRoundTrip) {
  RunConfig c;
  c.regime = Regime::PKIOnly;
  c.omega = 0.35;
  c.alpha = 1.25;
  c.mim_kind = MIMKind::KL;
  c.mim_pairing = MIMPairing::All;
  c.teacher_stop_grad = true;
  c.optim.lr = 3e-4;
  c.optim.patience = 0;
  c.fewshot_optim.lr = 0.05;
  c.epochs = 7;
  c.seed = 42;
  c.log_path = "logs/run.log";
  RunConfig back;
  apply_kv(parse_kv(format_kv(to_kv(c))), back);
  EXPECT_EQ(to_kv(back), to_kv(c));
  EXPECT_EQ(back.regime, Regime::PKIOnly);
  EXPECT_EQ(back.mim_kind, MIMKind::KL);
  EXPECT_TRUE(back.teacher_stop_grad);
}

TEST(KvConfig, GeneratorAndSplitRoundTrip) {
  GeneratorSpec g;
  g.bias_levels = {-1.5, 1.5};
  g.neutral_rate = 0.1;
  SplitSpec s;
  s.n_users_a = 9;
  s.seed = 77;
  GeneratorSpec g2;
  SplitSpec s2;
  apply_kv(to_kv(g), g2);
  apply_kv(to_kv(s), s2);
  EXPECT_EQ(g2.bias_levels, g.bias_levels);
  EXPECT_EQ(g2.neutral_rate, 0.1);
  EXPECT_EQ(s2.n_users_a, 9u);
  EXPECT_EQ(s2.seed, 77u);
}

TEST(KvConfig, EncoderKeysSetAdapterWidths) {
  EncoderConfig c;
  apply_kv(parse_kv("d_model=16\nrank=3\nd_p=5\n"), c);
  EXPECT_EQ(c.plora.d_in, 16u);
  EXPECT_EQ(c.plora.d_out, 16u);
  EXPECT_EQ(c.plora.rank, 3u);
  EXPECT_EQ(c.plora.d_p, 5u);
  EXPECT_NO_THROW(c.validate());
}

TEST(KvConfig, BadValuesNameTheKey) {
  RunConfig c;
  try {
    apply_kv(parse_kv("omega=lots\n"), c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("omega"), std::string::npos);
  }
  EXPECT_THROW(apply_kv(parse_kv("teacher_stop_grad=maybe\n"), c), ConfigError);
  EXPECT_THROW(apply_kv(parse_kv("regime=bert\n"), c), ConfigError);
  EXPECT_THROW(apply_kv(parse_kv("epochs=-1\n"), c), ConfigError);
  GeneratorSpec g;
  EXPECT_THROW(apply_kv(parse_kv("bias_levels=1,x\n"), g), ConfigError);
}

TEST(KvConfig, UnknownKeysAreReported) {
  const auto keys = known_keys();
  EXPECT_TRUE(keys.contains("omega"));
  EXPECT_TRUE(keys.contains("bias_levels"));
  EXPECT_TRUE(keys.contains("d_p"));
  EXPECT_NO_THROW(check_known(parse_kv("omega=0.1\nrank=2\n"), keys));
  EXPECT_THROW(check_known(parse_kv("omgea=0.1\n"), keys), ConfigError);
}

}  // namespace
}  // namespace plora
