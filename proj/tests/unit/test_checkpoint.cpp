// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "plora/checkpoint.hpp"
#include "plora/errors.hpp"
#include "plora/kv_config.hpp"
#include "plora/trainer.hpp"

namespace plora {
namespace {

using Bytes = std::vector<std::uint8_t>;

// Textbook FNV-1a 64, used to re-seal hand-edited payloads.
std::uint64_t fnv(const Bytes& bytes, std::size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void reseal(Bytes& bytes) {
  const std::uint64_t h = fnv(bytes, bytes.size() - 8);
  for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = static_cast<std::uint8_t>(h >> (8 * i));
}

EncoderConfig tiny() {
  EncoderConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.d_ff = 8;
  c.max_len = 6;
  c.n_classes = 3;
  c.plora = PLoRAConfig{.d_in = 8, .d_out = 8, .rank = 2, .d_p = 3, .alpha_r = 4.0, .init_std = 0.1};
  return c;
}

Checkpoint sample_checkpoint(bool with_optim = true) {
  Checkpoint ck;
  ck.model = EncoderModel::create(tiny(), 4);
  Rng rng(5);
  for (std::size_t i = 0; i < ck.model.n_plora(); ++i) ck.model.plora(i).out() = oracle::random_matrix(2, 8, rng);
  ck.model.mark_modified();
  ck.registry = UserRegistry(3);
  for (const char* u : {"ann", "bo", "χρήστης"}) {
    ck.registry.lookup_or_register(UserId(u), u[0] != 'b');
    ck.registry.set_embedding(UserId(u), oracle::random_vector(3, rng));
  }
  RunConfig run;
  run.seed = 9;
  ck.config = to_kv(run);
  if (with_optim) {
    OptimState st;
    st.step = 12;
    st.moments["head.bias"] = Moments{{0.1, 0.2, 0.3}, {1e-3, 2e-3, 3e-3}};
    ck.optim = st;
  }
  return ck;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const Bytes first = encode_checkpoint(sample_checkpoint());
  const Checkpoint back = decode_checkpoint(first);
  EXPECT_EQ(encode_checkpoint(back), first);
  EXPECT_TRUE(back.registry == sample_checkpoint().registry);
  EXPECT_EQ(back.model.trainable_checksum(), sample_checkpoint().model.trainable_checksum());
  EXPECT_EQ(back.model.frozen_checksum(), sample_checkpoint().model.frozen_checksum());
  ASSERT_TRUE(back.optim.has_value());
  EXPECT_EQ(*back.optim, *sample_checkpoint().optim);
  EXPECT_EQ(back.config.at("seed"), "9");
  EXPECT_EQ(back.config.at("d_model"), "8");
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "plora_ckpt_roundtrip.bin";
  const Checkpoint ck = sample_checkpoint(false);
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_FALSE(back.optim.has_value());
  const auto again = std::filesystem::temp_directory_path() / "plora_ckpt_roundtrip2.bin";
  save_checkpoint(back, again);
  std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
  EXPECT_EQ(Bytes(std::istreambuf_iterator<char>(a), {}), Bytes(std::istreambuf_iterator<char>(b), {}));
  std::filesystem::remove(path);
  std::filesystem::remove(again);
  EXPECT_THROW(load_checkpoint(path), Error);
}

TEST(Checkpoint, AnyFlippedPayloadByteIsRejected) {
  const Bytes good = encode_checkpoint(sample_checkpoint());
  for (std::size_t i = 12; i < good.size(); i += std::max<std::size_t>(1, good.size() / 97)) {
    Bytes bad = good;
    bad[i] ^= 0x40;
    EXPECT_THROW(decode_checkpoint(bad), ChecksumError) << "byte " << i;
  }
}

TEST(Checkpoint, VersionAndMagicChecks) {
  Bytes bytes = encode_checkpoint(sample_checkpoint());
  Bytes version = bytes;
  version[8] = 2;
  EXPECT_THROW(decode_checkpoint(version), VersionError);
  Bytes magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), ParseError);
  EXPECT_THROW(decode_checkpoint(Bytes(bytes.begin(), bytes.begin() + 10)), ParseError);
}

TEST(Checkpoint, StructuralDamageBehindValidChecksum) {
  const Bytes good = encode_checkpoint(sample_checkpoint());
  Bytes trailing = good;
  trailing.insert(trailing.end() - 8, 0x00);
  reseal(trailing);
  EXPECT_THROW(decode_checkpoint(trailing), ParseError);
  Bytes truncated(good.begin(), good.end() - 40);
  truncated.resize(truncated.size() + 8);
  reseal(truncated);
  EXPECT_THROW(decode_checkpoint(truncated), ParseError);
}

TEST(Checkpoint, MergedStateSurvives) {
  Checkpoint ck = sample_checkpoint();
  const Vector p = ck.registry.lookup(UserId("ann"));
  const EncoderModel clean = ck.model;
  ck.model.merge_for_user(p, "ann");
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  EXPECT_EQ(back.model.merge_state(), MergeState::MergedForUser);
  EXPECT_EQ(back.model.merged_user(), "ann");
  EXPECT_EQ(back.model.plora(1).folded_embedding(), p);
  const TokenSequence t{1, 5, 9};
  EXPECT_EQ(back.model.forward(t, Vector(3)).logits, ck.model.forward(t, Vector(3)).logits);
  EncoderModel restored = back.model;
  restored.unmerge();
  EXPECT_LT(max_abs_diff(restored.forward(t, p).logits, clean.forward(t, p).logits), 1e-12);
}

TEST(Checkpoint, FrozenRegionIdenticalAcrossRegimes) {
  const GeneratorSpec gen{.vocab_size = 16, .n_sentiment = 8, .n_classes = 3, .min_len = 3, .max_len = 6,
                          .bias_levels = {-1.0, 1.0}};
  const Corpus corpus = generate(gen, SplitSpec{.n_users_a = 3, .n_users_b = 2, .samples_per_user_a = 40,
                                                .samples_per_user_b = 30, .seed = 2});
  const EncoderModel base = EncoderModel::create(tiny(), 4, gen.token_polarities());
  const Bytes reference = encode_frozen_region(base);
  for (Regime r : {Regime::FullShot, Regime::LoRAOnly, Regime::PKIOnly}) {
    EncoderModel m = base;
    UserRegistry reg(3);
    RunConfig cfg;
    cfg.regime = r;
    cfg.epochs = 1;
    train_fullshot(m, reg, corpus.a.train, corpus.a.dev, cfg);
    EXPECT_EQ(encode_frozen_region(m), reference) << to_string(r);
  }
}

}  // namespace
}  // namespace plora
