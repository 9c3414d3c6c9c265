// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "plora/errors.hpp"
#include "plora/plora_layer.hpp"
#include "plora/user_space.hpp"

namespace plora {
namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("plora_user_space_" + name);
}

TEST(UserIdTest, RejectsEmptyAndControlCharacters) {
  EXPECT_THROW(UserId(""), InputError);
  EXPECT_THROW(UserId("a\tb"), InputError);
  EXPECT_THROW(UserId("a\nb"), InputError);
  EXPECT_EQ(UserId("ユーザー").str(), "ユーザー");
}

TEST(Registry, UnknownUserStartsAtZero) {
  UserRegistry reg(4);
  const Vector p = reg.lookup_or_register(UserId("alice"));
  EXPECT_EQ(p, Vector(4));
  EXPECT_TRUE(reg.contains(UserId("alice")));
  EXPECT_EQ(reg.size(), 1u);
}

TEST(Registry, UpdatesPersistAcrossLookups) {
  UserRegistry reg(3);
  const UserId u("bob");
  reg.lookup_or_register(u);
  reg.set_embedding(u, Vector{1, 2, 3});
  EXPECT_EQ(reg.lookup_or_register(u), (Vector{1, 2, 3}));
  reg.embedding(u)[1] = 7.0;
  EXPECT_EQ(reg.lookup(u), (Vector{1, 7, 3}));
  EXPECT_EQ(reg.size(), 1u);
}

TEST(Registry, LookupOfUnknownUserFails) {
  UserRegistry reg(2);
  EXPECT_THROW(reg.lookup(UserId("ghost")), RegistryError);
  EXPECT_THROW(reg.set_embedding(UserId("ghost"), Vector(2)), RegistryError);
}

TEST(Registry, WrongEmbeddingLengthFails) {
  UserRegistry reg(2);
  reg.lookup_or_register(UserId("u"));
  EXPECT_THROW(reg.set_embedding(UserId("u"), Vector(3)), DimensionError);
  EXPECT_THROW(UserRegistry(0), ParameterError);
}

TEST(Registry, TrainableCountGrowsByDpPerUser) {
  UserRegistry reg(8);
  for (int i = 0; i < 5; ++i) reg.lookup_or_register(UserId("u" + std::to_string(i)));
  EXPECT_EQ(reg.count_trainable(), 40u);
  reg.lookup_or_register(UserId("frozen"), false);
  EXPECT_EQ(reg.count_trainable(), 40u);
  EXPECT_EQ(reg.count_total(), 48u);
  reg.set_trainable(UserId("u0"), false);
  EXPECT_EQ(reg.count_trainable(), 32u);
}

TEST(Registry, SaveLoadIsBitExact) {
  Rng rng(1);
  UserRegistry reg(5);
  for (const char* name : {"alpha", "βeta", "gamma-3"}) {
    const UserId u(name);
    reg.lookup_or_register(u, name[0] != 'g');
    reg.set_embedding(u, oracle::random_vector(5, rng, 1e3));
  }
  reg.set_embedding(UserId("alpha"), Vector{0.1, -0.0, 1e-310, 3.0, -2.5});
  const auto path = temp_file("roundtrip.tsv");
  reg.save(path);
  const UserRegistry back = UserRegistry::load(path);
  EXPECT_TRUE(back == reg);
  EXPECT_EQ(back.users(), reg.users());
  EXPECT_FALSE(back.trainable(UserId("gamma-3")));
  std::filesystem::remove(path);
}

TEST(Registry, LoadReportsLineOfBadRecord) {
  const auto path = temp_file("bad.tsv");
  UserRegistry reg(2);
  reg.lookup_or_register(UserId("a"));
  reg.save(path);
  {
    std::ofstream out(path, std::ios::app);
    out << "b\t1\tnot-a-number\t0x0p+0\n";
  }
  try {
    UserRegistry::load(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(Anonymous, IsZeroAndMatchesFreshUser) {
  EXPECT_EQ(anonymous(6), Vector(6));
  Rng rng(2);
  PLoRAConfig cfg;
  const PLoRALinear layer = oracle::random_layer(cfg, rng);
  UserRegistry reg(cfg.d_p);
  const Vector h = oracle::random_vector(cfg.d_in, rng);
  EXPECT_EQ(layer.forward(h, anonymous(cfg.d_p)), layer.forward(h, reg.lookup_or_register(UserId("new"))));
}

std::vector<UserId> batch_of(std::size_t n) {
  std::vector<UserId> users;
  for (std::size_t i = 0; i < n; ++i) users.emplace_back("u" + std::to_string(i % 17));
  return users;
}

TEST(PDropout, BoundaryRatios) {
  Rng rng(3);
  const auto users = batch_of(500);
  for (UserMask m : pdropout_mask(users, {.omega = 0.0, .seed = 0}, rng)) EXPECT_EQ(m, UserMask::Keep);
  for (UserMask m : pdropout_mask(users, {.omega = 1.0, .seed = 0}, rng)) EXPECT_EQ(m, UserMask::Mask);
}

TEST(PDropout, HalfRatioConcentrates) {
  Rng rng(4);
  const auto mask = pdropout_mask(batch_of(10000), {.omega = 0.5, .seed = 0}, rng);
  const auto masked = std::count(mask.begin(), mask.end(), UserMask::Mask);
  EXPECT_NEAR(static_cast<double>(masked) / 10000.0, 0.5, 0.02);
}

TEST(PDropout, ReproducibleAndStreamAligned) {
  const auto users = batch_of(64);
  Rng a(5), b(5);
  EXPECT_EQ(pdropout_mask(users, {.omega = 0.3, .seed = 0}, a), pdropout_mask(users, {.omega = 0.3, .seed = 0}, b));
  // One draw per sample regardless of omega.
  Rng c(6), d(6);
  pdropout_mask(users, {.omega = 0.0, .seed = 0}, c);
  pdropout_mask(users, {.omega = 0.9, .seed = 0}, d);
  EXPECT_EQ(c.next_u64(), d.next_u64());
}

TEST(PDropout, RejectsOutOfRangeOmega) {
  Rng rng(7);
  const auto users = batch_of(3);
  EXPECT_THROW(pdropout_mask(users, {.omega = -0.1, .seed = 0}, rng), ParameterError);
  EXPECT_THROW(pdropout_mask(users, {.omega = 1.5, .seed = 0}, rng), ParameterError);
}

}  // namespace
}  // namespace plora
