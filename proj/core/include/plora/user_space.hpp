// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "plora/linalg.hpp"

namespace plora {

/// Opaque, non-empty user token.
class UserId {
 public:
  UserId() = default;
  explicit UserId(std::string token);

  const std::string& str() const { return token_; }
  bool empty() const { return token_.empty(); }

  friend auto operator<=>(const UserId&, const UserId&) = default;

 private:
  std::string token_;
};

/// User token → embedding p = f(u). New users start at the zero vector, so the
/// injection term vanishes the first time the model meets them.
///
/// Embeddings live in one contiguous (n_users × d_p) table in registration order.
/// Spans returned by embedding() are invalidated by registering another user.
class UserRegistry {
 public:
  UserRegistry() = default;
  explicit UserRegistry(std::size_t d_p);

  std::size_t d_p() const { return d_p_; }
  std::size_t size() const { return users_.size(); }
  bool contains(const UserId& user) const;

  /// Existing embedding, or a freshly registered zero vector.
  Vector lookup_or_register(const UserId& user, bool trainable = true);
  /// Throws RegistryError for unknown users.
  Vector lookup(const UserId& user) const;
  std::size_t index_of(const UserId& user) const;

  std::span<double> embedding(const UserId& user);
  std::span<const double> embedding(const UserId& user) const;
  void set_embedding(const UserId& user, const Vector& p);

  bool trainable(const UserId& user) const;
  void set_trainable(const UserId& user, bool trainable);
  void set_all_trainable(bool trainable);

  const std::vector<UserId>& users() const { return users_; }
  Matrix& table() { return table_; }
  const Matrix& table() const { return table_; }

  /// n_trainable · d_p
  std::size_t count_trainable() const;
  std::size_t count_total() const { return table_.size(); }

  /// Standalone user table: a header line, then `token \t trainable \t hex-floats`.
  void save(const std::filesystem::path& path) const;
  static UserRegistry load(const std::filesystem::path& path);

  friend bool operator==(const UserRegistry& a, const UserRegistry& b) {
    return a.d_p_ == b.d_p_ && a.users_ == b.users_ && a.trainable_ == b.trainable_ && a.table_ == b.table_;
  }

 private:
  std::size_t d_p_ = 0;
  std::vector<UserId> users_;
  std::vector<bool> trainable_;
  std::unordered_map<std::string, std::size_t> index_;
  Matrix table_;
};

/// The all-zero embedding used for anonymous / zero-shot evaluation.
Vector anonymous(std::size_t d_p);

struct PDropoutConfig {
  double omega = 0.0;
  std::uint64_t seed = 0;

  /// Throws ParameterError unless 0 <= omega <= 1.
  void validate() const;
};

enum class UserMask : std::uint8_t { Keep, Mask };

/// Independent Bernoulli(omega) mask per sample. A masked sample is fed p = 0.
std::vector<UserMask> pdropout_mask(std::span<const UserId> batch, const PDropoutConfig& config, Rng& rng);

}  // namespace plora
