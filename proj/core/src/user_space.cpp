// SPDX-License-Identifier: Apache-2.0
#include "plora/user_space.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "plora/errors.hpp"

namespace plora {

UserId::UserId(std::string token) : token_(std::move(token)) {
  if (token_.empty()) throw InputError("UserId: token must be non-empty");
  if (token_.find_first_of("\t\n\r") != std::string::npos) {
    throw InputError(fmt::format("UserId: token '{}' contains a tab or newline", token_));
  }
}

UserRegistry::UserRegistry(std::size_t d_p) : d_p_(d_p), table_(0, d_p) {
  if (d_p == 0) throw ParameterError("UserRegistry: d_p must be >= 1");
}

bool UserRegistry::contains(const UserId& user) const { return index_.contains(user.str()); }

std::size_t UserRegistry::index_of(const UserId& user) const {
  auto it = index_.find(user.str());
  if (it == index_.end()) throw RegistryError(fmt::format("unknown user '{}'", user.str()));
  return it->second;
}

Vector UserRegistry::lookup_or_register(const UserId& user, bool trainable) {
  if (user.empty()) throw InputError("UserRegistry: empty user id");
  auto it = index_.find(user.str());
  if (it != index_.end()) return table_.row_vector(it->second);
  const std::vector<double> zeros(d_p_, 0.0);
  table_.append_row(zeros);
  index_.emplace(user.str(), users_.size());
  users_.push_back(user);
  trainable_.push_back(trainable);
  return Vector(d_p_);
}

Vector UserRegistry::lookup(const UserId& user) const { return table_.row_vector(index_of(user)); }

std::span<double> UserRegistry::embedding(const UserId& user) { return table_.row(index_of(user)); }

std::span<const double> UserRegistry::embedding(const UserId& user) const { return table_.row(index_of(user)); }

void UserRegistry::set_embedding(const UserId& user, const Vector& p) {
  table_.set_row(index_of(user), p.values());
}

bool UserRegistry::trainable(const UserId& user) const { return trainable_[index_of(user)]; }

void UserRegistry::set_trainable(const UserId& user, bool trainable) { trainable_[index_of(user)] = trainable; }

void UserRegistry::set_all_trainable(bool trainable) { trainable_.assign(trainable_.size(), trainable); }

std::size_t UserRegistry::count_trainable() const {
  std::size_t n = 0;
  for (bool t : trainable_) n += t ? 1 : 0;
  return n * d_p_;
}

void UserRegistry::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
  out << fmt::format("plora-users v1 d_p={} n={}\n", d_p_, users_.size());
  for (std::size_t i = 0; i < users_.size(); ++i) {
    out << users_[i].str() << '\t' << (trainable_[i] ? 1 : 0) << '\t';
    auto row = table_.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j > 0) out << ' ';
      out << fmt::format("{:a}", row[j]);
    }
    out << '\n';
  }
  if (!out) throw Error(fmt::format("failed writing '{}'", path.string()));
}

UserRegistry UserRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw ParseError(fmt::format("{}:1: missing header", path.string()));
  std::size_t d_p = 0;
  std::size_t n = 0;
  if (std::sscanf(line.c_str(), "plora-users v1 d_p=%zu n=%zu", &d_p, &n) != 2) {
    throw ParseError(fmt::format("{}:1: bad header '{}'", path.string(), line));
  }
  UserRegistry reg(d_p);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) throw ParseError(fmt::format("{}:{}: expected 3 fields", path.string(), line_no));
    UserId id(line.substr(0, tab1));
    const std::string flag = line.substr(tab1 + 1, tab2 - tab1 - 1);
    if (flag != "0" && flag != "1") {
      throw ParseError(fmt::format("{}:{}: trainable flag must be 0 or 1", path.string(), line_no));
    }
    std::istringstream values(line.substr(tab2 + 1));
    Vector p(d_p);
    std::string tok;
    std::size_t k = 0;
    while (values >> tok) {
      if (k >= d_p) throw ParseError(fmt::format("{}:{}: more than {} values", path.string(), line_no, d_p));
      errno = 0;
      char* end = nullptr;
      p[k++] = std::strtod(tok.c_str(), &end);
      if (errno != 0 || end == tok.c_str() || *end != '\0') {
        throw ParseError(fmt::format("{}:{}: bad number '{}'", path.string(), line_no, tok));
      }
    }
    if (k != d_p) throw ParseError(fmt::format("{}:{}: {} values, expected {}", path.string(), line_no, k, d_p));
    if (reg.contains(id)) throw ParseError(fmt::format("{}:{}: duplicate user '{}'", path.string(), line_no, id.str()));
    reg.lookup_or_register(id, flag == "1");
    reg.set_embedding(id, p);
  }
  if (reg.size() != n) {
    throw ParseError(fmt::format("{}: header announces {} users, found {}", path.string(), n, reg.size()));
  }
  return reg;
}

Vector anonymous(std::size_t d_p) { return Vector(d_p); }

void PDropoutConfig::validate() const {
  if (!(omega >= 0.0 && omega <= 1.0)) {
    throw ParameterError(fmt::format("PDropout: omega must lie in [0, 1], got {}", omega));
  }
}

std::vector<UserMask> pdropout_mask(std::span<const UserId> batch, const PDropoutConfig& config, Rng& rng) {
  config.validate();
  std::vector<UserMask> mask;
  mask.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    // One draw per sample regardless of omega keeps the stream aligned across settings.
    const double u = rng.uniform();
    mask.push_back(u < config.omega ? UserMask::Mask : UserMask::Keep);
  }
  return mask;
}

}  // namespace plora
