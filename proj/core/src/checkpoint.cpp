// SPDX-License-Identifier: Apache-2.0
#include "plora/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "plora/checksum.hpp"
#include "plora/errors.hpp"

namespace plora {

namespace {

constexpr char kMagic[8] = {'P', 'L', 'O', 'R', 'A', 'C', 'K', 'P'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void doubles(std::span<const double> values) {
    u64(values.size());
    for (double v : values) f64(v);
  }
  void tensor(const NamedTensor& t) {
    str(t.name);
    u64(t.value.rows());
    u64(t.value.cols());
    for (double v : t.value.values()) f64(v);
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ParseError(fmt::format("checkpoint truncated at byte {}", pos_));
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::size_t elem_bytes) {
    const std::uint64_t n = u64();
    if (elem_bytes > 0 && n > (in_.size() - pos_) / elem_bytes) {
      throw ParseError(fmt::format("checkpoint length field {} exceeds remaining bytes", n));
    }
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const std::size_t n = count(1);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const std::size_t n = count(8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  NamedTensor tensor(bool frozen) {
    NamedTensor t;
    t.name = str();
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (cols != 0 && rows > (in_.size() - pos_) / 8 / cols) throw ParseError(fmt::format("tensor '{}' truncated", t.name));
    std::vector<double> data(rows * cols);
    for (auto& x : data) x = f64();
    t.value = Matrix(rows, cols, std::move(data));
    t.frozen = frozen;
    return t;
  }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_region(Writer& w, const std::vector<NamedTensor>& tensors, bool frozen) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.frozen == frozen ? 1 : 0;
  w.u64(n);
  for (const auto& t : tensors) {
    if (t.frozen == frozen) w.tensor(t);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_frozen_region(const EncoderModel& model) {
  Writer w;
  write_region(w, model.export_tensors(), true);
  return std::move(w.data());
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);

  KeyValues config = ckpt.config;
  for (auto& [key, value] : to_kv(ckpt.model.config())) config[key] = value;
  w.str(format_kv(config));

  const auto tensors = ckpt.model.export_tensors();
  write_region(w, tensors, true);
  write_region(w, tensors, false);

  w.u64(ckpt.model.n_plora());
  for (std::size_t i = 0; i < ckpt.model.n_plora(); ++i) {
    const PLoRALinear& layer = ckpt.model.plora(i);
    w.u8(static_cast<std::uint8_t>(layer.merge_state()));
    w.str(layer.merged_user());
    w.doubles(layer.folded_embedding().values());
  }

  const UserRegistry& reg = ckpt.registry;
  w.u64(reg.d_p());
  w.u64(reg.size());
  for (const auto& user : reg.users()) {
    w.str(user.str());
    w.u8(reg.trainable(user) ? 1 : 0);
    for (double v : reg.embedding(user)) w.f64(v);
  }

  w.u8(ckpt.optim ? 1 : 0);
  if (ckpt.optim) {
    w.u64(ckpt.optim->step);
    w.u64(ckpt.optim->moments.size());
    for (const auto& [name, mom] : ckpt.optim->moments) {
      w.str(name);
      w.doubles(mom.m);
      w.doubles(mom.v);
    }
  }

  const std::uint64_t sum = fnv1a64(std::span<const std::byte>(reinterpret_cast<const std::byte*>(w.data().data()),
                                                               w.data().size()));
  w.u64(sum);
  return std::move(w.data());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw ParseError("not a PLoRA checkpoint (bad magic)");
  }
  Reader header(bytes.subspan(sizeof kMagic, 4));
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(fmt::format("checkpoint format version {} is not supported (expected {})", version,
                                   kCheckpointVersion));
  }
  const auto body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.last(8));
  const std::uint64_t stored = tail.u64();
  const std::uint64_t actual =
      fnv1a64(std::span<const std::byte>(reinterpret_cast<const std::byte*>(body.data()), body.size()));
  if (stored != actual) {
    throw ChecksumError(fmt::format("checkpoint checksum mismatch: stored {:016x}, computed {:016x}", stored, actual));
  }

  Reader r(body);
  r.u64();  // magic
  r.u32();  // version
  Checkpoint ckpt;
  ckpt.config = parse_kv(r.str(), "checkpoint config");
  EncoderConfig enc;
  apply_kv(ckpt.config, enc);

  std::vector<NamedTensor> tensors;
  for (bool frozen : {true, false}) {
    const std::size_t n = r.count(1);
    for (std::size_t i = 0; i < n; ++i) tensors.push_back(r.tensor(frozen));
  }
  ckpt.model = EncoderModel::from_tensors(enc, tensors);

  const std::size_t n_layers = r.count(1);
  if (n_layers != ckpt.model.n_plora()) {
    throw ParseError(fmt::format("checkpoint lists {} PLoRA layers, model has {}", n_layers, ckpt.model.n_plora()));
  }
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::uint8_t state = r.u8();
    if (state > static_cast<std::uint8_t>(MergeState::MergedForUser)) {
      throw ParseError(fmt::format("bad merge state {} for layer {}", state, i));
    }
    std::string user = r.str();
    const std::vector<double> folded = r.doubles();
    Vector p(folded.size());
    for (std::size_t j = 0; j < folded.size(); ++j) p[j] = folded[j];
    ckpt.model.plora(i).restore_merge_state(static_cast<MergeState>(state), std::move(user), std::move(p));
  }
  ckpt.model.merge_state();  // all layers must agree

  const std::size_t d_p = r.count(0);
  const std::size_t n_users = r.count(1);
  ckpt.registry = UserRegistry(d_p);
  for (std::size_t i = 0; i < n_users; ++i) {
    UserId user(r.str());
    const bool trainable = r.u8() != 0;
    Vector p(d_p);
    for (std::size_t j = 0; j < d_p; ++j) p[j] = r.f64();
    ckpt.registry.lookup_or_register(user, trainable);
    ckpt.registry.set_embedding(user, p);
  }

  if (r.u8() != 0) {
    OptimState state;
    state.step = r.u64();
    const std::size_t n = r.count(1);
    for (std::size_t i = 0; i < n; ++i) {
      std::string name = r.str();
      Moments mom;
      mom.m = r.doubles();
      mom.v = r.doubles();
      state.moments.emplace(std::move(name), std::move(mom));
    }
    ckpt.optim = std::move(state);
  }
  if (r.position() != body.size()) throw ParseError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(fmt::format("failed writing '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace plora
