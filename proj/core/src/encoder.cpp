// SPDX-License-Identifier: Apache-2.0
#include "plora/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "plora/checksum.hpp"
#include "plora/errors.hpp"

namespace plora {

namespace {

Vector random_vector(std::size_t n, double std, Rng& rng) {
  Matrix m = gaussian_init(1, n, std, rng);
  return m.row_vector(0);
}

Matrix frozen_linear(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return gaussian_init(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

constexpr double kFrozenBiasStd = 0.02;

Matrix linear(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix y = matmul(x, w);
  add_row_broadcast(y, b);
  return y;
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size == 0) throw ParameterError("EncoderConfig: vocab_size must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ParameterError(fmt::format("EncoderConfig: d_model {} must be a positive multiple of n_heads {}", d_model,
                                     n_heads));
  }
  if (n_layers == 0) throw ParameterError("EncoderConfig: n_layers must be >= 1");
  if (d_ff == 0) throw ParameterError("EncoderConfig: d_ff must be positive");
  if (max_len == 0) throw ParameterError("EncoderConfig: max_len must be positive");
  if (n_classes < 2) throw ParameterError(fmt::format("EncoderConfig: n_classes must be >= 2, got {}", n_classes));
  if (!(embed_std > 0.0)) throw ParameterError("EncoderConfig: embed_std must be positive");
  if (!(head_init_std > 0.0)) throw ParameterError("EncoderConfig: head_init_std must be positive");
  if (plora.d_in != d_model || plora.d_out != d_model) {
    throw ParameterError(fmt::format("EncoderConfig: plora d_in/d_out ({}, {}) must equal d_model {}", plora.d_in,
                                     plora.d_out, d_model));
  }
  plora.validate();
}

const Matrix& ForwardTrace::plora_output(std::size_t index) const {
  const BlockCache& cache = blocks.at(index / 2);
  return index % 2 == 0 ? cache.q : cache.v;
}

ModelGradients& ModelGradients::operator+=(const ModelGradients& other) {
  if (adapters.size() != other.adapters.size()) throw DimensionError("ModelGradients: adapter count mismatch");
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    adapters[i].task_in += other.adapters[i].task_in;
    adapters[i].out += other.adapters[i].out;
    adapters[i].person_in += other.adapters[i].person_in;
  }
  head_weight += other.head_weight;
  head_bias += other.head_bias;
  p += other.p;
  return *this;
}

ModelGradients& ModelGradients::operator*=(double scale) {
  for (auto& a : adapters) {
    a.task_in *= scale;
    a.out *= scale;
    a.person_in *= scale;
  }
  head_weight *= scale;
  head_bias *= scale;
  p *= scale;
  return *this;
}

bool ModelGradients::all_zero() const {
  auto zero = [](std::span<const double> v) { return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }); };
  for (const auto& a : adapters) {
    if (!zero(a.task_in.values()) || !zero(a.out.values()) || !zero(a.person_in.values())) return false;
  }
  return zero(head_weight.values()) && zero(head_bias.values()) && zero(p.values());
}

EncoderModel EncoderModel::create(const EncoderConfig& input_config, std::uint64_t seed,
                                  std::span<const double> lexical_prior) {
  EncoderConfig config = input_config;
  config.validate();
  if (!lexical_prior.empty() && lexical_prior.size() != config.vocab_size) {
    throw DimensionError(fmt::format("EncoderModel::create: lexical prior has {} entries for vocab {}",
                                     lexical_prior.size(), config.vocab_size));
  }
  const std::size_t d = config.d_model;
  Rng rng(seed);
  EncoderModel model;
  model.config_ = config;
  model.token_embedding_ = gaussian_init(config.vocab_size, d, config.embed_std, rng);
  Vector direction = random_vector(d, 1.0, rng);
  direction *= 1.0 / l2_norm(direction.values());
  if (!lexical_prior.empty()) {
    for (std::size_t t = 0; t < config.vocab_size; ++t) {
      auto row = model.token_embedding_.row(t);
      for (std::size_t c = 0; c < d; ++c) row[c] += config.lexical_scale * lexical_prior[t] * direction[c];
    }
  }
  model.position_embedding_ = gaussian_init(config.max_len, d, 0.1 * config.embed_std, rng);

  model.blocks_.reserve(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    AttentionBlock block;
    Matrix qw = frozen_linear(d, d, rng);
    Vector qb = random_vector(d, kFrozenBiasStd, rng);
    block.query = PLoRALinear(config.plora, std::move(qw), std::move(qb), rng);
    block.key_w = frozen_linear(d, d, rng);
    block.key_b = random_vector(d, kFrozenBiasStd, rng);
    Matrix vw = frozen_linear(d, d, rng);
    Vector vb = random_vector(d, kFrozenBiasStd, rng);
    block.value = PLoRALinear(config.plora, std::move(vw), std::move(vb), rng);
    block.attn_out_w = frozen_linear(d, d, rng);
    block.attn_out_b = random_vector(d, kFrozenBiasStd, rng);
    block.ff1_w = frozen_linear(d, config.d_ff, rng);
    block.ff1_b = random_vector(config.d_ff, kFrozenBiasStd, rng);
    block.ff2_w = frozen_linear(config.d_ff, d, rng);
    block.ff2_b = random_vector(d, kFrozenBiasStd, rng);
    model.blocks_.push_back(std::move(block));
  }
  model.head_w_ = gaussian_init(d, config.n_classes, config.head_init_std, rng);
  model.head_b_ = Vector(config.n_classes);
  return model;
}

std::vector<NamedTensor> EncoderModel::export_tensors() const {
  std::vector<NamedTensor> out;
  auto add = [&out](std::string name, const Matrix& m, bool frozen) { out.push_back({std::move(name), m, frozen}); };
  auto add_vec = [&out](std::string name, const Vector& v, bool frozen) {
    out.push_back({std::move(name), Matrix::from_row(v), frozen});
  };
  add("embed.token", token_embedding_, true);
  add("embed.position", position_embedding_, true);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = fmt::format("block{}.", l);
    add(p + "q.weight", b.query.weight(), true);
    add_vec(p + "q.bias", b.query.bias(), true);
    add(p + "k.weight", b.key_w, true);
    add_vec(p + "k.bias", b.key_b, true);
    add(p + "v.weight", b.value.weight(), true);
    add_vec(p + "v.bias", b.value.bias(), true);
    add(p + "attn_out.weight", b.attn_out_w, true);
    add_vec(p + "attn_out.bias", b.attn_out_b, true);
    add(p + "ff1.weight", b.ff1_w, true);
    add_vec(p + "ff1.bias", b.ff1_b, true);
    add(p + "ff2.weight", b.ff2_w, true);
    add_vec(p + "ff2.bias", b.ff2_b, true);
  }
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = fmt::format("block{}.", l);
    add(p + "q.task_in", b.query.task_in(), false);
    add(p + "q.out", b.query.out(), false);
    add(p + "q.person_in", b.query.person_in(), false);
    add(p + "v.task_in", b.value.task_in(), false);
    add(p + "v.out", b.value.out(), false);
    add(p + "v.person_in", b.value.person_in(), false);
  }
  add("head.weight", head_w_, false);
  add_vec("head.bias", head_b_, false);
  return out;
}

EncoderModel EncoderModel::from_tensors(const EncoderConfig& input_config, const std::vector<NamedTensor>& tensors) {
  EncoderConfig config = input_config;
  config.validate();
  std::map<std::string, const Matrix*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  auto get = [&by_name](const std::string& name, std::size_t rows, std::size_t cols) -> Matrix {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(fmt::format("missing tensor '{}'", name));
    const Matrix& m = *it->second;
    if (m.rows() != rows || m.cols() != cols) {
      throw DimensionError(fmt::format("tensor '{}' has shape {}, expected ({}, {})", name, m.shape_string(), rows, cols));
    }
    return m;
  };
  auto get_vec = [&get](const std::string& name, std::size_t n) { return get(name, 1, n).row_vector(0); };

  const std::size_t d = config.d_model;
  const std::size_t r = config.plora.rank;
  const std::size_t dp = config.plora.d_p;
  EncoderModel model;
  model.config_ = config;
  model.token_embedding_ = get("embed.token", config.vocab_size, d);
  model.position_embedding_ = get("embed.position", config.max_len, d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = fmt::format("block{}.", l);
    AttentionBlock b;
    b.query = PLoRALinear::from_parts(config.plora, get(p + "q.weight", d, d), get_vec(p + "q.bias", d),
                                      get(p + "q.task_in", d, r), get(p + "q.out", r, d), get(p + "q.person_in", dp, r));
    b.key_w = get(p + "k.weight", d, d);
    b.key_b = get_vec(p + "k.bias", d);
    b.value = PLoRALinear::from_parts(config.plora, get(p + "v.weight", d, d), get_vec(p + "v.bias", d),
                                      get(p + "v.task_in", d, r), get(p + "v.out", r, d), get(p + "v.person_in", dp, r));
    b.attn_out_w = get(p + "attn_out.weight", d, d);
    b.attn_out_b = get_vec(p + "attn_out.bias", d);
    b.ff1_w = get(p + "ff1.weight", d, config.d_ff);
    b.ff1_b = get_vec(p + "ff1.bias", config.d_ff);
    b.ff2_w = get(p + "ff2.weight", config.d_ff, d);
    b.ff2_b = get_vec(p + "ff2.bias", d);
    model.blocks_.push_back(std::move(b));
  }
  model.head_w_ = get("head.weight", d, config.n_classes);
  model.head_b_ = get_vec("head.bias", config.n_classes);
  return model;
}

void EncoderModel::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw InputError("EncoderModel: empty token sequence");
  if (tokens.size() > config_.max_len) {
    throw InputError(fmt::format("EncoderModel: sequence length {} exceeds max_len {}", tokens.size(), config_.max_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config_.vocab_size) {
      throw InputError(fmt::format("EncoderModel: token {} at position {} is outside vocab of {}", tokens[i], i,
                                   config_.vocab_size));
    }
  }
}

ForwardTrace EncoderModel::forward(std::span<const TokenId> tokens, const Vector& p) const {
  check_tokens(tokens);
  if (p.size() != config_.plora.d_p) {
    throw DimensionError(fmt::format("EncoderModel::forward: embedding length {} != d_p {}", p.size(),
                                     config_.plora.d_p));
  }
  const std::size_t n = tokens.size();
  const std::size_t d = config_.d_model;
  const std::size_t heads = config_.n_heads;
  const std::size_t dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardTrace trace;
  trace.tokens.assign(tokens.begin(), tokens.end());
  trace.p = p;
  trace.generation = generation_;

  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = x.row(i);
    auto tok = token_embedding_.row(tokens[i]);
    auto pos = position_embedding_.row(i);
    for (std::size_t c = 0; c < d; ++c) dst[c] = tok[c] + pos[c];
  }
  const Matrix user_rows = Matrix::broadcast_row(p, n);

  trace.blocks.reserve(blocks_.size());
  for (const auto& block : blocks_) {
    BlockCache cache;
    cache.input = std::move(x);
    const bool q_merged = block.query.merge_state() != MergeState::Clean;
    const bool v_merged = block.value.merge_state() != MergeState::Clean;
    trace.merged = trace.merged || q_merged || v_merged;
    cache.q = q_merged ? block.query.affine(cache.input) : block.query.forward(cache.input, user_rows);
    cache.k = linear(cache.input, block.key_w, block.key_b);
    cache.v = v_merged ? block.value.affine(cache.input) : block.value.forward(cache.input, user_rows);

    cache.context = Matrix(n, d);
    cache.probs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      Matrix scores(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = cache.q.row(i).data() + off;
        for (std::size_t j = 0; j < n; ++j) {
          const double* kj = cache.k.row(j).data() + off;
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          scores(i, j) = acc * inv_sqrt_dh;
        }
      }
      softmax_rows(scores);
      for (std::size_t i = 0; i < n; ++i) {
        double* ctx = cache.context.row(i).data() + off;
        for (std::size_t j = 0; j < n; ++j) {
          const double a = scores(i, j);
          const double* vj = cache.v.row(j).data() + off;
          for (std::size_t c = 0; c < dh; ++c) ctx[c] += a * vj[c];
        }
      }
      cache.probs.push_back(std::move(scores));
    }

    cache.after_attn = linear(cache.context, block.attn_out_w, block.attn_out_b);
    cache.after_attn += cache.input;
    cache.ff_pre = linear(cache.after_attn, block.ff1_w, block.ff1_b);
    Matrix act = cache.ff_pre;
    for (double& v : act.values()) v = std::max(v, 0.0);
    cache.output = linear(act, block.ff2_w, block.ff2_b);
    cache.output += cache.after_attn;
    x = cache.output;
    trace.blocks.push_back(std::move(cache));
  }

  trace.pooled = column_sums(x);
  trace.pooled *= 1.0 / static_cast<double>(n);
  trace.logits = vecmat(trace.pooled, head_w_) + head_b_;
  return trace;
}

ModelGradients EncoderModel::zero_gradients() const {
  ModelGradients g;
  for (std::size_t i = 0; i < n_plora(); ++i) {
    const auto& layer = plora(i);
    g.adapters.push_back({Matrix(layer.task_in().rows(), layer.task_in().cols()),
                          Matrix(layer.out().rows(), layer.out().cols()),
                          Matrix(layer.person_in().rows(), layer.person_in().cols())});
  }
  g.head_weight = Matrix(head_w_.rows(), head_w_.cols());
  g.head_bias = Vector(head_b_.size());
  g.p = Vector(config_.plora.d_p);
  return g;
}

ModelGradients EncoderModel::backward(const ForwardTrace& trace, const BackwardSeeds& seeds) const {
  if (trace.generation != generation_) {
    throw StateError("EncoderModel::backward: trace is stale (parameters changed since forward)");
  }
  if (trace.merged) throw StateError("EncoderModel::backward: trace was produced with merged adapters");
  if (trace.blocks.size() != blocks_.size() || trace.tokens.empty()) {
    throw StateError("EncoderModel::backward: trace does not belong to this model");
  }
  if (seeds.d_logits.size() != config_.n_classes) {
    throw DimensionError(fmt::format("EncoderModel::backward: d_logits length {} != n_classes {}",
                                     seeds.d_logits.size(), config_.n_classes));
  }
  if (!seeds.d_plora_outputs.empty() && seeds.d_plora_outputs.size() != n_plora()) {
    throw DimensionError("EncoderModel::backward: d_plora_outputs must be empty or one per PLoRA block");
  }
  const std::size_t n = trace.tokens.size();
  const std::size_t d = config_.d_model;
  const std::size_t heads = config_.n_heads;
  const std::size_t dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  ModelGradients g = zero_gradients();
  g.head_weight = outer(trace.pooled, seeds.d_logits);
  g.head_bias = seeds.d_logits;
  Vector d_pooled = matvec(head_w_, seeds.d_logits);
  if (!seeds.d_pooled.empty()) d_pooled += seeds.d_pooled;

  Matrix dx = Matrix::broadcast_row(d_pooled, n);
  dx *= 1.0 / static_cast<double>(n);
  const Matrix user_rows = Matrix::broadcast_row(trace.p, n);

  for (std::size_t l = blocks_.size(); l-- > 0;) {
    const AttentionBlock& block = blocks_[l];
    const BlockCache& cache = trace.blocks[l];

    // output = after_attn + relu(ff_pre)·W2 + b2
    Matrix d_pre = matmul_nt(dx, block.ff2_w);
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
      if (!(cache.ff_pre.values()[i] > 0.0)) d_pre.values()[i] = 0.0;
    }
    Matrix d_after = std::move(dx);
    d_after += matmul_nt(d_pre, block.ff1_w);

    // after_attn = input + context·Wo + bo
    Matrix d_context = matmul_nt(d_after, block.attn_out_w);
    Matrix d_input = std::move(d_after);

    Matrix dq(n, d), dk(n, d), dv(n, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      const Matrix& a = cache.probs[h];
      Matrix da(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* dci = d_context.row(i).data() + off;
        for (std::size_t j = 0; j < n; ++j) {
          const double* vj = cache.v.row(j).data() + off;
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += dci[c] * vj[c];
          da(i, j) = acc;
          double* dvj = dv.row(j).data() + off;
          const double aij = a(i, j);
          for (std::size_t c = 0; c < dh; ++c) dvj[c] += aij * dci[c];
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        double row_dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) row_dot += a(i, j) * da(i, j);
        double* dqi = dq.row(i).data() + off;
        const double* qi = cache.q.row(i).data() + off;
        for (std::size_t j = 0; j < n; ++j) {
          const double ds = a(i, j) * (da(i, j) - row_dot) * inv_sqrt_dh;
          if (ds == 0.0) continue;
          const double* kj = cache.k.row(j).data() + off;
          double* dkj = dk.row(j).data() + off;
          for (std::size_t c = 0; c < dh; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
    if (!seeds.d_plora_outputs.empty()) {
      const Matrix& extra_q = seeds.d_plora_outputs[2 * l];
      const Matrix& extra_v = seeds.d_plora_outputs[2 * l + 1];
      if (!extra_q.empty()) dq += extra_q;
      if (!extra_v.empty()) dv += extra_v;
    }

    d_input += matmul_nt(dk, block.key_w);
    LayerBatchGradients gq = block.query.backward(cache.input, user_rows, dq);
    LayerBatchGradients gv = block.value.backward(cache.input, user_rows, dv);
    d_input += gq.h;
    d_input += gv.h;
    g.adapters[2 * l] = {std::move(gq.task_in), std::move(gq.out), std::move(gq.person_in)};
    g.adapters[2 * l + 1] = {std::move(gv.task_in), std::move(gv.out), std::move(gv.person_in)};
    g.p += column_sums(gq.p);
    g.p += column_sums(gv.p);
    dx = std::move(d_input);
  }
  return g;
}

std::size_t EncoderModel::predict(std::span<const TokenId> tokens, const Vector& p) const {
  return argmax(forward(tokens, p).logits.values());
}

const PLoRALinear& EncoderModel::plora(std::size_t index) const {
  if (index >= n_plora()) throw ParameterError(fmt::format("PLoRA block index {} out of range", index));
  const auto& block = blocks_[index / 2];
  return index % 2 == 0 ? block.query : block.value;
}

PLoRALinear& EncoderModel::plora(std::size_t index) {
  if (index >= n_plora()) throw ParameterError(fmt::format("PLoRA block index {} out of range", index));
  ++generation_;
  auto& block = blocks_[index / 2];
  return index % 2 == 0 ? block.query : block.value;
}

Matrix& EncoderModel::head_weight() {
  ++generation_;
  return head_w_;
}

Vector& EncoderModel::head_bias() {
  ++generation_;
  return head_b_;
}

void EncoderModel::merge_for_user(const Vector& p, const std::string& user) {
  if (merge_state() != MergeState::Clean) throw StateError("EncoderModel::merge_for_user: model is already merged");
  for (std::size_t i = 0; i < n_plora(); ++i) plora(i).merge_for_user(p, user);
}

void EncoderModel::unmerge() {
  if (merge_state() == MergeState::Clean) throw StateError("EncoderModel::unmerge: model is not merged");
  for (std::size_t i = 0; i < n_plora(); ++i) plora(i).unmerge();
}

void EncoderModel::switch_user(const Vector& from_p, const Vector& to_p, const std::string& to_user) {
  if (merge_state() == MergeState::Clean) throw StateError("EncoderModel::switch_user: model is not merged");
  for (std::size_t i = 0; i < n_plora(); ++i) plora(i).switch_user(from_p, to_p, to_user);
}

MergeState EncoderModel::merge_state() const {
  const MergeState first = plora(0).merge_state();
  for (std::size_t i = 1; i < n_plora(); ++i) {
    if (plora(i).merge_state() != first) throw StateError("EncoderModel: PLoRA layers disagree on merge state");
  }
  return first;
}

std::string EncoderModel::merged_user() const { return plora(0).merged_user(); }

std::size_t EncoderModel::count_frozen() const {
  std::size_t n = token_embedding_.size() + position_embedding_.size();
  for (const auto& b : blocks_) {
    n += b.query.count_frozen() + b.value.count_frozen();
    n += b.key_w.size() + b.key_b.size() + b.attn_out_w.size() + b.attn_out_b.size();
    n += b.ff1_w.size() + b.ff1_b.size() + b.ff2_w.size() + b.ff2_b.size();
  }
  return n;
}

std::size_t EncoderModel::count_adapter_params() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < n_plora(); ++i) n += plora(i).count_trainable();
  return n;
}

std::uint64_t EncoderModel::frozen_checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : export_tensors()) {
    if (t.frozen) h = fnv1a64(t.value.values(), h);
  }
  return h;
}

std::uint64_t EncoderModel::trainable_checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : export_tensors()) {
    if (!t.frozen) h = fnv1a64(t.value.values(), h);
  }
  return h;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw InputError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void softmax_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (double& v : row) v /= total;
  }
}

Vector softmax(const Vector& logits) {
  Matrix m = Matrix::from_row(logits);
  softmax_rows(m);
  return m.row_vector(0);
}

}  // namespace plora
