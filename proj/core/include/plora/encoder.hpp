// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plora/linalg.hpp"
#include "plora/plora_layer.hpp"
#include "plora/types.hpp"

namespace plora {

struct EncoderConfig {
  std::size_t vocab_size = 200;
  std::size_t d_model = 32;
  std::size_t n_heads = 1;
  std::size_t n_layers = 1;
  std::size_t d_ff = 64;
  std::size_t max_len = 32;
  std::size_t n_classes = 5;
  /// Std of the random part of the frozen token embedding.
  double embed_std = 0.5;
  /// Weight of the lexical prior written along one fixed embedding direction.
  double lexical_scale = 1.0;
  /// Std of the trainable classifier head at init.
  double head_init_std = 0.02;
  /// d_in, d_out are forced to d_model.
  PLoRAConfig plora;

  /// Throws ParameterError on inconsistent shapes (d_model % n_heads, n_classes < 2, ...).
  void validate() const;
};

/// Frozen projector pieces of one attention block plus its two PLoRA projectors.
struct AttentionBlock {
  PLoRALinear query;
  PLoRALinear value;
  Matrix key_w;
  Vector key_b;
  Matrix attn_out_w;
  Vector attn_out_b;
  Matrix ff1_w;
  Vector ff1_b;
  Matrix ff2_w;
  Vector ff2_b;
};

struct BlockCache {
  Matrix input;               // n × d
  Matrix q, k, v;             // n × d
  std::vector<Matrix> probs;  // per head, n × n
  Matrix context;             // n × d, heads concatenated
  Matrix after_attn;          // n × d, residual sum
  Matrix ff_pre;              // n × d_ff
  Matrix output;              // n × d
};

struct ForwardTrace {
  TokenSequence tokens;
  Vector p;
  std::vector<BlockCache> blocks;
  Vector pooled;  // mean over positions of the last block output
  Vector logits;
  std::uint64_t generation = 0;
  bool merged = false;

  /// Output of PLoRA block `index` (2·layer for Q, 2·layer + 1 for V).
  const Matrix& plora_output(std::size_t index) const;
};

/// Extra gradient entry points for backward.
struct BackwardSeeds {
  Vector d_logits;
  /// Optional; empty means zero.
  Vector d_pooled;
  /// Optional; empty, or one (possibly empty) matrix per PLoRA block.
  std::vector<Matrix> d_plora_outputs;
};

struct AdapterGradients {
  Matrix task_in;
  Matrix out;
  Matrix person_in;
};

struct ModelGradients {
  std::vector<AdapterGradients> adapters;  // 2 per layer, Q then V
  Matrix head_weight;
  Vector head_bias;
  Vector p;

  ModelGradients& operator+=(const ModelGradients& other);
  ModelGradients& operator*=(double scale);
  bool all_zero() const;
};

struct NamedTensor {
  std::string name;
  Matrix value;
  bool frozen = true;
};

/// Token embedding (+ positional) → n_layers × [PLoRA attention + frozen FFN] →
/// mean pooling → trainable linear head. Only Q and V carry adapters.
class EncoderModel {
 public:
  EncoderModel() = default;

  /// Seeded surrogate for a pretrained backbone. `lexical_prior` (empty, or one value
  /// per token) is added along a fixed random unit direction of the token embedding.
  static EncoderModel create(const EncoderConfig& config, std::uint64_t seed,
                             std::span<const double> lexical_prior = {});
  /// Inverse of export_tensors(). Layers start Clean.
  static EncoderModel from_tensors(const EncoderConfig& config, const std::vector<NamedTensor>& tensors);
  /// Every tensor in a fixed order: frozen ones first, then trainable ones.
  std::vector<NamedTensor> export_tensors() const;

  const EncoderConfig& config() const { return config_; }

  ForwardTrace forward(std::span<const TokenId> tokens, const Vector& p) const;
  ModelGradients backward(const ForwardTrace& trace, const BackwardSeeds& seeds) const;
  std::size_t predict(std::span<const TokenId> tokens, const Vector& p) const;

  std::size_t n_plora() const { return 2 * blocks_.size(); }
  const PLoRALinear& plora(std::size_t index) const;
  /// Mutable access invalidates outstanding traces.
  PLoRALinear& plora(std::size_t index);
  const Matrix& head_weight() const { return head_w_; }
  const Vector& head_bias() const { return head_b_; }
  Matrix& head_weight();
  Vector& head_bias();
  const std::vector<AttentionBlock>& blocks() const { return blocks_; }

  /// Call after mutating trainable tensors through raw spans.
  void mark_modified() { ++generation_; }
  std::uint64_t generation() const { return generation_; }

  void merge_for_user(const Vector& p, const std::string& user = {});
  void unmerge();
  void switch_user(const Vector& from_p, const Vector& to_p, const std::string& to_user = {});
  /// State shared by all PLoRA layers; StateError if they disagree.
  MergeState merge_state() const;
  std::string merged_user() const;

  std::size_t count_frozen() const;
  std::size_t count_adapter_params() const;
  std::size_t count_head_params() const { return head_w_.size() + head_b_.size(); }
  /// FNV-1a over the bytes of every frozen tensor, in export order.
  std::uint64_t frozen_checksum() const;
  /// FNV-1a over the bytes of every trainable tensor.
  std::uint64_t trainable_checksum() const;

  ModelGradients zero_gradients() const;

 private:
  void check_tokens(std::span<const TokenId> tokens) const;

  EncoderConfig config_;
  Matrix token_embedding_;
  Matrix position_embedding_;
  std::vector<AttentionBlock> blocks_;
  Matrix head_w_;
  Vector head_b_;
  std::uint64_t generation_ = 0;
};

/// argmax with ties going to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Row-wise softmax, in place.
void softmax_rows(Matrix& m);
Vector softmax(const Vector& logits);

}  // namespace plora
