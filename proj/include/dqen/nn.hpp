#pragma once

// Parameter storage and the small set of layers the network is built from.

#include "dqen/autograd.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dqen::nn {

using ag::Matrix;
using ag::Var;

using Rng = std::mt19937_64;

struct NamedParam {
  std::string name;
  Var var;
  bool frozen = false;  // kept in checkpoints, skipped by the optimizer
};

// Ordered registry of trainable leaves. Names are unique and stable; they are
// the keys of the checkpoint file.
class ParamStore {
 public:
  Var add(const std::string& name, Matrix init, bool frozen = false);
  [[nodiscard]] const Var& get(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const;
  [[nodiscard]] const std::vector<NamedParam>& params() const { return params_; }
  [[nodiscard]] std::vector<NamedParam> with_prefix(const std::string& prefix) const;
  [[nodiscard]] std::size_t scalar_count() const;
  void set_frozen(const std::string& name, bool frozen);
  void zero_grad();

 private:
  std::vector<NamedParam> params_;
};

Matrix xavier_uniform(Rng& rng, ag::Index fan_in, ag::Index fan_out);
Matrix gaussian(Rng& rng, ag::Index rows, ag::Index cols, double stddev);

struct Linear {
  Var weight;  // (in, out)
  Var bias;    // (1, out)

  static Linear create(ParamStore& store, const std::string& name, ag::Index in, ag::Index out,
                       Rng& rng);
  [[nodiscard]] Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
  void set_zero();
};

struct LayerNorm {
  Var gamma;
  Var beta;

  static LayerNorm create(ParamStore& store, const std::string& name, ag::Index dim);
  [[nodiscard]] Var operator()(const Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

// Linear layers with GELU between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  static Mlp create(ParamStore& store, const std::string& name, const std::vector<ag::Index>& dims,
                    Rng& rng);
  [[nodiscard]] Var operator()(const Var& x) const;
  void set_zero();
};

// Per-head attention weights captured during a forward pass.
struct AttentionTrace {
  std::vector<Matrix> heads;  // each (queries, keys), rows sum to 1
};

struct MultiHeadAttention {
  Linear q_proj, k_proj, v_proj, out_proj;
  int num_heads = 1;

  static MultiHeadAttention create(ParamStore& store, const std::string& name, ag::Index dim,
                                   int heads, Rng& rng);
  [[nodiscard]] Var operator()(const Var& query, const Var& key, const Var& value,
                               AttentionTrace* trace = nullptr) const;
};

// Pre-norm encoder block: x + Attn(LN x + pos) ; x + FFN(LN x).
struct EncoderLayer {
  LayerNorm norm1, norm2;
  MultiHeadAttention self_attn;
  Mlp ffn;

  static EncoderLayer create(ParamStore& store, const std::string& name, ag::Index dim, int heads,
                             ag::Index ffn_dim, Rng& rng);
  [[nodiscard]] Var operator()(const Var& x, const Var& pos) const;
  void zero_residual_branches();
};

// Pre-norm decoder block with self-attention over the queries followed by
// cross-attention into the encoder memory.
struct DecoderLayer {
  LayerNorm norm1, norm2, norm3;
  MultiHeadAttention self_attn, cross_attn;
  Mlp ffn;

  static DecoderLayer create(ParamStore& store, const std::string& name, ag::Index dim, int heads,
                             ag::Index ffn_dim, Rng& rng);
  [[nodiscard]] Var operator()(const Var& tgt, const Var& query_pos, const Var& memory,
                               const Var& memory_pos, AttentionTrace* cross_trace = nullptr) const;
  void zero_residual_branches();
};

}  // namespace dqen::nn
