#include "dqen/nn.hpp"

#include "dqen/errors.hpp"

#include <cmath>

namespace dqen::nn {

Var ParamStore::add(const std::string& name, Matrix init, bool frozen) {
  if (contains(name)) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  params_.push_back({name, ag::parameter(std::move(init)), frozen});
  return params_.back().var;
}

const Var& ParamStore::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.var;
  }
  throw ConfigError("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

std::vector<NamedParam> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (const auto& p : params_) {
    if (p.name.starts_with(prefix)) out.push_back(p);
  }
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

void ParamStore::set_frozen(const std::string& name, bool frozen) {
  for (auto& p : params_) {
    if (p.name == name) {
      p.frozen = frozen;
      return;
    }
  }
  throw ConfigError("unknown parameter: " + name);
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

Matrix xavier_uniform(Rng& rng, ag::Index fan_in, ag::Index fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(fan_in, fan_out);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix gaussian(Rng& rng, ag::Index rows, ag::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear Linear::create(ParamStore& store, const std::string& name, ag::Index in, ag::Index out,
                      Rng& rng) {
  Linear l;
  l.weight = store.add(name + ".weight", xavier_uniform(rng, in, out));
  l.bias = store.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

void Linear::set_zero() {
  weight.mutable_value().setZero();
  bias.mutable_value().setZero();
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, ag::Index dim) {
  LayerNorm n;
  n.gamma = store.add(name + ".gamma", Matrix::Ones(1, dim));
  n.beta = store.add(name + ".beta", Matrix::Zero(1, dim));
  return n;
}

Mlp Mlp::create(ParamStore& store, const std::string& name, const std::vector<ag::Index>& dims,
                Rng& rng) {
  if (dims.size() < 2) {
    throw ConfigError("Mlp needs at least input and output width");
  }
  Mlp m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    m.layers.push_back(
        Linear::create(store, name + ".fc" + std::to_string(i + 1), dims[i], dims[i + 1], rng));
  }
  return m;
}

Var Mlp::operator()(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = ag::gelu(h);
  }
  return h;
}

void Mlp::set_zero() {
  for (auto& l : layers) l.set_zero();
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& store, const std::string& name,
                                              ag::Index dim, int heads, Rng& rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadAttention a;
  a.q_proj = Linear::create(store, name + ".q", dim, dim, rng);
  a.k_proj = Linear::create(store, name + ".k", dim, dim, rng);
  a.v_proj = Linear::create(store, name + ".v", dim, dim, rng);
  a.out_proj = Linear::create(store, name + ".out", dim, dim, rng);
  a.num_heads = heads;
  return a;
}

Var MultiHeadAttention::operator()(const Var& query, const Var& key, const Var& value,
                                   AttentionTrace* trace) const {
  const Var q = q_proj(query);
  const Var k = k_proj(key);
  const Var v = v_proj(value);
  const ag::Index head_dim = q.cols() / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(num_heads));
  if (trace) trace->heads.clear();
  for (int h = 0; h < num_heads; ++h) {
    const ag::Index off = h * head_dim;
    const Var qh = ag::slice_cols(q, off, head_dim);
    const Var kh = ag::slice_cols(k, off, head_dim);
    const Var vh = ag::slice_cols(v, off, head_dim);
    const Var attn = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
    if (trace) trace->heads.push_back(attn.value());
    outs.push_back(ag::matmul(attn, vh));
  }
  const Var merged = num_heads == 1 ? outs.front() : ag::concat_cols(outs);
  return out_proj(merged);
}

EncoderLayer EncoderLayer::create(ParamStore& store, const std::string& name, ag::Index dim,
                                  int heads, ag::Index ffn_dim, Rng& rng) {
  EncoderLayer l;
  l.norm1 = LayerNorm::create(store, name + ".norm1", dim);
  l.self_attn = MultiHeadAttention::create(store, name + ".self_attn", dim, heads, rng);
  l.norm2 = LayerNorm::create(store, name + ".norm2", dim);
  l.ffn = Mlp::create(store, name + ".ffn", {dim, ffn_dim, dim}, rng);
  return l;
}

Var EncoderLayer::operator()(const Var& x, const Var& pos) const {
  const Var n1 = norm1(x);
  const Var qk = ag::add(n1, pos);
  Var y = ag::add(x, self_attn(qk, qk, n1));
  return ag::add(y, ffn(norm2(y)));
}

void EncoderLayer::zero_residual_branches() {
  self_attn.out_proj.set_zero();
  ffn.layers.back().set_zero();
}

DecoderLayer DecoderLayer::create(ParamStore& store, const std::string& name, ag::Index dim,
                                  int heads, ag::Index ffn_dim, Rng& rng) {
  DecoderLayer l;
  l.norm1 = LayerNorm::create(store, name + ".norm1", dim);
  l.self_attn = MultiHeadAttention::create(store, name + ".self_attn", dim, heads, rng);
  l.norm2 = LayerNorm::create(store, name + ".norm2", dim);
  l.cross_attn = MultiHeadAttention::create(store, name + ".cross_attn", dim, heads, rng);
  l.norm3 = LayerNorm::create(store, name + ".norm3", dim);
  l.ffn = Mlp::create(store, name + ".ffn", {dim, ffn_dim, dim}, rng);
  return l;
}

Var DecoderLayer::operator()(const Var& tgt, const Var& query_pos, const Var& memory,
                             const Var& memory_pos, AttentionTrace* cross_trace) const {
  const Var n1 = norm1(tgt);
  const Var qk = ag::add(n1, query_pos);
  Var t = ag::add(tgt, self_attn(qk, qk, n1));
  const Var n2 = norm2(t);
  t = ag::add(t, cross_attn(ag::add(n2, query_pos), ag::add(memory, memory_pos), memory,
                            cross_trace));
  return ag::add(t, ffn(norm3(t)));
}

void DecoderLayer::zero_residual_branches() {
  self_attn.out_proj.set_zero();
  cross_attn.out_proj.set_zero();
  ffn.layers.back().set_zero();
}

}  // namespace dqen::nn
