#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "moi/nn/ops.hpp"

namespace moi::nn {

struct Linear {
  ParamId weight = 0;  // in x out
  ParamId bias = 0;    // 1 x out
  bool has_bias = true;

  static Linear create(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng, bool bias = true) {
    Linear l;
    l.weight = ps.add(name + ".weight", xavier_uniform(in, out, rng));
    l.has_bias = bias;
    if (bias) l.bias = ps.add(name + ".bias", Matrix::Zero(1, out));
    return l;
  }

  Var operator()(Tape& t, Var x) const {
    Var y = matmul(x, t.param(weight));
    return has_bias ? add(y, t.param(bias)) : y;
  }
};

struct LayerNorm {
  ParamId gain = 0;
  ParamId shift = 0;

  static LayerNorm create(ParameterSet& ps, const std::string& name, int dim) {
    return LayerNorm{ps.add(name + ".gain", Matrix::Ones(1, dim)), ps.add(name + ".shift", Matrix::Zero(1, dim))};
  }

  Var operator()(Tape& t, Var x) const {
    return add(mul(layer_norm_rows(x), t.param(gain)), t.param(shift));
  }
};

// Stack of Linear layers with ReLU between them.
struct Mlp {
  std::vector<Linear> layers;

  static Mlp create(ParameterSet& ps, const std::string& name, const std::vector<int>& dims, Rng& rng) {
    Mlp m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      m.layers.push_back(Linear::create(ps, name + "." + std::to_string(i), dims[i], dims[i + 1], rng));
    }
    return m;
  }

  Var operator()(Tape& t, Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](t, x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }
};

struct MultiHeadAttention {
  Linear q, k, v, out;
  int heads = 1;
  int dim = 0;

  static MultiHeadAttention create(ParameterSet& ps, const std::string& name, int dim, int heads, Rng& rng) {
    if (heads <= 0 || dim % heads != 0) throw ConfigError("attention width must be divisible by head count");
    MultiHeadAttention a;
    a.q = Linear::create(ps, name + ".q", dim, dim, rng);
    a.k = Linear::create(ps, name + ".k", dim, dim, rng);
    a.v = Linear::create(ps, name + ".v", dim, dim, rng);
    a.out = Linear::create(ps, name + ".out", dim, dim, rng);
    a.heads = heads;
    a.dim = dim;
    return a;
  }

  Var operator()(Tape& t, Var query, Var key, Var value) const {
    Var qp = q(t, query);
    Var kp = k(t, key);
    Var vp = v(t, value);
    const int hd = dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Var> parts;
    parts.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Var qh = slice_cols(qp, h * hd, hd);
      Var kh = slice_cols(kp, h * hd, hd);
      Var vh = slice_cols(vp, h * hd, hd);
      Var attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
      parts.push_back(matmul(attn, vh));
    }
    Var merged = heads == 1 ? parts.front() : concat_cols(parts);
    return out(t, merged);
  }
};

struct FeedForward {
  Linear in, out;

  static FeedForward create(ParameterSet& ps, const std::string& name, int dim, int hidden, Rng& rng) {
    return FeedForward{Linear::create(ps, name + ".in", dim, hidden, rng),
                       Linear::create(ps, name + ".out", hidden, dim, rng)};
  }

  Var operator()(Tape& t, Var x) const { return out(t, relu(in(t, x))); }
};

// Post-norm transformer encoder layer; `pos` is added to queries and keys.
struct EncoderLayer {
  MultiHeadAttention attn;
  FeedForward ffn;
  LayerNorm norm1, norm2;

  static EncoderLayer create(ParameterSet& ps, const std::string& name, int dim, int heads, int ffn_dim, Rng& rng) {
    return EncoderLayer{MultiHeadAttention::create(ps, name + ".attn", dim, heads, rng),
                        FeedForward::create(ps, name + ".ffn", dim, ffn_dim, rng),
                        LayerNorm::create(ps, name + ".norm1", dim), LayerNorm::create(ps, name + ".norm2", dim)};
  }

  Var operator()(Tape& t, Var x, Var pos) const {
    Var qk = add(x, pos);
    x = norm1(t, add(x, attn(t, qk, qk, x)));
    return norm2(t, add(x, ffn(t, x)));
  }

  Var operator()(Tape& t, Var x) const {
    x = norm1(t, add(x, attn(t, x, x, x)));
    return norm2(t, add(x, ffn(t, x)));
  }
};

// Post-norm decoder layer: query self-attention, cross-attention to the
// encoder memory, feed-forward.
struct DecoderLayer {
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;
  LayerNorm norm1, norm2, norm3;

  static DecoderLayer create(ParameterSet& ps, const std::string& name, int dim, int heads, int ffn_dim, Rng& rng) {
    return DecoderLayer{MultiHeadAttention::create(ps, name + ".self_attn", dim, heads, rng),
                        MultiHeadAttention::create(ps, name + ".cross_attn", dim, heads, rng),
                        FeedForward::create(ps, name + ".ffn", dim, ffn_dim, rng),
                        LayerNorm::create(ps, name + ".norm1", dim), LayerNorm::create(ps, name + ".norm2", dim),
                        LayerNorm::create(ps, name + ".norm3", dim)};
  }

  Var operator()(Tape& t, Var tgt, Var query_pos, Var memory, Var memory_pos) const {
    Var qk = add(tgt, query_pos);
    tgt = norm1(t, add(tgt, self_attn(t, qk, qk, tgt)));
    tgt = norm2(t, add(tgt, cross_attn(t, add(tgt, query_pos), add(memory, memory_pos), memory)));
    return norm3(t, add(tgt, ffn(t, tgt)));
  }
};

}  // namespace moi::nn
