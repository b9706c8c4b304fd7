#ifndef GEOMEM_NN_HPP_
#define GEOMEM_NN_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "geomem/autodiff.hpp"
#include "geomem/rng.hpp"
#include "geomem/tensor.hpp"

namespace geomem {

template <class S>
using ParamList = std::vector<ParameterT<S>*>;

template <class S>
TensorT<S> xavier_init(Shape sh, int fan_in, int fan_out, Rng& rng) {
  TensorT<S> t(sh);
  const double lim = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(-lim, lim));
  return t;
}

// Identity on the leading square block, zero elsewhere. Used to initialize
// projections whose input and output share an embedding space, so that
// similarity structure present in the data survives to the first forward pass
// instead of having to be rediscovered through a random projection.
template <class S>
TensorT<S> aligned_init(int in, int out, double gain = 1.0) {
  TensorT<S> t({in, out});
  for (int i = 0; i < std::min(in, out); ++i) t.at(i, i) = static_cast<S>(gain);
  return t;
}

// y = x W + b, x flattened to [rows x in]. `bias=false` drops b entirely
// (used for attention key projections, where a key bias shifts every logit in
// a row by the same amount and softmax cancels it exactly — a structurally
// gradient-free parameter).
template <class S>
struct LinearT {
  ParameterT<S> w, b;
  bool has_bias = true;

  LinearT() = default;
  LinearT(const std::string& name, int in, int out, Rng& rng, bool bias = true)
      : w(name + ".w", xavier_init<S>({in, out}, in, out, rng)),
        b(bias ? ParameterT<S>(name + ".b", TensorT<S>::zeros({out})) : ParameterT<S>()),
        has_bias(bias) {}

  static LinearT aligned(const std::string& name, int in, int out, bool bias = true,
                         double gain = 1.0) {
    LinearT l;
    l.w = ParameterT<S>(name + ".w", aligned_init<S>(in, out, gain));
    if (bias) l.b = ParameterT<S>(name + ".b", TensorT<S>::zeros({out}));
    l.has_bias = bias;
    return l;
  }

  int in() const { return w.value.dim(0); }
  int out() const { return w.value.dim(1); }

  VarT<S> apply(TapeT<S>& t, VarT<S> x) {
    const std::int64_t n = x.val().size();
    if (n % in() != 0)
      throw ShapeError(w.name + ": input size " + std::to_string(n) + " not divisible by " +
                       std::to_string(in()));
    VarT<S> xf = reshape(x, {static_cast<int>(n / in()), in()});
    VarT<S> y = matmul(xf, t.param(w));
    return has_bias ? add_bias(y, t.param(b)) : y;
  }

  void collect(ParamList<S>& out_list) {
    out_list.push_back(&w);
    if (has_bias) out_list.push_back(&b);
  }
};

// linear -> GELU -> linear
template <class S>
struct Mlp2T {
  LinearT<S> l1, l2;

  Mlp2T() = default;
  Mlp2T(const std::string& name, int in, int hidden, int out, Rng& rng)
      : l1(name + ".l1", in, hidden, rng), l2(name + ".l2", hidden, out, rng) {}

  VarT<S> apply(TapeT<S>& t, VarT<S> x) { return l2.apply(t, gelu(l1.apply(t, x))); }

  // out_gain scales the second layer's identity block, setting the amplitude
  // at which the passed-through signal enters the residual stream at init.
  static Mlp2T aligned(const std::string& name, int in, int hidden, int out,
                       double out_gain = 1.0) {
    Mlp2T m;
    m.l1 = LinearT<S>::aligned(name + ".l1", in, hidden);
    m.l2 = LinearT<S>::aligned(name + ".l2", hidden, out, /*bias=*/true, out_gain);
    return m;
  }

  void collect(ParamList<S>& out_list) {
    l1.collect(out_list);
    l2.collect(out_list);
  }
};

// Single-head scaled dot-product cross-attention. Queries and the key/value
// source carry their own projections; scale is tau/sqrt(key width) with a
// learnable temperature tau, so retrieval sharpness can be trained instead of
// being fixed by the key width. tau_init should be chosen so the module is
// already near its working sharpness: the similarity margins between matching
// and non-matching keys are small relative to sqrt(d), and a single scalar
// under an adaptive optimizer moves far too slowly to discover a 10-30x
// temperature on its own within a toy step budget.
template <class S>
struct CrossAttentionT {
  LinearT<S> q, k, v;
  ParameterT<S> tau;

  CrossAttentionT() = default;
  CrossAttentionT(const std::string& name, int q_in, int kv_in, int d, int v_out, Rng& rng,
                  double tau_init = 1.0)
      : q(name + ".q", q_in, d, rng),
        k(name + ".k", kv_in, d, rng, /*bias=*/false),
        v(name + ".v", kv_in, v_out, rng),
        tau(name + ".tau", TensorT<S>::full({1, 1}, static_cast<S>(tau_init))) {}

  // Aligned variant: q/k/v start as (block-)identity so content similarity in
  // a shared embedding space drives attention from the first step.
  // v_gain scales the value projection's identity block; used where the
  // attention output feeds a residual accumulation that would otherwise grow
  // without bound across steps (retrieved content re-entering memory).
  static CrossAttentionT aligned(const std::string& name, int q_in, int kv_in, int d, int v_out,
                                 double tau_init = 1.0, double v_gain = 1.0) {
    CrossAttentionT a;
    a.q = LinearT<S>::aligned(name + ".q", q_in, d);
    a.k = LinearT<S>::aligned(name + ".k", kv_in, d, /*bias=*/false);
    a.v = LinearT<S>::aligned(name + ".v", kv_in, v_out, /*bias=*/true, v_gain);
    a.tau = ParameterT<S>(name + ".tau", TensorT<S>::full({1, 1}, static_cast<S>(tau_init)));
    return a;
  }

  VarT<S> apply(TapeT<S>& t, VarT<S> queries, VarT<S> keyvals,
                TensorT<S>* weights_out = nullptr) {
    VarT<S> Q = q.apply(t, queries);
    VarT<S> K = k.apply(t, keyvals);
    VarT<S> V = v.apply(t, keyvals);
    const S sc = S(1) / static_cast<S>(std::sqrt(static_cast<double>(q.out())));
    VarT<S> logits = scale(matmul_nt(Q, K), sc);
    VarT<S> tau_col = matmul(t.constant(TensorT<S>::full({logits.val().dim(0), 1}, S(1))), t.param(tau));
    logits = mul_bcast_col(logits, tau_col);
    VarT<S> weights = softmax_rows(logits);
    if (weights_out) *weights_out = weights.val();
    return matmul(weights, V);
  }

  void collect(ParamList<S>& out_list) {
    q.collect(out_list);
    k.collect(out_list);
    v.collect(out_list);
    out_list.push_back(&tau);
  }
};

// Plain-tensor attention used at inference-free call sites; the taped path
// above stays the differentiable route.
template <class S>
TensorT<S> attention_ref(const TensorT<S>& Q, const TensorT<S>& K, const TensorT<S>& V) {
  const S sc = S(1) / static_cast<S>(std::sqrt(static_cast<double>(Q.cols())));
  return matmul(softmax_rows(sc * matmul_nt(Q, K)), V);
}

}  // namespace geomem

#endif  // GEOMEM_NN_HPP_
