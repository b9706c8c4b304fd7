#ifndef GEOMEM_DUALMEM_HPP_
#define GEOMEM_DUALMEM_HPP_

#include <cmath>
#include <vector>

#include "geomem/autodiff.hpp"
#include "geomem/config.hpp"
#include "geomem/nn.hpp"

namespace geomem {

enum class SimilarityMode { Pooled, Flat };

inline SimilarityMode similarity_from_string(const std::string& s) {
  if (s == "pooled") return SimilarityMode::Pooled;
  if (s == "flat") return SimilarityMode::Flat;
  throw ConfigError("unknown episodic similarity mode: " + s);
}

template <class S>
struct DualMemParamsT {
  CrossAttentionT<S> working;   // Q,K,V over c
  CrossAttentionT<S> episodic;  // separate projections
  Mlp2T<S> gate;                // [M_w ; M_e] -> per-token per-channel gate logit

  DualMemParamsT() = default;
  DualMemParamsT(const DimsConfig& d, Rng& rng)
      // v_gain 0.5: retrieved content re-enters memory through the episodic
      // write, so a unit-gain value path compounds token norms linearly over
      // the episode; 0.5 bounds the accumulation geometrically at ~2x.
      : working(CrossAttentionT<S>::aligned("dualmem.working", d.c, d.c, d.c, d.c, 8.0, 0.5)),
        episodic(CrossAttentionT<S>::aligned("dualmem.episodic", d.c, d.c, d.c, d.c, 8.0, 0.5)),
        gate("dualmem.gate", 2 * d.c, 2 * d.c, d.c, rng) {}

  void collect(ParamList<S>& out) {
    working.collect(out);
    episodic.collect(out);
    gate.collect(out);
  }
};

// FIFO window + fixed-capacity bank. Entries are plain tensors: memory
// writes are detached from the tape (truncated backpropagation).
template <class S>
struct DualMemoryStateT {
  std::vector<TensorT<S>> working;
  std::vector<TensorT<S>> episodic;
  int l_w = 8;
  int l_e = 32;

  std::size_t state_bytes() const {
    std::size_t n = 0;
    for (const auto& t : working) n += t.data.size() * sizeof(S);
    for (const auto& t : episodic) n += t.data.size() * sizeof(S);
    return n;
  }
};

template <class S>
void update_working(DualMemoryStateT<S>& st, TensorT<S> grid) {
  if (static_cast<int>(st.working.size()) == st.l_w && st.l_w > 0)
    st.working.erase(st.working.begin());
  if (st.l_w > 0) st.working.push_back(std::move(grid));
  while (static_cast<int>(st.working.size()) > st.l_w) st.working.erase(st.working.begin());
}

template <class S>
TensorT<S> pool_tokens(const TensorT<S>& grid) {
  const int rows = grid.rows(), cols = grid.cols();
  TensorT<S> v({cols});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) v[j] += grid.at(i, j);
  const S inv = S(1) / static_cast<S>(rows);
  for (auto& x : v.data) x *= inv;
  return v;
}

template <class S>
S entry_similarity(const TensorT<S>& a, const TensorT<S>& b, SimilarityMode mode) {
  if (mode == SimilarityMode::Pooled) return cosine_similarity(pool_tokens(a), pool_tokens(b));
  return cosine_similarity(a, b);
}

// Below capacity: append. At capacity: replace the entry most similar to the
// incoming grid (argmax of cosine; ties break toward the lowest index).
// Returns the evicted index, or -1, plus the similarity scores.
template <class S>
int update_episodic(DualMemoryStateT<S>& st, TensorT<S> grid, SimilarityMode mode,
                    std::vector<double>* scores_out = nullptr) {
  if (static_cast<int>(st.episodic.size()) < st.l_e) {
    st.episodic.push_back(std::move(grid));
    return -1;
  }
  int best = 0;
  S best_s = entry_similarity(grid, st.episodic[0], mode);
  if (scores_out) scores_out->push_back(static_cast<double>(best_s));
  for (size_t i = 1; i < st.episodic.size(); ++i) {
    const S s = entry_similarity(grid, st.episodic[i], mode);
    if (scores_out) scores_out->push_back(static_cast<double>(s));
    if (s > best_s) {
      best_s = s;
      best = static_cast<int>(i);
    }
  }
  st.episodic.erase(st.episodic.begin() + best);
  st.episodic.push_back(std::move(grid));
  return best;
}

struct MemoryStepDiag {
  std::vector<double> similarity;  // episodic similarity scores s_i (empty below capacity)
  int evicted = -1;
  double working_attn_entropy = 0;
  double episodic_attn_entropy = 0;
  double gate_mean = 0;
};

template <class S>
double mean_row_entropy(const TensorT<S>& weights) {
  if (weights.data.empty()) return 0;
  const int m = weights.rows(), n = weights.cols();
  double acc = 0;
  for (int i = 0; i < m; ++i) {
    double h = 0;
    for (int j = 0; j < n; ++j) {
      const double p = static_cast<double>(weights.at(i, j));
      if (p > 0) h -= p * std::log(p);
    }
    acc += h;
  }
  return acc / m;
}

struct DualMemOptions {
  bool working_enabled = true;
  bool episodic_enabled = true;
  SimilarityMode similarity = SimilarityMode::Pooled;
};

template <class S>
struct MemoryStepOutputT {
  VarT<S> M;
  VarT<S> gamma;  // valid only when both memories were fused
  bool has_gamma = false;
  MemoryStepDiag diag;
};

// Retrieval over stored grids: keys/values are the row-concatenation of all
// entries; empty memory returns H unchanged.
template <class S>
VarT<S> retrieve(TapeT<S>& tape, VarT<S> H, const std::vector<TensorT<S>>& entries,
                 CrossAttentionT<S>& attn, TensorT<S>* weights_out = nullptr) {
  if (entries.empty()) return H;
  std::vector<TensorT<S>> flat;
  for (const auto& e : entries) flat.push_back(e.reshaped({e.rows(), e.cols()}));
  VarT<S> kv = tape.constant(concat(flat, 0));
  return add(H, attn.apply(tape, H, kv, weights_out));
}

template <class S>
VarT<S> retrieve_working(TapeT<S>& tape, VarT<S> H, const DualMemoryStateT<S>& st,
                         DualMemParamsT<S>& p, TensorT<S>* weights_out = nullptr) {
  return retrieve(tape, H, st.working, p.working, weights_out);
}

template <class S>
VarT<S> retrieve_episodic(TapeT<S>& tape, VarT<S> H, const DualMemoryStateT<S>& st,
                          DualMemParamsT<S>& p, TensorT<S>* weights_out = nullptr) {
  return retrieve(tape, H, st.episodic, p.episodic, weights_out);
}

// gamma = sigmoid(MLP([M_w ; M_e])); M = gamma .* M_w + (1 - gamma) .* M_e
template <class S>
std::pair<VarT<S>, VarT<S>> gated_fuse(TapeT<S>& tape, VarT<S> M_w, VarT<S> M_e,
                                       DualMemParamsT<S>& p) {
  check_same_shape(M_w.val(), M_e.val(), "gated_fuse");
  VarT<S> gamma = sigmoid(p.gate.apply(tape, concat_cols(M_w, M_e)));
  VarT<S> one_minus = add_const(scale(gamma, S(-1)), S(1));
  VarT<S> M = add(mul(gamma, M_w), mul(one_minus, M_e));
  return {M, gamma};
}

// One step of the dual-memory module: working retrieval, episodic retrieval,
// gated fusion, working update with H, episodic update with M.
template <class S>
MemoryStepOutputT<S> dualmem_step(TapeT<S>& tape, VarT<S> H, DualMemoryStateT<S>& st,
                                  DualMemParamsT<S>& p, const DualMemOptions& opt) {
  MemoryStepOutputT<S> out;
  TensorT<S> w_weights, e_weights;
  VarT<S> M;
  if (!opt.working_enabled && !opt.episodic_enabled) {
    M = H;
  } else if (opt.working_enabled && !opt.episodic_enabled) {
    M = retrieve_working(tape, H, st, p, &w_weights);
  } else if (!opt.working_enabled && opt.episodic_enabled) {
    M = retrieve_episodic(tape, H, st, p, &e_weights);
  } else {
    VarT<S> M_w = retrieve_working(tape, H, st, p, &w_weights);
    VarT<S> M_e = retrieve_episodic(tape, H, st, p, &e_weights);
    auto [fused, gamma] = gated_fuse(tape, M_w, M_e, p);
    M = fused;
    out.gamma = gamma;
    out.has_gamma = true;
    double gm = 0;
    for (auto v : gamma.val().data) gm += static_cast<double>(v);
    out.diag.gate_mean = gm / gamma.val().size();
  }
  out.diag.working_attn_entropy = mean_row_entropy(w_weights);
  out.diag.episodic_attn_entropy = mean_row_entropy(e_weights);
  if (opt.working_enabled) update_working(st, H.val());
  if (opt.episodic_enabled)
    out.diag.evicted = update_episodic(st, M.val(), opt.similarity, &out.diag.similarity);
  out.M = M;
  return out;
}

}  // namespace geomem

#endif  // GEOMEM_DUALMEM_HPP_
