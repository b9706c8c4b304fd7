#ifndef GEOMEM_AUTODIFF_HPP_
#define GEOMEM_AUTODIFF_HPP_

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "geomem/tensor.hpp"

namespace geomem {

template <class S>
struct ParameterT {
  std::string name;
  TensorT<S> value;
  TensorT<S> gradient;

  ParameterT() = default;
  ParameterT(std::string n, TensorT<S> v)
      : name(std::move(n)), value(std::move(v)), gradient(TensorT<S>::zeros(value.shape)) {}

  void reset_grad() { std::fill(gradient.data.begin(), gradient.data.end(), S(0)); }
};

template <class S>
class TapeT;

// Lightweight handle into a tape node.
template <class S>
struct VarT {
  TapeT<S>* tape = nullptr;
  int idx = -1;

  const TensorT<S>& val() const { return tape->value(idx); }
};

// Records primitives in forward order; backward() replays them in exact
// reverse order, once.
template <class S>
class TapeT {
 public:
  using Tensor = TensorT<S>;
  using Var = VarT<S>;

  VarT<S> constant(Tensor v) { return record(std::move(v), {}, nullptr); }

  VarT<S> param(ParameterT<S>& p) {
    Var v = record(p.value, {}, nullptr);
    param_leaves_.emplace_back(v.idx, &p);
    return v;
  }

  const Tensor& value(int i) const { return nodes_[static_cast<size_t>(i)].value; }

  // gout receives d(loss)/d(output) for the node; the lambda pushes into the
  // node's parents via accum().
  VarT<S> record(Tensor out, std::vector<int> parents,
                 std::function<void(TapeT&, const Tensor&)> back) {
    if (!out.all_finite()) throw NumericalError("non-finite value produced on tape");
    nodes_.push_back(Node{std::move(out), std::move(parents), std::move(back)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void accum(int i, const Tensor& g) {
    auto& slot = grads_[static_cast<size_t>(i)];
    if (slot.data.empty())
      slot = g;
    else {
      for (std::int64_t k = 0; k < g.size(); ++k) slot[k] += g[k];
    }
  }

  const Tensor& grad(int i) const { return grads_[static_cast<size_t>(i)]; }

  void backward(Var loss) {
    if (backward_done_) throw Error("backward called twice on one tape");
    backward_done_ = true;
    if (loss.tape != this || loss.val().size() != 1)
      throw Error("backward: loss must be a scalar on this tape");
    grads_.assign(nodes_.size(), Tensor{});
    grads_[static_cast<size_t>(loss.idx)] = Tensor::scalar(S(1));
    for (int i = loss.idx; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      auto& g = grads_[static_cast<size_t>(i)];
      if (g.data.empty() || !n.back) continue;
      n.back(*this, g);
    }
    for (auto& [idx, p] : param_leaves_) {
      const auto& g = grads_[static_cast<size_t>(idx)];
      if (g.data.empty()) continue;
      for (std::int64_t k = 0; k < g.size(); ++k) p->gradient[k] += g[k];
    }
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    std::function<void(TapeT&, const Tensor&)> back;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::pair<int, ParameterT<S>*>> param_leaves_;
  bool backward_done_ = false;
};

// ---- primitive ops -------------------------------------------------------

template <class S>
VarT<S> add(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = a.val() + b.val();
  int ia = a.idx, ib = b.idx;
  return t.record(std::move(out), {ia, ib}, [ia, ib](TapeT<S>& t, const TensorT<S>& g) {
    t.accum(ia, g);
    t.accum(ib, g);
  });
}

template <class S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = a.val() - b.val();
  int ia = a.idx, ib = b.idx;
  return t.record(std::move(out), {ia, ib}, [ia, ib](TapeT<S>& t, const TensorT<S>& g) {
    t.accum(ia, g);
    TensorT<S> ng = S(-1) * g;
    t.accum(ib, ng);
  });
}

template <class S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = a.val() * b.val();
  int ia = a.idx, ib = b.idx;
  return t.record(std::move(out), {ia, ib}, [ia, ib](TapeT<S>& t, const TensorT<S>& g) {
    t.accum(ia, g * t.value(ib));
    t.accum(ib, g * t.value(ia));
  });
}

template <class S>
VarT<S> scale(VarT<S> a, S s) {
  TapeT<S>& t = *a.tape;
  int ia = a.idx;
  return t.record(s * a.val(), {ia}, [ia, s](TapeT<S>& t, const TensorT<S>& g) {
    t.accum(ia, s * g);
  });
}

template <class S>
VarT<S> add_const(VarT<S> a, S c) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = a.val();
  for (auto& v : out.data) v += c;
  int ia = a.idx;
  return t.record(std::move(out), {ia}, [ia](TapeT<S>& t, const TensorT<S>& g) {
    t.accum(ia, g);
  });
}

template <class S>
VarT<S> matmul(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = matmul(a.val(), b.val());
  int ia = a.idx, ib = b.idx;
  return t.record(std::move(out), {ia, ib}, [ia, ib](TapeT<S>& t, const TensorT<S>& g) {
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    TensorT<S> da({A.dim(0), A.dim(1)});
    da.mat() = g.mat() * B.mat().transpose();
    t.accum(ia, da);
    TensorT<S> db({B.dim(0), B.dim(1)});
    db.mat() = A.mat().transpose() * g.mat();
    t.accum(ib, db);
  });
}

// a * b^T
template <class S>
VarT<S> matmul_nt(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = matmul_nt(a.val(), b.val());
  int ia = a.idx, ib = b.idx;
  return t.record(std::move(out), {ia, ib}, [ia, ib](TapeT<S>& t, const TensorT<S>& g) {
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    TensorT<S> da({A.dim(0), A.dim(1)});
    da.mat() = g.mat() * B.mat();
    t.accum(ia, da);
    TensorT<S> db({B.dim(0), B.dim(1)});
    db.mat() = g.mat().transpose() * A.mat();
    t.accum(ib, db);
  });
}

template <class S>
VarT<S> softmax_rows(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  TensorT<S> y = softmax_rows(a.val());
  int ia = a.idx;
  // capture output by value (cheap at toy sizes, avoids self-index plumbing)
  TensorT<S> ycopy = y;
  return t.record(std::move(y), {ia}, [ia, ycopy](TapeT<S>& t, const TensorT<S>& g) {
    const int m = ycopy.rows(), n = ycopy.cols();
    TensorT<S> dx = ycopy;
    for (int i = 0; i < m; ++i) {
      S row_dot = S(0);
      for (int j = 0; j < n; ++j) row_dot += g.at(i, j) * ycopy.at(i, j);
      for (int j = 0; j < n; ++j) dx.at(i, j) = ycopy.at(i, j) * (g.at(i, j) - row_dot);
    }
    t.accum(ia, dx);
  });
}

template <class S>
VarT<S> sigmoid(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  TensorT<S> y = sigmoid(a.val());
  int ia = a.idx;
  TensorT<S> ycopy = y;
  return t.record(std::move(y), {ia}, [ia, ycopy](TapeT<S>& t, const TensorT<S>& g) {
    TensorT<S> dx = ycopy;
    for (std::int64_t k = 0; k < dx.size(); ++k) dx[k] = g[k] * ycopy[k] * (S(1) - ycopy[k]);
    t.accum(ia, dx);
  });
}

template <class S>
VarT<S> gelu(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  TensorT<S> y = gelu(a.val());
  int ia = a.idx;
  return t.record(std::move(y), {ia}, [ia](TapeT<S>& t, const TensorT<S>& g) {
    const auto& x = t.value(ia);
    TensorT<S> dx = x;
    for (std::int64_t k = 0; k < dx.size(); ++k) dx[k] = g[k] * gelu_grad_scalar(x[k]);
    t.accum(ia, dx);
  });
}

// x [m x n] + bias [1 x n] (or flat [n]) broadcast over rows
template <class S>
VarT<S> add_bias(VarT<S> x, VarT<S> b) {
  TapeT<S>& t = *x.tape;
  const auto& X = x.val();
  const auto& B = b.val();
  const int m = X.rows(), n = X.cols();
  if (B.size() != n) throw ShapeError("add_bias: bias length mismatch");
  TensorT<S> out = X;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(i) * n + j] += B[j];
  int ix = x.idx, ib = b.idx;
  return t.record(std::move(out), {ix, ib}, [ix, ib, m, n](TapeT<S>& t, const TensorT<S>& g) {
    t.accum(ix, g);
    TensorT<S> db(t.value(ib).shape);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) db[j] += g.data[static_cast<size_t>(i) * n + j];
    t.accum(ib, db);
  });
}

// x [m x n] * gate [m x 1] broadcast over columns
template <class S>
VarT<S> mul_bcast_col(VarT<S> x, VarT<S> gate) {
  TapeT<S>& t = *x.tape;
  const auto& X = x.val();
  const auto& G = gate.val();
  const int m = X.rows(), n = X.cols();
  if (G.size() != m) throw ShapeError("mul_bcast_col: gate length mismatch");
  TensorT<S> out = X;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(i) * n + j] *= G[i];
  int ix = x.idx, ig = gate.idx;
  return t.record(std::move(out), {ix, ig}, [ix, ig, m, n](TapeT<S>& t, const TensorT<S>& g) {
    const auto& X = t.value(ix);
    const auto& A = t.value(ig);
    TensorT<S> dx = g;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) dx.data[static_cast<size_t>(i) * n + j] *= A[i];
    t.accum(ix, dx);
    TensorT<S> da(A.shape);
    for (int i = 0; i < m; ++i) {
      S s = S(0);
      for (int j = 0; j < n; ++j)
        s += g.data[static_cast<size_t>(i) * n + j] * X.data[static_cast<size_t>(i) * n + j];
      da[i] = s;
    }
    t.accum(ig, da);
  });
}

template <class S>
VarT<S> concat_rows(const std::vector<VarT<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  TapeT<S>& t = *parts[0].tape;
  std::vector<TensorT<S>> vals;
  std::vector<int> idxs;
  std::vector<int> row_counts;
  for (auto& p : parts) {
    TensorT<S> v = p.val();
    vals.push_back(v.reshaped({v.rows(), v.cols()}));
    idxs.push_back(p.idx);
    row_counts.push_back(v.rows());
  }
  TensorT<S> out = concat(vals, 0);
  const int n = out.cols();
  return t.record(std::move(out), idxs,
                  [idxs, row_counts, n](TapeT<S>& t, const TensorT<S>& g) {
                    int start = 0;
                    for (size_t p = 0; p < idxs.size(); ++p) {
                      TensorT<S> gp = slice(g, 0, start, row_counts[p]);
                      t.accum(idxs[p], gp.reshaped(t.value(idxs[p]).shape));
                      start += row_counts[p];
                    }
                  });
}

template <class S>
VarT<S> concat_cols(VarT<S> a, VarT<S> b) {
  TapeT<S>& t = *a.tape;
  TensorT<S> av = a.val().reshaped({a.val().rows(), a.val().cols()});
  TensorT<S> bv = b.val().reshaped({b.val().rows(), b.val().cols()});
  TensorT<S> out = concat<S>({av, bv}, 1);
  int ia = a.idx, ib = b.idx;
  const int ca = av.cols();
  const int cb = bv.cols();
  return t.record(std::move(out), {ia, ib}, [ia, ib, ca, cb](TapeT<S>& t, const TensorT<S>& g) {
    TensorT<S> ga = slice(g, 1, 0, ca);
    TensorT<S> gb = slice(g, 1, ca, cb);
    t.accum(ia, ga.reshaped(t.value(ia).shape));
    t.accum(ib, gb.reshaped(t.value(ib).shape));
  });
}

template <class S>
VarT<S> sum_all(VarT<S> a) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = TensorT<S>::scalar(sum_all(a.val()));
  int ia = a.idx;
  return t.record(std::move(out), {ia}, [ia](TapeT<S>& t, const TensorT<S>& g) {
    TensorT<S> dx = TensorT<S>::full(t.value(ia).shape, g[0]);
    t.accum(ia, dx);
  });
}

// Fused cross-entropy over a single score row; value = logsumexp(s) - s[label]
template <class S>
VarT<S> cross_entropy(VarT<S> scores, int label) {
  TapeT<S>& t = *scores.tape;
  const auto& s = scores.val();
  const int k = static_cast<int>(s.size());
  if (label < 0 || label >= k) throw Error("cross_entropy: label out of range");
  S mx = s[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, s[j]);
  S lse = S(0);
  for (int j = 0; j < k; ++j) lse += std::exp(s[j] - mx);
  lse = mx + std::log(lse);
  int is = scores.idx;
  return t.record(TensorT<S>::scalar(lse - s[label]), {is},
                  [is, label](TapeT<S>& t, const TensorT<S>& g) {
                    TensorT<S> d = softmax_rows(t.value(is).reshaped({1, static_cast<int>(t.value(is).size())}));
                    d[label] -= S(1);
                    for (auto& v : d.data) v *= g[0];
                    t.accum(is, d.reshaped(t.value(is).shape));
                  });
}

// reshape is free; gradient flows through unchanged
template <class S>
VarT<S> reshape(VarT<S> a, Shape sh) {
  TapeT<S>& t = *a.tape;
  TensorT<S> out = a.val().reshaped(sh);
  int ia = a.idx;
  return t.record(std::move(out), {ia}, [ia](TapeT<S>& t, const TensorT<S>& g) {
    t.accum(ia, g.reshaped(t.value(ia).shape));
  });
}

}  // namespace geomem

#endif  // GEOMEM_AUTODIFF_HPP_
