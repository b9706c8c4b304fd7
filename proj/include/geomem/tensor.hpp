#ifndef GEOMEM_TENSOR_HPP_
#define GEOMEM_TENSOR_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace geomem {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

// Dense row-major n-d array. All higher layers flatten to 2-d views for
// linear algebra; Eigen maps provide the matrix engine.
template <class S>
struct TensorT {
  using Scalar = S;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;

  Shape shape;
  std::vector<S> data;

  TensorT() = default;
  explicit TensorT(Shape sh) : shape(std::move(sh)) {
    for (int d : shape)
      if (d <= 0) throw ShapeError("nonpositive extent in shape " + shape_str(shape));
    data.assign(static_cast<size_t>(shape_numel(shape)), S(0));
  }
  TensorT(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("data length does not match shape " + shape_str(shape));
  }

  static TensorT zeros(Shape sh) { return TensorT(std::move(sh)); }
  static TensorT full(Shape sh, S v) {
    TensorT t(std::move(sh));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(S v) { return TensorT({1}, {v}); }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  // 2-d accessors (rank checked by caller where it matters)
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const {
    std::int64_t c = 1;
    for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return static_cast<int>(c);
  }

  S& operator[](std::int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data[static_cast<size_t>(i)]; }
  S& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  const S& at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  S& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const S& at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  // Row-major reinterpretation; no copy of semantics, data is copied with the
  // tensor itself (value type).
  TensorT reshaped(Shape sh) const {
    if (shape_numel(sh) != size())
      throw ShapeError("reshape " + shape_str(shape) + " -> " + shape_str(sh));
    return TensorT(std::move(sh), data);
  }

  // View the whole tensor as a rows x cols row-major matrix.
  MatMap mat(int r, int c) {
    if (static_cast<std::int64_t>(r) * c != size())
      throw ShapeError("matrix view " + std::to_string(r) + "x" + std::to_string(c) +
                       " of " + shape_str(shape));
    return MatMap(data.data(), r, c);
  }
  ConstMatMap mat(int r, int c) const {
    if (static_cast<std::int64_t>(r) * c != size())
      throw ShapeError("matrix view " + std::to_string(r) + "x" + std::to_string(c) +
                       " of " + shape_str(shape));
    return ConstMatMap(data.data(), r, c);
  }
  MatMap mat() { return mat(rows(), cols()); }
  ConstMatMap mat() const { return mat(rows(), cols()); }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <class S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

template <class S>
TensorT<S> operator+(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "add");
  TensorT<S> r = a;
  for (std::int64_t i = 0; i < r.size(); ++i) r[i] += b[i];
  return r;
}

template <class S>
TensorT<S> operator-(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "sub");
  TensorT<S> r = a;
  for (std::int64_t i = 0; i < r.size(); ++i) r[i] -= b[i];
  return r;
}

template <class S>
TensorT<S> operator*(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "mul");
  TensorT<S> r = a;
  for (std::int64_t i = 0; i < r.size(); ++i) r[i] *= b[i];
  return r;
}

template <class S>
TensorT<S> operator*(S s, const TensorT<S>& a) {
  TensorT<S> r = a;
  for (auto& v : r.data) v *= s;
  return r;
}

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: " + shape_str(a.shape) + " x " + shape_str(b.shape));
  TensorT<S> r({a.dim(0), b.dim(1)});
  r.mat() = a.mat() * b.mat();
  return r;
}

// a * b^T without materializing the transpose.
template <class S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: " + shape_str(a.shape) + " x " + shape_str(b.shape) + "^T");
  TensorT<S> r({a.dim(0), b.dim(0)});
  r.mat() = a.mat() * b.mat().transpose();
  return r;
}

// Row-wise softmax with per-row max subtraction.
template <class S>
TensorT<S> softmax_rows(const TensorT<S>& a) {
  TensorT<S> r = a;
  const int m = a.rows(), n = a.cols();
  for (int i = 0; i < m; ++i) {
    S* row = r.data.data() + static_cast<size_t>(i) * n;
    S mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    S sum = S(0);
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < n; ++j) row[j] /= sum;
  }
  return r;
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  TensorT<S> r = a;
  for (auto& v : r.data) v = S(1) / (S(1) + std::exp(-v));
  return r;
}

// tanh-approximation GELU; constants as commonly published.
template <class S>
inline S gelu_scalar(S x) {
  const S k = S(0.7978845608028654);  // sqrt(2/pi)
  const S c = S(0.044715);
  return S(0.5) * x * (S(1) + std::tanh(k * (x + c * x * x * x)));
}

template <class S>
inline S gelu_grad_scalar(S x) {
  const S k = S(0.7978845608028654);
  const S c = S(0.044715);
  const S u = k * (x + c * x * x * x);
  const S t = std::tanh(u);
  const S du = k * (S(1) + S(3) * c * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

template <class S>
TensorT<S> gelu(const TensorT<S>& a) {
  TensorT<S> r = a;
  for (auto& v : r.data) v = gelu_scalar(v);
  return r;
}

// Fixed left-to-right accumulation; treated as the reference reduction order
// everywhere a sum is taken outside Eigen.
template <class S>
S sum_all(const TensorT<S>& a) {
  S s = S(0);
  for (S v : a.data) s += v;
  return s;
}

template <class S>
S dot(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "dot");
  S s = S(0);
  for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <class S>
S norm2(const TensorT<S>& a) {
  return std::sqrt(dot(a, a));
}

// Zero-norm inputs yield similarity 0 so an all-zero entry is never "most
// similar".
template <class S>
S cosine_similarity(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "cosine_similarity");
  const S na = norm2(a), nb = norm2(b);
  if (na == S(0) || nb == S(0)) return S(0);
  S c = dot(a, b) / (na * nb);
  return std::clamp(c, S(-1), S(1));
}

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: empty input list");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
  Shape out = parts[0].shape;
  for (size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d == axis) continue;
      if (parts[p].dim(d) != out[static_cast<size_t>(d)])
        throw ShapeError("concat: extent mismatch on non-axis dim " + std::to_string(d));
    }
    out[static_cast<size_t>(axis)] += parts[p].dim(axis);
  }
  TensorT<S> r(out);
  // outer = product of dims before axis, inner = product after
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out[static_cast<size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= out[static_cast<size_t>(d)];
  std::int64_t row_out = static_cast<std::int64_t>(out[static_cast<size_t>(axis)]) * inner;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t row_p = static_cast<std::int64_t>(p.dim(axis)) * inner;
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(p.data.begin() + o * row_p, p.data.begin() + (o + 1) * row_p,
                r.data.begin() + o * row_out + offset);
    offset += row_p;
  }
  return r;
}

// Inverse of concat along `axis` for a single block [start, start+len).
template <class S>
TensorT<S> slice(const TensorT<S>& a, int axis, int start, int len) {
  const int rank = a.rank();
  if (axis < 0 || axis >= rank) throw ShapeError("slice: bad axis");
  if (start < 0 || len <= 0 || start + len > a.dim(axis)) throw ShapeError("slice: bad range");
  Shape out = a.shape;
  out[static_cast<size_t>(axis)] = len;
  TensorT<S> r(out);
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int d = axis + 1; d < rank; ++d) inner *= a.dim(d);
  const std::int64_t row_a = static_cast<std::int64_t>(a.dim(axis)) * inner;
  const std::int64_t row_r = static_cast<std::int64_t>(len) * inner;
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy(a.data.begin() + o * row_a + start * inner,
              a.data.begin() + o * row_a + (start + len) * inner, r.data.begin() + o * row_r);
  return r;
}

// Mean over a set of axes; result keeps the remaining axes (rank 0 collapses
// to shape [1]).
template <class S>
TensorT<S> mean_pool(const TensorT<S>& a, const std::vector<int>& axes) {
  const int rank = a.rank();
  std::vector<bool> reduce(static_cast<size_t>(rank), false);
  std::int64_t count = 1;
  for (int ax : axes) {
    if (ax < 0 || ax >= rank) throw ShapeError("mean_pool: bad axis");
    if (!reduce[static_cast<size_t>(ax)]) {
      reduce[static_cast<size_t>(ax)] = true;
      count *= a.dim(ax);
    }
  }
  if (count == 0) throw ShapeError("mean_pool: empty pooling extent");
  Shape out;
  for (int d = 0; d < rank; ++d)
    if (!reduce[static_cast<size_t>(d)]) out.push_back(a.dim(d));
  if (out.empty()) out.push_back(1);
  TensorT<S> r(out);
  // index arithmetic: walk the full tensor once, accumulate into the reduced
  // position, left-to-right order over the flat input
  std::vector<std::int64_t> stride_out(static_cast<size_t>(rank), 0);
  std::int64_t s = 1;
  for (int d = rank - 1; d >= 0; --d) {
    if (!reduce[static_cast<size_t>(d)]) {
      stride_out[static_cast<size_t>(d)] = s;
      s *= a.dim(d);
    }
  }
  std::vector<int> idx(static_cast<size_t>(rank), 0);
  for (std::int64_t i = 0; i < a.size(); ++i) {
    std::int64_t oi = 0;
    for (int d = 0; d < rank; ++d) oi += stride_out[static_cast<size_t>(d)] * idx[static_cast<size_t>(d)];
    r[oi] += a[i];
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[static_cast<size_t>(d)] < a.dim(d)) break;
      idx[static_cast<size_t>(d)] = 0;
    }
  }
  const S inv = S(1) / static_cast<S>(count);
  for (auto& v : r.data) v *= inv;
  return r;
}

}  // namespace geomem

#endif  // GEOMEM_TENSOR_HPP_
