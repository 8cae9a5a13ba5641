#include "musc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "linalg_kernels.hpp"

namespace musc::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kDense: return "dense";
    case Op::kRelu: return "relu";
    case Op::kElu: return "elu";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmax: return "softmax";
    case Op::kLayerNorm: return "layernorm";
    case Op::kEmbedding: return "embedding";
    case Op::kConcat: return "concat";
    case Op::kReshape: return "reshape";
    case Op::kMean: return "mean";
    case Op::kBiLstm: return "bilstm";
    case Op::kTranspose: return "transpose";
    case Op::kSlice: return "slice";
    case Op::kScale: return "scale";
    case Op::kRmsNormalize: return "rms_normalize";
    case Op::kSubstitute: return "substitute";
    case Op::kCrossEntropy: return "cross_entropy";
  }
  return "?";
}

namespace {

template <class T>
void check_finite(Op op, const Tensor<T>& t) {
  if (!t.all_finite()) throw NumericError(std::string(op_name(op)) + ": non-finite input");
}

[[noreturn]] void shape_error(Op op, const Shape& a, const Shape& b) {
  throw ContractViolation(std::string(op_name(op)) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
Tape<T>& same_tape(Op op, Var<T> a, Var<T> b) {
  require(a.valid() && b.valid(), std::string(op_name(op)) + ": invalid operand");
  require(a.tape() == b.tape(), std::string(op_name(op)) + ": operands live on different tapes");
  return *a.tape();
}

// Trailing-suffix broadcast check; returns the size of the repeated block.
std::size_t suffix_block(Op op, const Shape& a, const Shape& b) {
  if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) shape_error(op, a, b);
  return shape_size(b);
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class T>
T sigmoid_scalar(T z) {
  return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

}  // namespace

// --- Tape ----------------------------------------------------------------

template <class T>
Var<T> Tape<T>::push_leaf(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  check_finite(Op::kLeaf, value);
  Node n;
  n.owned = std::move(value);
  return push_leaf(std::move(n));
}

template <class T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  check_finite(Op::kLeaf, value);
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_;
  return push_leaf(std::move(n));
}

template <class T>
Var<T> Tape<T>::parameter(const ParamStore<T>& store, std::size_t index) {
  Node n;
  n.external = &store.tensor(index);
  n.requires_grad = grad_enabled_ && !store.frozen(index);
  n.param_index = static_cast<int>(index);
  return push_leaf(std::move(n));
}

template <class T>
Var<T> Tape<T>::emit(Op op, const std::vector<Var<T>>& inputs, Tensor<T> out, BackwardFn fn) {
  bool any = false;
  for (const auto& v : inputs) any = any || requires_grad(v.id());
  Node n;
  n.owned = std::move(out);
  n.requires_grad = grad_enabled_ && any;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  if (nodes_.back().requires_grad) {
    Record r{op, {}, id, std::move(fn)};
    r.inputs.reserve(inputs.size());
    for (const auto& v : inputs) r.inputs.push_back(v.id());
    records_.push_back(std::move(r));
  }
  return Var<T>(this, id);
}

template <class T>
Var<T> Tape<T>::emit(Op op, std::initializer_list<Var<T>> inputs, Tensor<T> out, BackwardFn fn) {
  return emit(op, std::vector<Var<T>>(inputs), std::move(out), std::move(fn));
}

template <class T>
std::span<T> Tape<T>::grad_mut(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), T(0));
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  require(loss.valid() && loss.tape() == this, "backward: loss is not on this tape");
  require(loss.size() == 1, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  for (auto& n : nodes_) n.grad.clear();
  if (!requires_grad(loss.id())) return;
  grad_mut(loss.id())[0] = T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (nodes_[it->output].grad.empty()) continue;
    it->backward(*this, it->output);
  }
}

template <class T>
std::vector<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return std::vector<T>(value(v.id()).size(), T(0));
  return n.grad;
}

template <class T>
void Tape<T>::accumulate_param_grads(GradBuffer<T>& out) const {
  for (const auto& n : nodes_) {
    if (n.param_index < 0 || n.grad.empty()) continue;
    auto& slot = out[static_cast<std::size_t>(n.param_index)];
    for (std::size_t j = 0; j < slot.size(); ++j) slot[j] += n.grad[j];
  }
}

// --- elementwise binary ---------------------------------------------------

namespace {

enum class Binary { kAdd, kSub, kMul };

template <class T>
Var<T> binary(Binary kind, Var<T> a, Var<T> b) {
  const Op op = kind == Binary::kAdd ? Op::kAdd : kind == Binary::kSub ? Op::kSub : Op::kMul;
  Tape<T>& t = same_tape(op, a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  check_finite(op, av);
  check_finite(op, bv);
  const std::size_t block = suffix_block(op, av.shape(), bv.shape());
  const std::size_t n = av.size();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T x = av[i], y = bv[i % block];
    out[i] = kind == Binary::kAdd ? x + y : kind == Binary::kSub ? x - y : x * y;
  }
  const auto ia = a.id(), ib = b.id();
  return t.emit(op, {a, b}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    auto go = tp.out_grad(o);
    if (tp.requires_grad(ia)) {
      auto ga = tp.grad_mut(ia);
      if (kind == Binary::kMul) {
        const auto& bv2 = tp.value(ib);
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * bv2[i % block];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
      }
    }
    if (tp.requires_grad(ib)) {
      auto gb = tp.grad_mut(ib);
      if (kind == Binary::kMul) {
        const auto& av2 = tp.value(ia);
        for (std::size_t i = 0; i < n; ++i) gb[i % block] += go[i] * av2[i];
      } else {
        const T sign = kind == Binary::kAdd ? T(1) : T(-1);
        for (std::size_t i = 0; i < n; ++i) gb[i % block] += sign * go[i];
      }
    }
  });
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(Binary::kAdd, a, b);
}
template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(Binary::kSub, a, b);
}
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(Binary::kMul, a, b);
}

// --- matmul / dense -------------------------------------------------------

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(Op::kMatMul, a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_error(Op::kMatMul, av.shape(), bv.shape());
  check_finite(Op::kMatMul, av);
  check_finite(Op::kMatMul, bv);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  detail::gemm(false, false, m, n, k, av.ptr(), bv.ptr(), out.ptr(), false);
  const auto ia = a.id(), ib = b.id();
  return t.emit(Op::kMatMul, {a, b}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    const T* go = tp.out_grad(o).data();
    if (tp.requires_grad(ia)) detail::gemm(false, true, m, k, n, go, tp.value(ib).ptr(), tp.grad_mut(ia).data(), true);
    if (tp.requires_grad(ib)) detail::gemm(true, false, k, n, m, tp.value(ia).ptr(), go, tp.grad_mut(ib).data(), true);
  });
}

template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& t = same_tape(Op::kDense, x, w);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  if (wv.rank() != 2 || xv.shape().back() != wv.dim(0)) shape_error(Op::kDense, xv.shape(), wv.shape());
  const std::size_t n_in = wv.dim(0), n_out = wv.dim(1), rows = xv.size() / n_in;
  const bool has_bias = b.valid();
  if (has_bias) {
    require(b.tape() == &t, "dense: bias lives on a different tape");
    if (b.value().shape() != Shape{n_out}) shape_error(Op::kDense, wv.shape(), b.value().shape());
    check_finite(Op::kDense, b.value());
  }
  check_finite(Op::kDense, xv);
  check_finite(Op::kDense, wv);
  Shape os = xv.shape();
  os.back() = n_out;
  Tensor<T> out(os);
  detail::gemm(false, false, rows, n_out, n_in, xv.ptr(), wv.ptr(), out.ptr(), false);
  if (has_bias) {
    const T* bp = b.value().ptr();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n_out; ++j) out[r * n_out + j] += bp[j];
  }
  const auto ix = x.id(), iw = w.id();
  const auto ib = has_bias ? b.id() : 0u;
  std::vector<Var<T>> ins{x, w};
  if (has_bias) ins.push_back(b);
  return t.emit(Op::kDense, ins, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    const T* go = tp.out_grad(o).data();
    if (tp.requires_grad(ix)) detail::gemm(false, true, rows, n_in, n_out, go, tp.value(iw).ptr(), tp.grad_mut(ix).data(), true);
    if (tp.requires_grad(iw)) detail::gemm(true, false, n_in, n_out, rows, tp.value(ix).ptr(), go, tp.grad_mut(iw).data(), true);
    if (has_bias && tp.requires_grad(ib)) {
      auto gb = tp.grad_mut(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n_out; ++j) gb[j] += go[r * n_out + j];
    }
  });
}

// --- conv2d ---------------------------------------------------------------

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride) {
  Tape<T>& t = same_tape(Op::kConv2d, x, w);
  require(b.valid() && b.tape() == &t, "conv2d: bias required on the same tape");
  require(stride >= 1, "conv2d: stride must be >= 1");
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = b.value();
  const bool batched = xv.rank() == 4;
  if ((xv.rank() != 3 && !batched) || wv.rank() != 4) shape_error(Op::kConv2d, xv.shape(), wv.shape());
  const std::size_t nb = batched ? xv.dim(0) : 1;
  const std::size_t ci = xv.dim(batched ? 1 : 0), hi = xv.dim(batched ? 2 : 1), wi = xv.dim(batched ? 3 : 2);
  const std::size_t co = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != ci || wv.dim(3) != k || k % 2 == 0) shape_error(Op::kConv2d, xv.shape(), wv.shape());
  if (bv.shape() != Shape{co}) shape_error(Op::kConv2d, wv.shape(), bv.shape());
  check_finite(Op::kConv2d, xv);
  check_finite(Op::kConv2d, wv);
  check_finite(Op::kConv2d, bv);

  const std::size_t pad = k / 2;
  const std::size_t ho = (hi - 1) / stride + 1, wo = (wi - 1) / stride + 1;
  const std::size_t rows = ci * k * k, cols = ho * wo;
  std::vector<T> col(nb * rows * cols);
  for (std::size_t n = 0; n < nb; ++n) {
    const T* src = xv.ptr() + n * ci * hi * wi;
    T* dst = col.data() + n * rows * cols;
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          T* row = dst + ((c * k + ky) * k + kx) * cols;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(hi) &&
                                  ix < static_cast<std::ptrdiff_t>(wi);
              row[oy * wo + ox] = inside ? src[(c * hi + iy) * wi + ix] : T(0);
            }
          }
        }
  }
  Shape os = batched ? Shape{nb, co, ho, wo} : Shape{co, ho, wo};
  Tensor<T> out(os);
  for (std::size_t n = 0; n < nb; ++n) {
    T* dst = out.ptr() + n * co * cols;
    detail::gemm(false, false, co, cols, rows, wv.ptr(), col.data() + n * rows * cols, dst, false);
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t j = 0; j < cols; ++j) dst[c * cols + j] += bv[c];
  }
  const auto ix_ = x.id(), iw = w.id(), ib = b.id();
  return t.emit(Op::kConv2d, {x, w, b}, std::move(out),
                [=, col = std::move(col)](Tape<T>& tp, std::uint32_t o) {
                  const T* go = tp.out_grad(o).data();
                  const bool need_x = tp.requires_grad(ix_);
                  std::vector<T> dcol(need_x ? rows * cols : 0);
                  for (std::size_t n = 0; n < nb; ++n) {
                    const T* gon = go + n * co * cols;
                    if (tp.requires_grad(iw))
                      detail::gemm(false, true, co, rows, cols, gon, col.data() + n * rows * cols,
                                   tp.grad_mut(iw).data(), true);
                    if (tp.requires_grad(ib)) {
                      auto gb = tp.grad_mut(ib);
                      for (std::size_t c = 0; c < co; ++c)
                        for (std::size_t j = 0; j < cols; ++j) gb[c] += gon[c * cols + j];
                    }
                    if (!need_x) continue;
                    detail::gemm(true, false, rows, cols, co, tp.value(iw).ptr(), gon, dcol.data(), false);
                    T* gx = tp.grad_mut(ix_).data() + n * ci * hi * wi;
                    for (std::size_t c = 0; c < ci; ++c)
                      for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                          const T* row = dcol.data() + ((c * k + ky) * k + kx) * cols;
                          for (std::size_t oy = 0; oy < ho; ++oy) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                            static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(hi)) continue;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                              const auto ixx = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                               static_cast<std::ptrdiff_t>(pad);
                              if (ixx < 0 || ixx >= static_cast<std::ptrdiff_t>(wi)) continue;
                              gx[(c * hi + iy) * wi + ixx] += row[oy * wo + ox];
                            }
                          }
                        }
                  }
                });
}

// --- unary activations ----------------------------------------------------

namespace {

// f gives the forward value; df gives the derivative from (input, output).
template <class T, class F, class DF>
Var<T> unary(Op op, Var<T> x, F f, DF df) {
  require(x.valid(), std::string(op_name(op)) + ": invalid operand");
  Tape<T>& t = *x.tape();
  const Tensor<T>& xv = x.value();
  check_finite(op, xv);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const auto ix = x.id();
  return t.emit(op, {x}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(ix)) return;
    auto go = tp.out_grad(o);
    const auto& in = tp.value(ix);
    const auto& y = tp.value(o);
    auto gx = tp.grad_mut(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * df(in[i], y[i]);
  });
}

}  // namespace

template <class T>
Var<T> relu(Var<T> x) {
  return unary(
      Op::kRelu, x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <class T>
Var<T> elu(Var<T> x) {
  return unary(
      Op::kElu, x, [](T v) { return v > 0 ? v : std::expm1(v); }, [](T v, T y) { return v > 0 ? T(1) : y + T(1); });
}

template <class T>
Var<T> tanh(Var<T> x) {
  return unary(
      Op::kTanh, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  return unary(
      Op::kSigmoid, x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> scale(Var<T> x, T c) {
  return unary(
      Op::kScale, x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

// --- softmax / layernorm --------------------------------------------------

template <class T>
Var<T> softmax(Var<T> x, std::size_t axis, const std::vector<std::uint8_t>& mask) {
  require(x.valid(), "softmax: invalid operand");
  Tape<T>& t = *x.tape();
  const Tensor<T>& xv = x.value();
  require(axis < xv.rank(), "softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(xv.shape()));
  check_finite(Op::kSoftmax, xv);
  const AxisSplit sp = split_axis(xv.shape(), axis);
  if (!mask.empty()) {
    require(mask.size() == sp.n, "softmax: mask length " + std::to_string(mask.size()) + " vs axis extent " +
                                     std::to_string(sp.n));
    require(std::any_of(mask.begin(), mask.end(), [](auto m) { return m != 0; }), "softmax: mask removes every position");
  }
  auto keep = [&mask](std::size_t j) { return mask.empty() || mask[j] != 0; };
  Tensor<T> out(xv.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j)
        if (keep(j)) mx = std::max(mx, xv[base + j * sp.inner]);
      T sum = 0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const T e = keep(j) ? std::exp(xv[base + j * sp.inner] - mx) : T(0);
        out[base + j * sp.inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= sum;
    }
  const auto ix = x.id();
  return t.emit(Op::kSoftmax, {x}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(ix)) return;
    auto go = tp.out_grad(o);
    const auto& y = tp.value(o);
    auto gx = tp.grad_mut(ix);
    for (std::size_t ou = 0; ou < sp.outer; ++ou)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = ou * sp.n * sp.inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < sp.n; ++j) dot += y[base + j * sp.inner] * go[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t idx = base + j * sp.inner;
          gx[idx] += y[idx] * (go[idx] - dot);
        }
      }
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  Tape<T>& t = same_tape(Op::kLayerNorm, x, gain);
  require(bias.valid() && bias.tape() == &t, "layernorm: bias required on the same tape");
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.shape().back(), rows = xv.size() / n;
  if (gain.value().shape() != Shape{n}) shape_error(Op::kLayerNorm, xv.shape(), gain.value().shape());
  if (bias.value().shape() != Shape{n}) shape_error(Op::kLayerNorm, xv.shape(), bias.value().shape());
  check_finite(Op::kLayerNorm, xv);
  const auto& g = gain.value();
  const auto& b = bias.value();
  std::vector<T> xhat(xv.size());
  std::vector<T> inv(rows);
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.ptr() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(n);
    inv[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (row[j] - mu) * inv[r];
      out[r * n + j] = xhat[r * n + j] * g[j] + b[j];
    }
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.emit(Op::kLayerNorm, {x, gain, bias}, std::move(out),
                [=, xhat = std::move(xhat), inv = std::move(inv)](Tape<T>& tp, std::uint32_t o) {
                  auto go = tp.out_grad(o);
                  const auto& gv = tp.value(ig);
                  if (tp.requires_grad(ig)) {
                    auto gg = tp.grad_mut(ig);
                    for (std::size_t i = 0; i < go.size(); ++i) gg[i % n] += go[i] * xhat[i];
                  }
                  if (tp.requires_grad(ib)) {
                    auto gb = tp.grad_mut(ib);
                    for (std::size_t i = 0; i < go.size(); ++i) gb[i % n] += go[i];
                  }
                  if (!tp.requires_grad(ix)) return;
                  auto gx = tp.grad_mut(ix);
                  for (std::size_t r = 0; r < rows; ++r) {
                    T m1 = 0, m2 = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const T dxh = go[r * n + j] * gv[j];
                      m1 += dxh;
                      m2 += dxh * xhat[r * n + j];
                    }
                    m1 /= T(n);
                    m2 /= T(n);
                    for (std::size_t j = 0; j < n; ++j) {
                      const T dxh = go[r * n + j] * gv[j];
                      gx[r * n + j] += inv[r] * (dxh - m1 - xhat[r * n + j] * m2);
                    }
                  }
                });
}

// --- indexing / shape ops -------------------------------------------------

template <class T>
Var<T> embedding(const std::vector<std::size_t>& ids, Var<T> table) {
  require(table.valid(), "embedding: invalid table");
  require(!ids.empty(), "embedding: empty id sequence");
  Tape<T>& t = *table.tape();
  const Tensor<T>& tv = table.value();
  require(tv.rank() == 2, "embedding: table must be rank 2, got " + shape_str(tv.shape()));
  const std::size_t vocab = tv.dim(0), e = tv.dim(1);
  for (auto id : ids)
    require(id < vocab, "embedding: id " + std::to_string(id) + " >= vocabulary size " + std::to_string(vocab));
  check_finite(Op::kEmbedding, tv);
  Tensor<T> out({ids.size(), e});
  for (std::size_t r = 0; r < ids.size(); ++r) std::copy_n(tv.ptr() + ids[r] * e, e, out.ptr() + r * e);
  const auto it = table.id();
  return t.emit(Op::kEmbedding, {table}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(it)) return;
    auto go = tp.out_grad(o);
    auto gt = tp.grad_mut(it);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t j = 0; j < e; ++j) gt[ids[r] * e + j] += go[r * e + j];
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  Tape<T>& t = *parts.front().tape();
  Shape os = parts.front().shape();
  require(axis < os.size(), "concat: axis out of range for " + shape_str(os));
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.tape() == &t, "concat: inputs live on different tapes");
    const Shape& s = p.shape();
    if (s.size() != os.size()) shape_error(Op::kConcat, os, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != os[d]) shape_error(Op::kConcat, os, s);
    check_finite(Op::kConcat, p.value());
    total += s[axis];
  }
  os[axis] = total;
  const AxisSplit sp = split_axis(os, axis);
  std::vector<std::size_t> widths;  // per-part contiguous chunk per outer index
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * sp.inner);
  const std::size_t row = total * sp.inner;
  Tensor<T> out(os);
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const T* src = parts[pi].value().ptr();
    for (std::size_t o = 0; o < sp.outer; ++o) std::copy_n(src + o * widths[pi], widths[pi], out.ptr() + o * row + off);
    off += widths[pi];
  }
  std::vector<std::uint32_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return t.emit(Op::kConcat, parts, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    auto go = tp.out_grad(o);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      if (tp.requires_grad(ids[pi])) {
        auto g = tp.grad_mut(ids[pi]);
        for (std::size_t ou = 0; ou < sp.outer; ++ou)
          for (std::size_t j = 0; j < widths[pi]; ++j) g[ou * widths[pi] + j] += go[ou * row + offset + j];
      }
      offset += widths[pi];
    }
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  require(x.valid(), "reshape: invalid operand");
  Tape<T>& t = *x.tape();
  const Tensor<T>& xv = x.value();
  if (shape_size(shape) != xv.size()) shape_error(Op::kReshape, xv.shape(), shape);
  const auto ix = x.id();
  return t.emit(Op::kReshape, {x}, xv.reshaped(std::move(shape)), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(ix)) return;
    auto go = tp.out_grad(o);
    auto gx = tp.grad_mut(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  require(x.valid(), "mean: invalid operand");
  Tape<T>& t = *x.tape();
  const Tensor<T>& xv = x.value();
  check_finite(Op::kMean, xv);
  T s = 0;
  for (T v : xv.data()) s += v;
  const std::size_t n = xv.size();
  Tensor<T> out({1}, s / T(n));
  const auto ix = x.id();
  return t.emit(Op::kMean, {x}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(ix)) return;
    const T g = tp.out_grad(o)[0] / T(n);
    for (T& v : tp.grad_mut(ix)) v += g;
  });
}

template <class T>
Var<T> transpose(Var<T> x) {
  require(x.valid(), "transpose: invalid operand");
  Tape<T>& t = *x.tape();
  const Tensor<T>& xv = x.value();
  require(xv.rank() == 2, "transpose: expected rank 2, got " + shape_str(xv.shape()));
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  const auto ix = x.id();
  return t.emit(Op::kTranspose, {x}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(ix)) return;
    auto go = tp.out_grad(o);
    auto gx = tp.grad_mut(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[j * r + i];
  });
}

template <class T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t start, std::size_t length) {
  require(x.valid(), "slice: invalid operand");
  Tape<T>& t = *x.tape();
  const Tensor<T>& xv = x.value();
  require(axis < xv.rank(), "slice: axis out of range for " + shape_str(xv.shape()));
  require(length > 0 && start + length <= xv.dim(axis),
          "slice: [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
              shape_str(xv.shape()));
  const AxisSplit sp = split_axis(xv.shape(), axis);
  Shape os = xv.shape();
  os[axis] = length;
  Tensor<T> out(os);
  const std::size_t chunk = length * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.ptr() + o * sp.n * sp.inner + start * sp.inner, chunk, out.ptr() + o * chunk);
  const auto ix = x.id();
  return t.emit(Op::kSlice, {x}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(ix)) return;
    auto go = tp.out_grad(o);
    auto gx = tp.grad_mut(ix);
    for (std::size_t ou = 0; ou < sp.outer; ++ou)
      for (std::size_t j = 0; j < chunk; ++j) gx[ou * sp.n * sp.inner + start * sp.inner + j] += go[ou * chunk + j];
  });
}

// --- normalization, channel pass-through, loss ---------------------------

template <class T>
Var<T> rms_normalize(Var<T> x) {
  require(x.valid(), "rms_normalize: invalid operand");
  Tape<T>& t = *x.tape();
  const Tensor<T>& xv = x.value();
  check_finite(Op::kRmsNormalize, xv);
  const std::size_t n = xv.size();
  T ss = 0;
  for (T v : xv.data()) ss += v * v;
  if (ss == T(0)) throw DegenerateInput("rms_normalize: all-zero input");
  const T rms = std::sqrt(ss / T(n));
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] / rms;
  const auto ix = x.id();
  return t.emit(Op::kRmsNormalize, {x}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(ix)) return;
    auto go = tp.out_grad(o);
    const auto& y = tp.value(o);
    T dot = 0;
    for (std::size_t i = 0; i < n; ++i) dot += go[i] * y[i];
    dot /= T(n);
    auto gx = tp.grad_mut(ix);
    for (std::size_t i = 0; i < n; ++i) gx[i] += (go[i] - y[i] * dot) / rms;
  });
}

template <class T>
Var<T> substitute(Var<T> x, Tensor<T> replacement) {
  require(x.valid(), "substitute: invalid operand");
  Tape<T>& t = *x.tape();
  if (replacement.shape() != x.shape()) shape_error(Op::kSubstitute, x.shape(), replacement.shape());
  check_finite(Op::kSubstitute, replacement);
  const auto ix = x.id();
  return t.emit(Op::kSubstitute, {x}, std::move(replacement), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(ix)) return;
    auto go = tp.out_grad(o);
    auto gx = tp.grad_mut(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

template <class T>
Var<T> cross_entropy(Var<T> logits, std::size_t answer) {
  require(logits.valid(), "cross_entropy: invalid operand");
  Tape<T>& t = *logits.tape();
  const Tensor<T>& z = logits.value();
  require(answer < z.size(), "cross_entropy: answer id " + std::to_string(answer) + " out of range for " +
                                 std::to_string(z.size()) + " logits");
  check_finite(Op::kCrossEntropy, z);
  T mx = z[0];
  for (T v : z.data()) mx = std::max(mx, v);
  T s = 0;
  for (T v : z.data()) s += std::exp(v - mx);
  const T lse = mx + std::log(s);
  Tensor<T> out({1}, lse - z[answer]);
  const auto iz = logits.id();
  return t.emit(Op::kCrossEntropy, {logits}, std::move(out), [=](Tape<T>& tp, std::uint32_t o) {
    if (!tp.requires_grad(iz)) return;
    const T g = tp.out_grad(o)[0];
    const auto& zv = tp.value(iz);
    auto gz = tp.grad_mut(iz);
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += g * (std::exp(zv[i] - lse) - (i == answer ? T(1) : T(0)));
  });
}

// --- bidirectional LSTM ---------------------------------------------------

namespace {

template <class T>
struct LstmTrace {
  std::vector<std::size_t> order;  // positions in processing order
  std::vector<T> gates;            // [L, 4H] post-activation i, f, g, o
  std::vector<T> cell;             // [L, H]
  std::vector<T> h_prev;           // [L, H] hidden state entering each position
  std::vector<T> c_prev;           // [L, H]
};

template <class T>
LstmTrace<T> lstm_forward(const Tensor<T>& x, std::size_t length, std::size_t h, const Tensor<T>& wx,
                          const Tensor<T>& wh, const Tensor<T>& b, bool reverse, T* out, std::size_t out_stride,
                          std::size_t out_offset) {
  const std::size_t e = x.shape().back(), g4 = 4 * h;
  LstmTrace<T> tr;
  for (std::size_t s = 0; s < length; ++s) tr.order.push_back(reverse ? length - 1 - s : s);
  std::vector<T> xw(length * g4);
  detail::gemm(false, false, length, g4, e, x.ptr(), wx.ptr(), xw.data(), false);
  tr.gates.assign(length * g4, T(0));
  tr.cell.assign(length * h, T(0));
  tr.h_prev.assign(length * h, T(0));
  tr.c_prev.assign(length * h, T(0));
  std::vector<T> hcur(h, T(0)), ccur(h, T(0)), z(g4);
  for (std::size_t pos : tr.order) {
    std::copy_n(hcur.data(), h, tr.h_prev.data() + pos * h);
    std::copy_n(ccur.data(), h, tr.c_prev.data() + pos * h);
    for (std::size_t j = 0; j < g4; ++j) z[j] = xw[pos * g4 + j] + b[j];
    detail::gemm(false, false, 1, g4, h, hcur.data(), wh.ptr(), z.data(), true);
    T* gt = tr.gates.data() + pos * g4;
    for (std::size_t j = 0; j < h; ++j) {
      gt[j] = sigmoid_scalar(z[j]);
      gt[h + j] = sigmoid_scalar(z[h + j]);
      gt[2 * h + j] = std::tanh(z[2 * h + j]);
      gt[3 * h + j] = sigmoid_scalar(z[3 * h + j]);
      ccur[j] = gt[h + j] * ccur[j] + gt[j] * gt[2 * h + j];
      hcur[j] = gt[3 * h + j] * std::tanh(ccur[j]);
      tr.cell[pos * h + j] = ccur[j];
      out[pos * out_stride + out_offset + j] = hcur[j];
    }
  }
  return tr;
}

template <class T>
void lstm_backward(Tape<T>& tp, const LstmTrace<T>& tr, std::uint32_t ix, const LstmWeights<T>& w, std::size_t h,
                   std::span<const T> go, std::size_t out_stride, std::size_t out_offset) {
  const std::size_t length = tr.order.size();
  const std::size_t g4 = 4 * h;
  const auto& xv = tp.value(ix);
  const std::size_t e = xv.shape().back();
  const auto& whv = tp.value(w.wh.id());
  std::vector<T> dz(length * g4, T(0));
  std::vector<T> dh_next(h, T(0)), dc_next(h, T(0));
  for (auto it = tr.order.rbegin(); it != tr.order.rend(); ++it) {
    const std::size_t pos = *it;
    const T* gt = tr.gates.data() + pos * g4;
    T* d = dz.data() + pos * g4;
    for (std::size_t j = 0; j < h; ++j) {
      const T ig = gt[j], fg = gt[h + j], gg = gt[2 * h + j], og = gt[3 * h + j];
      const T tc = std::tanh(tr.cell[pos * h + j]);
      const T dh = go[pos * out_stride + out_offset + j] + dh_next[j];
      const T dc = dc_next[j] + dh * og * (T(1) - tc * tc);
      d[j] = dc * gg * ig * (T(1) - ig);
      d[h + j] = dc * tr.c_prev[pos * h + j] * fg * (T(1) - fg);
      d[2 * h + j] = dc * ig * (T(1) - gg * gg);
      d[3 * h + j] = dh * tc * og * (T(1) - og);
      dc_next[j] = dc * fg;
    }
    detail::gemm(false, true, 1, h, g4, d, whv.ptr(), dh_next.data(), false);
  }
  if (tp.requires_grad(w.wh.id()))
    detail::gemm(true, false, h, g4, length, tr.h_prev.data(), dz.data(), tp.grad_mut(w.wh.id()).data(), true);
  if (tp.requires_grad(w.wx.id()))
    detail::gemm(true, false, e, g4, length, xv.ptr(), dz.data(), tp.grad_mut(w.wx.id()).data(), true);
  if (tp.requires_grad(w.b.id())) {
    auto gb = tp.grad_mut(w.b.id());
    for (std::size_t r = 0; r < length; ++r)
      for (std::size_t j = 0; j < g4; ++j) gb[j] += dz[r * g4 + j];
  }
  if (tp.requires_grad(ix))
    detail::gemm(false, true, length, e, g4, dz.data(), tp.value(w.wx.id()).ptr(), tp.grad_mut(ix).data(), true);
}

}  // namespace

template <class T>
Var<T> bilstm(Var<T> x, std::size_t length, const LstmWeights<T>& fwd, const LstmWeights<T>& bwd) {
  require(x.valid(), "bilstm: invalid operand");
  Tape<T>& t = *x.tape();
  const Tensor<T>& xv = x.value();
  require(xv.rank() == 2, "bilstm: expected [L, E], got " + shape_str(xv.shape()));
  const std::size_t l = xv.dim(0), e = xv.dim(1);
  require(length >= 1 && length <= l, "bilstm: length " + std::to_string(length) + " outside [1, " +
                                          std::to_string(l) + "]");
  const std::size_t h = fwd.wh.value().dim(0);
  for (const auto* w : {&fwd, &bwd}) {
    require(w->wx.tape() == &t && w->wh.tape() == &t && w->b.tape() == &t, "bilstm: weights on a different tape");
    if (w->wx.shape() != Shape{e, 4 * h}) shape_error(Op::kBiLstm, xv.shape(), w->wx.shape());
    if (w->wh.shape() != Shape{h, 4 * h}) shape_error(Op::kBiLstm, Shape{h, 4 * h}, w->wh.shape());
    if (w->b.shape() != Shape{4 * h}) shape_error(Op::kBiLstm, Shape{4 * h}, w->b.shape());
    check_finite(Op::kBiLstm, w->wx.value());
    check_finite(Op::kBiLstm, w->wh.value());
    check_finite(Op::kBiLstm, w->b.value());
  }
  check_finite(Op::kBiLstm, xv);
  Tensor<T> out({l, 2 * h});
  auto tf = lstm_forward(xv, length, h, fwd.wx.value(), fwd.wh.value(), fwd.b.value(), false, out.ptr(), 2 * h, 0);
  auto tb = lstm_forward(xv, length, h, bwd.wx.value(), bwd.wh.value(), bwd.b.value(), true, out.ptr(), 2 * h, h);
  const auto ix = x.id();
  return t.emit(Op::kBiLstm, {x, fwd.wx, fwd.wh, fwd.b, bwd.wx, bwd.wh, bwd.b}, std::move(out),
                [=, tf = std::move(tf), tb = std::move(tb)](Tape<T>& tp, std::uint32_t o) {
                  auto go = tp.out_grad(o);
                  lstm_backward(tp, tf, ix, fwd, h, go, 2 * h, 0);
                  lstm_backward(tp, tb, ix, bwd, h, go, 2 * h, h);
                });
}

// --- explicit instantiation -----------------------------------------------

#define MUSC_INSTANTIATE(T)                                                                      \
  template class Tape<T>;                                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                           \
  template Var<T> sub(Var<T>, Var<T>);                                                           \
  template Var<T> mul(Var<T>, Var<T>);                                                           \
  template Var<T> matmul(Var<T>, Var<T>);                                                        \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t);                                   \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                                 \
  template Var<T> relu(Var<T>);                                                                  \
  template Var<T> elu(Var<T>);                                                                   \
  template Var<T> tanh(Var<T>);                                                                  \
  template Var<T> sigmoid(Var<T>);                                                               \
  template Var<T> softmax(Var<T>, std::size_t, const std::vector<std::uint8_t>&);                \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                         \
  template Var<T> embedding(const std::vector<std::size_t>&, Var<T>);                            \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                               \
  template Var<T> reshape(Var<T>, Shape);                                                        \
  template Var<T> mean(Var<T>);                                                                  \
  template Var<T> transpose(Var<T>);                                                             \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);                          \
  template Var<T> scale(Var<T>, T);                                                              \
  template Var<T> rms_normalize(Var<T>);                                                         \
  template Var<T> substitute(Var<T>, Tensor<T>);                                                 \
  template Var<T> cross_entropy(Var<T>, std::size_t);                                            \
  template Var<T> bilstm(Var<T>, std::size_t, const LstmWeights<T>&, const LstmWeights<T>&);

MUSC_INSTANTIATE(float)
MUSC_INSTANTIATE(double)

#undef MUSC_INSTANTIATE

}  // namespace musc::ad
