#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape owns every node created while building one forward graph. Primitive
// applications append a Record holding the op id, input/output node ids and a
// backward closure with whatever activations it saved. backward() replays the
// records in reverse. Nodes that do not require gradients never get records,
// so evaluation with gradients disabled costs only the forward arithmetic.

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "musc/params.hpp"
#include "musc/tensor.hpp"

namespace musc::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kConv2d,
  kDense,
  kRelu,
  kElu,
  kTanh,
  kSigmoid,
  kSoftmax,
  kLayerNorm,
  kEmbedding,
  kConcat,
  kReshape,
  kMean,
  kBiLstm,
  kTranspose,
  kSlice,
  kScale,
  kRmsNormalize,
  kSubstitute,
  kCrossEntropy,
};

const char* op_name(Op op);

template <class T>
class Tape;

// Lightweight handle to a node on a Tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

template <class T>
class Tape {
 public:
  // Called with the tape and the id of the op's output node.
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  struct Record {
    Op op;
    std::vector<std::uint32_t> inputs;
    std::uint32_t output;
    BackwardFn backward;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value);
  // Owned leaf that receives a gradient.
  Var<T> variable(Tensor<T> value);
  // Leaf aliasing a stored parameter. Frozen parameters behave as constants.
  Var<T> parameter(const ParamStore<T>& store, std::size_t index);

  const Tensor<T>& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<Record>& records() const { return records_; }

  // Seeds d(loss)/d(loss) = 1 and propagates. Loss must hold one element.
  void backward(Var<T> loss);

  // Gradient after backward(); zeros for nodes off every path to the loss.
  std::vector<T> grad(Var<T> v) const;

  // Adds the gradients of all parameter leaves into `out` (slot = store index).
  void accumulate_param_grads(GradBuffer<T>& out) const;

  // --- primitive implementation API ---
  Var<T> emit(Op op, std::initializer_list<Var<T>> inputs, Tensor<T> out, BackwardFn fn);
  Var<T> emit(Op op, const std::vector<Var<T>>& inputs, Tensor<T> out, BackwardFn fn);
  // Mutable gradient of a node, zero-allocated on first use.
  std::span<T> grad_mut(std::uint32_t id);
  // Gradient flowing into an op output during backward.
  std::span<const T> out_grad(std::uint32_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    std::vector<T> grad;
    bool requires_grad = false;
    int param_index = -1;
  };

  Var<T> push_leaf(Node node);

  std::deque<Node> nodes_;
  std::vector<Record> records_;
  bool grad_enabled_;
};

// --- primitives -----------------------------------------------------------
// Shapes follow row-major conventions. Binary elementwise ops accept a second
// operand whose shape is a trailing suffix of the first (broadcast over the
// leading axes).

template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> matmul(Var<T> a, Var<T> b);
// x [N,C,H,W] or [C,H,W]; w [Co,Ci,k,k]; b [Co]; same padding (k odd).
template <class T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride = 1);
// x [..., n_in]; w [n_in, n_out]; b [n_out] or invalid Var for no bias.
template <class T> Var<T> dense(Var<T> x, Var<T> w, Var<T> b);
template <class T> Var<T> relu(Var<T> x);
template <class T> Var<T> elu(Var<T> x);  // alpha = 1
template <class T> Var<T> tanh(Var<T> x);
template <class T> Var<T> sigmoid(Var<T> x);
// Softmax along `axis`. Optional mask (length shape[axis], nonzero = keep)
// gives masked positions exactly zero weight.
template <class T> Var<T> softmax(Var<T> x, std::size_t axis, const std::vector<std::uint8_t>& mask = {});
// Normalizes over the last axis then applies gain/bias ([n] each).
template <class T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));
template <class T> Var<T> embedding(const std::vector<std::size_t>& ids, Var<T> table);
template <class T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <class T> Var<T> reshape(Var<T> x, Shape shape);
template <class T> Var<T> mean(Var<T> x);
template <class T> Var<T> transpose(Var<T> x);
template <class T> Var<T> slice(Var<T> x, std::size_t axis, std::size_t start, std::size_t length);
template <class T> Var<T> scale(Var<T> x, T c);
// x / sqrt(mean(x^2)). All-zero input raises DegenerateInput.
template <class T> Var<T> rms_normalize(Var<T> x);
// Forward value is `replacement`; the Jacobian w.r.t. x is the identity.
template <class T> Var<T> substitute(Var<T> x, Tensor<T> replacement);
// -log softmax(logits)[answer]; logits flattened.
template <class T> Var<T> cross_entropy(Var<T> logits, std::size_t answer);

template <class T>
struct LstmWeights {
  Var<T> wx;  // [E, 4H], gate blocks ordered i, f, g, o
  Var<T> wh;  // [H, 4H]
  Var<T> b;   // [4H]
};

// One bidirectional LSTM layer over x [L, E]. Only the first `length` rows
// are read; output is [L, 2H] with forward states in columns [0, H) and
// backward states in [H, 2H). Rows at and beyond `length` are zero.
template <class T>
Var<T> bilstm(Var<T> x, std::size_t length, const LstmWeights<T>& fwd, const LstmWeights<T>& bwd);

}  // namespace musc::ad
