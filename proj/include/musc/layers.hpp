#pragma once

// Parameter registration helpers and a per-tape parameter binder.

#include <cmath>
#include <string>
#include <vector>

#include "musc/autodiff.hpp"
#include "musc/params.hpp"
#include "musc/rng.hpp"

namespace musc {

// Binds store parameters to leaves of one tape, one leaf per parameter.
template <class T>
class Binder {
 public:
  Binder(ad::Tape<T>& tape, const ParamStore<T>& store) : tape_(tape), store_(store), cache_(store.size()) {}

  ad::Var<T> operator()(std::size_t index) {
    auto& v = cache_.at(index);
    if (!v.valid()) v = tape_.parameter(store_, index);
    return v;
  }
  ad::Tape<T>& tape() { return tape_; }

 private:
  ad::Tape<T>& tape_;
  const ParamStore<T>& store_;
  std::vector<ad::Var<T>> cache_;
};

struct DenseIdx {
  std::size_t w = 0, b = 0;
  std::size_t n_in = 0, n_out = 0;
};

struct ConvIdx {
  std::size_t w = 0, b = 0;
  std::size_t c_in = 0, c_out = 0, k = 3;
};

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = T(rng.uniform(-bound, bound));
  return t;
}

template <class T>
DenseIdx add_dense(ParamStore<T>& s, const std::string& name, std::size_t n_in, std::size_t n_out,
                   const std::string& group, Rng& rng) {
  DenseIdx d;
  d.n_in = n_in;
  d.n_out = n_out;
  d.w = s.add(name + ".w", uniform_tensor<T>({n_in, n_out}, std::sqrt(6.0 / double(n_in + n_out)), rng), group);
  d.b = s.add(name + ".b", Tensor<T>({n_out}), group);
  return d;
}

template <class T>
ConvIdx add_conv(ParamStore<T>& s, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t k,
                 const std::string& group, Rng& rng) {
  ConvIdx c;
  c.c_in = c_in;
  c.c_out = c_out;
  c.k = k;
  c.w = s.add(name + ".w", uniform_tensor<T>({c_out, c_in, k, k}, std::sqrt(6.0 / double(c_in * k * k)), rng), group);
  c.b = s.add(name + ".b", Tensor<T>({c_out}), group);
  return c;
}

template <class T>
ad::Var<T> apply(Binder<T>& p, const DenseIdx& d, ad::Var<T> x) {
  return ad::dense(x, p(d.w), p(d.b));
}

template <class T>
ad::Var<T> apply(Binder<T>& p, const ConvIdx& c, ad::Var<T> x, std::size_t stride = 1) {
  return ad::conv2d(x, p(c.w), p(c.b), stride);
}

}  // namespace musc
