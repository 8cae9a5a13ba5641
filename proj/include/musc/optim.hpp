#pragma once

#include <cstdint>
#include <vector>

#include "musc/params.hpp"

namespace musc {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Moments are kept in double regardless of T.
template <class T>
class Adam {
 public:
  Adam(const ParamStore<T>& store, AdamConfig cfg);

  // Applies one update to every non-frozen parameter; increments t.
  void step(ParamStore<T>& store, const GradBuffer<T>& grads);

  std::uint64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace musc
