#pragma once

// Central finite-difference gradient checks (64-bit only).

#include <algorithm>
#include <cmath>
#include <functional>

#include "musc/autodiff.hpp"
#include "musc/rng.hpp"

namespace musc {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

inline double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

// Graph builder: given a tape and the probe leaf, returns a scalar Var.
using ProbeGraph = std::function<ad::Var<double>(ad::Tape<double>&, ad::Var<double>)>;

// Compares d(graph)/d(probe) against (f(x+eps) - f(x-eps)) / 2eps on
// `n_probes` coordinates sampled without replacement (all if fewer).
inline GradCheckResult grad_check(const ProbeGraph& graph, const Tensor<double>& probe, double eps,
                                  std::size_t n_probes, Rng& rng) {
  require(eps >= 1e-7 && eps <= 1e-3, "grad_check: eps must lie in [1e-7, 1e-3]");
  std::vector<double> analytic;
  {
    ad::Tape<double> tape;
    auto x = tape.variable(probe);
    auto loss = graph(tape, x);
    tape.backward(loss);
    analytic = tape.grad(x);
  }
  auto eval = [&](const Tensor<double>& p) {
    ad::Tape<double> tape(false);
    auto x = tape.variable(p);
    const double v = graph(tape, x).value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite intermediate");
    return v;
  };
  std::vector<std::size_t> coords(probe.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  rng.shuffle(coords.begin(), coords.end());
  coords.resize(std::min(n_probes, coords.size()));
  GradCheckResult res;
  for (std::size_t c : coords) {
    Tensor<double> plus = probe, minus = probe;
    plus[c] += eps;
    minus[c] -= eps;
    const double numeric = (eval(plus) - eval(minus)) / (2 * eps);
    res.max_rel_error = std::max(res.max_rel_error, grad_rel_error(analytic[c], numeric));
    ++res.probes;
  }
  return res;
}

// Same check against parameters held in a store; `loss` builds the full graph.
using StoreGraph = std::function<ad::Var<double>(ad::Tape<double>&)>;

inline GradCheckResult grad_check_params(ParamStore<double>& store, const StoreGraph& loss, double eps,
                                         std::size_t probes_per_param, Rng& rng) {
  require(eps >= 1e-7 && eps <= 1e-3, "grad_check: eps must lie in [1e-7, 1e-3]");
  GradBuffer<double> grads(store);
  {
    ad::Tape<double> tape;
    auto l = loss(tape);
    tape.backward(l);
    tape.accumulate_param_grads(grads);
  }
  auto eval = [&] {
    ad::Tape<double> tape(false);
    const double v = loss(tape).value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite intermediate");
    return v;
  };
  GradCheckResult res;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.frozen(i)) continue;
    auto& p = store.tensor(i);
    for (std::size_t k = 0; k < std::min(probes_per_param, p.size()); ++k) {
      const std::size_t c = rng.below(p.size());
      const double orig = p[c];
      p[c] = orig + eps;
      const double fp = eval();
      p[c] = orig - eps;
      const double fm = eval();
      p[c] = orig;
      res.max_rel_error = std::max(res.max_rel_error, grad_rel_error(grads[i][c], (fp - fm) / (2 * eps)));
      ++res.probes;
    }
  }
  return res;
}

}  // namespace musc
