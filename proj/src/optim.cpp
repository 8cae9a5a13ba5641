#include "musc/optim.hpp"

#include <cmath>
#include <string>

namespace musc {

template <class T>
Adam<T>::Adam(const ParamStore<T>& store, AdamConfig cfg) : cfg_(cfg) {
  require(cfg.lr > 0, "Adam: learning rate must be positive");
  require(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1, "Adam: betas must lie in [0, 1)");
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_.emplace_back(store.tensor(i).size(), 0.0);
    v_.emplace_back(store.tensor(i).size(), 0.0);
  }
}

template <class T>
void Adam<T>::step(ParamStore<T>& store, const GradBuffer<T>& grads) {
  require(store.size() == m_.size() && grads.size() == m_.size(),
          "Adam: parameter/gradient/moment count mismatch (" + std::to_string(store.size()) + ", " +
              std::to_string(grads.size()) + ", " + std::to_string(m_.size()) + ")");
  for (std::size_t i = 0; i < m_.size(); ++i)
    require(store.tensor(i).size() == m_[i].size() && grads[i].size() == m_[i].size(),
            "Adam: shape mismatch for parameter '" + store.name(i) + "'");
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_));
  const double c2 = 1.0 - std::pow(b2, double(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (store.frozen(i)) continue;
    auto p = store.tensor(i).data();
    const auto& g = grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = double(g[j]);
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] = T(double(p[j]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace musc
