#ifndef MTNET_OPTIMIZER_HPP_
#define MTNET_OPTIMIZER_HPP_

#include <cmath>

#include "mtnet/networks.hpp"

namespace mtnet {

// Nesterov-accelerated Adam with the standard 0.96^(t/250) momentum
// schedule. State rows follow the parameter declaration order.
template <class T>
struct NAdam {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0;  // elementwise clip, 0 disables

  std::vector<std::vector<T>> m, v;
  long t = 0;
  double mu_product = 1.0;

  explicit NAdam(const NamedParams<T>& params, double lr_in = 2e-4)
      : lr(lr_in) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& [name, p] : params) {
      m.emplace_back(p->data.size(), T(0));
      v.emplace_back(p->data.size(), T(0));
    }
  }

  double momentum_at(long step) const {
    return beta1 * (1.0 - 0.5 * std::pow(0.96, double(step) / 250.0));
  }

  void step(const NamedParams<T>& params) {
    if (params.size() != m.size())
      throw ConfigError("optimizer state does not match parameter list");
    ++t;
    const double mu_t = momentum_at(t);
    const double mu_next = momentum_at(t + 1);
    const double mu_prod_t = mu_product * mu_t;
    const double mu_prod_next = mu_prod_t * mu_next;
    const double v_corr = 1.0 - std::pow(beta2, double(t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      const auto& [name, p] = params[pi];
      if (p->grad.size() != p->data.size())
        throw ConfigError("parameter " + name + " has no gradient");
      auto& mp = m[pi];
      auto& vp = v[pi];
      for (std::size_t i = 0; i < p->data.size(); ++i) {
        double g = double(p->grad[i]);
        if (!std::isfinite(g))
          throw NumericError("non-finite gradient in parameter " + name);
        if (grad_clip > 0) g = std::clamp(g, -grad_clip, grad_clip);
        const double mi = beta1 * double(mp[i]) + (1.0 - beta1) * g;
        const double vi = beta2 * double(vp[i]) + (1.0 - beta2) * g * g;
        mp[i] = T(mi);
        vp[i] = T(vi);
        const double m_hat =
            mu_next * mi / (1.0 - mu_prod_next) + (1.0 - mu_t) * g / (1.0 - mu_prod_t);
        const double v_hat = vi / v_corr;
        p->data[i] =
            T(double(p->data[i]) - lr * m_hat / (std::sqrt(v_hat) + eps));
      }
    }
    mu_product = mu_prod_t;
  }
};

template <class T>
void zero_grads(const NamedParams<T>& params) {
  for (const auto& [name, p] : params) {
    p->ensure_grad();
    p->zero_grad();
  }
}

}  // namespace mtnet

#endif  // MTNET_OPTIMIZER_HPP_
