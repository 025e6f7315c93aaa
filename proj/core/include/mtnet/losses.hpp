#ifndef MTNET_LOSSES_HPP_
#define MTNET_LOSSES_HPP_

#include <cmath>

#include "mtnet/ops.hpp"

namespace mtnet {

// Weights of the composite translation loss plus the sign convention of its
// PSNR term. With psnr_sign = -1 (default) better fidelity lowers the loss;
// +1 selects the literal printed form. psnr_squared_cmax switches the PSNR
// numerator from c_max (printed form, default) to the conventional c_max^2.
struct LossWeights {
  double w1 = 0.15;
  double w2 = 0.15;
  double w3 = 0.60;
  double w4 = 0.20;
  double psnr_sign = -1.0;
  double psnr_cap_db = 100.0;
  bool psnr_squared_cmax = false;

  void validate() const {
    for (double w : {w1, w2, w3, w4})
      if (w < 0.0 || w > 1.0)
        throw ConfigError("loss weights must lie in [0,1]");
    if (psnr_sign != 1.0 && psnr_sign != -1.0)
      throw ConfigError("psnr_sign must be +1 or -1");
  }
};

struct SSIMConstants {
  double c_max = 1.0;

  explicit SSIMConstants(double c_max_in = 1.0) : c_max(c_max_in) {
    if (c_max <= 0) throw DataError("SSIM c_max must be positive");
  }
  double c1() const { return 0.01 * c_max * 0.01 * c_max; }
  double c2() const { return 0.03 * c_max * 0.03 * c_max; }
};

// All seven scalars of one training step.
struct LossReport {
  double mse = 0, mae = 0, ssim = 0, psnr = 0;
  double l_trans = 0, l_class = 0, l_global = 0;
};

// ---------------------------------------------------------------------------
// Differentiable losses (tape scalars)
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> mse_loss(const TensorPtr<T>& x, const TensorPtr<T>& y) {
  auto d = sub(x, y);
  return mean_all(mul(d, d));
}

template <class T>
TensorPtr<T> mae_loss(const TensorPtr<T>& x, const TensorPtr<T>& y) {
  return mean_all(abs_t(sub(x, y)));
}

// Whole-volume SSIM from global means, variances and covariance.
template <class T>
TensorPtr<T> ssim_global_loss(const TensorPtr<T>& x, const TensorPtr<T>& y,
                              const SSIMConstants& c) {
  detail::require_same_shape(x, y, "ssim_global");
  const T n = T(x->data.size());
  auto mu_x = mean_all(x);
  auto mu_y = mean_all(y);
  auto xc = sub_bcast(x, mu_x);
  auto yc = sub_bcast(y, mu_y);
  auto var_x = scale(sum_all(mul(xc, xc)), T(1) / n);
  auto var_y = scale(sum_all(mul(yc, yc)), T(1) / n);
  auto cov = scale(sum_all(mul(xc, yc)), T(1) / n);
  auto num = mul(add_const(scale(mul(mu_x, mu_y), T(2)), T(c.c1())),
                 add_const(scale(cov, T(2)), T(c.c2())));
  auto den = mul(add_const(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), T(c.c1())),
                 add_const(add(var_x, var_y), T(c.c2())));
  return div(num, den);
}

// 10*log10(c_max / MSE), clamped into (0, cap] so it stays finite for
// identical volumes when used as a loss term.
template <class T>
TensorPtr<T> psnr_loss(const TensorPtr<T>& x, const TensorPtr<T>& y,
                       const SSIMConstants& c, const LossWeights& w) {
  const double num = w.psnr_squared_cmax ? c.c_max * c.c_max : c.c_max;
  auto m = mse_loss(x, y);
  // below this MSE the PSNR would exceed the cap
  const T floor = T(num * std::pow(10.0, -w.psnr_cap_db / 10.0));
  auto p = scale(add_const(scale(log10_t(clamp_min(m, floor)), T(-1)),
                           T(std::log10(num))),
                 T(10));
  return clamp_max(p, T(w.psnr_cap_db));
}

template <class T>
struct TranslationLoss {
  TensorPtr<T> mse, mae, ssim, psnr, total;
};

template <class T>
TranslationLoss<T> translation_loss(const TensorPtr<T>& x,
                                    const TensorPtr<T>& y,
                                    const LossWeights& w,
                                    const SSIMConstants& c) {
  w.validate();
  TranslationLoss<T> parts;
  parts.mse = mse_loss(x, y);
  parts.mae = mae_loss(x, y);
  parts.ssim = ssim_global_loss(x, y, c);
  parts.psnr = psnr_loss(x, y, c, w);
  auto fidelity =
      add(add(scale(parts.mse, T(w.w1)), scale(parts.mae, T(w.w2))),
          scale(add_const(scale(parts.ssim, T(-1)), T(1)), T(w.w3)));
  parts.total = add(fidelity, scale(parts.psnr, T(w.psnr_sign * w.w4)));
  return parts;
}

// Categorical cross-entropy with the base-10 logarithm. `labels` must be
// exact one-hot rows; probabilities are clamped below at 1e-12.
template <class T>
TensorPtr<T> classification_loss(const TensorPtr<T>& probs,
                                 const TensorPtr<T>& labels) {
  detail::require_same_shape(probs, labels, "classification_loss");
  require_shape(probs->shape.size() == 2, "classification_loss expects [N,C]");
  const int N = probs->shape[0], C = probs->shape[1];
  for (int n = 0; n < N; ++n) {
    T row_sum = 0;
    int ones = 0;
    for (int c = 0; c < C; ++c) {
      const T p = probs->data[n * C + c];
      const T l = labels->data[n * C + c];
      if (p < T(0))
        throw DataError("classification_loss: negative probability in row " +
                        std::to_string(n));
      if (l != T(0) && l != T(1))
        throw DataError("classification_loss: labels must be one-hot");
      ones += (l == T(1));
      row_sum += p;
    }
    if (ones != 1)
      throw DataError("classification_loss: row " + std::to_string(n) +
                      " is not one-hot");
    if (std::abs(double(row_sum) - 1.0) > 1e-5)
      throw DataError("classification_loss: probabilities of row " +
                      std::to_string(n) + " do not sum to 1");
  }
  auto logp = log10_t(clamp_min(probs, T(1e-12)));
  return scale(sum_all(mul(labels, logp)), T(-1) / T(N));
}

template <class T>
TensorPtr<T> global_loss(const TensorPtr<T>& l_trans,
                         const TensorPtr<T>& l_class) {
  if (!std::isfinite(double(l_trans->data[0])))
    throw NumericError("global_loss: translation loss is not finite");
  if (!std::isfinite(double(l_class->data[0])))
    throw NumericError("global_loss: classification loss is not finite");
  return add(l_trans, l_class);
}

}  // namespace mtnet

#endif  // MTNET_LOSSES_HPP_
