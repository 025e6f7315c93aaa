#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mtnet/losses.hpp"
#include "mtnet/metrics.hpp"

using namespace mtnet;

namespace {

template <class T>
TensorPtr<T> urand(const Shape& s, std::mt19937_64& rng, T lo, T hi,
                   bool rg = false) {
  std::uniform_real_distribution<double> d{double(lo), double(hi)};
  std::vector<T> v(std::size_t(numel(s)));
  for (auto& x : v) x = T(d(rng));
  return make_tensor<T>(s, std::move(v), rg);
}

}  // namespace

TEST_CASE("ssim_global(x,x) = 1 for any non-degenerate volume") {
  std::mt19937_64 rng(3);
  auto x = urand<double>({1, 1, 4, 4, 4}, rng, 0.5, 2.0);
  SSIMConstants c{2.0};
  CHECK(ssim_global_loss(x, x, c)->data[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim hand oracle: constant 0 vs constant 1 gives c1/(1+c1)") {
  auto x = full<double>({8}, 0.0);
  auto y = full<double>({8}, 1.0);
  SSIMConstants c{1.0};
  const double expected = 1e-4 / (1.0 + 1e-4);  // = 9.999e-5
  CHECK(ssim_global_loss(x, y, c)->data[0] ==
        doctest::Approx(expected).epsilon(1e-10));
  CHECK(metrics::ssim_global<double>(x->data, y->data, 1.0) ==
        doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("tape SSIM agrees with the scalar metrics twin") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 5; ++t) {
    auto x = urand<double>({1, 1, 5, 4, 3}, rng, 0.0, 3.0);
    auto y = urand<double>({1, 1, 5, 4, 3}, rng, 0.0, 3.0);
    SSIMConstants c{3.0};
    CHECK(ssim_global_loss(x, y, c)->data[0] ==
          doctest::Approx(metrics::ssim_global<double>(x->data, y->data, 3.0))
              .epsilon(1e-10));
  }
}

TEST_CASE("SSIM is invariant under joint rescaling of data and c_max") {
  std::mt19937_64 rng(13);
  auto x = urand<double>({64}, rng, 0.0, 1.0);
  auto y = urand<double>({64}, rng, 0.0, 1.0);
  const double base = metrics::ssim_global<double>(x->data, y->data, 1.0);
  std::vector<double> xs(x->data), ys(y->data);
  for (auto& v : xs) v *= 50.0;
  for (auto& v : ys) v *= 50.0;
  CHECK(metrics::ssim_global<double>(xs, ys, 50.0) ==
        doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("mse/mae are zero iff the volumes are equal") {
  std::mt19937_64 rng(5);
  auto x = urand<double>({32}, rng, -1.0, 1.0);
  CHECK(mse_loss(x, x)->data[0] == 0.0);
  CHECK(mae_loss(x, x)->data[0] == 0.0);
  auto y = make_tensor<double>(x->shape, x->data);
  y->data[7] += 1e-3;
  CHECK(mse_loss(x, y)->data[0] > 0.0);
  CHECK(mae_loss(x, y)->data[0] > 0.0);
}

TEST_CASE("psnr hand oracle: mse 1e-4 at c_max 1 gives 40 dB") {
  auto x = full<double>({100}, 0.0);
  auto y = full<double>({100}, 0.01);  // mse = 1e-4
  SSIMConstants c{1.0};
  LossWeights w;
  CHECK(psnr_loss(x, y, c, w)->data[0] == doctest::Approx(40.0).epsilon(1e-9));
  CHECK(metrics::psnr<double>(x->data, y->data, 1.0) ==
        doctest::Approx(40.0).epsilon(1e-9));
}

TEST_CASE("psnr loss saturates at the cap for identical volumes") {
  auto x = full<double>({10}, 0.5);
  SSIMConstants c{1.0};
  LossWeights w;
  CHECK(psnr_loss(x, x, c, w)->data[0] == doctest::Approx(w.psnr_cap_db));
  // the scalar twin reports the exact +inf sentinel instead
  CHECK(std::isinf(metrics::psnr<double>(x->data, x->data, 1.0)));
}

TEST_CASE("psnr squared-c_max switch adds 10*log10(c_max)") {
  auto x = full<double>({100}, 0.0);
  auto y = full<double>({100}, 0.1);
  SSIMConstants c{4.0};
  LossWeights w;
  const double plain = psnr_loss(x, y, c, w)->data[0];
  w.psnr_squared_cmax = true;
  CHECK(psnr_loss(x, y, c, w)->data[0] ==
        doctest::Approx(plain + 10.0 * std::log10(4.0)).epsilon(1e-9));
}

TEST_CASE("translation_loss with weights (1,0,0,0) equals the mse loss") {
  std::mt19937_64 rng(11);
  auto x = urand<double>({1, 1, 4, 4, 4}, rng, 0.0, 2.0);
  auto y = urand<double>({1, 1, 4, 4, 4}, rng, 0.0, 2.0);
  LossWeights w;
  w.w1 = 1.0;
  w.w2 = w.w3 = w.w4 = 0.0;
  SSIMConstants c{2.0};
  auto parts = translation_loss(x, y, w, c);
  CHECK(parts.total->data[0] ==
        doctest::Approx(mse_loss(x, y)->data[0]).epsilon(1e-12));
}

TEST_CASE("translation_loss reproduces its own weighted sum") {
  std::mt19937_64 rng(17);
  auto x = urand<double>({1, 1, 4, 4, 4}, rng, 0.0, 2.0);
  auto y = urand<double>({1, 1, 4, 4, 4}, rng, 0.0, 2.0);
  LossWeights w;  // defaults 0.15/0.15/0.60/0.20, sign -1
  SSIMConstants c{2.0};
  auto parts = translation_loss(x, y, w, c);
  const double expected = w.w1 * parts.mse->data[0] +
                          w.w2 * parts.mae->data[0] +
                          w.w3 * (1.0 - parts.ssim->data[0]) +
                          w.psnr_sign * w.w4 * parts.psnr->data[0];
  CHECK(parts.total->data[0] == doctest::Approx(expected).epsilon(1e-12));
  // literal printed sign convention is selectable
  LossWeights wp = w;
  wp.psnr_sign = 1.0;
  auto plus = translation_loss(x, y, wp, c);
  CHECK(plus.total->data[0] ==
        doctest::Approx(expected + 2.0 * w.w4 * parts.psnr->data[0])
            .epsilon(1e-9));
}

TEST_CASE("classification_loss of the uniform prediction is -log10(1/4)") {
  auto probs = full<double>({3, 4}, 0.25);
  std::vector<double> lv(12, 0.0);
  lv[0] = lv[5] = lv[10] = 1.0;
  auto labels = make_tensor<double>({3, 4}, std::move(lv));
  CHECK(classification_loss(probs, labels)->data[0] ==
        doctest::Approx(-std::log10(0.25)).epsilon(1e-9));
  CHECK(-std::log10(0.25) == doctest::Approx(0.6020599913).epsilon(1e-9));
}

TEST_CASE("classification_loss is zero for a perfect prediction") {
  std::vector<double> pv = {1, 0, 0, 0};
  auto probs = make_tensor<double>({1, 4}, std::move(pv));
  auto labels = make_tensor<double>({1, 4}, {1, 0, 0, 0});
  CHECK(classification_loss(probs, labels)->data[0] ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("classification_loss validates its inputs") {
  auto probs = full<double>({1, 4}, 0.25);
  CHECK_THROWS_AS(
      classification_loss(probs, make_tensor<double>({1, 4}, {0.5, 0.5, 0, 0})),
      DataError);  // not one-hot
  CHECK_THROWS_AS(
      classification_loss(probs, make_tensor<double>({1, 4}, {1, 1, 0, 0})),
      DataError);  // two ones
  auto bad = make_tensor<double>({1, 4}, {-0.1, 0.5, 0.3, 0.3});
  auto one = make_tensor<double>({1, 4}, {1, 0, 0, 0});
  CHECK_THROWS_AS(classification_loss(bad, one), DataError);  // negative prob
  auto short_sum = make_tensor<double>({1, 4}, {0.2, 0.2, 0.2, 0.2});
  CHECK_THROWS_AS(classification_loss(short_sum, one), DataError);
}

TEST_CASE("global loss is the exact sum and rejects non-finite parts") {
  auto a = scalar_tensor(1.25), b = scalar_tensor(0.5);
  CHECK(global_loss(a, b)->data[0] == doctest::Approx(1.75).epsilon(1e-15));
  auto bad = scalar_tensor(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(global_loss(bad, b), NumericError);
  CHECK_THROWS_AS(global_loss(a, bad), NumericError);
}

TEST_CASE("finite differences through every loss") {
  std::mt19937_64 rng(23);
  auto y = urand<double>({1, 1, 4, 4, 4}, rng, 0.3, 1.7);
  auto x0 = urand<double>({1, 1, 4, 4, 4}, rng, 0.3, 1.7);
  SSIMConstants c{2.0};
  LossWeights w;
  CHECK(grad_check<double>(
            [&](const TensorPtr<double>& t) { return mse_loss(t, y); }, x0,
            1e-6) < 1e-4);
  CHECK(grad_check<double>(
            [&](const TensorPtr<double>& t) { return mae_loss(t, y); }, x0,
            1e-6) < 1e-4);
  CHECK(grad_check<double>(
            [&](const TensorPtr<double>& t) { return ssim_global_loss(t, y, c); },
            x0, 1e-6) < 1e-4);
  CHECK(grad_check<double>(
            [&](const TensorPtr<double>& t) { return psnr_loss(t, y, c, w); },
            x0, 1e-6) < 1e-4);
  CHECK(grad_check<double>(
            [&](const TensorPtr<double>& t) {
              return translation_loss(t, y, w, c).total;
            },
            x0, 1e-6) < 1e-4);
  auto labels = make_tensor<double>({2, 4}, {0, 1, 0, 0, 0, 0, 0, 1});
  auto logits = urand<double>({2, 4}, rng, -1.0, 1.0);
  CHECK(grad_check<double>(
            [&](const TensorPtr<double>& t) {
              return classification_loss(softmax(t), labels);
            },
            logits, 1e-6) < 1e-4);
}

TEST_CASE("mse gradient points away from the minimum (argmin probe)") {
  std::mt19937_64 rng(29);
  auto y = urand<double>({16}, rng, 0.0, 1.0);
  auto at_min = make_tensor<double>(y->shape, y->data, true);
  backward(mse_loss(at_min, y));
  for (double g : at_min->grad) CHECK(g == doctest::Approx(0.0));
  // any perturbation raises the loss
  for (int t = 0; t < 10; ++t) {
    auto x = urand<double>({16}, rng, -0.2, 0.2);
    for (std::size_t i = 0; i < x->data.size(); ++i) x->data[i] += y->data[i];
    if (x->data == y->data) continue;
    CHECK(mse_loss(x, y)->data[0] > 0.0);
  }
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.w3 = 1.5;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w.w3 = 0.6;
  w.psnr_sign = 0.5;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}
