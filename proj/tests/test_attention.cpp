#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mtnet/attention.hpp"

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

template <class T>
void fill(TensorPtr<T>& t, T v) {
  std::fill(t->data.begin(), t->data.end(), v);
}

}  // namespace

TEST_CASE("zeroed channel gate multiplies the input by exactly 0.5") {
  std::mt19937_64 rng(3);
  auto p = make_channel_attention<double>(4, 2, rng);
  fill(p.w1, 0.0);
  fill(p.b1, 0.0);
  fill(p.w2, 0.0);
  fill(p.b2, 0.0);  // logits 0 -> sigmoid 0.5
  auto x = urand<double>({2, 4, 3, 3, 3}, rng, -1.0, 1.0);
  auto y = channel_attention(x, p);
  REQUIRE(y->shape == x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i)
    CHECK(y->data[i] == doctest::Approx(0.5 * x->data[i]).epsilon(1e-12));
}

TEST_CASE("saturated channel gate passes the input through") {
  std::mt19937_64 rng(5);
  auto p = make_channel_attention<double>(4, 2, rng);
  fill(p.w1, 0.0);
  fill(p.w2, 0.0);
  fill(p.b2, 40.0);  // sigmoid(80) for kBoth: two MLP passes sum the bias
  auto x = urand<double>({1, 4, 3, 3, 3}, rng, -1.0, 1.0);
  auto y = channel_attention(x, p);
  for (std::size_t i = 0; i < x->data.size(); ++i)
    CHECK(y->data[i] == doctest::Approx(x->data[i]).epsilon(1e-9));
}

TEST_CASE("zeroed spatial gate multiplies the input by exactly 0.5") {
  std::mt19937_64 rng(7);
  auto p = make_spatial_attention<double>(3, rng);
  fill(p.w, 0.0);
  fill(p.b, 0.0);
  auto x = urand<double>({2, 3, 4, 4, 4}, rng, -1.0, 1.0);
  auto y = spatial_attention(x, p);
  REQUIRE(y->shape == x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i)
    CHECK(y->data[i] == doctest::Approx(0.5 * x->data[i]).epsilon(1e-12));
}

TEST_CASE("attention blocks preserve shape on 10 random configurations") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> batch(1, 2), cmul(1, 3), dim(2, 5);
  for (int t = 0; t < 10; ++t) {
    const int C = 2 * cmul(rng);
    auto p = make_attention_block<double>(C, 2, 3, rng);
    Shape s = {batch(rng), C, 2 * dim(rng), 2 * dim(rng), 2 * dim(rng)};
    auto x = urand<double>(s, rng, -1.0, 1.0);
    CHECK(attention_block(x, p)->shape == s);
  }
}

TEST_CASE("attention output is elementwise bounded by the input magnitude") {
  // both gates are sigmoids, so |out| <= |in| everywhere
  std::mt19937_64 rng(13);
  auto p = make_attention_block<double>(4, 2, 3, rng);
  auto x = urand<double>({1, 4, 4, 4, 4}, rng, -2.0, 2.0);
  auto y = attention_block(x, p);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    CHECK(std::abs(y->data[i]) <= std::abs(x->data[i]) + 1e-12);
    CHECK(y->data[i] * x->data[i] >= 0.0);  // gates never flip the sign
  }
}

TEST_CASE("raising the channel-gate bias monotonically opens the gate") {
  std::mt19937_64 rng(17);
  auto p = make_channel_attention<double>(2, 2, rng);
  fill(p.w1, 0.0);
  fill(p.w2, 0.0);
  auto x = full<double>({1, 2, 2, 2, 2}, 1.0);
  double prev = 0.0;
  for (double bias : {-2.0, 0.0, 2.0, 6.0}) {
    fill(p.b2, bias);
    const double out = channel_attention(x, p)->data[0];
    CHECK(out > prev);
    prev = out;
  }
  CHECK(prev <= 1.0);
}

TEST_CASE("finite differences through attention wrt input and parameters") {
  std::mt19937_64 rng(19);
  auto p = make_attention_block<double>(4, 2, 3, rng);
  auto x0 = urand<double>({1, 4, 4, 4, 4}, rng, -1.0, 1.0);
  auto loss_of = [&](const TensorPtr<double>& x) {
    return mean_all(mul(attention_block(x, p), attention_block(x, p)));
  };
  CHECK(grad_check<double>(loss_of, x0, 1e-6) < 1e-4);
  // wrt each parameter tensor, holding the input fixed
  auto wrt = [&](TensorPtr<double>& param) {
    auto orig = param;
    auto f = [&](const TensorPtr<double>& t) {
      param = t;
      auto l = mean_all(attention_block(x0, p));
      return l;
    };
    const double err = grad_check<double>(f, orig, 1e-6);
    param = orig;
    return err;
  };
  CHECK(wrt(p.channel.w1) < 1e-4);
  CHECK(wrt(p.channel.b1) < 1e-4);
  CHECK(wrt(p.channel.w2) < 1e-4);
  CHECK(wrt(p.channel.b2) < 1e-4);
  CHECK(wrt(p.spatial.w) < 1e-4);
  CHECK(wrt(p.spatial.b) < 1e-4);
}

TEST_CASE("attention order is configurable and matters") {
  std::mt19937_64 rng(23);
  auto p = make_attention_block<double>(4, 2, 3, rng);
  auto x = urand<double>({1, 4, 4, 4, 4}, rng, -1.0, 1.0);
  p.order = AttentionOrder::kChannelThenSpatial;
  auto a = attention_block(x, p);
  p.order = AttentionOrder::kSpatialThenChannel;
  auto b = attention_block(x, p);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a->data.size(); ++i)
    max_diff = std::max(max_diff, std::abs(a->data[i] - b->data[i]));
  CHECK(max_diff > 1e-9);
}

TEST_CASE("builder validation") {
  std::mt19937_64 rng(29);
  CHECK_THROWS_AS(make_channel_attention<double>(6, 4, rng), ShapeError);
  CHECK_THROWS_AS(make_spatial_attention<double>(4, rng), ShapeError);
  auto p = make_channel_attention<double>(4, 2, rng);
  auto wrong = zeros<double>({1, 3, 2, 2, 2});
  CHECK_THROWS_AS(channel_attention(wrong, p), ShapeError);
}
