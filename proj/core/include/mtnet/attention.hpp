#ifndef MTNET_ATTENTION_HPP_
#define MTNET_ATTENTION_HPP_

#include "mtnet/ops.hpp"

namespace mtnet {

enum class AttentionPool { kAvg, kMax, kBoth };

// Squeeze-excitation style channel gate: globally pooled descriptor through a
// shared two-layer MLP, sigmoid, broadcast back over the volume.
template <class T>
struct ChannelAttentionParams {
  int channels = 0;
  int reduction = 4;
  AttentionPool pool = AttentionPool::kBoth;
  TensorPtr<T> w1, b1, w2, b2;  // C -> C/r -> C
};

template <class T>
ChannelAttentionParams<T> make_channel_attention(int channels, int reduction,
                                                 std::mt19937_64& rng,
                                                 AttentionPool pool =
                                                     AttentionPool::kBoth) {
  require_shape(reduction >= 1 && channels % reduction == 0,
                "channel attention: channels " + std::to_string(channels) +
                    " not divisible by reduction " + std::to_string(reduction));
  ChannelAttentionParams<T> p;
  p.channels = channels;
  p.reduction = reduction;
  p.pool = pool;
  const int hidden = channels / reduction;
  p.w1 = randn<T>({channels, hidden}, rng, T(std::sqrt(2.0 / channels)), true);
  p.b1 = zeros<T>({hidden}, true);
  p.w2 = randn<T>({hidden, channels}, rng, T(std::sqrt(2.0 / hidden)), true);
  p.b2 = zeros<T>({channels}, true);
  return p;
}

template <class T>
TensorPtr<T> channel_attention(const TensorPtr<T>& x,
                               const ChannelAttentionParams<T>& p) {
  require_shape(x->shape.size() == 5 && x->shape[1] == p.channels,
                "channel attention built for " + std::to_string(p.channels) +
                    " channels, got input " + shape_str(x->shape));
  auto mlp = [&](const TensorPtr<T>& pooled) {
    return dense(relu(dense(pooled, p.w1, p.b1)), p.w2, p.b2);
  };
  TensorPtr<T> logits;
  switch (p.pool) {
    case AttentionPool::kAvg:
      logits = mlp(global_avg_pool(x));
      break;
    case AttentionPool::kMax:
      logits = mlp(global_max_pool(x));
      break;
    case AttentionPool::kBoth:
      logits = add(mlp(global_avg_pool(x)), mlp(global_max_pool(x)));
      break;
  }
  return broadcast_mul_channels(x, sigmoid(logits));
}

// Convolutional spatial gate over the stacked channel-mean and channel-max
// maps; odd cubic kernel so the mask aligns with the input.
template <class T>
struct SpatialAttentionParams {
  int kernel_size = 7;
  TensorPtr<T> w, b;  // conv [1,2,k,k,k], bias [1]
};

template <class T>
SpatialAttentionParams<T> make_spatial_attention(int kernel_size,
                                                 std::mt19937_64& rng) {
  require_shape(kernel_size >= 1 && kernel_size % 2 == 1,
                "spatial attention kernel size must be odd, got " +
                    std::to_string(kernel_size));
  SpatialAttentionParams<T> p;
  p.kernel_size = kernel_size;
  const int k = kernel_size;
  p.w = randn<T>({1, 2, k, k, k}, rng, T(std::sqrt(2.0 / (2.0 * k * k * k))),
                 true);
  p.b = zeros<T>({1}, true);
  return p;
}

template <class T>
TensorPtr<T> spatial_attention(const TensorPtr<T>& x,
                               const SpatialAttentionParams<T>& p) {
  const int k = p.kernel_size;
  const int pad = (k - 1) / 2;
  auto map = concat_channels(channel_mean(x), channel_max(x));
  auto mask = sigmoid(conv3d(map, p.w, p.b, {1, 1, 1}, {pad, pad, pad}));
  return broadcast_mul_spatial(x, mask);
}

enum class AttentionOrder { kChannelThenSpatial, kSpatialThenChannel };

template <class T>
struct AttentionBlockParams {
  ChannelAttentionParams<T> channel;
  SpatialAttentionParams<T> spatial;
  AttentionOrder order = AttentionOrder::kChannelThenSpatial;
};

template <class T>
AttentionBlockParams<T> make_attention_block(int channels, int reduction,
                                             int spatial_kernel,
                                             std::mt19937_64& rng) {
  AttentionBlockParams<T> p;
  p.channel = make_channel_attention<T>(channels, reduction, rng);
  p.spatial = make_spatial_attention<T>(spatial_kernel, rng);
  return p;
}

template <class T>
TensorPtr<T> attention_block(const TensorPtr<T>& x,
                             const AttentionBlockParams<T>& p) {
  if (p.order == AttentionOrder::kChannelThenSpatial)
    return spatial_attention(channel_attention(x, p.channel), p.spatial);
  return channel_attention(spatial_attention(x, p.spatial), p.channel);
}

}  // namespace mtnet

#endif  // MTNET_ATTENTION_HPP_
