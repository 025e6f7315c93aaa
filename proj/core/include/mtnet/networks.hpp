#ifndef MTNET_NETWORKS_HPP_
#define MTNET_NETWORKS_HPP_

#include <string>
#include <utility>

#include "mtnet/attention.hpp"
#include "mtnet/dataset.hpp"
#include "mtnet/losses.hpp"

namespace mtnet {

struct SynthesisConfig {
  int in_channels = 8;
  int base_width = 16;
  int num_scales = 3;
  int kernel_size = 3;
  bool attention_encoder = true;
  bool attention_skip = true;
  int attention_reduction = 4;
  int spatial_kernel = 7;
};

struct DiagnosisConfig {
  int in_channels = 8;
  std::array<int, 3> path_kernels = {3, 5, 7};  // exactly three parallel paths
  int path_width = 8;
  int post_conv_depth = 1;
  int post_width = 16;
  int fc_hidden = 32;  // two fully connected layers before softmax
  int num_classes = kNumClasses;
  int stem_pool = 2;   // average-pool window ahead of the parallel paths
  int pool_layers = 2; // maxpool-by-2 stages before the flatten
};

struct MultiTaskConfig {
  SynthesisConfig synthesis;
  DiagnosisConfig diagnosis;
  bool shared_stem = false;
  int stem_width = 8;
};

template <class T>
struct ConvLayer {
  TensorPtr<T> w, b;
  Triple stride = {1, 1, 1};
  Triple pad = {0, 0, 0};
};

template <class T>
using NamedParams = std::vector<std::pair<std::string, TensorPtr<T>>>;

namespace detail {

template <class T>
ConvLayer<T> make_conv(int out_ch, int in_ch, int k, std::mt19937_64& rng) {
  ConvLayer<T> l;
  const double fan_in = double(in_ch) * k * k * k;
  l.w = randn<T>({out_ch, in_ch, k, k, k}, rng, T(std::sqrt(2.0 / fan_in)),
                 true);
  l.b = zeros<T>({out_ch}, true);
  const int p = (k - 1) / 2;
  l.pad = {p, p, p};
  return l;
}

template <class T>
void collect_conv(NamedParams<T>& out, const std::string& name,
                  const ConvLayer<T>& l) {
  out.emplace_back(name + ".w", l.w);
  out.emplace_back(name + ".b", l.b);
}

template <class T>
void collect_attention(NamedParams<T>& out, const std::string& name,
                       const AttentionBlockParams<T>& a) {
  out.emplace_back(name + ".ch.w1", a.channel.w1);
  out.emplace_back(name + ".ch.b1", a.channel.b1);
  out.emplace_back(name + ".ch.w2", a.channel.w2);
  out.emplace_back(name + ".ch.b2", a.channel.b2);
  out.emplace_back(name + ".sp.w", a.spatial.w);
  out.emplace_back(name + ".sp.b", a.spatial.b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PET synthesis branch: encoder-decoder with skip connections and optional
// attention blocks at each encoder scale and on each skip.
// ---------------------------------------------------------------------------

template <class T>
struct SynthesisNet {
  SynthesisConfig cfg;
  std::vector<ConvLayer<T>> encoder;                    // one conv per scale
  std::vector<AttentionBlockParams<T>> enc_attention;   // per scale, optional
  std::vector<ConvLayer<T>> decoder;                    // num_scales-1 convs
  std::vector<AttentionBlockParams<T>> skip_attention;  // per skip, optional
  ConvLayer<T> head;                                    // 1x1x1 to 1 channel

  void params(NamedParams<T>& out, const std::string& prefix = "synth") const {
    for (std::size_t s = 0; s < encoder.size(); ++s) {
      detail::collect_conv(out, prefix + ".enc" + std::to_string(s),
                           encoder[s]);
      if (cfg.attention_encoder)
        detail::collect_attention(out, prefix + ".enc_att" + std::to_string(s),
                                  enc_attention[s]);
    }
    for (std::size_t s = 0; s < decoder.size(); ++s) {
      detail::collect_conv(out, prefix + ".dec" + std::to_string(s),
                           decoder[s]);
      if (cfg.attention_skip)
        detail::collect_attention(out, prefix + ".skip_att" + std::to_string(s),
                                  skip_attention[s]);
    }
    detail::collect_conv(out, prefix + ".head", head);
  }
};

template <class T>
SynthesisNet<T> build_synthesis(const SynthesisConfig& cfg,
                                std::uint64_t seed) {
  require_shape(cfg.num_scales >= 1 && cfg.base_width >= 1 &&
                    cfg.kernel_size % 2 == 1,
                "invalid synthesis config");
  std::mt19937_64 rng(mix_seed(seed, 0x73796e74ULL));
  SynthesisNet<T> net;
  net.cfg = cfg;
  int in_ch = cfg.in_channels;
  for (int s = 0; s < cfg.num_scales; ++s) {
    const int width = cfg.base_width << s;
    net.encoder.push_back(
        detail::make_conv<T>(width, in_ch, cfg.kernel_size, rng));
    if (cfg.attention_encoder)
      net.enc_attention.push_back(make_attention_block<T>(
          width, cfg.attention_reduction, cfg.spatial_kernel, rng));
    in_ch = width;
  }
  for (int s = cfg.num_scales - 2; s >= 0; --s) {
    const int skip_w = cfg.base_width << s;
    const int deep_w = cfg.base_width << (s + 1);
    net.decoder.push_back(
        detail::make_conv<T>(skip_w, skip_w + deep_w, cfg.kernel_size, rng));
    if (cfg.attention_skip)
      net.skip_attention.push_back(make_attention_block<T>(
          skip_w, cfg.attention_reduction, cfg.spatial_kernel, rng));
  }
  net.head = detail::make_conv<T>(1, cfg.base_width, 1, rng);
  return net;
}

// Output: single non-negative channel at the input spatial dims.
template <class T>
TensorPtr<T> forward_synthesis(const SynthesisNet<T>& net,
                               const TensorPtr<T>& mri) {
  require_shape(mri->shape.size() == 5 &&
                    mri->shape[1] == net.encoder.front().w->shape[1],
                "synthesis input channel mismatch: expected " +
                    std::to_string(net.encoder.front().w->shape[1]) +
                    ", got " + shape_str(mri->shape));
  const int S = net.cfg.num_scales;
  const int div = 1 << (S - 1);
  for (int a = 2; a < 5; ++a)
    require_shape(mri->shape[a] % div == 0,
                  "spatial dims must be divisible by 2^(num_scales-1)=" +
                      std::to_string(div) + ", got " + shape_str(mri->shape));
  std::vector<TensorPtr<T>> skips;
  auto h = mri;
  for (int s = 0; s < S; ++s) {
    h = relu(conv3d(h, net.encoder[s].w, net.encoder[s].b, {1, 1, 1},
                    net.encoder[s].pad));
    if (net.cfg.attention_encoder) h = attention_block(h, net.enc_attention[s]);
    skips.push_back(h);
    if (s < S - 1) h = maxpool3d(h, {2, 2, 2});
  }
  for (int d = 0; d < S - 1; ++d) {
    const int s = S - 2 - d;  // scale the d-th decoder conv restores
    h = upsample3d_nearest(h, {2, 2, 2});
    auto skip = skips[std::size_t(s)];
    if (net.cfg.attention_skip)
      skip = attention_block(skip, net.skip_attention[std::size_t(d)]);
    h = relu(conv3d(concat_channels(skip, h), net.decoder[std::size_t(d)].w,
                    net.decoder[std::size_t(d)].b, {1, 1, 1},
                    net.decoder[std::size_t(d)].pad));
  }
  return relu(conv3d(h, net.head.w, net.head.b));  // CBF is non-negative
}

// ---------------------------------------------------------------------------
// Diagnosis branch: three parallel conv paths at kernel sizes {3,5,7},
// channel concatenation, post convs, flatten, two dense layers, softmax.
// ---------------------------------------------------------------------------

template <class T>
struct DiagnosisNet {
  DiagnosisConfig cfg;
  std::array<int, 3> input_dims = {0, 0, 0};
  std::array<ConvLayer<T>, 3> paths;
  std::vector<ConvLayer<T>> post;
  TensorPtr<T> fc1_w, fc1_b, fc2_w, fc2_b;
  int flat_features = 0;

  void params(NamedParams<T>& out, const std::string& prefix = "diag") const {
    for (int i = 0; i < 3; ++i)
      detail::collect_conv(out, prefix + ".path" + std::to_string(i),
                           paths[std::size_t(i)]);
    for (std::size_t i = 0; i < post.size(); ++i)
      detail::collect_conv(out, prefix + ".post" + std::to_string(i), post[i]);
    out.emplace_back(prefix + ".fc1.w", fc1_w);
    out.emplace_back(prefix + ".fc1.b", fc1_b);
    out.emplace_back(prefix + ".fc2.w", fc2_w);
    out.emplace_back(prefix + ".fc2.b", fc2_b);
  }
};

template <class T>
DiagnosisNet<T> build_diagnosis(const DiagnosisConfig& cfg,
                                const std::array<int, 3>& input_dims,
                                std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x64696167ULL));
  DiagnosisNet<T> net;
  net.cfg = cfg;
  net.input_dims = input_dims;
  for (int i = 0; i < 3; ++i)
    net.paths[std::size_t(i)] = detail::make_conv<T>(
        cfg.path_width, cfg.in_channels, cfg.path_kernels[std::size_t(i)], rng);
  int ch = 3 * cfg.path_width;
  for (int i = 0; i < cfg.post_conv_depth; ++i) {
    net.post.push_back(detail::make_conv<T>(cfg.post_width, ch, 3, rng));
    ch = cfg.post_width;
  }
  const int total_pool = cfg.stem_pool << cfg.pool_layers;
  for (int a = 0; a < 3; ++a)
    require_shape(input_dims[std::size_t(a)] % total_pool == 0,
                  "diagnosis pooling (factor " + std::to_string(total_pool) +
                      ") does not divide input dims");
  net.flat_features = ch * (input_dims[0] / total_pool) *
                      (input_dims[1] / total_pool) *
                      (input_dims[2] / total_pool);
  net.fc1_w = randn<T>({net.flat_features, cfg.fc_hidden}, rng,
                       T(std::sqrt(2.0 / net.flat_features)), true);
  net.fc1_b = zeros<T>({cfg.fc_hidden}, true);
  net.fc2_w = randn<T>({cfg.fc_hidden, cfg.num_classes}, rng,
                       T(std::sqrt(2.0 / cfg.fc_hidden)), true);
  net.fc2_b = zeros<T>({cfg.num_classes}, true);
  return net;
}

template <class T>
TensorPtr<T> forward_diagnosis(const DiagnosisNet<T>& net,
                               const TensorPtr<T>& mri) {
  require_shape(mri->shape.size() == 5 &&
                    mri->shape[1] == net.cfg.in_channels,
                "diagnosis input channel mismatch");
  auto h = mri;
  if (net.cfg.stem_pool > 1) {
    const int s = net.cfg.stem_pool;
    h = avgpool3d(h, {s, s, s});
  }
  std::array<TensorPtr<T>, 3> feats;
  for (int i = 0; i < 3; ++i) {
    const auto& l = net.paths[std::size_t(i)];
    feats[std::size_t(i)] = relu(conv3d(h, l.w, l.b, {1, 1, 1}, l.pad));
  }
  h = concat_channels(concat_channels(feats[0], feats[1]), feats[2]);
  for (const auto& l : net.post)
    h = relu(conv3d(h, l.w, l.b, {1, 1, 1}, l.pad));
  for (int i = 0; i < net.cfg.pool_layers; ++i) h = maxpool3d(h, {2, 2, 2});
  h = reshape(h, {h->shape[0], int(h->size() / h->shape[0])});
  require_shape(h->shape[1] == net.flat_features,
                "diagnosis flatten size mismatch: built for dims (" +
                    std::to_string(net.input_dims[0]) + "," +
                    std::to_string(net.input_dims[1]) + "," +
                    std::to_string(net.input_dims[2]) + ")");
  h = relu(dense(h, net.fc1_w, net.fc1_b));
  return softmax(dense(h, net.fc2_w, net.fc2_b));
}

// ---------------------------------------------------------------------------
// Joint model
// ---------------------------------------------------------------------------

template <class T>
struct MultiTaskModel {
  MultiTaskConfig cfg;
  std::array<int, 3> input_dims = {0, 0, 0};
  ConvLayer<T> stem;  // used only when cfg.shared_stem
  SynthesisNet<T> synthesis;
  DiagnosisNet<T> diagnosis;

  NamedParams<T> params() const {
    NamedParams<T> out;
    if (cfg.shared_stem) detail::collect_conv(out, "stem", stem);
    synthesis.params(out);
    diagnosis.params(out);
    return out;
  }
};

template <class T>
MultiTaskModel<T> build_multitask(const MultiTaskConfig& cfg_in,
                                  const std::array<int, 3>& input_dims,
                                  std::uint64_t seed) {
  MultiTaskConfig cfg = cfg_in;
  MultiTaskModel<T> model;
  model.input_dims = input_dims;
  if (cfg.shared_stem) {
    std::mt19937_64 rng(mix_seed(seed, 0x7374656dULL));
    model.stem = detail::make_conv<T>(cfg.stem_width,
                                      cfg.synthesis.in_channels, 3, rng);
    cfg.synthesis.in_channels = cfg.stem_width;
    cfg.diagnosis.in_channels = cfg.stem_width;
  }
  model.cfg = cfg;
  model.synthesis = build_synthesis<T>(cfg.synthesis, seed);
  model.diagnosis = build_diagnosis<T>(cfg.diagnosis, input_dims, seed);
  return model;
}

template <class T>
std::pair<TensorPtr<T>, TensorPtr<T>> forward_multitask(
    const MultiTaskModel<T>& model, const TensorPtr<T>& mri) {
  auto h = mri;
  if (model.cfg.shared_stem)
    h = relu(conv3d(h, model.stem.w, model.stem.b, {1, 1, 1}, model.stem.pad));
  return {forward_synthesis(model.synthesis, h),
          forward_diagnosis(model.diagnosis, h)};
}

// ---------------------------------------------------------------------------
// One training step: forward both branches, assemble the global loss,
// backward. The optimizer applies the gradients separately.
// ---------------------------------------------------------------------------

template <class T>
struct TrainBatch {
  TensorPtr<T> mri;     // [N,8,D,H,W], constant
  TensorPtr<T> target;  // [N,1,D,H,W], constant
  TensorPtr<T> labels;  // [N,4] one-hot, constant
};

template <class T>
LossReport multitask_loss_report(const MultiTaskModel<T>& model,
                                 const TrainBatch<T>& batch,
                                 const LossWeights& weights,
                                 bool do_backward) {
  const int N = batch.mri->shape[0];
  require_shape(batch.target->shape[0] == N && batch.labels->shape[0] == N,
                "batch size mismatch between mri, target and labels");
  auto [pred, probs] = forward_multitask(model, batch.mri);

  // per-sample translation losses with per-pair c_max from the reference
  TensorPtr<T> l_trans_sum;
  double mse_sum = 0, mae_sum = 0, ssim_sum = 0, psnr_sum = 0;
  const std::int64_t sample_sz = batch.target->size() / N;
  for (int i = 0; i < N; ++i) {
    T cmax = 0;
    for (std::int64_t j = 0; j < sample_sz; ++j)
      cmax = std::max(cmax, batch.target->data[i * sample_sz + j]);
    if (cmax <= T(0)) cmax = T(1);
    const SSIMConstants c{double(cmax)};
    auto parts = translation_loss(slice_batch(pred, i),
                                  slice_batch(batch.target, i), weights, c);
    mse_sum += double(parts.mse->data[0]);
    mae_sum += double(parts.mae->data[0]);
    ssim_sum += double(parts.ssim->data[0]);
    psnr_sum += double(parts.psnr->data[0]);
    l_trans_sum = l_trans_sum ? add(l_trans_sum, parts.total) : parts.total;
  }
  auto l_trans = scale(l_trans_sum, T(1) / T(N));
  auto l_class = classification_loss(probs, batch.labels);

  const char* bad = nullptr;
  if (!std::isfinite(double(l_trans->data[0]))) bad = "translation loss";
  if (!std::isfinite(double(l_class->data[0]))) bad = "classification loss";
  if (bad)
    throw NumericError(std::string("non-finite ") + bad +
                       " in training step");

  auto l_global = global_loss(l_trans, l_class);
  if (do_backward) backward(l_global);

  LossReport rep;
  rep.mse = mse_sum / N;
  rep.mae = mae_sum / N;
  rep.ssim = ssim_sum / N;
  rep.psnr = psnr_sum / N;
  rep.l_trans = double(l_trans->data[0]);
  rep.l_class = double(l_class->data[0]);
  rep.l_global = double(l_global->data[0]);
  return rep;
}

template <class T>
LossReport train_step(const MultiTaskModel<T>& model, const TrainBatch<T>& batch,
                      const LossWeights& weights) {
  return multitask_loss_report(model, batch, weights, true);
}

}  // namespace mtnet

#endif  // MTNET_NETWORKS_HPP_
