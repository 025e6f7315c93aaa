#include "mtnet/phantom.hpp"

#include <cmath>
#include <filesystem>
#include <random>

namespace mtnet {

namespace fs = std::filesystem;

BrainMask phantom_mask(const std::array<int, 3>& dims) {
  BrainMask m;
  m.dims = dims;
  m.mask.resize(std::size_t(dims[0]) * dims[1] * dims[2]);
  const double cx = 0.5 * (dims[0] - 1), cy = 0.5 * (dims[1] - 1),
               cz = 0.5 * (dims[2] - 1);
  const double ax = 0.45 * dims[0], ay = 0.45 * dims[1], az = 0.45 * dims[2];
  std::size_t idx = 0;
  for (int i = 0; i < dims[0]; ++i)
    for (int j = 0; j < dims[1]; ++j)
      for (int k = 0; k < dims[2]; ++k, ++idx) {
        const double u = (i - cx) / ax, v = (j - cy) / ay, w = (k - cz) / az;
        m.mask[idx] = (u * u + v * v + w * w) <= 1.0;
      }
  m.validate();
  return m;
}

namespace {

constexpr std::array<double, 4> kTargetWeights = {0.1, 0.2, 0.3, 0.4};
constexpr double kCbfScale = 50.0;  // ml/100g/min at unit perfusion signal

// Class-specific multiplicative deficit at voxel (i,j,k); axis i is
// anterior-posterior (low i = anterior), axis j left-right.
double deficit(ClassLabel label, int i, int j, int, const std::array<int, 3>& d) {
  switch (label) {
    case ClassLabel::kHC:
      return 1.0;
    case ClassLabel::kMMD:
      // bilateral anterior-territory reduction
      return i < int(0.4 * d[0]) ? 0.45 : 1.0;
    case ClassLabel::kICSD:
      // left hemisphere, diffuse
      return j < d[1] / 2 ? 0.60 : 1.0;
    case ClassLabel::kStroke:
      // sharp near-zero wedge in one quadrant
      return (i >= d[0] / 2 && j >= d[1] / 2) ? 0.05 : 1.0;
  }
  return 1.0;
}

}  // namespace

Volume phantom_target_from_input(const Volume& input, const BrainMask& mask) {
  if (input.channels != kInputChannels)
    throw DataError("phantom target mapping expects 8 input channels");
  if (input.dims != mask.dims) throw DataError("mask dims mismatch");
  const auto [m, n, p] = input.dims;
  const std::int64_t sp = input.voxels_per_channel();

  std::vector<double> acc(std::size_t(sp), 0.0);
  for (int c = 4; c < 8; ++c)
    for (std::int64_t i = 0; i < sp; ++i)
      acc[i] += kTargetWeights[c - 4] * input.data[c * sp + i];

  Volume out(1, input.dims, "ml/100g/min");
  out.spacing = input.spacing;
  std::size_t idx = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < p; ++k, ++idx) {
        if (!mask.mask[idx]) continue;
        double sum = 0;
        int cnt = 0;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj)
            for (int dk = -1; dk <= 1; ++dk) {
              const int ii = i + di, jj = j + dj, kk = k + dk;
              if (ii < 0 || ii >= m || jj < 0 || jj >= n || kk < 0 || kk >= p)
                continue;
              sum += acc[(std::int64_t(ii) * n + jj) * p + kk];
              ++cnt;
            }
        out.data[idx] = float(kCbfScale * sum / cnt);
      }
  return out;
}

std::pair<Volume, Volume> generate_phantom(const PhantomOptions& opts) {
  for (int a = 0; a < 3; ++a)
    if (opts.dims[a] < kMinPhantomDims[a])
      throw DataError("phantom dims below minimum (16,16,8)");
  const auto dims = opts.dims;
  const auto [m, n, p] = dims;
  const std::int64_t sp = std::int64_t(m) * n * p;
  const BrainMask mask = phantom_mask(dims);

  Volume input(kInputChannels, dims, "a.u.");
  // anatomy depends on the subject alone, so equal seeds differ only by the
  // class deficit; the deficit geometry then guarantees the HC-vs-stroke
  // CBF margin by construction
  std::mt19937_64 rng(mix_seed(opts.subject_seed, 0x74657874ULL));
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  for (int c = 0; c < kInputChannels; ++c) {
    // smooth positive texture: base level plus a few gaussian blobs
    const double base = 0.6 + 0.4 * uni(rng);
    struct Blob {
      double ci, cj, ck, amp, sig;
    };
    std::vector<Blob> blobs(4);
    for (auto& b : blobs) {
      b.ci = uni(rng) * m;
      b.cj = uni(rng) * n;
      b.ck = uni(rng) * p;
      b.amp = 0.2 + 0.6 * uni(rng);
      b.sig = 0.15 * (m + n + p) / 3.0 * (0.5 + uni(rng));
    }
    std::size_t idx = 0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < p; ++k, ++idx) {
          if (!mask.mask[idx]) continue;
          double v = base;
          for (const auto& b : blobs) {
            const double di = i - b.ci, dj = j - b.cj, dk = k - b.ck;
            v += b.amp *
                 std::exp(-(di * di + dj * dj + dk * dk) / (2 * b.sig * b.sig));
          }
          input.data[c * sp + idx] = float(v);
        }
  }

  // small session-specific texture variation on top of the subject anatomy
  std::mt19937_64 srng(mix_seed(opts.session_seed, 0x73657373ULL));
  std::normal_distribution<double> noise(0.0, 0.02);
  for (int c = 0; c < kInputChannels; ++c) {
    const double shift = noise(srng);
    for (std::int64_t i = 0; i < sp; ++i)
      if (mask.mask[i]) input.data[c * sp + i] *= float(1.0 + shift);
  }

  // perfusion channels: class deficit and vasodilator response
  std::size_t idx = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < p; ++k, ++idx) {
        if (!mask.mask[idx]) continue;
        const double f = deficit(opts.label, i, j, k, dims) *
                         opts.post_vasodilator_scale;
        for (int c = 4; c < 8; ++c)
          input.data[c * sp + idx] *= float(f);
      }

  Volume target = phantom_target_from_input(input, mask);
  return {std::move(input), std::move(target)};
}

DatasetManifest generate_phantom_dataset(const PhantomDatasetOptions& opts,
                                         const std::string& out_dir) {
  fs::create_directories(out_dir);
  DatasetManifest manifest;
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassLabel label = ClassLabel(c);
    for (int s = 0; s < opts.subjects_per_class[std::size_t(c)]; ++s) {
      const std::string subject =
          std::string(class_name(label)) + "-" + std::to_string(s + 1);
      const std::uint64_t subject_seed =
          mix_seed(opts.seed, std::uint64_t(c) * 1000 + s);
      const int n_sessions = (s % 2 == 0) ? 3 : 2;
      for (int sess = 0; sess < n_sessions; ++sess) {
        const bool post = sess == n_sessions - 1;
        PhantomOptions po;
        po.subject_seed = subject_seed;
        po.session_seed = mix_seed(subject_seed, std::uint64_t(sess) + 17);
        po.label = label;
        po.dims = opts.dims;
        po.post_vasodilator_scale = post ? 1.25 : 1.0;
        auto [input, target] = generate_phantom(po);

        ScanRecord r;
        r.subject_id = subject;
        r.scan_id = subject + "-s" + std::to_string(sess + 1);
        r.session =
            post ? SessionKind::kPostVasodilator : SessionKind::kBaseline;
        r.label = label;
        r.input_path = r.scan_id + "_mri.mvol";
        r.target_path = r.scan_id + "_cbf.mvol";
        save_volume(input, (fs::path(out_dir) / r.input_path).string());
        save_volume(target, (fs::path(out_dir) / r.target_path).string());
        manifest.records.push_back(std::move(r));
      }
    }
  }
  save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  return manifest;
}

}  // namespace mtnet
