#include "mtnet/volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace mtnet {

Volume::Volume(int channels_in, std::array<int, 3> dims_in, std::string unit_in)
    : channels(channels_in), dims(dims_in), unit(std::move(unit_in)) {
  if (channels <= 0 || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    throw DataError("volume dimensions must be positive");
  data.assign(std::size_t(channels) * voxels_per_channel(), 0.f);
}

std::size_t BrainMask::count() const {
  std::size_t n = 0;
  for (auto b : mask) n += (b != 0);
  return n;
}

void BrainMask::validate() const {
  const std::size_t total = std::size_t(dims[0]) * dims[1] * dims[2];
  if (mask.size() != total) throw DataError("brain mask size mismatch");
  if (count() * 100 < total)
    throw DataError("brain mask covers less than 1% of the volume");
}

namespace {

constexpr char kMagic[4] = {'M', 'V', 'O', 'L'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxDim = 4096;

template <class T>
void write_le(std::ostream& os, T v) {
  // host is little-endian on every supported target
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const char* section) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw DataError(std::string("MVOL file truncated while reading ") +
                    section);
  return v;
}

}  // namespace

void save_volume(const Volume& v, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_le<std::uint32_t>(os, kVersion);
  write_le<std::uint32_t>(os, std::uint32_t(v.channels));
  for (int d : v.dims) write_le<std::uint32_t>(os, std::uint32_t(d));
  for (float s : v.spacing) write_le<float>(os, s);
  if (v.unit.size() > std::numeric_limits<std::uint16_t>::max())
    throw DataError("unit label too long");
  write_le<std::uint16_t>(os, std::uint16_t(v.unit.size()));
  os.write(v.unit.data(), std::streamsize(v.unit.size()));
  os.write(reinterpret_cast<const char*>(v.data.data()),
           std::streamsize(v.data.size() * sizeof(float)));
  if (!os) throw DataError("write failure on " + path);
}

Volume load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("bad magic in " + path + ": not an MVOL file");
  const auto version = read_le<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw DataError("unsupported MVOL version " + std::to_string(version));
  Volume v;
  v.channels = int(read_le<std::uint32_t>(is, "channel count"));
  for (int a = 0; a < 3; ++a) {
    const auto d = read_le<std::uint32_t>(is, "dimensions");
    if (d == 0 || d > kMaxDim)
      throw DataError("MVOL dimension " + std::to_string(d) +
                      " out of range in " + path);
    v.dims[a] = int(d);
  }
  if (v.channels <= 0 || v.channels > int(kMaxDim))
    throw DataError("MVOL channel count out of range in " + path);
  for (int a = 0; a < 3; ++a) v.spacing[a] = read_le<float>(is, "spacing");
  const auto unit_len = read_le<std::uint16_t>(is, "unit label length");
  v.unit.resize(unit_len);
  if (unit_len) {
    is.read(v.unit.data(), unit_len);
    if (!is) throw DataError("MVOL file truncated while reading unit label");
  }
  const std::int64_t count = std::int64_t(v.channels) * v.voxels_per_channel();
  if (count * std::int64_t(sizeof(float)) > (std::int64_t(1) << 31))
    throw DataError("MVOL payload too large in " + path);
  v.data.resize(std::size_t(count));
  is.read(reinterpret_cast<char*>(v.data.data()),
          std::streamsize(count * sizeof(float)));
  if (!is) throw DataError("MVOL file truncated while reading voxel payload");
  return v;
}

BrainMask mask_from_threshold(const Volume& v, double fraction) {
  BrainMask m;
  m.dims = v.dims;
  const std::int64_t sp = v.voxels_per_channel();
  float max0 = 0.f;
  for (std::int64_t i = 0; i < sp; ++i) max0 = std::max(max0, v.data[i]);
  const float thr = float(fraction) * max0;
  m.mask.resize(std::size_t(sp));
  for (std::int64_t i = 0; i < sp; ++i) m.mask[i] = v.data[i] > thr;
  m.validate();
  return m;
}

Volume normalize_mean_one(const Volume& v, const BrainMask& mask) {
  if (mask.dims != v.dims)
    throw DataError("mask dims do not match volume dims");
  mask.validate();
  Volume out = v;
  const std::int64_t sp = v.voxels_per_channel();
  const double n = double(mask.count());
  for (int c = 0; c < v.channels; ++c) {
    double sum = 0;
    for (std::int64_t i = 0; i < sp; ++i)
      if (mask.mask[i]) sum += v.data[c * sp + i];
    const double mean = sum / n;
    if (mean <= 0)
      throw DataError("channel " + std::to_string(c) +
                      " has non-positive in-mask mean; cannot normalize");
    const float inv = float(1.0 / mean);
    for (std::int64_t i = 0; i < sp; ++i) out.data[c * sp + i] *= inv;
  }
  return out;
}

namespace {

// Axial plane = (i, j); flips mirror axis j (left-right).
Volume flip_lr(const Volume& v) {
  Volume out = v;
  const auto [m, n, p] = v.dims;
  for (int c = 0; c < v.channels; ++c)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < p; ++k)
          out.at(c, i, j, k) = v.at(c, i, n - 1 - j, k);
  return out;
}

// Cyclic translation: exactly invertible everywhere. Brain content sits
// inside the ellipsoidal mask, so the wrapped border voxels are background.
Volume shift(const Volume& v, int axis, int amount) {
  Volume out(v.channels, v.dims, v.unit);
  out.spacing = v.spacing;
  const auto [m, n, p] = v.dims;
  auto wrap = [](int x, int d) { return ((x % d) + d) % d; };
  for (int c = 0; c < v.channels; ++c)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const int si = wrap(i - (axis == 0 ? amount : 0), m);
        const int sj = wrap(j - (axis == 1 ? amount : 0), n);
        for (int k = 0; k < p; ++k) out.at(c, i, j, k) = v.at(c, si, sj, k);
      }
  return out;
}

// 90 degree rotation in the axial plane: (i, j) -> (j, m-1-i).
Volume rotate90(const Volume& v) {
  if (v.dims[0] != v.dims[1])
    throw DataError("axial rotation requires square in-plane dims, got " +
                    std::to_string(v.dims[0]) + "x" + std::to_string(v.dims[1]));
  Volume out = v;
  const auto [m, n, p] = v.dims;
  for (int c = 0; c < v.channels; ++c)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < p; ++k)
          out.at(c, i, j, k) = v.at(c, m - 1 - j, i, k);
  return out;
}

Volume rotate270(const Volume& v) { return rotate90(rotate90(rotate90(v))); }

}  // namespace

std::string AugmentTransform::name() const {
  switch (kind) {
    case Kind::kIdentity:
      return "identity";
    case Kind::kFlip:
      return "flip_lr";
    case Kind::kShift:
      return "shift_" + std::string(shift_axis == 0 ? "i" : "j") +
             (shift_amount >= 0 ? "+" : "") + std::to_string(shift_amount);
    case Kind::kRotate90:
      return "rot90";
    case Kind::kFlipRotate90:
      return "flip_rot90";
  }
  return "?";
}

Volume AugmentTransform::apply(const Volume& v) const {
  switch (kind) {
    case Kind::kIdentity:
      return v;
    case Kind::kFlip:
      return flip_lr(v);
    case Kind::kShift: {
      const int axis_dim = v.dims[shift_axis];
      if (axis_dim <= std::abs(shift_amount))
        throw DataError("volume too small for a " +
                        std::to_string(shift_amount) + "-voxel shift");
      return shift(v, shift_axis, shift_amount);
    }
    case Kind::kRotate90:
      return rotate90(v);
    case Kind::kFlipRotate90:
      return rotate90(flip_lr(v));
  }
  throw DataError("unknown transform");
}

Volume AugmentTransform::invert(const Volume& v) const {
  switch (kind) {
    case Kind::kIdentity:
      return v;
    case Kind::kFlip:
      return flip_lr(v);
    case Kind::kShift:
      return shift(v, shift_axis, -shift_amount);
    case Kind::kRotate90:
      return rotate270(v);
    case Kind::kFlipRotate90:
      return flip_lr(rotate270(v));
  }
  throw DataError("unknown transform");
}

std::vector<AugmentTransform> eightfold_transforms() {
  using K = AugmentTransform::Kind;
  return {
      {K::kIdentity, 0, 0}, {K::kFlip, 0, 0},
      {K::kShift, 0, 2},    {K::kShift, 0, -2},
      {K::kShift, 1, 2},    {K::kShift, 1, -2},
      {K::kRotate90, 0, 0}, {K::kFlipRotate90, 0, 0},
  };
}

std::vector<AugmentedSample> augment_eightfold(const Volume& input,
                                               const Volume& target,
                                               int label) {
  if (input.dims != target.dims)
    throw DataError("augmentation requires input and target with equal dims");
  std::vector<AugmentedSample> out;
  out.reserve(8);
  for (const auto& t : eightfold_transforms())
    out.push_back({t.apply(input), t.apply(target), label, t});
  return out;
}

}  // namespace mtnet
