#ifndef MTNET_VOLUME_HPP_
#define MTNET_VOLUME_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mtnet/common.hpp"

namespace mtnet {

// Multi-channel 3D image. Voxels are stored channel-major with the third
// spatial index fastest: data[((c*m + i)*n + j)*p + k].
struct Volume {
  int channels = 0;
  std::array<int, 3> dims = {0, 0, 0};  // (m, n, p)
  std::array<float, 3> spacing = {1.f, 1.f, 1.f};
  std::string unit;
  std::vector<float> data;

  Volume() = default;
  Volume(int channels_in, std::array<int, 3> dims_in, std::string unit_in = "");

  std::int64_t voxels_per_channel() const {
    return std::int64_t(dims[0]) * dims[1] * dims[2];
  }
  std::int64_t index(int c, int i, int j, int k) const {
    return ((std::int64_t(c) * dims[0] + i) * dims[1] + j) * dims[2] + k;
  }
  float& at(int c, int i, int j, int k) { return data[index(c, i, j, k)]; }
  float at(int c, int i, int j, int k) const { return data[index(c, i, j, k)]; }
};

struct BrainMask {
  std::array<int, 3> dims = {0, 0, 0};
  std::vector<std::uint8_t> mask;  // one flag per voxel (single channel)

  std::size_t count() const;
  void validate() const;  // non-empty: >= 1% of voxels set
};

// "MVOL" container, version 1. Little-endian throughout:
//   magic "MVOL" | u32 version | u32 channels | u32 m,n,p | f32 spacing x3 |
//   u16 unit length + UTF-8 unit | f32 voxels (channel-major, k fastest).
void save_volume(const Volume& v, const std::string& path);
Volume load_volume(const std::string& path);

// Threshold-based mask for imported volumes: voxel on where channel 0
// exceeds `fraction` of its maximum.
BrainMask mask_from_threshold(const Volume& v, double fraction = 0.10);

// Scales each channel so its in-mask mean becomes exactly 1; out-of-mask
// voxels are scaled by the same per-channel factor.
Volume normalize_mean_one(const Volume& v, const BrainMask& mask);

// One deterministic spatial transform of the eight-fold augmentation set,
// with enough structure to invert itself.
struct AugmentTransform {
  enum class Kind { kIdentity, kFlip, kShift, kRotate90, kFlipRotate90 };
  Kind kind = Kind::kIdentity;
  int shift_axis = 0;   // 0 = i, 1 = j
  int shift_amount = 0; // voxels, zero-fill

  std::string name() const;
  Volume apply(const Volume& v) const;
  // Inverse transform; for shifts the zero-filled border stays zero.
  Volume invert(const Volume& v) const;
};

struct AugmentedSample {
  Volume input;
  Volume target;
  int label = 0;
  AugmentTransform transform;
};

// Fixed set of 8 transforms: identity, LR flip, +-2 voxel shifts along the
// two in-plane axes, 90 degree axial rotation, flip composed with rotation.
std::vector<AugmentTransform> eightfold_transforms();

std::vector<AugmentedSample> augment_eightfold(const Volume& input,
                                               const Volume& target,
                                               int label);

}  // namespace mtnet

#endif  // MTNET_VOLUME_HPP_
