#ifndef MTNET_PHANTOM_HPP_
#define MTNET_PHANTOM_HPP_

#include <array>
#include <utility>

#include "mtnet/dataset.hpp"
#include "mtnet/volume.hpp"

namespace mtnet {

constexpr std::array<int, 3> kMinPhantomDims = {16, 16, 8};

// Ellipsoidal support shared by every phantom of a given size.
BrainMask phantom_mask(const std::array<int, 3>& dims);

// The documented target mapping: weighted sum of the four perfusion
// channels (4..7, weights 0.1/0.2/0.3/0.4), 3x3x3 box smoothing inside the
// volume, masked, scaled to CBF-like units (x50 ml/100g/min).
Volume phantom_target_from_input(const Volume& input, const BrainMask& mask);

struct PhantomOptions {
  std::uint64_t subject_seed = 0;
  std::uint64_t session_seed = 0;  // small per-session texture variation
  ClassLabel label = ClassLabel::kHC;
  std::array<int, 3> dims = {32, 32, 16};
  double post_vasodilator_scale = 1.0;  // >1 for post-acetazolamide sessions
};

// Deterministic synthetic scan: an ellipsoidal brain with smooth per-channel
// textures; perfusion channels carry a class-specific deficit which the
// target inherits through the documented mapping.
//   HC:     no deficit
//   MMD:    bilateral anterior reduction
//   ICSD:   single-hemisphere diffuse reduction
//   Stroke: one sharp near-zero wedge
std::pair<Volume, Volume> generate_phantom(const PhantomOptions& opts);

struct PhantomDatasetOptions {
  std::array<int, kNumClasses> subjects_per_class = {4, 4, 1, 1};
  std::array<int, 3> dims = {32, 32, 16};
  std::uint64_t seed = 0;
};

// Writes MVOL volumes plus manifest.json into out_dir. Subjects alternate
// between 3 sessions (baseline, baseline, post) and 2 (baseline, post),
// mirroring the mixed session counts of the reference cohort layout.
DatasetManifest generate_phantom_dataset(const PhantomDatasetOptions& opts,
                                         const std::string& out_dir);

}  // namespace mtnet

#endif  // MTNET_PHANTOM_HPP_
