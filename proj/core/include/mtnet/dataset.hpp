#ifndef MTNET_DATASET_HPP_
#define MTNET_DATASET_HPP_

#include <string>
#include <vector>

#include "mtnet/common.hpp"

namespace mtnet {

// Fixed 4-way label set; indices are part of every serialized artifact.
enum class ClassLabel : int { kHC = 0, kMMD = 1, kICSD = 2, kStroke = 3 };
constexpr int kNumClasses = 4;
constexpr int kInputChannels = 8;  // MRI sequences per scan

const char* class_name(ClassLabel c);
ClassLabel class_from_name(const std::string& name);

enum class SessionKind { kBaseline, kPostVasodilator };

struct ScanRecord {
  std::string scan_id;
  std::string subject_id;
  SessionKind session = SessionKind::kBaseline;
  ClassLabel label = ClassLabel::kHC;
  std::string input_path;   // 8-channel MVOL, relative to the manifest
  std::string target_path;  // 1-channel MVOL
};

struct DatasetManifest {
  std::vector<ScanRecord> records;

  std::vector<std::string> subject_ids() const;
  std::size_t scans_of_class(ClassLabel c) const;
};

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

struct FoldSplit {
  std::vector<ScanRecord> train, val, test;
};

// Subject-grouped, class-stratified k-fold splits. Subjects are stratified
// by (class, scans-per-subject) and dealt round-robin, so equal strata give
// identical per-fold test counts. Within each fold, ~10% of the training
// scans move to validation, sampled by whole subject. A subject id never
// appears in more than one of {train, val, test}.
std::vector<FoldSplit> make_cv_folds(const DatasetManifest& manifest, int k,
                                     std::uint64_t seed,
                                     bool allow_small_classes = true,
                                     double val_fraction = 0.10);

// Throws DataError on any subject shared between the partitions of a fold.
void check_subject_leakage(const FoldSplit& fold);

}  // namespace mtnet

#endif  // MTNET_DATASET_HPP_
