#include "mtnet/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace mtnet {

using nlohmann::json;

const char* class_name(ClassLabel c) {
  switch (c) {
    case ClassLabel::kHC:
      return "HC";
    case ClassLabel::kMMD:
      return "MMD";
    case ClassLabel::kICSD:
      return "ICSD";
    case ClassLabel::kStroke:
      return "Stroke";
  }
  return "?";
}

ClassLabel class_from_name(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (name == class_name(ClassLabel(i))) return ClassLabel(i);
  throw DataError("unknown class label '" + name + "'");
}

std::vector<std::string> DatasetManifest::subject_ids() const {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.subject_id);
  return {ids.begin(), ids.end()};
}

std::size_t DatasetManifest::scans_of_class(ClassLabel c) const {
  std::size_t n = 0;
  for (const auto& r : records) n += (r.label == c);
  return n;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  json arr = json::array();
  for (const auto& r : m.records) {
    arr.push_back({{"scan_id", r.scan_id},
                   {"subject_id", r.subject_id},
                   {"session", r.session == SessionKind::kBaseline
                                   ? "baseline"
                                   : "post-acetazolamide"},
                   {"label", class_name(r.label)},
                   {"input", r.input_path},
                   {"target", r.target_path}});
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path);
  os << arr.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path);
  json arr;
  try {
    is >> arr;
  } catch (const json::exception& e) {
    throw DataError("manifest " + path + " is not valid JSON: " + e.what());
  }
  if (!arr.is_array()) throw DataError("manifest must be a JSON array");
  DatasetManifest m;
  for (const auto& o : arr) {
    ScanRecord r;
    r.scan_id = o.at("scan_id").get<std::string>();
    r.subject_id = o.at("subject_id").get<std::string>();
    const auto session = o.at("session").get<std::string>();
    r.session = session == "baseline" ? SessionKind::kBaseline
                                      : SessionKind::kPostVasodilator;
    r.label = class_from_name(o.at("label").get<std::string>());
    r.input_path = o.at("input").get<std::string>();
    r.target_path = o.at("target").get<std::string>();
    m.records.push_back(std::move(r));
  }
  return m;
}

namespace {

struct SubjectEntry {
  std::string id;
  ClassLabel label;
  std::vector<ScanRecord> scans;
};

}  // namespace

std::vector<FoldSplit> make_cv_folds(const DatasetManifest& manifest, int k,
                                     std::uint64_t seed,
                                     bool allow_small_classes,
                                     double val_fraction) {
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  std::map<std::string, SubjectEntry> by_subject;
  for (const auto& r : manifest.records) {
    auto& e = by_subject[r.subject_id];
    if (!e.scans.empty() && e.label != r.label)
      throw DataError("subject " + r.subject_id +
                      " carries conflicting class labels");
    e.id = r.subject_id;
    e.label = r.label;
    e.scans.push_back(r);
  }

  // strata keyed by (class, scans-per-subject), deterministic order
  std::map<std::pair<int, int>, std::vector<const SubjectEntry*>> strata;
  std::array<int, kNumClasses> subjects_per_class{};
  for (const auto& [id, e] : by_subject) {
    strata[{int(e.label), int(e.scans.size())}].push_back(&e);
    ++subjects_per_class[int(e.label)];
  }
  for (int c = 0; c < kNumClasses; ++c) {
    if (subjects_per_class[c] == 0)
      throw DataError(std::string("class ") + class_name(ClassLabel(c)) +
                      " has no subjects");
    if (subjects_per_class[c] < k && !allow_small_classes)
      throw DataError(std::string("class ") + class_name(ClassLabel(c)) +
                      " has fewer than k subjects; pass allow_small_classes "
                      "to pin them one per fold");
  }

  std::vector<std::vector<const SubjectEntry*>> groups(k);
  std::mt19937_64 rng(mix_seed(seed, 0x666f6c64ULL));
  // One counter rolls across strata so group sizes stay balanced even when
  // individual strata are smaller than k (no fold ends up with an empty
  // test group on small cohorts). Dealing runs from the last group down so
  // classes with < k subjects tend to stay in the training pool of the
  // earliest folds.
  std::size_t dealt = 0;
  for (auto& [key, subjects] : strata) {
    std::sort(subjects.begin(), subjects.end(),
              [](auto* a, auto* b) { return a->id < b->id; });
    std::shuffle(subjects.begin(), subjects.end(), rng);
    for (auto* s : subjects)
      groups[std::size_t(k) - 1 - (dealt++ % std::size_t(k))].push_back(s);
  }

  std::vector<FoldSplit> folds(k);
  for (int f = 0; f < k; ++f) {
    FoldSplit& fold = folds[f];
    for (auto* s : groups[f])
      fold.test.insert(fold.test.end(), s->scans.begin(), s->scans.end());

    std::vector<const SubjectEntry*> pool;
    std::size_t pool_scans = 0;
    for (int g = 0; g < k; ++g) {
      if (g == f) continue;
      for (auto* s : groups[g]) {
        pool.push_back(s);
        pool_scans += s->scans.size();
      }
    }
    // validation sampled by whole subject until ~val_fraction of scans
    std::mt19937_64 vrng(mix_seed(seed, 0x76616cULL + std::uint64_t(f)));
    std::vector<const SubjectEntry*> shuffled = pool;
    std::sort(shuffled.begin(), shuffled.end(),
              [](auto* a, auto* b) { return a->id < b->id; });
    std::shuffle(shuffled.begin(), shuffled.end(), vrng);
    const std::size_t val_target =
        std::max<std::size_t>(1, std::size_t(val_fraction * pool_scans + 0.5));
    std::unordered_set<std::string> val_ids;
    std::size_t val_scans = 0;
    for (auto* s : shuffled) {
      if (val_scans >= val_target) break;
      val_ids.insert(s->id);
      val_scans += s->scans.size();
    }
    for (auto* s : pool) {
      auto& dst = val_ids.count(s->id) ? fold.val : fold.train;
      dst.insert(dst.end(), s->scans.begin(), s->scans.end());
    }
    check_subject_leakage(fold);
  }
  return folds;
}

void check_subject_leakage(const FoldSplit& fold) {
  auto ids = [](const std::vector<ScanRecord>& v) {
    std::unordered_set<std::string> s;
    for (const auto& r : v) s.insert(r.subject_id);
    return s;
  };
  const auto train = ids(fold.train), val = ids(fold.val), test = ids(fold.test);
  for (const auto& id : val)
    if (train.count(id))
      throw DataError("subject " + id + " leaks between train and val");
  for (const auto& id : test)
    if (train.count(id) || val.count(id))
      throw DataError("subject " + id + " leaks into the test set");
}

}  // namespace mtnet
