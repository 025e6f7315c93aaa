#ifndef MTNET_TRAINER_HPP_
#define MTNET_TRAINER_HPP_

#include <string>
#include <vector>

#include "mtnet/checkpoint.hpp"
#include "mtnet/config.hpp"
#include "mtnet/dataset.hpp"
#include "mtnet/evaluation.hpp"
#include "mtnet/networks.hpp"
#include "mtnet/optimizer.hpp"
#include "mtnet/volume.hpp"

namespace mtnet {

// A scan loaded into memory: mean-1 normalized 8-channel input plus the
// physical-unit CBF reference.
struct Sample {
  Volume input;
  Volume target;
  ClassLabel label = ClassLabel::kHC;
  std::string subject_id;
  std::string scan_id;
};

// Loads and normalizes every record; paths resolve relative to `data_dir`.
// Throws DataError on channel-count or dimension mismatches.
std::vector<Sample> load_samples(const std::vector<ScanRecord>& records,
                                 const std::string& data_dir);

// Assembles a constant training batch from sample pointers.
TrainBatch<float> make_batch(const std::vector<const Sample*>& samples);

// Patience-based early stopping on a scalar validation loss. `update`
// returns true when the epoch improved on the best seen so far.
struct EarlyStopper {
  int patience = 20;
  double best = 0;
  int best_epoch = -1;
  int stale = 0;

  explicit EarlyStopper(int patience_in) : patience(patience_in) {
    best = std::numeric_limits<double>::infinity();
  }
  bool update(double val_loss, int epoch) {
    if (val_loss < best) {
      best = val_loss;
      best_epoch = epoch;
      stale = 0;
      return true;
    }
    ++stale;
    return false;
  }
  bool should_stop() const { return stale >= patience; }
};

struct TrainHistory {
  std::vector<LossReport> train_epochs, val_epochs;  // parallel, one per epoch
  int best_epoch = -1;  // 1-based epoch restored into the model
  std::string stop_reason;
};

// epoch,split,mse,mae,ssim,psnr,l_trans,l_class,l_global
void write_history_csv(const TrainHistory& h, const std::string& path);

// Full training loop: shuffled mini-batches, NAdam, per-epoch validation,
// early stopping with best-weights restore. The best checkpoint is written
// to `checkpoint_path` (empty string skips persistence). Augmentation
// (train split only) expands each sample eight-fold when cfg.augment.
TrainHistory train_model(MultiTaskModel<float>& model,
                         const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set,
                         const TrainConfig& cfg, const LossWeights& weights,
                         const std::string& checkpoint_path,
                         bool verbose = false);

// Runs both branches per scan and delegates to evaluate_predictions.
EvalResult evaluate_model(const MultiTaskModel<float>& model,
                          const std::vector<Sample>& samples,
                          const EvalConfig& cfg);

// Synthesis branch only; returns the predicted CBF volume for one sample.
Volume synthesize_volume(const MultiTaskModel<float>& model,
                         const Sample& sample);

// Diagnosis branch only; class probabilities for one sample.
std::array<double, 4> classify_volume(const MultiTaskModel<float>& model,
                                      const Sample& sample);

struct FoldResult {
  int fold = 0;
  TrainHistory history;
  EvalResult eval;
};

struct CrossValResult {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0, sd_accuracy = 0;
  double mean_ssim = 0, sd_ssim = 0;
  double mean_psnr = 0, sd_psnr = 0;
  double mean_nrmse = 0, sd_nrmse = 0;
};

// Subject-grouped k-fold cross-validation: a fresh model per fold, per-fold
// checkpoints/history/reports under out_dir/fold_<i>/, plus summary.json.
// `jobs` > 1 trains folds on worker threads.
CrossValResult run_cross_validation(const DatasetManifest& manifest,
                                    const std::string& data_dir,
                                    const RunConfig& cfg,
                                    const std::string& out_dir, int jobs = 1,
                                    bool verbose = false);

}  // namespace mtnet

#endif  // MTNET_TRAINER_HPP_
