#ifndef MTNET_EVALUATION_HPP_
#define MTNET_EVALUATION_HPP_

#include <array>
#include <string>
#include <vector>

#include "mtnet/config.hpp"
#include "mtnet/metrics.hpp"
#include "mtnet/volume.hpp"

namespace mtnet {

// Rows are the true class, columns the predicted class.
struct ConfusionMatrix4 {
  std::array<std::array<long, 4>, 4> counts{};

  long total() const;
  void add(int true_label, int predicted);
};

struct ClassMetrics {
  // per class, one-vs-rest; percent for Acc/Sens/Spec/Prec
  std::array<double, 4> acc{}, sens{}, spec{}, prec{}, fpr{}, fnr{}, mcc{};
  std::array<bool, 4> degenerate{};  // a zero denominator was hit
  double avg_acc = 0, avg_sens = 0, avg_spec = 0, avg_prec = 0;
  double avg_fpr = 0, avg_fnr = 0, avg_mcc = 0;
};

ClassMetrics classification_metrics(const ConfusionMatrix4& cm);

struct AgreementStats {
  double bias = 0;      // mean of (true - pred)
  double sd = 0;        // sample standard deviation of differences
  double loa_low = 0;   // bias - 1.96 sd
  double loa_high = 0;  // bias + 1.96 sd
};

AgreementStats bland_altman(const std::vector<std::pair<double, double>>& pairs);
double pearson(const std::vector<std::pair<double, double>>& pairs);

struct ScanEvaluation {
  std::string scan_id;
  double ssim = 0, psnr = 0, nrmse = 0;
  double true_mean_cbf = 0, pred_mean_cbf = 0;
  int true_label = 0, pred_label = 0;
};

struct EvalResult {
  std::vector<ScanEvaluation> per_scan;
  double mean_ssim = 0, mean_psnr = 0, mean_nrmse = 0;
  double accuracy = 0;
  ConfusionMatrix4 confusion;
  ClassMetrics metrics;
  AgreementStats agreement;
  double pearson_r = 0;
};

// Per-pair image metrics and label bookkeeping given predictions that are
// already computed; `evaluate_model` in the trainer layer produces the
// predictions and delegates here.
struct PredictedScan {
  std::string scan_id;
  const Volume* target;          // 1-channel reference
  const Volume* prediction;      // 1-channel synthetic CBF
  std::array<double, 4> probs{}; // classifier output
  int true_label = 0;
};

EvalResult evaluate_predictions(const std::vector<PredictedScan>& scans,
                                const EvalConfig& cfg);

// Writes metrics.json, per_scan.csv and the three SVG plots.
void emit_report(const EvalResult& result, const std::string& out_dir);

// Deterministic argmax: lowest index wins ties.
int argmax_label(const std::array<double, 4>& probs);

}  // namespace mtnet

#endif  // MTNET_EVALUATION_HPP_
