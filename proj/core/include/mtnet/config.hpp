#ifndef MTNET_CONFIG_HPP_
#define MTNET_CONFIG_HPP_

#include <string>

#include <nlohmann/json.hpp>

#include "mtnet/losses.hpp"
#include "mtnet/networks.hpp"

namespace mtnet {

struct TrainConfig {
  int batch_size = 4;
  int max_epochs = 150;
  int patience = 20;  // early stopping, consecutive non-improving epochs
  double lr = 2e-4;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool augment = true;
  double grad_clip = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (patience < 1 || patience >= max_epochs)
      throw ConfigError("patience must satisfy 1 <= patience < max_epochs");
  }
};

struct EvalConfig {
  bool masked = true;
  bool nrmse_range = false;        // default: normalize by reference mean
  bool ssim_windowed = false;      // default: global statistics form
  int ssim_window = 11;
};

// Fully resolved run configuration; a serialized copy lands in every output
// directory.
struct RunConfig {
  MultiTaskConfig model;
  TrainConfig train;
  LossWeights loss;
  EvalConfig eval;
  int folds = 4;
};

void to_json(nlohmann::json& j, const SynthesisConfig& c);
void from_json(const nlohmann::json& j, SynthesisConfig& c);
void to_json(nlohmann::json& j, const DiagnosisConfig& c);
void from_json(const nlohmann::json& j, DiagnosisConfig& c);
void to_json(nlohmann::json& j, const MultiTaskConfig& c);
void from_json(const nlohmann::json& j, MultiTaskConfig& c);
void to_json(nlohmann::json& j, const LossWeights& c);
void from_json(const nlohmann::json& j, LossWeights& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Loads a config file (missing path = all defaults), then applies flat
// dotted-key overrides such as "train.lr=1e-3".
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});
void save_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace mtnet

#endif  // MTNET_CONFIG_HPP_
