#include "mtnet/config.hpp"

#include <fstream>

namespace mtnet {

using nlohmann::json;

namespace {

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void to_json(json& j, const SynthesisConfig& c) {
  j = json{{"in_channels", c.in_channels},
           {"base_width", c.base_width},
           {"num_scales", c.num_scales},
           {"kernel_size", c.kernel_size},
           {"attention_encoder", c.attention_encoder},
           {"attention_skip", c.attention_skip},
           {"attention_reduction", c.attention_reduction},
           {"spatial_kernel", c.spatial_kernel}};
}

void from_json(const json& j, SynthesisConfig& c) {
  get_if(j, "in_channels", c.in_channels);
  get_if(j, "base_width", c.base_width);
  get_if(j, "num_scales", c.num_scales);
  get_if(j, "kernel_size", c.kernel_size);
  get_if(j, "attention_encoder", c.attention_encoder);
  get_if(j, "attention_skip", c.attention_skip);
  get_if(j, "attention_reduction", c.attention_reduction);
  get_if(j, "spatial_kernel", c.spatial_kernel);
}

void to_json(json& j, const DiagnosisConfig& c) {
  j = json{{"in_channels", c.in_channels},
           {"path_kernels", c.path_kernels},
           {"path_width", c.path_width},
           {"post_conv_depth", c.post_conv_depth},
           {"post_width", c.post_width},
           {"fc_hidden", c.fc_hidden},
           {"num_classes", c.num_classes},
           {"stem_pool", c.stem_pool},
           {"pool_layers", c.pool_layers}};
}

void from_json(const json& j, DiagnosisConfig& c) {
  get_if(j, "in_channels", c.in_channels);
  get_if(j, "path_kernels", c.path_kernels);
  get_if(j, "path_width", c.path_width);
  get_if(j, "post_conv_depth", c.post_conv_depth);
  get_if(j, "post_width", c.post_width);
  get_if(j, "fc_hidden", c.fc_hidden);
  get_if(j, "num_classes", c.num_classes);
  get_if(j, "stem_pool", c.stem_pool);
  get_if(j, "pool_layers", c.pool_layers);
}

void to_json(json& j, const MultiTaskConfig& c) {
  j = json{{"synthesis", c.synthesis},
           {"diagnosis", c.diagnosis},
           {"shared_stem", c.shared_stem},
           {"stem_width", c.stem_width}};
}

void from_json(const json& j, MultiTaskConfig& c) {
  get_if(j, "synthesis", c.synthesis);
  get_if(j, "diagnosis", c.diagnosis);
  get_if(j, "shared_stem", c.shared_stem);
  get_if(j, "stem_width", c.stem_width);
}

void to_json(json& j, const LossWeights& c) {
  j = json{{"w1", c.w1},
           {"w2", c.w2},
           {"w3", c.w3},
           {"w4", c.w4},
           {"psnr_sign", c.psnr_sign},
           {"psnr_cap_db", c.psnr_cap_db},
           {"psnr_squared_cmax", c.psnr_squared_cmax}};
}

void from_json(const json& j, LossWeights& c) {
  get_if(j, "w1", c.w1);
  get_if(j, "w2", c.w2);
  get_if(j, "w3", c.w3);
  get_if(j, "w4", c.w4);
  get_if(j, "psnr_sign", c.psnr_sign);
  get_if(j, "psnr_cap_db", c.psnr_cap_db);
  get_if(j, "psnr_squared_cmax", c.psnr_squared_cmax);
  c.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"lr", c.lr},
           {"seed", c.seed},
           {"deterministic", c.deterministic},
           {"augment", c.augment},
           {"grad_clip", c.grad_clip}};
}

void from_json(const json& j, TrainConfig& c) {
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "max_epochs", c.max_epochs);
  get_if(j, "patience", c.patience);
  get_if(j, "lr", c.lr);
  get_if(j, "seed", c.seed);
  get_if(j, "deterministic", c.deterministic);
  get_if(j, "augment", c.augment);
  get_if(j, "grad_clip", c.grad_clip);
  c.validate();
}

void to_json(json& j, const EvalConfig& c) {
  j = json{{"masked", c.masked},
           {"nrmse_range", c.nrmse_range},
           {"ssim_windowed", c.ssim_windowed},
           {"ssim_window", c.ssim_window}};
}

void from_json(const json& j, EvalConfig& c) {
  get_if(j, "masked", c.masked);
  get_if(j, "nrmse_range", c.nrmse_range);
  get_if(j, "ssim_windowed", c.ssim_windowed);
  get_if(j, "ssim_window", c.ssim_window);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"model", c.model},
           {"train", c.train},
           {"loss", c.loss},
           {"eval", c.eval},
           {"folds", c.folds}};
}

void from_json(const json& j, RunConfig& c) {
  get_if(j, "model", c.model);
  get_if(j, "train", c.train);
  get_if(j, "loss", c.loss);
  get_if(j, "eval", c.eval);
  get_if(j, "folds", c.folds);
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + ov + "' is not of the form key=value");
    const std::string key = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // bare strings are fine
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part =
          key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (part.empty()) throw ConfigError("bad override key '" + key + "'");
      if (dot == std::string::npos) {
        (*node)[part] = parsed;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  RunConfig cfg;
  from_json(j, cfg);
  return cfg;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write config snapshot " + path);
  os << json(cfg).dump(2) << "\n";
}

}  // namespace mtnet
