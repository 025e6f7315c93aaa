#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "mtnet/checkpoint.hpp"
#include "mtnet/config.hpp"
#include "mtnet/phantom.hpp"
#include "mtnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace mtnet;

namespace {

void apply_thread_env() {
  int n = 1;
  if (const char* env = std::getenv("MTNET_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError("MTNET_THREADS must be an integer, got '" +
                        std::string(env) + "'");
    }
    if (n < 1) throw ConfigError("MTNET_THREADS must be >= 1");
  }
  set_compute_threads(n);
}

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides,
                         bool deterministic) {
  RunConfig cfg = load_run_config(config_path, overrides);
  if (deterministic) cfg.train.deterministic = true;
  if (cfg.train.deterministic) set_compute_threads(1);
  return cfg;
}

Sample sample_from_volume(const std::string& path) {
  Sample s;
  s.input = load_volume(path);
  if (s.input.channels != kInputChannels)
    throw DataError("expected an " + std::to_string(kInputChannels) +
                    "-channel input volume, got " +
                    std::to_string(s.input.channels) + " channels");
  BrainMask mask = mask_from_threshold(s.input);
  s.input = normalize_mean_one(s.input, mask);
  s.target = Volume(1, s.input.dims);  // placeholder, unused by inference
  s.scan_id = fs::path(path).stem().string();
  return s;
}

std::array<int, 3> parse_dims(const std::string& s) {
  std::array<int, 3> d{};
  if (std::sscanf(s.c_str(), "%d,%d,%d", &d[0], &d[1], &d[2]) != 3)
    throw ConfigError("--dims expects m,n,p");
  return d;
}

int cmd_phantom_gen(const std::string& out, const std::string& subjects,
                    const std::string& dims, std::uint64_t seed) {
  PhantomDatasetOptions opts;
  opts.seed = seed;
  if (!subjects.empty()) {
    int a, b, c, d;
    if (std::sscanf(subjects.c_str(), "%d,%d,%d,%d", &a, &b, &c, &d) != 4)
      throw ConfigError("--subjects expects four comma-separated counts");
    opts.subjects_per_class = {a, b, c, d};
  }
  if (!dims.empty()) opts.dims = parse_dims(dims);
  auto manifest = generate_phantom_dataset(opts, out);
  std::cout << "wrote " << manifest.records.size() << " scans to " << out
            << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& manifest_path,
              const std::string& config_path, const std::string& out,
              const std::vector<std::string>& overrides, bool deterministic,
              bool verbose) {
  RunConfig cfg = resolve_config(config_path, overrides, deterministic);
  auto manifest = load_manifest(manifest_path);
  auto folds = make_cv_folds(manifest, cfg.folds, cfg.train.seed);
  const FoldSplit& split = folds.front();
  check_subject_leakage(split);
  auto train_set = load_samples(split.train, data_dir);
  auto val_set = load_samples(split.val, data_dir);
  auto test_set = load_samples(split.test, data_dir);
  fs::create_directories(out);
  save_run_config(cfg, (fs::path(out) / "config.json").string());
  auto model = build_multitask<float>(cfg.model, train_set.front().input.dims,
                                      cfg.train.seed);
  auto history =
      train_model(model, train_set, val_set, cfg.train, cfg.loss,
                  (fs::path(out) / "checkpoint.mtck").string(), verbose);
  write_history_csv(history, (fs::path(out) / "history.csv").string());
  auto eval = evaluate_model(model, test_set, cfg.eval);
  emit_report(eval, (fs::path(out) / "report").string());
  std::cout << "best epoch " << history.best_epoch << " ("
            << history.stop_reason << "); test accuracy " << eval.accuracy
            << ", mean SSIM " << eval.mean_ssim << "\n";
  return 0;
}

int cmd_crossval(const std::string& data_dir, const std::string& manifest_path,
                 const std::string& config_path, const std::string& out,
                 const std::vector<std::string>& overrides, int folds_override,
                 int jobs, bool deterministic, bool verbose) {
  RunConfig cfg = resolve_config(config_path, overrides, deterministic);
  if (folds_override > 0) cfg.folds = folds_override;
  auto manifest = load_manifest(manifest_path);
  fs::create_directories(out);
  save_run_config(cfg, (fs::path(out) / "config.json").string());
  auto res = run_cross_validation(manifest, data_dir, cfg, out, jobs, verbose);
  std::cout << "accuracy " << res.mean_accuracy << " +- " << res.sd_accuracy
            << ", SSIM " << res.mean_ssim << " +- " << res.sd_ssim << " over "
            << res.folds.size() << " folds\n";
  return 0;
}

int cmd_synthesize(const std::string& checkpoint, const std::string& input,
                   const std::string& out) {
  auto model = load_checkpoint<float>(checkpoint);
  Sample s = sample_from_volume(input);
  Volume cbf = synthesize_volume(model, s);
  save_volume(cbf, out);
  std::cout << "wrote synthetic CBF volume to " << out << "\n";
  return 0;
}

int cmd_classify(const std::string& checkpoint, const std::string& input,
                 bool as_json) {
  auto model = load_checkpoint<float>(checkpoint);
  Sample s = sample_from_volume(input);
  auto probs = classify_volume(model, s);
  const int pred = argmax_label(probs);
  if (as_json) {
    nlohmann::json j;
    j["predicted"] = class_name(ClassLabel(pred));
    for (int c = 0; c < kNumClasses; ++c)
      j["probabilities"][class_name(ClassLabel(c))] = probs[std::size_t(c)];
    std::cout << j.dump(2) << "\n";
  } else {
    for (int c = 0; c < kNumClasses; ++c)
      std::cout << class_name(ClassLabel(c)) << " " << probs[std::size_t(c)]
                << "\n";
    std::cout << "predicted: " << class_name(ClassLabel(pred)) << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& data_dir, const std::string& manifest_path,
                 const std::string& checkpoint, const std::string& out,
                 const std::string& config_path,
                 const std::vector<std::string>& overrides) {
  RunConfig cfg = resolve_config(config_path, overrides, false);
  auto model = load_checkpoint<float>(checkpoint);
  auto manifest = load_manifest(manifest_path);
  auto samples = load_samples(manifest.records, data_dir);
  fs::create_directories(out);
  save_run_config(cfg, (fs::path(out) / "config.json").string());
  auto eval = evaluate_model(model, samples, cfg.eval);
  emit_report(eval, out);
  std::cout << "accuracy " << eval.accuracy << ", mean SSIM " << eval.mean_ssim
            << ", mean PSNR " << eval.mean_psnr << " dB, mean NRMSE "
            << eval.mean_nrmse << "\n";
  return 0;
}

int cmd_gradcheck(double tol) {
  std::mt19937_64 rng(7);
  using D = double;
  struct Check {
    std::string name;
    double err;
  };
  std::vector<Check> checks;
  auto run = [&](const std::string& name,
                 const std::function<TensorPtr<D>(const TensorPtr<D>&)>& f,
                 const TensorPtr<D>& x) {
    checks.push_back({name, double(grad_check<D>(f, x, 1e-5))});
  };

  auto x5 = randn<D>({2, 3, 4, 4, 4}, rng);
  auto w = randn<D>({2, 3, 3, 3, 3}, rng, D(0.5), true);
  auto b = randn<D>({2}, rng, D(0.1), true);
  run("conv3d", [&](const TensorPtr<D>& x) {
    return mean_all(conv3d(x, w, b, {1, 1, 1}, {1, 1, 1}));
  }, x5);
  auto dw = randn<D>({6, 4}, rng, D(0.5), true);
  auto db = randn<D>({4}, rng, D(0.1), true);
  run("dense", [&](const TensorPtr<D>& x) {
    return mean_all(dense(reshape(x, {x->shape[0], int(x->size() / x->shape[0])}),
                          dw, db));
  }, randn<D>({3, 6}, rng));
  run("relu", [](const TensorPtr<D>& x) { return mean_all(relu(x)); },
      add_const(randn<D>({4, 5}, rng), D(0.05)));
  run("sigmoid", [](const TensorPtr<D>& x) { return mean_all(sigmoid(x)); },
      randn<D>({4, 5}, rng));
  run("softmax", [](const TensorPtr<D>& x) {
    return mean_all(mul(softmax(x), softmax(x)));
  }, randn<D>({3, 4}, rng));
  run("maxpool3d", [](const TensorPtr<D>& x) {
    return mean_all(maxpool3d(x, {2, 2, 2}));
  }, randn<D>({1, 2, 4, 4, 4}, rng));
  run("avgpool3d", [](const TensorPtr<D>& x) {
    return mean_all(avgpool3d(x, {2, 2, 2}));
  }, randn<D>({1, 2, 4, 4, 4}, rng));
  run("upsample", [](const TensorPtr<D>& x) {
    return mean_all(upsample3d_nearest(x, {2, 2, 2}));
  }, randn<D>({1, 2, 3, 3, 3}, rng));
  auto att = make_attention_block<D>(4, 2, 3, rng);
  run("attention", [&](const TensorPtr<D>& x) {
    return mean_all(attention_block(x, att));
  }, randn<D>({1, 4, 4, 4, 4}, rng));
  auto target = add_const(scale(sigmoid(randn<D>({1, 1, 4, 4, 4}, rng)), D(2)),
                          D(0.5));
  LossWeights lw;
  SSIMConstants sc(3.0);
  run("translation_loss", [&](const TensorPtr<D>& x) {
    return translation_loss(add_const(sigmoid(x), D(0.25)), target, lw, sc)
        .total;
  }, randn<D>({1, 1, 4, 4, 4}, rng));
  auto labels = make_tensor<D>({2, 4}, {1, 0, 0, 0, 0, 0, 1, 0});
  run("classification_loss", [&](const TensorPtr<D>& x) {
    return classification_loss(softmax(x), labels);
  }, randn<D>({2, 4}, rng));

  bool ok = true;
  std::printf("%-22s %-14s %s\n", "op", "max rel err", "status");
  for (const auto& c : checks) {
    const bool pass = c.err <= tol;
    ok = ok && pass;
    std::printf("%-22s %-14.3e %s\n", c.name.c_str(), c.err,
                pass ? "ok" : "FAIL");
  }
  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MRI-to-CBF synthesis and cerebrovascular disease "
               "classification toolkit"};
  app.require_subcommand(1);

  std::string data_dir, manifest_path, config_path, out, checkpoint, input;
  std::string subjects, dims;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  int jobs = 1, folds = 0;
  bool deterministic = false, verbose = false, as_json = false;
  double tol = 1e-4;

  auto* pg = app.add_subcommand("phantom-gen", "Generate a synthetic dataset");
  pg->add_option("--out", out, "Output directory")->required();
  pg->add_option("--subjects", subjects, "Subjects per class, e.g. 4,4,1,1");
  pg->add_option("--dims", dims, "Volume dims m,n,p");
  pg->add_option("--seed", seed, "Dataset seed");

  auto add_common = [&](CLI::App* sc, bool needs_data) {
    if (needs_data) {
      sc->add_option("--data", data_dir, "Dataset directory")->required();
      sc->add_option("--manifest", manifest_path, "Manifest JSON")->required();
    }
    sc->add_option("--config", config_path, "Run config JSON");
    sc->add_option("--set", overrides, "Override, e.g. train.lr=1e-3");
  };

  auto* tr = app.add_subcommand("train", "Train on one train/val/test split");
  add_common(tr, true);
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_flag("--deterministic", deterministic, "Single-threaded, bitwise-reproducible");
  tr->add_flag("--verbose", verbose, "Per-epoch progress on stderr");

  auto* cv = app.add_subcommand("crossval", "Subject-grouped k-fold run");
  add_common(cv, true);
  cv->add_option("--out", out, "Output directory")->required();
  cv->add_option("--jobs", jobs, "Parallel fold workers");
  cv->add_option("--folds", folds, "Fold count override");
  cv->add_flag("--deterministic", deterministic, "Single-threaded, bitwise-reproducible");
  cv->add_flag("--verbose", verbose, "Per-epoch progress on stderr");

  auto* sy = app.add_subcommand("synthesize", "MRI volume to synthetic CBF");
  sy->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  sy->add_option("--input", input, "8-channel input MVOL")->required();
  sy->add_option("--out", out, "Output MVOL path")->required();

  auto* cl = app.add_subcommand("classify", "Predict the disease class");
  cl->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  cl->add_option("--input", input, "8-channel input MVOL")->required();
  cl->add_flag("--json", as_json, "Machine-readable output");

  auto* ev = app.add_subcommand("evaluate", "Full report for a manifest");
  add_common(ev, true);
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ev->add_option("--out", out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference audit of ops");
  gc->add_option("--tol", tol, "Max relative error allowed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    apply_thread_env();
    if (pg->parsed()) return cmd_phantom_gen(out, subjects, dims, seed);
    if (tr->parsed())
      return cmd_train(data_dir, manifest_path, config_path, out, overrides,
                       deterministic, verbose);
    if (cv->parsed())
      return cmd_crossval(data_dir, manifest_path, config_path, out, overrides,
                          folds, jobs, deterministic, verbose);
    if (sy->parsed()) return cmd_synthesize(checkpoint, input, out);
    if (cl->parsed()) return cmd_classify(checkpoint, input, as_json);
    if (ev->parsed())
      return cmd_evaluate(data_dir, manifest_path, checkpoint, out, config_path,
                          overrides);
    if (gc->parsed()) return cmd_gradcheck(tol);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
