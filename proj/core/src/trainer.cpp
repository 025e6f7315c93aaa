#include "mtnet/trainer.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

namespace mtnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Sample> load_samples(const std::vector<ScanRecord>& records,
                                 const std::string& data_dir) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Sample s;
    s.input = load_volume((fs::path(data_dir) / r.input_path).string());
    s.target = load_volume((fs::path(data_dir) / r.target_path).string());
    if (s.input.channels != kInputChannels)
      throw DataError("scan " + r.scan_id + ": expected " +
                      std::to_string(kInputChannels) + " input channels, got " +
                      std::to_string(s.input.channels));
    if (s.target.channels != 1)
      throw DataError("scan " + r.scan_id + ": target must be 1-channel");
    if (s.input.dims != s.target.dims)
      throw DataError("scan " + r.scan_id + ": input/target dims differ");
    BrainMask mask = mask_from_threshold(s.input);
    s.input = normalize_mean_one(s.input, mask);
    s.label = r.label;
    s.subject_id = r.subject_id;
    s.scan_id = r.scan_id;
    out.push_back(std::move(s));
  }
  return out;
}

TrainBatch<float> make_batch(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw DataError("empty batch");
  const auto dims = samples.front()->input.dims;
  const int N = int(samples.size());
  Shape in_shape = {N, kInputChannels, dims[0], dims[1], dims[2]};
  Shape tg_shape = {N, 1, dims[0], dims[1], dims[2]};
  std::vector<float> in, tg, lb(std::size_t(N) * kNumClasses, 0.f);
  in.reserve(std::size_t(numel(in_shape)));
  tg.reserve(std::size_t(numel(tg_shape)));
  for (int i = 0; i < N; ++i) {
    const Sample& s = *samples[std::size_t(i)];
    if (s.input.dims != dims)
      throw DataError("mixed volume dims inside one batch");
    in.insert(in.end(), s.input.data.begin(), s.input.data.end());
    tg.insert(tg.end(), s.target.data.begin(), s.target.data.end());
    lb[std::size_t(i) * kNumClasses + std::size_t(int(s.label))] = 1.f;
  }
  TrainBatch<float> b;
  b.mri = make_tensor<float>(std::move(in_shape), std::move(in));
  b.target = make_tensor<float>(std::move(tg_shape), std::move(tg));
  b.labels = make_tensor<float>({N, kNumClasses}, std::move(lb));
  return b;
}

namespace {

// Temporarily strips requires_grad from the parameters so inference builds
// no tape.
struct NoGradGuard {
  NamedParams<float> params;
  explicit NoGradGuard(const MultiTaskModel<float>& model)
      : params(model.params()) {
    for (auto& [name, p] : params) p->requires_grad = false;
  }
  ~NoGradGuard() {
    for (auto& [name, p] : params) p->requires_grad = true;
  }
};

LossReport scale_report(const LossReport& r, double w) {
  LossReport o;
  o.mse = r.mse * w;
  o.mae = r.mae * w;
  o.ssim = r.ssim * w;
  o.psnr = r.psnr * w;
  o.l_trans = r.l_trans * w;
  o.l_class = r.l_class * w;
  o.l_global = r.l_global * w;
  return o;
}

LossReport add_report(const LossReport& a, const LossReport& b) {
  LossReport o;
  o.mse = a.mse + b.mse;
  o.mae = a.mae + b.mae;
  o.ssim = a.ssim + b.ssim;
  o.psnr = a.psnr + b.psnr;
  o.l_trans = a.l_trans + b.l_trans;
  o.l_class = a.l_class + b.l_class;
  o.l_global = a.l_global + b.l_global;
  return o;
}

// Mean report over the full sample list, batched.
LossReport run_epoch(MultiTaskModel<float>& model,
                     const std::vector<const Sample*>& pool,
                     const std::vector<std::size_t>& order, int batch_size,
                     const LossWeights& weights, NAdam<float>* opt,
                     const NamedParams<float>& params) {
  LossReport total{};
  std::size_t done = 0;
  while (done < order.size()) {
    const std::size_t n =
        std::min<std::size_t>(std::size_t(batch_size), order.size() - done);
    std::vector<const Sample*> batch;
    batch.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      batch.push_back(pool[order[done + i]]);
    done += n;
    auto tb = make_batch(batch);
    if (opt) {
      zero_grads(params);
      LossReport r = train_step(model, tb, weights);
      opt->step(params);
      total = add_report(total, scale_report(r, double(n)));
    } else {
      LossReport r = multitask_loss_report(model, tb, weights, false);
      total = add_report(total, scale_report(r, double(n)));
    }
  }
  return scale_report(total, 1.0 / double(order.size()));
}

std::vector<Sample> expand_augmented(const std::vector<Sample>& in) {
  std::vector<Sample> out;
  out.reserve(in.size() * 8);
  for (const auto& s : in) {
    auto augmented = augment_eightfold(s.input, s.target, int(s.label));
    for (auto& a : augmented) {
      Sample e;
      e.input = std::move(a.input);
      e.target = std::move(a.target);
      e.label = s.label;
      e.subject_id = s.subject_id;
      e.scan_id = s.scan_id + "+" + a.transform.name();
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace

void write_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write history " + path);
  os << "epoch,split,mse,mae,ssim,psnr,l_trans,l_class,l_global\n";
  os.precision(10);
  auto row = [&os](int epoch, const char* split, const LossReport& r) {
    os << epoch << "," << split << "," << r.mse << "," << r.mae << ","
       << r.ssim << "," << r.psnr << "," << r.l_trans << "," << r.l_class
       << "," << r.l_global << "\n";
  };
  for (std::size_t e = 0; e < h.train_epochs.size(); ++e) {
    row(int(e) + 1, "train", h.train_epochs[e]);
    row(int(e) + 1, "val", h.val_epochs[e]);
  }
}

TrainHistory train_model(MultiTaskModel<float>& model,
                         const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set,
                         const TrainConfig& cfg, const LossWeights& weights,
                         const std::string& checkpoint_path, bool verbose) {
  cfg.validate();
  weights.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (cfg.deterministic) set_compute_threads(1);

  std::vector<Sample> augmented;
  std::vector<const Sample*> pool;
  if (cfg.augment) {
    augmented = expand_augmented(train_set);
    for (const auto& s : augmented) pool.push_back(&s);
  } else {
    for (const auto& s : train_set) pool.push_back(&s);
  }
  std::vector<const Sample*> val_pool;
  for (const auto& s : val_set) val_pool.push_back(&s);

  const auto params = model.params();
  NAdam<float> opt(params, cfg.lr);
  opt.grad_clip = cfg.grad_clip;
  EarlyStopper stopper(cfg.patience);
  TrainHistory hist;
  std::vector<std::vector<float>> best_weights;

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::vector<std::size_t> val_order(val_pool.size());
  std::iota(val_order.begin(), val_order.end(), std::size_t(0));

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed, std::uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    LossReport train_rep =
        run_epoch(model, pool, order, cfg.batch_size, weights, &opt, params);
    LossReport val_rep;
    if (!val_pool.empty()) {
      NoGradGuard guard(model);
      val_rep = run_epoch(model, val_pool, val_order, cfg.batch_size, weights,
                          nullptr, params);
    } else {
      val_rep = train_rep;  // degenerate mode: stop on the training loss
    }
    hist.train_epochs.push_back(train_rep);
    hist.val_epochs.push_back(val_rep);
    const bool improved = stopper.update(val_rep.l_global, epoch);
    if (improved) {
      best_weights.clear();
      for (const auto& [name, p] : params) best_weights.push_back(p->data);
      if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
    }
    if (verbose)
      std::cerr << "epoch " << epoch << " train l_global=" << train_rep.l_global
                << " val l_global=" << val_rep.l_global
                << (improved ? " *" : "") << "\n";
    if (stopper.should_stop()) {
      hist.stop_reason = "early_stop(patience=" + std::to_string(cfg.patience) +
                         ")";
      break;
    }
  }
  if (hist.stop_reason.empty()) hist.stop_reason = "max_epochs";
  hist.best_epoch = stopper.best_epoch;
  if (!best_weights.empty())
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i].second->data = best_weights[i];
  return hist;
}

EvalResult evaluate_model(const MultiTaskModel<float>& model,
                          const std::vector<Sample>& samples,
                          const EvalConfig& cfg) {
  if (samples.empty()) throw DataError("nothing to evaluate");
  NoGradGuard guard(model);
  std::vector<Volume> predictions;
  predictions.reserve(samples.size());
  std::vector<PredictedScan> scans;
  for (const auto& s : samples) {
    auto batch = make_batch({&s});
    auto [pred, probs] = forward_multitask(model, batch.mri);
    Volume pv(1, s.target.dims, s.target.unit);
    pv.spacing = s.target.spacing;
    std::copy(pred->data.begin(), pred->data.end(), pv.data.begin());
    predictions.push_back(std::move(pv));
    PredictedScan ps;
    ps.scan_id = s.scan_id;
    ps.target = &s.target;
    ps.prediction = &predictions.back();
    for (int c = 0; c < kNumClasses; ++c)
      ps.probs[std::size_t(c)] = double(probs->data[std::size_t(c)]);
    ps.true_label = int(s.label);
    scans.push_back(std::move(ps));
  }
  return evaluate_predictions(scans, cfg);
}

Volume synthesize_volume(const MultiTaskModel<float>& model,
                         const Sample& sample) {
  NoGradGuard guard(model);
  auto batch = make_batch({&sample});
  auto h = batch.mri;
  if (model.cfg.shared_stem)
    h = relu(conv3d(h, model.stem.w, model.stem.b, {1, 1, 1}, model.stem.pad));
  auto pred = forward_synthesis(model.synthesis, h);
  Volume pv(1, sample.input.dims, "ml/100g/min");
  pv.spacing = sample.input.spacing;
  std::copy(pred->data.begin(), pred->data.end(), pv.data.begin());
  return pv;
}

std::array<double, 4> classify_volume(const MultiTaskModel<float>& model,
                                      const Sample& sample) {
  NoGradGuard guard(model);
  auto batch = make_batch({&sample});
  auto h = batch.mri;
  if (model.cfg.shared_stem)
    h = relu(conv3d(h, model.stem.w, model.stem.b, {1, 1, 1}, model.stem.pad));
  auto probs = forward_diagnosis(model.diagnosis, h);
  std::array<double, 4> out{};
  for (int c = 0; c < kNumClasses; ++c)
    out[std::size_t(c)] = double(probs->data[std::size_t(c)]);
  return out;
}

namespace {

void summarize(CrossValResult& res) {
  const double n = double(res.folds.size());
  auto mean_sd = [n](auto get, const std::vector<FoldResult>& folds, double& m,
                     double& sd) {
    m = 0;
    for (const auto& f : folds) m += get(f);
    m /= n;
    double ss = 0;
    for (const auto& f : folds) ss += (get(f) - m) * (get(f) - m);
    sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  };
  mean_sd([](const FoldResult& f) { return f.eval.accuracy; }, res.folds,
          res.mean_accuracy, res.sd_accuracy);
  mean_sd([](const FoldResult& f) { return f.eval.mean_ssim; }, res.folds,
          res.mean_ssim, res.sd_ssim);
  mean_sd([](const FoldResult& f) { return f.eval.mean_psnr; }, res.folds,
          res.mean_psnr, res.sd_psnr);
  mean_sd([](const FoldResult& f) { return f.eval.mean_nrmse; }, res.folds,
          res.mean_nrmse, res.sd_nrmse);
}

}  // namespace

CrossValResult run_cross_validation(const DatasetManifest& manifest,
                                    const std::string& data_dir,
                                    const RunConfig& cfg,
                                    const std::string& out_dir, int jobs,
                                    bool verbose) {
  auto folds = make_cv_folds(manifest, cfg.folds, cfg.train.seed);
  fs::create_directories(out_dir);
  CrossValResult res;
  res.folds.resize(folds.size());

  auto run_fold = [&](std::size_t fi) {
    const FoldSplit& split = folds[fi];
    check_subject_leakage(split);
    auto train_set = load_samples(split.train, data_dir);
    auto val_set = load_samples(split.val, data_dir);
    auto test_set = load_samples(split.test, data_dir);
    const auto dims = train_set.front().input.dims;
    auto model = build_multitask<float>(
        cfg.model, dims, mix_seed(cfg.train.seed, 0xf01dULL + fi));
    const fs::path fold_dir = fs::path(out_dir) / ("fold_" + std::to_string(fi));
    fs::create_directories(fold_dir);
    FoldResult fr;
    fr.fold = int(fi);
    fr.history =
        train_model(model, train_set, val_set, cfg.train, cfg.loss,
                    (fold_dir / "checkpoint.mtck").string(), verbose);
    write_history_csv(fr.history, (fold_dir / "history.csv").string());
    fr.eval = evaluate_model(model, test_set, cfg.eval);
    emit_report(fr.eval, (fold_dir / "report").string());
    res.folds[fi] = std::move(fr);
  };

  if (jobs <= 1) {
    for (std::size_t fi = 0; fi < folds.size(); ++fi) run_fold(fi);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::exception_ptr error;
    std::mutex error_mu;
    const int nw = std::min<int>(jobs, int(folds.size()));
    for (int w = 0; w < nw; ++w)
      workers.emplace_back([&] {
        for (;;) {
          const std::size_t fi = next.fetch_add(1);
          if (fi >= folds.size()) return;
          try {
            run_fold(fi);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!error) error = std::current_exception();
          }
        }
      });
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
  }

  summarize(res);
  json j;
  j["schema_version"] = 1;
  j["folds"] = json::array();
  for (const auto& f : res.folds)
    j["folds"].push_back({{"fold", f.fold},
                          {"accuracy", f.eval.accuracy},
                          {"mean_ssim", f.eval.mean_ssim},
                          {"mean_psnr", f.eval.mean_psnr},
                          {"mean_nrmse", f.eval.mean_nrmse},
                          {"best_epoch", f.history.best_epoch},
                          {"stop_reason", f.history.stop_reason}});
  j["accuracy"] = {{"mean", res.mean_accuracy}, {"sd", res.sd_accuracy}};
  j["ssim"] = {{"mean", res.mean_ssim}, {"sd", res.sd_ssim}};
  j["psnr"] = {{"mean", res.mean_psnr}, {"sd", res.sd_psnr}};
  j["nrmse"] = {{"mean", res.mean_nrmse}, {"sd", res.sd_nrmse}};
  std::ofstream os((fs::path(out_dir) / "summary.json").string());
  if (!os) throw DataError("cannot write crossval summary");
  os << j.dump(2) << "\n";
  return res;
}

}  // namespace mtnet
