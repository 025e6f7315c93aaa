#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "mtnet/evaluation.hpp"

using namespace mtnet;
namespace fs = std::filesystem;

namespace {

ConfusionMatrix4 published_confusion() {
  // Confusion matrix of the reference study (rows = true class HC, MMD,
  // ICSD, Stroke; columns = predicted), 83 test scans.
  ConfusionMatrix4 cm;
  cm.counts = {{{{38, 2, 0, 0}},
                {{2, 35, 1, 0}},
                {{0, 0, 2, 1}},
                {{0, 0, 0, 2}}}};
  return cm;
}

// Scratch directory for report-emission tests.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("published confusion matrix reproduces every table value +-0.01") {
  const auto m = classification_metrics(published_confusion());

  // per-class rows: HC, MMD, ICSD, Stroke (percent where published as such)
  const std::array<double, 4> acc = {95.18, 93.97, 97.60, 98.80};
  const std::array<double, 4> sens = {95.00, 92.10, 66.66, 100.0};
  const std::array<double, 4> spec = {95.34, 95.55, 98.75, 98.76};
  const std::array<double, 4> prec = {95.00, 94.59, 66.66, 66.66};
  const std::array<double, 4> fpr = {0.046, 0.044, 0.012, 0.012};
  const std::array<double, 4> fnr = {0.050, 0.079, 0.333, 0.0};
  const std::array<double, 4> mcc = {0.903, 0.878, 0.654, 0.811};
  for (int c = 0; c < 4; ++c) {
    INFO("class " << class_name(ClassLabel(c)));
    CHECK(std::abs(m.acc[std::size_t(c)] - acc[std::size_t(c)]) <= 0.01);
    CHECK(std::abs(m.sens[std::size_t(c)] - sens[std::size_t(c)]) <= 0.01);
    CHECK(std::abs(m.spec[std::size_t(c)] - spec[std::size_t(c)]) <= 0.01);
    CHECK(std::abs(m.prec[std::size_t(c)] - prec[std::size_t(c)]) <= 0.01);
    CHECK(std::abs(m.fpr[std::size_t(c)] - fpr[std::size_t(c)]) <= 0.01);
    CHECK(std::abs(m.fnr[std::size_t(c)] - fnr[std::size_t(c)]) <= 0.01);
    CHECK(std::abs(m.mcc[std::size_t(c)] - mcc[std::size_t(c)]) <= 0.01);
    CHECK_FALSE(m.degenerate[std::size_t(c)]);
  }
  // published averages
  CHECK(std::abs(m.avg_acc - 96.38) <= 0.01);
  CHECK(std::abs(m.avg_sens - 88.44) <= 0.01);
  CHECK(std::abs(m.avg_spec - 97.10) <= 0.01);
  CHECK(std::abs(m.avg_prec - 80.73) <= 0.01);
  CHECK(std::abs(m.avg_fpr - 0.028) <= 0.01);
  CHECK(std::abs(m.avg_fnr - 0.115) <= 0.01);
  CHECK(std::abs(m.avg_mcc - 0.812) <= 0.01);
}

TEST_CASE("classification_metrics agrees with a brute-force oracle") {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<long> count(0, 25);
  for (int trial = 0; trial < 50; ++trial) {
    ConfusionMatrix4 cm;
    for (auto& row : cm.counts)
      for (auto& v : row) v = count(rng);
    if (cm.total() == 0) continue;
    const auto m = classification_metrics(cm);
    const double total = double(cm.total());
    for (int c = 0; c < 4; ++c) {
      double tp = double(cm.counts[std::size_t(c)][std::size_t(c)]);
      double fn = 0, fp = 0;
      for (int o = 0; o < 4; ++o) {
        if (o == c) continue;
        fn += double(cm.counts[std::size_t(c)][std::size_t(o)]);
        fp += double(cm.counts[std::size_t(o)][std::size_t(c)]);
      }
      const double tn = total - tp - fn - fp;
      auto ratio = [](double num, double den) {
        return den == 0 ? 0.0 : num / den;
      };
      CHECK(m.acc[std::size_t(c)] ==
            doctest::Approx(100.0 * (tp + tn) / total).epsilon(1e-12));
      CHECK(m.sens[std::size_t(c)] ==
            doctest::Approx(100.0 * ratio(tp, tp + fn)).epsilon(1e-12));
      CHECK(m.spec[std::size_t(c)] ==
            doctest::Approx(100.0 * ratio(tn, tn + fp)).epsilon(1e-12));
      CHECK(m.prec[std::size_t(c)] ==
            doctest::Approx(100.0 * ratio(tp, tp + fp)).epsilon(1e-12));
      CHECK(m.fpr[std::size_t(c)] ==
            doctest::Approx(ratio(fp, fp + tn)).epsilon(1e-12));
      CHECK(m.fnr[std::size_t(c)] ==
            doctest::Approx(ratio(fn, fn + tp)).epsilon(1e-12));
      const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) *
                                   (tn + fn));
      const double mcc = den == 0 ? 0.0 : (tp * tn - fp * fn) / den;
      CHECK(m.mcc[std::size_t(c)] == doctest::Approx(mcc).epsilon(1e-12));
    }
  }
}

TEST_CASE("degenerate one-vs-rest denominators are flagged, not NaN") {
  // no true or predicted ICSD/Stroke scans at all
  ConfusionMatrix4 cm;
  cm.counts = {{{{5, 0, 0, 0}}, {{0, 5, 0, 0}}, {{0, 0, 0, 0}},
                {{0, 0, 0, 0}}}};
  const auto m = classification_metrics(cm);
  CHECK_FALSE(m.degenerate[0]);
  CHECK_FALSE(m.degenerate[1]);
  CHECK(m.degenerate[2]);
  CHECK(m.degenerate[3]);
  for (int c = 0; c < 4; ++c) {
    CHECK(std::isfinite(m.sens[std::size_t(c)]));
    CHECK(std::isfinite(m.prec[std::size_t(c)]));
    CHECK(std::isfinite(m.mcc[std::size_t(c)]));
  }
  CHECK(m.sens[2] == 0.0);
  CHECK(m.prec[2] == 0.0);
  CHECK(m.mcc[2] == 0.0);
}

TEST_CASE("bland_altman: constant difference gives bias d and zero-width LoA") {
  for (double d : {-3.5, 0.0, 2.0, 41.7}) {
    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < 9; ++i) {
      const double t = 10.0 + 3.0 * i;
      pairs.push_back({t, t - d});  // true - pred = d exactly
    }
    const auto a = bland_altman(pairs);
    CHECK(a.bias == doctest::Approx(d).epsilon(1e-12));
    CHECK(a.sd == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(a.loa_low == doctest::Approx(d).epsilon(1e-12));
    CHECK(a.loa_high == doctest::Approx(d).epsilon(1e-12));
  }
}

TEST_CASE("bland_altman: hand case with known sample sd") {
  // differences {2, 4}: bias 3, sample sd sqrt(2)
  const std::vector<std::pair<double, double>> pairs = {{10.0, 8.0},
                                                        {20.0, 16.0}};
  const auto a = bland_altman(pairs);
  const double sd = std::sqrt(2.0);
  CHECK(a.bias == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(a.sd == doctest::Approx(sd).epsilon(1e-12));
  CHECK(a.loa_low == doctest::Approx(3.0 - 1.96 * sd).epsilon(1e-12));
  CHECK(a.loa_high == doctest::Approx(3.0 + 1.96 * sd).epsilon(1e-12));
}

TEST_CASE("pearson hits +-1 exactly on linear data and throws on constants") {
  std::vector<std::pair<double, double>> up, down;
  for (int i = 0; i < 12; ++i) {
    up.push_back({double(i), 2.5 * i + 7.0});
    down.push_back({double(i), -0.5 * i + 3.0});
  }
  CHECK(pearson(up) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(down) == doctest::Approx(-1.0).epsilon(1e-12));
  std::vector<std::pair<double, double>> flat = {{1, 2}, {1, 5}, {1, 9}};
  CHECK_THROWS_AS(pearson(flat), DataError);
}

TEST_CASE("agreement statistics match an independent oracle on random data") {
  // 100 random instances for bland_altman, pearson and nrmse with
  // straightforward recomputation from the definitions; rel err < 1e-6.
  std::mt19937_64 rng(777);
  std::uniform_int_distribution<int> len(3, 60);
  std::uniform_real_distribution<double> val(5.0, 80.0);
  auto rel_ok = [](double got, double want) {
    const double scale = std::max(1.0, std::abs(want));
    return std::abs(got - want) / scale < 1e-6;
  };
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(rng);
    std::vector<std::pair<double, double>> pairs(static_cast<std::size_t>(n));
    std::vector<float> x(static_cast<std::size_t>(n));
    std::vector<float> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      pairs[std::size_t(i)] = {val(rng), val(rng)};
      x[std::size_t(i)] = float(pairs[std::size_t(i)].first);
      y[std::size_t(i)] = float(pairs[std::size_t(i)].second);
    }
    // oracle: textbook formulas in double
    double mean_d = 0, mean_a = 0, mean_b = 0;
    for (auto [a, b] : pairs) {
      mean_d += a - b;
      mean_a += a;
      mean_b += b;
    }
    mean_d /= n;
    mean_a /= n;
    mean_b /= n;
    double ss = 0, sa = 0, sb = 0, sab = 0;
    for (auto [a, b] : pairs) {
      ss += ((a - b) - mean_d) * ((a - b) - mean_d);
      sa += (a - mean_a) * (a - mean_a);
      sb += (b - mean_b) * (b - mean_b);
      sab += (a - mean_a) * (b - mean_b);
    }
    const double sd = std::sqrt(ss / (n - 1));
    const auto ba = bland_altman(pairs);
    CHECK(rel_ok(ba.bias, mean_d));
    CHECK(rel_ok(ba.sd, sd));
    CHECK(rel_ok(ba.loa_low, mean_d - 1.96 * sd));
    CHECK(rel_ok(ba.loa_high, mean_d + 1.96 * sd));
    CHECK(rel_ok(pearson(pairs), sab / std::sqrt(sa * sb)));

    // nrmse oracle against rmse / mean(ref) computed by hand (floats cast up)
    double se = 0, sx = 0;
    for (int i = 0; i < n; ++i) {
      const double d = double(x[std::size_t(i)]) - double(y[std::size_t(i)]);
      se += d * d;
      sx += double(x[std::size_t(i)]);
    }
    const double want = std::sqrt(se / n) / (sx / n);
    CHECK(rel_ok(metrics::nrmse<float>(x, y), want));
  }
}

TEST_CASE("nrmse hand case and zero on identical volumes") {
  const std::vector<float> x = {1.f, 1.f, 1.f, 1.f};
  const std::vector<float> y = {1.5f, 0.5f, 1.5f, 0.5f};  // rmse 0.5, mean 1
  CHECK(metrics::nrmse<float>(x, y) == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(metrics::nrmse<float>(x, x) == 0.0);
  // range mode: rmse 1 over reference range 2
  const std::vector<float> x2 = {0.f, 2.f, 0.f, 2.f};
  const std::vector<float> y2 = {1.f, 3.f, 1.f, 3.f};
  CHECK(metrics::nrmse<float>(x2, y2, {}, metrics::NrmseMode::kRange) ==
        doctest::Approx(0.5).epsilon(1e-7));
  // constant reference has zero range and must be rejected in range mode
  CHECK_THROWS_AS(
      metrics::nrmse<float>(x, y, {}, metrics::NrmseMode::kRange), DataError);
}

TEST_CASE("argmax_label is deterministic with lowest-index tie-break") {
  CHECK(argmax_label({0.1, 0.6, 0.2, 0.1}) == 1);
  CHECK(argmax_label({0.25, 0.25, 0.25, 0.25}) == 0);
  CHECK(argmax_label({0.1, 0.4, 0.4, 0.1}) == 1);
  CHECK(argmax_label({0.0, 0.0, 0.0, 1.0}) == 3);
}

TEST_CASE("evaluate_predictions: prediction == target is a perfect score") {
  const std::array<int, 3> dims = {12, 12, 8};
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<float> u(10.f, 60.f);
  std::vector<Volume> targets;
  targets.reserve(8);
  std::vector<PredictedScan> scans;
  for (int s = 0; s < 8; ++s) {
    Volume v(1, dims, "ml/100g/min");
    for (auto& x : v.data) x = u(rng);
    targets.push_back(std::move(v));
  }
  for (int s = 0; s < 8; ++s) {
    PredictedScan ps;
    ps.scan_id = "scan-" + std::to_string(s);
    ps.target = &targets[std::size_t(s)];
    ps.prediction = &targets[std::size_t(s)];
    ps.true_label = s % 4;
    ps.probs = {};
    ps.probs[std::size_t(s % 4)] = 1.0;  // classifier is also perfect
    scans.push_back(ps);
  }
  EvalConfig cfg;
  const auto r = evaluate_predictions(scans, cfg);
  REQUIRE(r.per_scan.size() == 8);
  for (const auto& s : r.per_scan) {
    CHECK(s.ssim == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(s.nrmse == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(s.psnr >= 100.0);  // identical volumes saturate the scale
    CHECK(s.pred_label == s.true_label);
    CHECK(s.pred_mean_cbf == doctest::Approx(s.true_mean_cbf).epsilon(1e-9));
  }
  CHECK(r.accuracy == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.mean_ssim == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.mean_nrmse == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(r.confusion.counts[std::size_t(i)][std::size_t(j)] ==
            (i == j ? 2 : 0));
  CHECK(r.agreement.bias == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  CHECK(r.agreement.sd == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  CHECK(r.pearson_r == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("evaluate_predictions tracks a known bias and misclassification") {
  const std::array<int, 3> dims = {12, 12, 8};
  std::vector<Volume> targets, preds;
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<float> u(20.f, 40.f);
  std::vector<PredictedScan> scans;
  for (int s = 0; s < 4; ++s) {
    Volume t(1, dims, "ml/100g/min");
    for (auto& x : t.data) x = u(rng);
    Volume p = t;
    for (auto& x : p.data) x -= 2.f;  // prediction uniformly 2 units low
    targets.push_back(std::move(t));
    preds.push_back(std::move(p));
  }
  for (int s = 0; s < 4; ++s) {
    PredictedScan ps;
    ps.scan_id = "scan-" + std::to_string(s);
    ps.target = &targets[std::size_t(s)];
    ps.prediction = &preds[std::size_t(s)];
    ps.true_label = s;
    ps.probs = {};
    // every scan predicted as HC: 1 right, 3 wrong
    ps.probs[0] = 1.0;
    scans.push_back(ps);
  }
  EvalConfig cfg;
  cfg.masked = false;  // whole-volume stats make the bias exact
  const auto r = evaluate_predictions(scans, cfg);
  CHECK(r.accuracy == doctest::Approx(0.25).epsilon(1e-12));
  // bias is mean(true - pred) = +2 with zero spread across scans
  CHECK(r.agreement.bias == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(r.agreement.sd == doctest::Approx(0.0).scale(1.0).epsilon(1e-4));
  for (int s = 0; s < 4; ++s)
    CHECK(r.confusion.counts[std::size_t(s)][0] == 1);
}

TEST_CASE("emit_report writes a parseable, complete report directory") {
  const std::array<int, 3> dims = {12, 12, 8};
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<float> u(10.f, 60.f);
  std::vector<Volume> targets, preds;
  std::vector<PredictedScan> scans;
  for (int s = 0; s < 6; ++s) {
    Volume t(1, dims, "ml/100g/min");
    for (auto& x : t.data) x = u(rng);
    Volume p = t;
    for (auto& x : p.data) x *= 0.95f;
    targets.push_back(std::move(t));
    preds.push_back(std::move(p));
  }
  for (int s = 0; s < 6; ++s) {
    PredictedScan ps;
    ps.scan_id = "scan-" + std::to_string(s);
    ps.target = &targets[std::size_t(s)];
    ps.prediction = &preds[std::size_t(s)];
    ps.true_label = s % 4;
    ps.probs = {};
    ps.probs[std::size_t((s + 1) % 4)] = 1.0;  // deliberately imperfect
    scans.push_back(ps);
  }
  const auto r = evaluate_predictions(scans, EvalConfig{});

  TempDir dir("mtnet_test_report");
  emit_report(r, dir.path.string());

  for (const char* name : {"metrics.json", "per_scan.csv", "bland_altman.svg",
                           "joint_plot.svg", "confusion_matrix.svg"}) {
    INFO("file " << name);
    CHECK(fs::exists(dir.path / name));
    CHECK(fs::file_size(dir.path / name) > 0);
  }

  // metrics.json parses and carries the headline numbers
  const auto j = nlohmann::json::parse(slurp(dir.path / "metrics.json"));
  CHECK(j.at("schema_version").get<int>() == 1);
  CHECK(j.at("image").at("mean_ssim").get<double>() ==
        doctest::Approx(r.mean_ssim).epsilon(1e-9));
  CHECK(j.at("classification").at("accuracy").get<double>() ==
        doctest::Approx(r.accuracy).epsilon(1e-9));
  CHECK(j.at("agreement").at("bias").get<double>() ==
        doctest::Approx(r.agreement.bias).epsilon(1e-9));

  // CSV has a header plus one row per scan
  std::ifstream csv(dir.path / "per_scan.csv");
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line.find("scan_id") != std::string::npos);
  CHECK(line.find("ssim") != std::string::npos);
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 6);

  // SVGs are well-formed enough to render: one root element, closed
  for (const char* name :
       {"bland_altman.svg", "joint_plot.svg", "confusion_matrix.svg"}) {
    const std::string svg = slurp(dir.path / name);
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.rfind("</svg>") != std::string::npos);
  }
}
