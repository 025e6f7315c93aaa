#include "mtnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mtnet/dataset.hpp"

namespace mtnet {

namespace fs = std::filesystem;
using nlohmann::json;

long ConfusionMatrix4::total() const {
  long t = 0;
  for (const auto& row : counts)
    for (long v : row) t += v;
  return t;
}

void ConfusionMatrix4::add(int true_label, int predicted) {
  if (true_label < 0 || true_label >= 4 || predicted < 0 || predicted >= 4)
    throw DataError("confusion matrix label out of range");
  ++counts[std::size_t(true_label)][std::size_t(predicted)];
}

ClassMetrics classification_metrics(const ConfusionMatrix4& cm) {
  const long total = cm.total();
  if (total <= 0) throw DataError("empty confusion matrix");
  for (const auto& row : cm.counts)
    for (long v : row)
      if (v < 0) throw DataError("negative confusion matrix count");

  ClassMetrics out;
  for (int c = 0; c < 4; ++c) {
    long tp = cm.counts[std::size_t(c)][std::size_t(c)];
    long fn = 0, fp = 0;
    for (int o = 0; o < 4; ++o) {
      if (o == c) continue;
      fn += cm.counts[std::size_t(c)][std::size_t(o)];
      fp += cm.counts[std::size_t(o)][std::size_t(c)];
    }
    const long tn = total - tp - fn - fp;
    auto ratio = [&out, c](long num, long den) {
      if (den == 0) {
        out.degenerate[std::size_t(c)] = true;
        return 0.0;
      }
      return double(num) / double(den);
    };
    out.acc[std::size_t(c)] = 100.0 * double(tp + tn) / double(total);
    out.sens[std::size_t(c)] = 100.0 * ratio(tp, tp + fn);
    out.spec[std::size_t(c)] = 100.0 * ratio(tn, tn + fp);
    out.prec[std::size_t(c)] = 100.0 * ratio(tp, tp + fp);
    out.fpr[std::size_t(c)] = ratio(fp, fp + tn);
    out.fnr[std::size_t(c)] = ratio(fn, fn + tp);
    const double denom = std::sqrt(double(tp + fp)) * std::sqrt(double(tp + fn)) *
                         std::sqrt(double(tn + fp)) * std::sqrt(double(tn + fn));
    if (denom == 0) {
      out.degenerate[std::size_t(c)] = true;
      out.mcc[std::size_t(c)] = 0.0;
    } else {
      out.mcc[std::size_t(c)] =
          (double(tp) * double(tn) - double(fp) * double(fn)) / denom;
    }
  }
  auto avg = [](const std::array<double, 4>& a) {
    return (a[0] + a[1] + a[2] + a[3]) / 4.0;
  };
  out.avg_acc = avg(out.acc);
  out.avg_sens = avg(out.sens);
  out.avg_spec = avg(out.spec);
  out.avg_prec = avg(out.prec);
  out.avg_fpr = avg(out.fpr);
  out.avg_fnr = avg(out.fnr);
  out.avg_mcc = avg(out.mcc);
  return out;
}

AgreementStats bland_altman(
    const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 2)
    throw DataError("Bland-Altman analysis needs at least 2 pairs");
  AgreementStats s;
  std::vector<double> diffs;
  diffs.reserve(pairs.size());
  for (const auto& [t, p] : pairs) diffs.push_back(t - p);
  for (double d : diffs) s.bias += d;
  s.bias /= double(diffs.size());
  double ss = 0;
  for (double d : diffs) ss += (d - s.bias) * (d - s.bias);
  s.sd = std::sqrt(ss / double(diffs.size() - 1));  // sample sd
  s.loa_low = s.bias - 1.96 * s.sd;
  s.loa_high = s.bias + 1.96 * s.sd;
  return s;
}

double pearson(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 2) throw DataError("pearson needs at least 2 pairs");
  double mx = 0, my = 0;
  for (const auto& [x, y] : pairs) {
    mx += x;
    my += y;
  }
  mx /= double(pairs.size());
  my /= double(pairs.size());
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& [x, y] : pairs) {
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0 || syy == 0)
    throw DataError("pearson undefined: a coordinate has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

int argmax_label(const std::array<double, 4>& probs) {
  int best = 0;
  for (int i = 1; i < 4; ++i)
    if (probs[std::size_t(i)] > probs[std::size_t(best)]) best = i;
  return best;
}

EvalResult evaluate_predictions(const std::vector<PredictedScan>& scans,
                                const EvalConfig& cfg) {
  if (scans.empty()) throw DataError("no scans to evaluate");
  EvalResult res;
  std::vector<std::pair<double, double>> cbf_pairs;
  for (const auto& s : scans) {
    const Volume& truth = *s.target;
    const Volume& pred = *s.prediction;
    if (truth.dims != pred.dims || truth.channels != 1 || pred.channels != 1)
      throw DataError("evaluation expects matching 1-channel volumes");
    BrainMask mask = mask_from_threshold(truth);
    std::span<const std::uint8_t> msk =
        cfg.masked ? std::span<const std::uint8_t>(mask.mask)
                   : std::span<const std::uint8_t>();
    std::span<const float> x(truth.data), y(pred.data);

    double cmax = 0, tsum = 0, psum = 0;
    std::size_t n_in = 0;
    for (std::size_t i = 0; i < truth.data.size(); ++i) {
      if (cfg.masked && !mask.mask[i]) continue;
      cmax = std::max(cmax, double(truth.data[i]));
      tsum += truth.data[i];
      psum += pred.data[i];
      ++n_in;
    }
    if (cmax <= 0) cmax = 1;

    ScanEvaluation row;
    row.scan_id = s.scan_id;
    row.ssim = cfg.ssim_windowed
                   ? metrics::ssim_windowed(x, y, truth.dims, cmax,
                                            cfg.ssim_window)
                   : metrics::ssim_global(x, y, cmax, msk);
    row.psnr = metrics::psnr(x, y, cmax, false, msk);
    row.nrmse = metrics::nrmse(
        x, y, msk,
        cfg.nrmse_range ? metrics::NrmseMode::kRange : metrics::NrmseMode::kMean);
    row.true_mean_cbf = tsum / double(n_in);
    row.pred_mean_cbf = psum / double(n_in);
    row.true_label = s.true_label;
    row.pred_label = argmax_label(s.probs);
    res.confusion.add(row.true_label, row.pred_label);
    cbf_pairs.emplace_back(row.true_mean_cbf, row.pred_mean_cbf);
    res.per_scan.push_back(std::move(row));
  }
  double ssim_sum = 0, nrmse_sum = 0, psnr_sum = 0;
  long correct = 0;
  int finite_psnr = 0;
  for (const auto& r : res.per_scan) {
    ssim_sum += r.ssim;
    nrmse_sum += r.nrmse;
    if (std::isfinite(r.psnr)) {
      psnr_sum += r.psnr;
      ++finite_psnr;
    }
    correct += (r.pred_label == r.true_label);
  }
  const double n = double(res.per_scan.size());
  res.mean_ssim = ssim_sum / n;
  res.mean_nrmse = nrmse_sum / n;
  res.mean_psnr = finite_psnr ? psnr_sum / finite_psnr
                              : std::numeric_limits<double>::infinity();
  res.accuracy = double(correct) / n;
  res.metrics = classification_metrics(res.confusion);
  if (cbf_pairs.size() >= 2) {
    res.agreement = bland_altman(cbf_pairs);
    bool degenerate = false;
    try {
      res.pearson_r = pearson(cbf_pairs);
    } catch (const DataError&) {
      degenerate = true;
    }
    if (degenerate) res.pearson_r = std::numeric_limits<double>::quiet_NaN();
  }
  return res;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace {

double json_safe(double v) {
  return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN();
}

struct SvgCanvas {
  std::ostringstream body;
  int width, height;

  SvgCanvas(int w, int h) : width(w), height(h) {}

  void line(double x1, double y1, double x2, double y2, const char* color,
            double sw = 1.0, bool dashed = false) {
    body << "  <line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2
         << "\" y2=\"" << y2 << "\" stroke=\"" << color << "\" stroke-width=\""
         << sw << "\"" << (dashed ? " stroke-dasharray=\"5,4\"" : "")
         << " />\n";
  }
  void circle(double cx, double cy, double r, const char* color) {
    body << "  <circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r
         << "\" fill=\"" << color << "\" fill-opacity=\"0.7\" />\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    body << "  <rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w
         << "\" height=\"" << h << "\" fill=\"" << fill << "\" />\n";
  }
  void text(double x, double y, const std::string& s, int size = 12,
            const char* anchor = "start") {
    body << "  <text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
         << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">"
         << s << "</text>\n";
  }
  void save(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
       << "\" height=\"" << height << "\">\n"
       << "  <rect width=\"100%\" height=\"100%\" fill=\"white\" />\n"
       << body.str() << "</svg>\n";
  }
};

std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

void write_bland_altman_svg(const EvalResult& res, const std::string& path) {
  const int W = 520, H = 400, M = 60;
  SvgCanvas svg(W, H);
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  std::vector<std::pair<double, double>> pts;  // (mean, diff)
  for (const auto& r : res.per_scan) {
    const double m = 0.5 * (r.true_mean_cbf + r.pred_mean_cbf);
    const double d = r.true_mean_cbf - r.pred_mean_cbf;
    pts.emplace_back(m, d);
    lo_x = std::min(lo_x, m);
    hi_x = std::max(hi_x, m);
    lo_y = std::min(lo_y, d);
    hi_y = std::max(hi_y, d);
  }
  lo_y = std::min(lo_y, res.agreement.loa_low);
  hi_y = std::max(hi_y, res.agreement.loa_high);
  const double px = std::max(1e-9, 0.08 * (hi_x - lo_x));
  const double py = std::max(1e-9, 0.15 * (hi_y - lo_y));
  lo_x -= px, hi_x += px, lo_y -= py, hi_y += py;
  auto sx = [&](double x) { return M + (x - lo_x) / (hi_x - lo_x) * (W - 2 * M); };
  auto sy = [&](double y) { return H - M - (y - lo_y) / (hi_y - lo_y) * (H - 2 * M); };
  svg.line(M, H - M, W - M, H - M, "black");
  svg.line(M, M, M, H - M, "black");
  svg.line(M, sy(res.agreement.bias), W - M, sy(res.agreement.bias), "blue", 1.5);
  svg.line(M, sy(res.agreement.loa_low), W - M, sy(res.agreement.loa_low), "red",
           1.0, true);
  svg.line(M, sy(res.agreement.loa_high), W - M, sy(res.agreement.loa_high),
           "red", 1.0, true);
  for (const auto& [m, d] : pts) svg.circle(sx(m), sy(d), 4, "steelblue");
  svg.text(W - M, sy(res.agreement.bias) - 4, "bias " + fmt(res.agreement.bias),
           11, "end");
  svg.text(W - M, sy(res.agreement.loa_low) - 4,
           "-1.96 SD " + fmt(res.agreement.loa_low), 11, "end");
  svg.text(W - M, sy(res.agreement.loa_high) - 4,
           "+1.96 SD " + fmt(res.agreement.loa_high), 11, "end");
  svg.text(W / 2, H - 15, "Mean CBF (ml/100g/min)", 13, "middle");
  svg.text(15, H / 2, "Difference (true - synthetic)", 13, "middle");
  svg.save(path);
}

void write_joint_plot_svg(const EvalResult& res, const std::string& path) {
  const int W = 520, H = 520, M = 70, HB = 50;  // HB: marginal histogram band
  SvgCanvas svg(W, H);
  double lo = 1e300, hi = -1e300;
  for (const auto& r : res.per_scan) {
    lo = std::min({lo, r.true_mean_cbf, r.pred_mean_cbf});
    hi = std::max({hi, r.true_mean_cbf, r.pred_mean_cbf});
  }
  const double pad = std::max(1e-9, 0.08 * (hi - lo));
  lo -= pad, hi += pad;
  auto sx = [&](double x) { return M + (x - lo) / (hi - lo) * (W - M - HB - 10); };
  auto sy = [&](double y) {
    return H - M - (y - lo) / (hi - lo) * (H - M - HB - 10);
  };
  // marginal histograms, 10 bins
  constexpr int kBins = 10;
  std::array<int, kBins> hx{}, hy{};
  for (const auto& r : res.per_scan) {
    auto bin = [&](double v) {
      return std::clamp(int((v - lo) / (hi - lo) * kBins), 0, kBins - 1);
    };
    ++hx[std::size_t(bin(r.true_mean_cbf))];
    ++hy[std::size_t(bin(r.pred_mean_cbf))];
  }
  const int hmax =
      std::max(*std::max_element(hx.begin(), hx.end()),
               std::max(1, *std::max_element(hy.begin(), hy.end())));
  for (int b = 0; b < kBins; ++b) {
    const double x0 = sx(lo + (hi - lo) * b / kBins);
    const double x1 = sx(lo + (hi - lo) * (b + 1) / kBins);
    const double hgt = double(hx[std::size_t(b)]) / hmax * (HB - 8);
    svg.rect(x0, 10 + (HB - 8) - hgt, x1 - x0 - 1, hgt, "lightsteelblue");
    const double y0 = sy(lo + (hi - lo) * (b + 1) / kBins);
    const double y1 = sy(lo + (hi - lo) * b / kBins);
    const double wdt = double(hy[std::size_t(b)]) / hmax * (HB - 8);
    svg.rect(W - HB - 2, y0, wdt, y1 - y0 - 1, "lightsteelblue");
  }
  svg.line(M, H - M, W - HB - 10, H - M, "black");
  svg.line(M, 10 + HB, M, H - M, "black");
  svg.line(sx(lo), sy(lo), sx(hi), sy(hi), "gray", 1.0, true);  // identity
  for (const auto& r : res.per_scan)
    svg.circle(sx(r.true_mean_cbf), sy(r.pred_mean_cbf), 4, "steelblue");
  svg.text(W / 2 - HB / 2, H - 15, "True mean CBF (ml/100g/min)", 13, "middle");
  svg.text(15, H / 2, "Synthetic mean CBF", 13, "middle");
  svg.text(M + 8, 24 + HB, "Pearson r = " + fmt(res.pearson_r, 3), 12);
  svg.save(path);
}

void write_confusion_svg(const ConfusionMatrix4& cm, const std::string& path) {
  const int cell = 80, M = 80;
  const int W = M + 4 * cell + 40, H = M + 4 * cell + 40;
  SvgCanvas svg(W, H);
  long maxc = 1;
  for (const auto& row : cm.counts)
    for (long v : row) maxc = std::max(maxc, v);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const long v = cm.counts[std::size_t(i)][std::size_t(j)];
      const int shade = 255 - int(200.0 * double(v) / double(maxc));
      std::ostringstream color;
      color << "rgb(" << shade << "," << shade << ",255)";
      svg.rect(M + j * cell, M + i * cell, cell - 2, cell - 2, color.str());
      svg.text(M + j * cell + cell / 2, M + i * cell + cell / 2 + 5,
               std::to_string(v), 16, "middle");
    }
    svg.text(M - 10, M + i * cell + cell / 2 + 5, class_name(ClassLabel(i)), 13,
             "end");
    svg.text(M + i * cell + cell / 2, M - 12, class_name(ClassLabel(i)), 13,
             "middle");
  }
  svg.text(W / 2, H - 10, "Predicted class", 14, "middle");
  svg.text(18, H / 2, "True class", 14, "middle");
  svg.save(path);
}

}  // namespace

void emit_report(const EvalResult& res, const std::string& out_dir) {
  fs::create_directories(out_dir);

  json j;
  j["schema_version"] = 1;
  j["image"] = {{"mean_ssim", res.mean_ssim},
                {"mean_nrmse", res.mean_nrmse},
                {"mean_psnr_db", json_safe(res.mean_psnr)},
                {"scans", res.per_scan.size()}};
  json per_class = json::array();
  for (int c = 0; c < 4; ++c)
    per_class.push_back({{"class", class_name(ClassLabel(c))},
                         {"acc", res.metrics.acc[std::size_t(c)]},
                         {"sens", res.metrics.sens[std::size_t(c)]},
                         {"spec", res.metrics.spec[std::size_t(c)]},
                         {"prec", res.metrics.prec[std::size_t(c)]},
                         {"fpr", res.metrics.fpr[std::size_t(c)]},
                         {"fnr", res.metrics.fnr[std::size_t(c)]},
                         {"mcc", res.metrics.mcc[std::size_t(c)]},
                         {"degenerate", res.metrics.degenerate[std::size_t(c)]}});
  j["classification"] = {{"accuracy", res.accuracy},
                         {"confusion", res.confusion.counts},
                         {"per_class", per_class},
                         {"average",
                          {{"acc", res.metrics.avg_acc},
                           {"sens", res.metrics.avg_sens},
                           {"spec", res.metrics.avg_spec},
                           {"prec", res.metrics.avg_prec},
                           {"fpr", res.metrics.avg_fpr},
                           {"fnr", res.metrics.avg_fnr},
                           {"mcc", res.metrics.avg_mcc}}}};
  j["agreement"] = {{"bias", res.agreement.bias},
                    {"sd", res.agreement.sd},
                    {"loa_low", res.agreement.loa_low},
                    {"loa_high", res.agreement.loa_high},
                    {"pearson_r", json_safe(res.pearson_r)}};
  {
    std::ofstream os((fs::path(out_dir) / "metrics.json").string());
    if (!os) throw DataError("cannot write metrics.json");
    os << j.dump(2) << "\n";
  }
  {
    std::ofstream os((fs::path(out_dir) / "per_scan.csv").string());
    if (!os) throw DataError("cannot write per_scan.csv");
    os << "scan_id,ssim,psnr_db,nrmse,true_mean_cbf,pred_mean_cbf,"
          "true_label,pred_label\n";
    for (const auto& r : res.per_scan)
      os << r.scan_id << "," << r.ssim << "," << r.psnr << "," << r.nrmse << ","
         << r.true_mean_cbf << "," << r.pred_mean_cbf << ","
         << class_name(ClassLabel(r.true_label)) << ","
         << class_name(ClassLabel(r.pred_label)) << "\n";
  }
  write_bland_altman_svg(res, (fs::path(out_dir) / "bland_altman.svg").string());
  write_joint_plot_svg(res, (fs::path(out_dir) / "joint_plot.svg").string());
  write_confusion_svg(res.confusion,
                      (fs::path(out_dir) / "confusion_matrix.svg").string());
}

}  // namespace mtnet
