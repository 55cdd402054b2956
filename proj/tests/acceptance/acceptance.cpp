// Acceptance suite: one PASS/FAIL line per criterion.
//
// The end-to-end criteria train real models on a 30-patient phantom set. The
// work directory (first argument, CMR_ACCEPTANCE_DIR, or ./acceptance_run)
// keeps finished stages, so reruns only re-evaluate.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "cmr/detect/geometry.hpp"
#include "cmr/eval/correction.hpp"
#include "cmr/eval/metrics.hpp"
#include "cmr/failure/failure_set.hpp"
#include "cmr/io/phantom.hpp"
#include "cmr/io/text_file.hpp"
#include "cmr/nn/losses.hpp"
#include "cmr/nn/networks.hpp"
#include "cmr/pipeline/pipeline.hpp"
#include "cmr/unc/uncertainty.hpp"
#include "common/oracles.hpp"

using namespace cmr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Collects the first few mismatches of one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++count_;
    if (ok) return;
    if (failures_++ < 5) notes_ << (notes_.tellp() > 0 ? "; " : "") << what;
  }
  bool ok() const { return failures_ == 0; }
  std::string summary() const {
    return failures_ ? fmt::format("{} of {} checks failed: {}", failures_, count_, notes_.str())
                     : fmt::format("{} checks", count_);
  }

 private:
  long long count_ = 0;
  long long failures_ = 0;
  std::ostringstream notes_;
};

int g_failed = 0;

void criterion(const std::string& name, double budget_s, const std::function<void(Check&)>& body) {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.expect(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0) c.expect(secs < budget_s, fmt::format("took {:.1f} s, budget {:.0f} s", secs, budget_s));
  if (!c.ok()) ++g_failed;
  std::cout << (c.ok() ? "PASS " : "FAIL ") << name << " (" << fmt::format("{:.2f} s", secs) << ") "
            << c.summary() << std::endl;
}

seg::ProbabilityVolume voxel(std::vector<float> p) {
  seg::ProbabilityVolume pv;
  pv.shape = {1, 1, 1};
  pv.probs = std::move(p);
  return pv;
}

void uncertainty_math(Check& c) {
  c.expect(unc::entropy_map(voxel({0.25f, 0.25f, 0.25f, 0.25f})).values[0] == 1.0f, "uniform entropy != 1");
  c.expect(unc::entropy_map(voxel({0, 0, 1, 0})).values[0] == 0.0f, "one-hot entropy != 0");
  // Two samples, four classes: std of each class over samples, averaged.
  const auto b1 = unc::bayesian_values(std::vector<float>{1, 0, 0, 0, 0, 1, 0, 0}, 2, 1, 4);
  const auto b2 = unc::bayesian_values(std::vector<float>{0.8f, 0.2f, 0, 0, 0.6f, 0.4f, 0, 0}, 2, 1, 4);
  const double want1 = std::sqrt(2.0) / 4, want2 = std::sqrt(2.0) / 20;
  c.expect(std::abs(b1[0] - want1) < 1e-6, fmt::format("b-map {} vs {}", b1[0], want1));
  c.expect(std::abs(b2[0] - want2) < 1e-6, fmt::format("b-map {} vs {}", b2[0], want2));
  c.expect(std::abs(want1 - 0.35355) < 1e-5 && std::abs(want2 - 0.07071) < 1e-5, "fixture constants");
}

void metric_oracles(Check& c) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> d(1, 8);
  std::uniform_real_distribution<double> sp(0.5, 10.0);
  int hd_pairs = 0;
  for (int k = 0; k < 200; ++k) {
    const Shape3 s{d(rng), d(rng), d(rng)};
    const auto a = oracle::random_labels(rng, s, 0.5);
    const auto b = oracle::random_labels(rng, s, 0.5);
    const Spacing spacing{sp(rng), sp(rng), sp(rng)};
    for (std::uint8_t cl = 1; cl < 4; ++cl) {
      c.expect(eval::dice_3d(a, b, cl) == oracle::dice(a, b, cl), fmt::format("dice pair {} class {}", k, cl));
      if (oracle::surface(a, cl).empty() || oracle::surface(b, cl).empty()) continue;
      const double h = eval::hausdorff_3d(a, b, cl, spacing);
      const double o = oracle::hausdorff(a, b, cl, spacing);
      c.expect(std::abs(h - o) <= 1e-9, fmt::format("hd pair {} class {}: {} vs {}", k, cl, h, o));
      ++hd_pairs;
    }
  }
  c.expect(hd_pairs > 300, "too few non-empty pairs");
}

// Three slices with an LV disc; slice 1 is mid-ventricular, slice 0 apical.
LabelVolume disc(int depth = 3) {
  LabelVolume ref({depth, 32, 32}, 0);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if ((y - 16) * (y - 16) + (x - 16) * (x - 16) <= 36) ref(z, y, x) = kLV;
  return ref;
}

void paint(LabelVolume& v, int z, int y0, int x0, int h, int w, std::uint8_t label) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) v(z, y, x) = label;
}

void failure_rules(Check& c) {
  const failure::ToleranceSpec spec{};
  auto agree = [&](const LabelVolume& pred, const LabelVolume& ref, const std::string& what) {
    const auto fs = failure::compute_failure_set(pred, ref, spec);
    c.expect(fs.voxel_mask == oracle::failure_mask(pred, ref, spec.outside_voxels, spec.inside_voxels, spec.min_cluster),
             what + ": differs from rule evaluator");
    return fs;
  };
  const auto ref = disc();

  // Threshold exceedance: beyond the band fails, within it does not.
  auto far = ref;
  paint(far, 1, 15, 26, 4, 4, kLV);
  c.expect(agree(far, ref, "far blob").failure_voxels() == 16, "16-voxel blob 4+ voxels out not flagged");
  auto near = ref;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if ((y - 16) * (y - 16) + (x - 16) * (x - 16) <= 72) near(1, y, x) = kLV;
  c.expect(agree(near, ref, "tolerance band").failure_voxels() == 0, "errors inside band flagged");

  // Minimum cluster size on mid slices, 4-connectivity.
  auto small = ref;
  paint(small, 1, 2, 2, 3, 3, kLV);
  c.expect(agree(small, ref, "9-voxel cluster").failure_voxels() == 0, "9-voxel cluster flagged");
  auto ten = ref;
  paint(ten, 1, 2, 2, 2, 5, kLV);
  c.expect(agree(ten, ref, "10-voxel cluster").failure_voxels() == 10, "10-voxel cluster not flagged");
  auto diag = ref;
  for (int i = 0; i < 12; ++i) diag(1, 1 + i, 1 + i) = kLV;
  c.expect(agree(diag, ref, "diagonal chain").failure_voxels() == 0, "8-connected chain treated as one cluster");

  // Apical and out-of-range slices are exempt from the size rule.
  auto apex = ref;
  paint(apex, 0, 2, 2, 3, 3, kLV);
  c.expect(agree(apex, ref, "apical cluster").failure_voxels() == 9, "apical small cluster not flagged");
  auto outside = disc(5);
  const auto ref5 = outside;
  outside(4, 0, 0) = kRV;
  outside(3, 30, 30) = kLVM;
  c.expect(agree(outside, ref5, "above base").failure_voxels() == 2, "voxels beyond the heart not flagged");

  // Random fixtures against the rule evaluator, then the tolerance sweep.
  std::mt19937_64 rng(77);
  for (int k = 0; k < 50; ++k) {
    const Shape3 s{4, 24, 24};
    LabelVolume r(s, 0);
    for (int z = 1; z < 3; ++z) {
      const auto lv = oracle::random_boxes(rng, {1, 24, 24}, 3, kLV);
      const auto my = oracle::random_boxes(rng, {1, 24, 24}, 2, kLVM);
      for (int i = 0; i < 24 * 24; ++i) r.slice(z)[i] = lv[i] ? kLV : my[i];
    }
    auto p = r;
    for (int b = 0; b < 6; ++b) {
      const auto blob = oracle::random_boxes(rng, s, 1, static_cast<std::uint8_t>(1 + b % 3));
      for (std::size_t i = 0; i < s.size(); ++i)
        if (blob[i]) p[i] = b % 4 == 3 ? 0 : blob[i];
    }
    agree(p, r, fmt::format("random fixture {}", k));
    double prev = 2.0;
    for (int t = 0; t <= 10; ++t) {
      const auto fs = failure::compute_failure_set(p, r, {t, std::min(t, 2), 10, 4});
      const double f = failure::failure_fraction(fs, p, r);
      c.expect(f <= prev, fmt::format("fixture {} fraction rises at t={}", k, t));
      prev = f;
    }
  }
}

void correction_monotone(Check& c) {
  std::mt19937_64 rng(31);
  const Shape3 s{3, 16, 16};
  const Spacing spacing{1.4, 1.4, 8.0};
  for (int k = 0; k < 100; ++k) {
    const auto pred = oracle::random_labels(rng, s, 0.4);
    const auto ref = oracle::random_labels(rng, s, 0.4);
    std::vector<detect::VoxelRegion> regions;
    const int n = std::uniform_int_distribution<int>(0, 6)(rng);
    for (int i = 0; i < n; ++i) {
      const int z = std::uniform_int_distribution<int>(0, 2)(rng);
      const int gy = std::uniform_int_distribution<int>(0, 1)(rng), gx = std::uniform_int_distribution<int>(0, 1)(rng);
      regions.push_back({z, gy * 8, gx * 8, gy * 8 + 8, gx * 8 + 8});
    }
    const auto out = eval::simulate_correction(pred, ref, regions);
    for (std::uint8_t cl = 1; cl < 4; ++cl)
      c.expect(eval::dice_3d(out, ref, cl) >= eval::dice_3d(pred, ref, cl), fmt::format("fixture {} class {}", k, cl));
    std::vector<detect::VoxelRegion> all;
    for (int z = 0; z < 3; ++z)
      for (int gy = 0; gy < 2; ++gy)
        for (int gx = 0; gx < 2; ++gx) all.push_back({z, gy * 8, gx * 8, gy * 8 + 8, gx * 8 + 8});
    const auto full = eval::simulate_correction(pred, ref, all);
    for (std::uint8_t cl = 1; cl < 4; ++cl) {
      c.expect(eval::dice_3d(full, ref, cl) == 1.0, fmt::format("fixture {} full dice", k));
      c.expect(eval::hausdorff_3d(full, ref, cl, spacing) == 0.0, fmt::format("fixture {} full hd", k));
    }
  }
}

template <typename F>
void finite_difference(Check& c, const std::string& name, F f, torch::Tensor x) {
  x = x.clone().set_requires_grad(true);
  f(x).backward();
  const auto g = x.grad().view(-1);
  const double h = 1e-6;
  auto flat = x.detach().clone().view(-1);
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto xp = flat.clone(), xm = flat.clone();
    xp[i] += h;
    xm[i] -= h;
    const double fd = (f(xp.view(x.sizes())).template item<double>() - f(xm.view(x.sizes())).template item<double>()) / (2 * h);
    const double an = g[i].template item<double>();
    c.expect(std::abs(fd - an) <= 1e-3 * std::max(1e-3, std::abs(fd)), fmt::format("{} d[{}]: {} vs {}", name, i, an, fd));
  }
}

void loss_gradients(Check& c) {
  torch::manual_seed(12);
  for (int k = 0; k < 3; ++k) {
    const auto logits = torch::randn({1, 4, 8, 8}, torch::kDouble);
    const auto target = torch::randint(0, 4, {1, 8, 8}, torch::kLong);
    finite_difference(c, "soft-dice", [&](const torch::Tensor& z) { return nn::soft_dice_loss(torch::softmax(z, 1), target); }, logits);
    finite_difference(c, "cross-entropy", [&](const torch::Tensor& z) { return nn::cross_entropy_loss(torch::softmax(z, 1), target); }, logits);
    finite_difference(c, "brier", [&](const torch::Tensor& z) { return nn::brier_loss(torch::softmax(z, 1), target); }, logits);
    const auto dl = torch::randn({1, 2, 8, 8}, torch::kDouble);
    const auto t = torch::randint(0, 2, {1, 8, 8}).to(torch::kDouble);
    finite_difference(c, "detection", [&](const torch::Tensor& z) { return nn::detection_loss(torch::softmax(z, 1).select(1, 1), t, 25.0); }, dl);
  }
}

void risk_coverage(Check& c) {
  std::mt19937_64 rng(5);
  auto monotone = [&](const unc::RiskCoverageCurve& curve, const std::string& what) {
    for (std::size_t p = 1; p < curve.risk.size(); ++p)
      c.expect(curve.risk[p] >= curve.risk[p - 1], fmt::format("{} drops at {}", what, p));
  };
  for (int k = 0; k < 50; ++k) {
    LabelVolume ref({3, 13, 11}, 0), pred({3, 13, 11}, 0);
    ImageVolume u({3, 13, 11}, 0.0f);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      ref[i] = std::uniform_int_distribution<int>(0, 3)(rng);
      pred[i] = std::uniform_int_distribution<int>(0, 3)(rng);
      u[i] = std::uniform_int_distribution<int>(0, 5)(rng) / 5.0f;
    }
    monotone(unc::risk_coverage_curve(u, pred, ref), fmt::format("random fixture {}", k));
  }
  // Perfect calibration: the erroneous voxels carry the highest uncertainty.
  for (int errors : {7, 10, 23}) {
    LabelVolume ref({2, 10, 10}, 1), pred = ref;
    ImageVolume u({2, 10, 10}, 0.0f);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::uniform_real_distribution<float>(0, 0.5f)(rng);
    std::vector<std::size_t> idx(u.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int i = 0; i < errors; ++i) {
      pred[idx[i]] = 2;
      u[idx[i]] = 0.9f;
    }
    const auto curve = unc::risk_coverage_curve(u, pred, ref);
    monotone(curve, "calibrated fixture");
    const double error_pct = 100.0 * errors / static_cast<double>(u.size());
    int reach = -1;
    for (std::size_t p = 0; p < curve.risk.size(); ++p)
      if (curve.risk[p] == 0.0) reach = static_cast<int>(p);
    c.expect(std::abs(reach - (100.0 - error_pct)) <= 1.0,
             fmt::format("{} errors: zero risk up to {}%, expected {:.1f}%", errors, reach, 100.0 - error_pct));
  }
}

void geometry(Check& c) {
  torch::NoGradGuard ng;
  auto det = nn::build_detector();
  det->eval();
  for (auto [h, w] : {std::pair{80, 80}, {96, 80}, {80, 128}, {120, 128}, {160, 160}, {208, 176}}) {
    const auto out = det->forward(torch::zeros({1, 2, h, w}));
    c.expect(out.size(2) == h / 8 && out.size(3) == w / 8, fmt::format("{}x{} gives {}x{}", h, w, out.size(2), out.size(3)));
  }
  auto box = [](int h, int w, int y0, int x0, int bh, int bw) {
    Slice2D<std::uint8_t> m(h, w, 0);
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) m(y, x) = 1;
    return m;
  };
  auto crop_of = [](const Slice2D<std::uint8_t>& seg) {
    Slice2D<float> img(seg.h, seg.w, 0.5f), um(seg.h, seg.w, 0.1f);
    return detect::crop_for_detection(img, um, seg);
  };
  const auto empty = crop_of(Slice2D<std::uint8_t>(128, 160, 0));
  c.expect(empty.rect == detect::CropRect{24, 40, 80, 80} && empty.image.h == 80 && empty.image.w == 80,
           "empty segmentation is not a centred 80x80 crop");
  const auto a = crop_of(box(200, 200, 50, 60, 70, 90));
  c.expect(a.rect.height == 80 && a.rect.width == 96, fmt::format("70x90 box gives {}x{}", a.rect.height, a.rect.width));
  const auto b = crop_of(box(200, 200, 30, 40, 120, 128));
  c.expect(b.rect == detect::CropRect{30, 40, 120, 128}, fmt::format("120x128 box gives {}x{}", b.rect.height, b.rect.width));
}

pipeline::ExperimentConfig e2e_config(const fs::path& work) {
  json j{{"dataset_root", (work / "data").string()},
         {"output_root", (work / "exp").string()},
         {"arch", "drn"},
         {"loss", "ce"},
         {"T", 10},
         {"k", 2},
         {"seeds", {{"split", 1}, {"segmentation", 1}, {"detector", 1}, {"inference", 1}}},
         {"segmentation", {{"iterations", 5000}, {"batch_size", 8}, {"width", 0.125}, {"decay_step", 4000}}},
         {"detector", {{"iterations", 2000}, {"batch_size", 8}}}};
  return pipeline::config_from_json(j);
}

void prepare(const fs::path& work) {
  if (fs::exists(work / "data" / ".complete")) return;
  io::PhantomOptions po;
  po.seed = 1;
  io::write_phantom_dataset(work / "data", 6, po);
  io::write_text_atomic(work / "data" / ".complete", "30\n");
}

void end_to_end(Check& c, const fs::path& work) {
  prepare(work);
  const auto cfg = e2e_config(work);
  pipeline::RunOptions opts;
  opts.log = [](const std::string& line) { std::cerr << line << std::endl; };
  std::set<pipeline::Stage> all(pipeline::kAllStages.begin(), pipeline::kAllStages.end());
  pipeline::run_pipeline(cfg, all, opts);
  const auto rep = json::parse(io::read_text(fs::path(cfg.output_root) / "report.json"));
  c.expect(rep.at("patients").get<int>() == 30, "report does not cover 30 patients");
  const auto& md = rep.at("compare").at("summary").at("mean_dice");
  const double delta = md.at("delta").get<double>(), p = md.at("p_value").get<double>();
  c.expect(delta >= 0.02, fmt::format("mean Dice gain {:.4f} < 0.02 ({:.4f} -> {:.4f})", delta,
                                      md.at("before").get<double>(), md.at("after").get<double>()));
  c.expect(p < 0.05, fmt::format("Mann-Whitney p = {:.4g}", p));
  std::cerr << fmt::format("end-to-end: mean Dice {:.4f} -> {:.4f}, p = {:.4g}", md.at("before").get<double>(),
                           md.at("after").get<double>(), p)
            << std::endl;
}

void mc_ablation(Check& c, const fs::path& work) {
  const auto cfg = e2e_config(work);
  const std::vector<int> values{1, 10};
  const auto cached = fs::path(cfg.output_root) / "ablation" / "mc_samples.json";
  json out;
  if (fs::exists(cached)) {
    out = json::parse(io::read_text(cached));
    if (out.at("config_hash") != pipeline::config_hash(cfg) || out.at("values") != json(values)) out = nullptr;
  }
  if (out.is_null()) {
    pipeline::RunOptions opts;
    opts.log = [](const std::string& line) { std::cerr << line << std::endl; };
    out = pipeline::run_ablation(pipeline::AblationKind::McSamples, cfg, values, opts);
  }
  const auto& rows = out.at("rows");
  const double d1 = rows.at(0).at("mean_dice").get<double>(), d10 = rows.at(1).at("mean_dice").get<double>();
  c.expect(rows.at(0).at("T") == 1 && rows.at(1).at("T") == 10, "unexpected rows");
  c.expect(d10 >= d1, fmt::format("Dice T=10 {:.4f} < T=1 {:.4f}", d10, d1));
  std::cerr << fmt::format("mc ablation: T=1 {:.4f}, T=10 {:.4f}", d1, d10) << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_run";
  if (const char* env = std::getenv("CMR_ACCEPTANCE_DIR")) work = env;
  if (argc > 1) work = argv[1];
  fs::create_directories(work);
  torch::set_num_threads(1);

  criterion("uncertainty maps", 1, uncertainty_math);
  criterion("metric oracles", 30, metric_oracles);
  criterion("failure-oracle rules", 0, failure_rules);
  criterion("correction monotonicity", 0, correction_monotone);
  criterion("loss gradients", 0, loss_gradients);
  criterion("risk-coverage", 0, risk_coverage);
  criterion("detector geometry", 0, geometry);
  criterion("reduced-scale end-to-end", 0, [&](Check& c) { end_to_end(c, work); });
  criterion("mc-sample ablation", 0, [&](Check& c) { mc_ablation(c, work); });
  std::cout << (g_failed ? fmt::format("{} criteria failed", g_failed) : std::string("all criteria passed")) << std::endl;
  return g_failed ? 1 : 0;
}
