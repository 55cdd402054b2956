#include <cmath>

#include <fmt/format.h>

#include "cmr/eval/correction.hpp"
#include "cmr/eval/curves.hpp"
#include "cmr/io/text_file.hpp"
#include "cmr/nn/segmentation.hpp"
#include "cmr/pipeline/pipeline.hpp"
#include "internal.hpp"

namespace cmr::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int idx(io::Phase p) { return static_cast<int>(p); }

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

double stdev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

void require_marker(const Layout& layout, const ExperimentConfig& cfg, Stage s, std::optional<int> fold) {
  const auto m = layout.marker(s, fold);
  bool ok = false;
  if (fs::exists(m)) {
    try {
      ok = json::parse(io::read_text(m)).at("stage_hash").get<std::string>() == stage_hash(cfg, s);
    } catch (const std::exception&) {
    }
  }
  if (!ok)
    throw Error(ErrorCode::MissingDependency,
                fmt::format("ablation needs stage '{}'{} completed with the current configuration", to_string(s),
                            fold ? fmt::format(" (fold {})", *fold) : std::string()));
}

void log(const RunOptions& o, const std::string& m) {
  if (o.log) o.log(m);
}

json mc_samples(const ExperimentConfig& cfg, const Layout& layout, const std::vector<int>& values, const RunOptions& o,
                std::string& csv) {
  for (int f : cfg.active_folds()) require_marker(layout, cfg, Stage::TrainSeg, f);
  csv = "T,mean_dice,std_dice,patients\n";
  json rows = json::array();
  for (int T : values) {
    std::vector<double> per_patient;
    for (int f : cfg.active_folds()) {
      for (const auto& pid : fold_patients(layout, f)) {
        per_patient.push_back(mean_dice_with_samples(cfg, f, {pid}, T));
      }
    }
    log(o, fmt::format("ablate mc_samples: T={} mean Dice {:.4f}", T, mean(per_patient)));
    csv += fmt::format("{},{:.6f},{:.6f},{}\n", T, mean(per_patient), stdev(per_patient), per_patient.size());
    rows.push_back({{"T", T}, {"mean_dice", mean(per_patient)}, {"std_dice", stdev(per_patient)}, {"per_patient", per_patient}});
  }
  return rows;
}

json patch_size(const ExperimentConfig& cfg, const Layout& layout, const std::vector<int>& values, const RunOptions& o,
                std::string& csv) {
  for (int g = 0; g < cfg.k; ++g) {
    require_marker(layout, cfg, Stage::Umap, g);
    require_marker(layout, cfg, Stage::Oracle, g);
  }
  csv = "patch_size,slice_average_precision,mean_dice_auto,mean_dice_corrected,flagged_regions\n";
  json rows = json::array();
  for (int p : values) {
    auto c = cfg;
    c.patch_size = p;
    c.detector.patch_size = p;
    c.validate();
    std::vector<detect::DetectionResult> dets;
    std::vector<MaskVolume> fails;
    std::vector<double> dice_auto, dice_corr;
    long long flagged = 0;
    for (int f : cfg.active_folds()) {
      auto data = detail::detection_training_data(layout, c, f, p);
      auto dc = c.detector;
      dc.seed = detail::derived_seed(c.seeds.detector, fmt::format("fold{}", f));
      if (dc.w_pos <= 0.0) dc.w_pos = detect::compute_w_pos(data.patch_counts);
      const auto dir = layout.root / "ablation" / "patch_size" / fmt::format("p{}", p) / fmt::format("fold{}", f);
      log(o, fmt::format("ablate patch_size: p={} fold {} training", p, f));
      nn::train_detector(dc, data.slices, dir);
      auto detector = nn::load_detector(dir);
      for (const auto& pid : fold_patients(layout, f)) {
        const auto s = read_ingested(layout.ingest_file(pid));
        const auto labels = read_labels(layout.labels_file(f, pid));
        std::array<LabelVolume, 2> corrected;
        for (io::Phase ph : io::kPhases) {
          const auto um = read_umap(layout.umap_file(f, pid), ph, c.umap_kind);
          auto r = nn::detect_failure_regions(detector, s.working.phase(ph).image, um, labels.working[idx(ph)],
                                              c.threshold);
          flagged += static_cast<long long>(r.flagged_regions.size());
          const auto mask = io::mask_to_original_grid(detect::region_mask(r), *s.working.geometry);
          corrected[idx(ph)] =
              eval::simulate_correction(labels.original[idx(ph)], s.original.phase(ph).reference, mask);
          dets.push_back(std::move(r));
          fails.push_back(read_failure_mask(layout.failure_file(f, pid), ph));
        }
        const auto& ref = s.original;
        dice_auto.push_back(eval::evaluate_case(pid, labels.original[0], labels.original[1],
                                                ref.phase(io::Phase::ED).reference, ref.phase(io::Phase::ES).reference,
                                                ref.spacing)
                                .mean_dice());
        dice_corr.push_back(eval::evaluate_case(pid, corrected[0], corrected[1], ref.phase(io::Phase::ED).reference,
                                                ref.phase(io::Phase::ES).reference, ref.spacing)
                                .mean_dice());
      }
    }
    std::optional<double> ap;
    try {
      ap = eval::slice_detection_pr(dets, fails).average_precision;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoPositives) throw;
    }
    csv += fmt::format("{},{},{:.6f},{:.6f},{}\n", p, ap ? fmt::format("{:.6f}", *ap) : "", mean(dice_auto),
                       mean(dice_corr), flagged);
    rows.push_back({{"patch_size", p},
                    {"slice_average_precision", ap ? json(*ap) : json()},
                    {"mean_dice_auto", mean(dice_auto)},
                    {"mean_dice_corrected", mean(dice_corr)},
                    {"flagged_regions", flagged}});
  }
  return rows;
}

json tolerance(const ExperimentConfig& cfg, const Layout& layout, const std::vector<int>& values, const RunOptions& o,
               std::string& csv) {
  for (int f : cfg.active_folds()) require_marker(layout, cfg, Stage::Infer, f);
  struct Case {
    LabelVolume pred, ref;
  };
  std::vector<Case> cases;
  for (int f : cfg.active_folds())
    for (const auto& pid : fold_patients(layout, f)) {
      const auto s = read_ingested(layout.ingest_file(pid));
      const auto labels = read_labels(layout.labels_file(f, pid));
      for (io::Phase p : io::kPhases) cases.push_back({labels.working[idx(p)], s.working.phase(p).reference});
    }
  // Outside sweep keeps the inside threshold at its default (capped so the
  // tolerance stays valid); the inside sweep mirrors it.
  auto fraction = [&](const failure::ToleranceSpec& spec) {
    std::vector<double> v;
    for (const auto& c : cases) {
      if (failure::error_voxels(c.pred, c.ref) == 0) continue;
      const auto fs_ = failure::compute_failure_set(c.pred, c.ref, spec, cfg.patch_size);
      v.push_back(100.0 * failure::failure_fraction(fs_, c.pred, c.ref));
    }
    return mean(v);
  };
  csv = "tolerance,outside_sweep_percent,inside_sweep_percent\n";
  json rows = json::array();
  for (int t : values) {
    auto out_spec = cfg.tolerance;
    out_spec.outside_voxels = t;
    out_spec.inside_voxels = std::min(t, cfg.tolerance.inside_voxels);
    auto in_spec = cfg.tolerance;
    in_spec.inside_voxels = t;
    in_spec.outside_voxels = std::max(t, cfg.tolerance.outside_voxels);
    const double a = fraction(out_spec), b = fraction(in_spec);
    log(o, fmt::format("ablate tolerance: {} voxels -> outside {:.2f}%, inside {:.2f}%", t, a, b));
    csv += fmt::format("{},{:.6f},{:.6f}\n", t, a, b);
    rows.push_back({{"tolerance", t}, {"outside_sweep_percent", a}, {"inside_sweep_percent", b}});
  }
  return rows;
}

}  // namespace

AblationKind parse_ablation(std::string_view s) {
  if (s == "mc_samples" || s == "mc-samples" || s == "T") return AblationKind::McSamples;
  if (s == "patch_size" || s == "patch-size") return AblationKind::PatchSize;
  if (s == "tolerance") return AblationKind::Tolerance;
  throw Error(ErrorCode::ConfigError, fmt::format("unknown ablation '{}'", s));
}

std::string_view to_string(AblationKind k) {
  switch (k) {
    case AblationKind::McSamples: return "mc_samples";
    case AblationKind::PatchSize: return "patch_size";
    case AblationKind::Tolerance: return "tolerance";
  }
  return "?";
}

std::vector<int> ablation_values(AblationKind k) {
  switch (k) {
    case AblationKind::McSamples: return {1, 3, 5, 7, 10, 20, 30, 60};
    case AblationKind::PatchSize: return {4, 8, 16};
    case AblationKind::Tolerance: return {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  }
  return {};
}

double mean_dice_with_samples(const ExperimentConfig& cfg, int fold, const std::vector<std::string>& pids, int T) {
  if (T < 1) throw Error(ErrorCode::ConfigError, "T must be >= 1");
  const Layout layout{cfg.output_root};
  const auto model = nn::load_segmentation_model(layout.seg_checkpoint(fold));
  std::vector<double> dice;
  for (const auto& pid : pids) {
    const auto s = read_ingested(layout.ingest_file(pid));
    std::array<LabelVolume, 2> labels;
    for (io::Phase p : io::kPhases) {
      const auto seed = detail::derived_seed(cfg.seeds.inference, fmt::format("{}/{}", pid, io::to_string(p)));
      const auto pv = nn::sample_predictions(model, s.working.phase(p).image, T, cfg.mc_enabled, seed);
      const auto working = seg::keep_largest_components(seg::argmax_labels(pv));
      labels[idx(p)] = io::to_original_grid(working, *s.working.geometry);
    }
    const auto& o = s.original;
    dice.push_back(eval::evaluate_case(pid, labels[0], labels[1], o.phase(io::Phase::ED).reference,
                                       o.phase(io::Phase::ES).reference, o.spacing)
                       .mean_dice());
  }
  return mean(dice);
}

json run_ablation(AblationKind kind, const ExperimentConfig& config, std::vector<int> values, const RunOptions& o) {
  config.validate();
  if (values.empty()) values = ablation_values(kind);
  ExperimentLock lock(config.output_root);
  const Layout layout{config.output_root};
  std::string csv;
  json rows;
  switch (kind) {
    case AblationKind::McSamples: rows = mc_samples(config, layout, values, o, csv); break;
    case AblationKind::PatchSize: rows = patch_size(config, layout, values, o, csv); break;
    case AblationKind::Tolerance: rows = tolerance(config, layout, values, o, csv); break;
  }
  const json out{{"ablation", to_string(kind)}, {"values", values}, {"config_hash", config_hash(config)}, {"rows", rows}};
  const auto dir = layout.root / "ablation";
  fs::create_directories(dir);
  io::write_text_atomic(dir / (std::string(to_string(kind)) + ".csv"), csv);
  io::write_text_atomic(dir / (std::string(to_string(kind)) + ".json"), out.dump(2));
  return out;
}

}  // namespace cmr::pipeline
