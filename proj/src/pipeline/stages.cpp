#include <chrono>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "cmr/eval/correction.hpp"
#include "cmr/eval/curves.hpp"
#include "cmr/io/array_store.hpp"
#include "cmr/io/text_file.hpp"
#include "cmr/nn/detector.hpp"
#include "cmr/nn/segmentation.hpp"
#include "cmr/pipeline/pipeline.hpp"
#include "cmr/seg/probability.hpp"
#include "cmr/unc/uncertainty.hpp"
#include "internal.hpp"

namespace cmr::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<const char*, 9> kStageNames{"ingest", "train-seg",    "infer",  "umap",  "oracle",
                                                 "train-detect", "detect", "correct", "report"};

std::string phase_key(io::Phase p, const char* what) { return fmt::format("{}_{}", io::to_string(p), what); }
int idx(io::Phase p) { return static_cast<int>(p); }

bool per_fold(Stage s) { return s != Stage::Ingest && s != Stage::Report; }

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Config keys read by each stage, prerequisites included.
std::vector<std::string> stage_keys(Stage s) {
  std::vector<std::string> keys{"dataset_root", "k", "seeds.split"};
  auto add = [&](std::initializer_list<const char*> more) { keys.insert(keys.end(), more.begin(), more.end()); };
  const int n = static_cast<int>(s);
  if (n >= static_cast<int>(Stage::TrainSeg)) add({"arch", "loss", "segmentation", "seeds.segmentation"});
  if (n >= static_cast<int>(Stage::Infer)) add({"mc_enabled", "T", "seeds.inference"});
  if (s == Stage::Umap || n >= static_cast<int>(Stage::TrainDetect)) add({"umap"});
  if (s == Stage::Oracle || n >= static_cast<int>(Stage::TrainDetect)) add({"tolerance"});
  if (n >= static_cast<int>(Stage::TrainDetect)) add({"patch_size", "detector", "seeds.detector"});
  if (n >= static_cast<int>(Stage::Detect)) add({"threshold"});
  return keys;
}

std::uint64_t seed_for(std::uint64_t base, std::string_view salt) { return detail::derived_seed(base, salt); }

class Runner {
 public:
  Runner(const ExperimentConfig& c, const RunOptions& o) : cfg_(c), opt_(o), layout_{c.output_root} {}

  RunResult run(const std::set<Stage>& stages) {
    RunResult result;
    for (Stage s : kAllStages) {
      if (!stages.contains(s)) continue;
      if (per_fold(s)) {
        for (int f : cfg_.active_folds()) result.outcomes.push_back(run_one(s, f));
      } else {
        result.outcomes.push_back(run_one(s, std::nullopt));
      }
    }
    if (stages.contains(Stage::Report)) {
      result.reports.push_back(layout_.report_file());
      for (int f : cfg_.active_folds()) result.reports.push_back(layout_.reports_dir(f) / "cases.json");
    }
    write_provenance();
    return result;
  }

 private:
  bool done(Stage s, std::optional<int> fold) const {
    const auto m = layout_.marker(s, fold);
    if (!fs::exists(m)) return false;
    try {
      return json::parse(io::read_text(m)).at("stage_hash").get<std::string>() == stage_hash(cfg_, s);
    } catch (const std::exception&) {
      return false;
    }
  }

  void require(Stage d, std::optional<int> dep_fold, Stage for_stage, std::optional<int> fold) const {
    if (done(d, dep_fold)) return;
    throw Error(ErrorCode::MissingDependency,
                fmt::format("stage '{}'{} needs '{}'{} to be completed with the current configuration",
                            to_string(for_stage), fold_suffix(fold), to_string(d), fold_suffix(dep_fold)));
  }

  static std::string fold_suffix(std::optional<int> f) { return f ? fmt::format(" (fold {})", *f) : std::string(); }

  void check_dependencies(Stage s, std::optional<int> fold) const {
    for (Stage d : dependencies(s)) {
      if (!per_fold(d)) {
        require(d, std::nullopt, s, fold);
      } else if (s == Stage::Report) {
        for (int f : cfg_.active_folds()) require(d, f, s, fold);
      } else {
        require(d, fold, s, fold);
      }
    }
    if (s == Stage::TrainDetect)
      for (int g = 0; g < cfg_.k; ++g)
        if (g != *fold) {
          require(Stage::Umap, g, s, fold);
          require(Stage::Oracle, g, s, fold);
        }
  }

  StageOutcome run_one(Stage s, std::optional<int> fold) {
    StageOutcome out{s, fold, false};
    if (!opt_.force && done(s, fold)) {
      log(fmt::format("{}{}: up to date, skipped", to_string(s), fold_suffix(fold)));
      out.skipped = true;
      history_.push_back({{"stage", to_string(s)}, {"fold", fold ? json(*fold) : json()}, {"skipped", true}});
      return out;
    }
    check_dependencies(s, fold);
    const auto marker = layout_.marker(s, fold);
    std::error_code ec;
    fs::remove(marker, ec);
    const auto started = now_iso();
    log(fmt::format("{}{}: running", to_string(s), fold_suffix(fold)));
    switch (s) {
      case Stage::Ingest: ingest(); break;
      case Stage::TrainSeg: train_seg(*fold); break;
      case Stage::Infer: infer(*fold); break;
      case Stage::Umap: umap(*fold); break;
      case Stage::Oracle: oracle(*fold); break;
      case Stage::TrainDetect: train_detect(*fold); break;
      case Stage::Detect: detect(*fold); break;
      case Stage::Correct: correct(*fold); break;
      case Stage::Report: report(); break;
    }
    json m{{"stage", to_string(s)},
           {"fold", fold ? json(*fold) : json()},
           {"stage_hash", stage_hash(cfg_, s)},
           {"config_hash", config_hash(cfg_)},
           {"seeds", to_json(cfg_).at("seeds")},
           {"started", started},
           {"finished", now_iso()}};
    fs::create_directories(marker.parent_path());
    io::write_text_atomic(marker, m.dump(2));
    history_.push_back(m);
    return out;
  }

  void write_provenance() {
    json prov;
    if (fs::exists(layout_.provenance_file())) {
      try {
        prov = json::parse(io::read_text(layout_.provenance_file()));
      } catch (const std::exception&) {
        prov = json::object();
      }
    }
    if (!prov.contains("runs")) prov["runs"] = json::array();
    prov["config"] = to_json(cfg_);
    prov["config_hash"] = config_hash(cfg_);
    prov["runs"].push_back({{"finished", now_iso()}, {"stages", history_}});
    io::write_text_atomic(layout_.provenance_file(), prov.dump(2));
  }

  void log(const std::string& m) const {
    if (opt_.log) opt_.log(m);
  }

  std::vector<std::string> test_patients(int f) const { return split().test_patients(f); }
  const io::FoldSplit& split() const {
    if (!split_) split_ = read_folds(layout_);
    return *split_;
  }

  // ---- stages ----

  void ingest() {
    if (cfg_.dataset_root.empty())
      throw Error(ErrorCode::ConfigError,
                  fmt::format("dataset_root is not set (config key or {} environment variable)", kDatasetEnv));
    const auto ids = io::list_acdc_patients(cfg_.dataset_root);
    if (ids.empty()) throw Error(ErrorCode::MissingFile, "no patients under " + cfg_.dataset_root.string());
    std::vector<std::pair<std::string, io::DiseaseGroup>> groups;
    for (const auto& pid : ids) {
      IngestedStudy s;
      s.original = io::load_acdc_patient(cfg_.dataset_root, pid);
      s.working = io::preprocess_volume(s.original);
      write_ingested(layout_.ingest_file(pid), s);
      groups.emplace_back(pid, s.original.group);
    }
    const auto folds = io::make_stratified_folds(groups, cfg_.k, cfg_.seeds.split);
    json j{{"k", folds.k}, {"seed", folds.seed}, {"assignments", folds.assignments}};
    io::write_text_atomic(layout_.folds_file(), j.dump(2));
    split_.reset();
    log(fmt::format("ingest: {} patients, {} folds", ids.size(), cfg_.k));
  }

  void train_seg(int f) {
    std::vector<nn::TrainingSlice> data;
    for (const auto& pid : split().train_patients(f)) {
      const auto s = read_ingested(layout_.ingest_file(pid));
      for (io::Phase p : io::kPhases)
        for (int z = 0; z < s.working.phase(p).image.depth(); ++z)
          data.push_back({extract_slice(s.working.phase(p).image, z), extract_slice(s.working.phase(p).reference, z)});
    }
    auto sc = cfg_.segmentation;
    sc.seed = seed_for(cfg_.seeds.segmentation, fmt::format("fold{}", f));
    const int every = std::max(1, sc.iterations / 10);
    nn::train_segmentation(sc, data, layout_.seg_checkpoint(f), [&](int it, double loss, double lr) {
      if ((it + 1) % every == 0) log(fmt::format("  train-seg fold {}: iteration {} loss {:.4f} lr {:.2g}", f, it + 1, loss, lr));
    });
  }

  void infer(int f) {
    const auto model = nn::load_segmentation_model(layout_.seg_checkpoint(f));
    fs::create_directories(layout_.probs_file(f, "x").parent_path());
    fs::create_directories(layout_.labels_file(f, "x").parent_path());
    for (const auto& pid : test_patients(f)) {
      const auto s = read_ingested(layout_.ingest_file(pid));
      io::ArrayWriter pw(layout_.probs_file(f, pid));
      io::ArrayWriter lw(layout_.labels_file(f, pid));
      for (io::Phase p : io::kPhases) {
        const auto& img = s.working.phase(p).image;
        const auto seed = seed_for(cfg_.seeds.inference, fmt::format("{}/{}", pid, io::to_string(p)));
        const auto pv = nn::mc_inference(model, img, cfg_.T, cfg_.mc_enabled, seed);
        const std::array<std::size_t, 4> dims{static_cast<std::size_t>(img.depth()),
                                              static_cast<std::size_t>(img.height()),
                                              static_cast<std::size_t>(img.width()), kNumClasses};
        pw.write(phase_key(p, "probs"), dims, pv.probs);
        if (pv.mc_enabled) {
          // Per-voxel sample spread replaces the raw sample stack on disk.
          const auto b = unc::bayesian_values(pv.samples, pv.T, pv.voxel_count(), pv.num_classes);
          pw.write(phase_key(p, "sample_std"), std::span<const std::size_t>(dims.data(), 3), b);
        }
        const auto working = seg::keep_largest_components(seg::argmax_labels(pv));
        lw.write(phase_key(p, "working"), working);
        lw.write(phase_key(p, "original"), io::to_original_grid(working, *s.working.geometry));
      }
      pw.set_attribute("meta", json{{"mc_enabled", cfg_.mc_enabled}, {"T", cfg_.T}}.dump());
      pw.commit();
      lw.commit();
    }
  }

  void umap(int f) {
    fs::create_directories(layout_.umap_file(f, "x").parent_path());
    for (const auto& pid : test_patients(f)) {
      io::ArrayReader r(layout_.probs_file(f, pid));
      const auto meta = json::parse(r.attribute("meta"));
      io::ArrayWriter w(layout_.umap_file(f, pid));
      for (io::Phase p : io::kPhases) {
        const auto arr = r.read_float(phase_key(p, "probs"));
        seg::ProbabilityVolume pv;
        pv.shape = {static_cast<int>(arr.dims[0]), static_cast<int>(arr.dims[1]), static_cast<int>(arr.dims[2])};
        pv.probs = arr.data;
        w.write(phase_key(p, "entropy"), unc::entropy_map(pv).values);
        if (r.has(phase_key(p, "sample_std"))) w.write(phase_key(p, "bayesian"), r.read_image(phase_key(p, "sample_std")));
      }
      w.set_attribute("meta", json{{"arch", seg::to_string(cfg_.arch)},
                                   {"loss", seg::to_string(cfg_.loss)},
                                   {"mc_enabled", meta.at("mc_enabled")},
                                   {"T", meta.at("T")}}
                                  .dump());
      w.commit();
    }
  }

  void oracle(int f) {
    fs::create_directories(layout_.failure_file(f, "x").parent_path());
    for (const auto& pid : test_patients(f)) {
      const auto s = read_ingested(layout_.ingest_file(pid));
      const auto labels = read_labels(layout_.labels_file(f, pid));
      io::ArrayWriter w(layout_.failure_file(f, pid));
      json stats;
      for (io::Phase p : io::kPhases) {
        const auto& ref = s.working.phase(p).reference;
        const auto fs_ = failure::compute_failure_set(labels.working[idx(p)], ref, cfg_.tolerance, cfg_.patch_size);
        w.write(phase_key(p, "failures"), fs_.voxel_mask);
        long long pos = 0, total = 0;
        for (const auto& g : fs_.patch_labels) {
          pos += g.positives();
          total += static_cast<long long>(g.cells.size());
        }
        stats[std::string(io::to_string(p))] = {{"failure_voxels", fs_.failure_voxels()},
                                   {"error_voxels", failure::error_voxels(labels.working[idx(p)], ref)},
                                   {"positive_patches", pos},
                                   {"patches", total}};
      }
      w.set_attribute("meta", stats.dump());
      w.commit();
    }
  }

  void train_detect(int f) {
    auto data = detail::detection_training_data(layout_, cfg_, f, cfg_.patch_size);
    auto dc = cfg_.detector;
    dc.seed = seed_for(cfg_.seeds.detector, fmt::format("fold{}", f));
    if (dc.w_pos <= 0.0) dc.w_pos = detect::compute_w_pos(data.patch_counts);
    log(fmt::format("  train-detect fold {}: {} slices, w_pos {:.2f}", f, data.slices.size(), dc.w_pos));
    const int every = std::max(1, dc.iterations / 10);
    nn::train_detector(dc, data.slices, layout_.detector_checkpoint(f), [&](int it, double loss, double) {
      if ((it + 1) % every == 0) log(fmt::format("  train-detect fold {}: iteration {} loss {:.4f}", f, it + 1, loss));
    });
  }

  void detect(int f) {
    auto detector = nn::load_detector(layout_.detector_checkpoint(f));
    fs::create_directories(layout_.detection_file(f, "x").parent_path());
    for (const auto& pid : test_patients(f)) {
      const auto s = read_ingested(layout_.ingest_file(pid));
      const auto labels = read_labels(layout_.labels_file(f, pid));
      json j;
      for (io::Phase p : io::kPhases) {
        const auto um = read_umap(layout_.umap_file(f, pid), p, cfg_.umap_kind);
        const auto r = nn::detect_failure_regions(detector, s.working.phase(p).image, um, labels.working[idx(p)],
                                                  cfg_.threshold);
        j[std::string(io::to_string(p))] = to_json(r);
      }
      io::write_text_atomic(layout_.detection_file(f, pid), j.dump());
    }
  }

  void correct(int f) {
    for (const auto& pid : test_patients(f)) {
      const auto s = read_ingested(layout_.ingest_file(pid));
      const auto labels = read_labels(layout_.labels_file(f, pid));
      const auto det = read_detections(layout_.detection_file(f, pid));
      io::ArrayWriter w(layout_.corrected_file(f, pid));
      for (io::Phase p : io::kPhases) {
        const auto flagged = io::mask_to_original_grid(detect::region_mask(det[idx(p)]), *s.working.geometry);
        w.write(phase_key(p, "corrected"),
                eval::simulate_correction(labels.original[idx(p)], s.original.phase(p).reference, flagged));
      }
      w.commit();
    }
  }

  void report() {
    std::vector<eval::CaseMetrics> all_auto, all_corr;
    std::vector<detect::DetectionResult> all_det;
    std::vector<MaskVolume> all_fail;
    json folds = json::object();
    for (int f : cfg_.active_folds()) {
      std::vector<eval::CaseMetrics> fa, fc;
      std::vector<detect::DetectionResult> dets;
      std::vector<MaskVolume> fails;
      std::array<double, unc::RiskCoverageCurve::kPoints> risk_sum{};
      int risk_n = 0;
      for (const auto& pid : test_patients(f)) {
        const auto s = read_ingested(layout_.ingest_file(pid));
        const auto labels = read_labels(layout_.labels_file(f, pid));
        const auto corr = read_corrected(layout_.corrected_file(f, pid));
        const auto det = read_detections(layout_.detection_file(f, pid));
        const auto& o = s.original;
        fa.push_back(eval::evaluate_case(pid, labels.original[0], labels.original[1], o.phase(io::Phase::ED).reference,
                                         o.phase(io::Phase::ES).reference, o.spacing));
        fc.push_back(eval::evaluate_case(pid, corr[0], corr[1], o.phase(io::Phase::ED).reference,
                                         o.phase(io::Phase::ES).reference, o.spacing));
        for (io::Phase p : io::kPhases) {
          dets.push_back(det[idx(p)]);
          fails.push_back(read_failure_mask(layout_.failure_file(f, pid), p));
          const auto um = read_umap(layout_.umap_file(f, pid), p, cfg_.umap_kind);
          const auto& ref = s.working.phase(p).reference;
          if (unc::foreground_bbox(ref).empty()) continue;
          const auto rc = unc::risk_coverage_curve(um.values, labels.working[idx(p)], ref);
          for (int i = 0; i < unc::RiskCoverageCurve::kPoints; ++i) risk_sum[i] += rc.risk[i];
          ++risk_n;
        }
      }
      const auto dir = layout_.reports_dir(f);
      fs::create_directories(dir);
      json cases = json::array();
      for (std::size_t i = 0; i < fa.size(); ++i)
        cases.push_back({{"patient_id", fa[i].patient_id}, {"auto", eval::to_json(fa[i])}, {"corrected", eval::to_json(fc[i])}});
      io::write_text_atomic(dir / "cases.json", cases.dump(2));
      json fold_j = {{"auto", eval::summarize(fa)}, {"corrected", eval::summarize(fc)}, {"detection", detection_json(dets, fails, dir)}};
      std::string rc_csv = "coverage,mean_risk\n";
      for (int i = 0; i < unc::RiskCoverageCurve::kPoints; ++i)
        rc_csv += fmt::format("{},{:.6f}\n", i, risk_n ? risk_sum[i] / risk_n : 0.0);
      io::write_text_atomic(dir / "risk_coverage.csv", rc_csv);
      if (fa.size() >= 1) fold_j["compare"] = eval::compare(fa, fc);
      io::write_text_atomic(dir / "summary.json", fold_j.dump(2));
      folds[std::to_string(f)] = fold_j;
      all_auto.insert(all_auto.end(), fa.begin(), fa.end());
      all_corr.insert(all_corr.end(), fc.begin(), fc.end());
      all_det.insert(all_det.end(), dets.begin(), dets.end());
      all_fail.insert(all_fail.end(), fails.begin(), fails.end());
    }
    json rep{{"config_hash", config_hash(cfg_)},
             {"arch", seg::to_string(cfg_.arch)},
             {"loss", seg::to_string(cfg_.loss)},
             {"umap", unc::to_string(cfg_.umap_kind)},
             {"mc_enabled", cfg_.mc_enabled},
             {"T", cfg_.T},
             {"decision_threshold", cfg_.threshold},
             {"patients", all_auto.size()},
             {"auto", eval::summarize(all_auto)},
             {"corrected", eval::summarize(all_corr)},
             {"compare", eval::compare(all_auto, all_corr)},
             {"detection", detection_json(all_det, all_fail, layout_.root)},
             {"folds", folds}};
    io::write_text_atomic(layout_.report_file(), rep.dump(2));
  }

  // Slice PR and sensitivity curves; CSVs go next to the summary.
  json detection_json(const std::vector<detect::DetectionResult>& dets, const std::vector<MaskVolume>& fails,
                      const fs::path& dir) const {
    json j;
    try {
      const auto pr = eval::slice_detection_pr(dets, fails);
      j["slice_average_precision"] = pr.average_precision;
      std::string csv = "threshold,precision,recall\n";
      for (std::size_t i = 0; i < pr.thresholds.size(); ++i)
        csv += fmt::format("{:.6f},{:.6f},{:.6f}\n", pr.thresholds[i], pr.precision[i], pr.recall[i]);
      io::write_text_atomic(dir / "slice_pr.csv", csv);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoPositives) throw;
      j["slice_average_precision"] = nullptr;
    }
    const auto curve = eval::voxel_sensitivity_vs_fp(dets, fails, eval::default_thresholds());
    std::string csv = "threshold,sensitivity,false_positive_regions\n";
    for (const auto& p : curve)
      csv += fmt::format("{:.6f},{},{:.6f}\n", p.threshold, p.sensitivity ? fmt::format("{:.6f}", *p.sensitivity) : "",
                         p.false_positive_regions);
    io::write_text_atomic(dir / "sensitivity_fp.csv", csv);
    long long flagged = 0;
    for (const auto& d : dets) flagged += static_cast<long long>(d.flagged_regions.size());
    j["flagged_regions"] = flagged;
    j["volumes"] = dets.size();
    return j;
  }

  const ExperimentConfig& cfg_;
  RunOptions opt_;
  Layout layout_;
  mutable std::optional<io::FoldSplit> split_;
  json history_ = json::array();
};

}  // namespace

namespace detail {

std::uint64_t derived_seed(std::uint64_t base, std::string_view salt) { return fnv1a(salt, base ^ 0x9e3779b97f4a7c15ULL); }

DetectionData detection_training_data(const Layout& layout, const ExperimentConfig& cfg, int fold, int patch_size) {
  DetectionData out;
  const auto split = read_folds(layout);
  for (int g = 0; g < cfg.k; ++g) {
    if (g == fold) continue;
    for (const auto& pid : split.test_patients(g)) {
      const auto s = read_ingested(layout.ingest_file(pid));
      for (io::Phase p : io::kPhases) {
        const auto um = read_umap(layout.umap_file(g, pid), p, cfg.umap_kind);
        const auto mask = read_failure_mask(layout.failure_file(g, pid), p);
        long long pos = 0, total = 0;
        for (int z = 0; z < mask.depth(); ++z) {
          auto m = extract_slice(mask, z);
          const auto grid = failure::patch_labels(failure::pad_to_multiple(m, patch_size), patch_size);
          pos += grid.positives();
          total += static_cast<long long>(grid.cells.size());
          out.slices.push_back({extract_slice(s.working.phase(p).image, z), extract_slice(um.values, z), std::move(m)});
        }
        out.patch_counts.emplace_back(pos, total);
      }
    }
  }
  return out;
}

}  // namespace detail

std::string_view to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }

Stage parse_stage(std::string_view s) {
  for (Stage st : kAllStages)
    if (to_string(st) == s) return st;
  throw Error(ErrorCode::ConfigError, fmt::format("unknown stage '{}'", s));
}

std::vector<Stage> dependencies(Stage s) {
  switch (s) {
    case Stage::Ingest: return {};
    case Stage::TrainSeg: return {Stage::Ingest};
    case Stage::Infer: return {Stage::TrainSeg};
    case Stage::Umap: return {Stage::Infer};
    case Stage::Oracle: return {Stage::Infer};
    case Stage::TrainDetect: return {Stage::Umap, Stage::Oracle};
    case Stage::Detect: return {Stage::TrainDetect, Stage::Umap};
    case Stage::Correct: return {Stage::Detect};
    case Stage::Report: return {Stage::Correct, Stage::Oracle};
  }
  return {};
}

std::string stage_hash(const ExperimentConfig& c, Stage s) {
  const json full = to_json(c);
  json subset = json::object();
  for (const auto& key : stage_keys(s)) {
    const auto ptr = json::json_pointer("/" + [&] {
      std::string p = key;
      std::replace(p.begin(), p.end(), '.', '/');
      return p;
    }());
    subset[ptr] = full.at(ptr);
  }
  return fmt::format("{:016x}", fnv1a(subset.dump()));
}

RunResult run_pipeline(const ExperimentConfig& config, const std::set<Stage>& stages, const RunOptions& options) {
  config.validate();
  ExperimentLock lock(config.output_root);
  Runner r(config, options);
  return r.run(stages);
}

}  // namespace cmr::pipeline
