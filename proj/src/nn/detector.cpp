#include "cmr/nn/detector.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "cmr/error.hpp"
#include "cmr/io/text_file.hpp"
#include "cmr/nn/losses.hpp"

namespace cmr::nn {
namespace fs = std::filesystem;

void DetectorConfig::validate() const {
  if (patch_size != 4 && patch_size != 8 && patch_size != 16)
    throw Error(ErrorCode::ConfigError, "patch_size must be 4, 8 or 16");
  if (crop % patch_size != 0 || crop % 8 != 0) throw Error(ErrorCode::ConfigError, "crop must be a multiple of the patch size");
  if (!(forced_positive_fraction >= 0 && forced_positive_fraction <= 1))
    throw Error(ErrorCode::ConfigError, "forced_positive_fraction outside [0,1]");
  if (iterations < 1 || batch_size < 1 || !(lr > 0) || decay_step < 1)
    throw Error(ErrorCode::ConfigError, "invalid detector schedule");
  if (w_pos < 0) throw Error(ErrorCode::ConfigError, "w_pos must be >= 0");
}

nlohmann::json to_json(const DetectorConfig& c) {
  return {{"patch_size", c.patch_size}, {"umap_kind", unc::to_string(c.umap_kind)},
          {"w_pos", c.w_pos},           {"iterations", c.iterations},
          {"batch_size", c.batch_size}, {"lr", c.lr},
          {"decay_step", c.decay_step}, {"decay", c.decay},
          {"dropout_p", c.dropout_p},   {"crop", c.crop},
          {"forced_positive_fraction", c.forced_positive_fraction},
          {"weight_decay", c.weight_decay}, {"seed", c.seed}};
}

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.patch_size = j.value("patch_size", c.patch_size);
  if (j.contains("umap_kind")) c.umap_kind = unc::parse_map_kind(j.at("umap_kind").get<std::string>());
  c.w_pos = j.value("w_pos", c.w_pos);
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.decay_step = j.value("decay_step", c.decay_step);
  c.decay = j.value("decay", c.decay);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.crop = j.value("crop", c.crop);
  c.forced_positive_fraction = j.value("forced_positive_fraction", c.forced_positive_fraction);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

int snap_down(int v, int m) { return v >= 0 ? v / m * m : -((-v + m - 1) / m) * m; }

// Crop at (row, col) written into the batch slot.
void fill(const DetectionSlice& s, int row, int col, int crop, int patch, float* in, float* lab) {
  const std::size_t plane = static_cast<std::size_t>(crop) * crop;
  const int cells = crop / patch;
  std::fill(lab, lab + cells * cells, 0.0f);
  for (int y = 0; y < crop; ++y)
    for (int x = 0; x < crop; ++x) {
      const int sy = row + y, sx = col + x;
      const bool inside = s.image.contains(sy, sx);
      in[y * crop + x] = inside ? s.image(sy, sx) : 0.0f;
      in[plane + y * crop + x] = inside ? s.umap(sy, sx) : 0.0f;
      if (inside && s.failures(sy, sx)) lab[(y / patch) * cells + x / patch] = 1.0f;
    }
}

}  // namespace

DetectionBatch sample_training_batch(const std::vector<DetectionSlice>& data, int batch_size,
                                     double forced_positive_fraction, int crop, int patch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> positive;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (std::any_of(data[i].failures.data.begin(), data[i].failures.data.end(), [](std::uint8_t v) { return v != 0; }))
      positive.push_back(i);
  if (positive.empty()) throw Error(ErrorCode::NoPositives, "no training slice contains a segmentation failure");

  DetectionBatch b;
  const int cells = crop / patch_size;
  b.inputs = torch::zeros({batch_size, 2, crop, crop});
  b.labels = torch::zeros({batch_size, cells, cells});
  b.forced = static_cast<int>(std::floor(batch_size * forced_positive_fraction));
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, std::max(lo, hi))(rng); };

  for (int i = 0; i < batch_size; ++i) {
    int row, col;
    const DetectionSlice* s;
    if (i < b.forced) {
      s = &data[positive[uniform(0, static_cast<int>(positive.size()) - 1)]];
      std::vector<int> idx;
      for (int k = 0; k < static_cast<int>(s->failures.data.size()); ++k)
        if (s->failures.data[k]) idx.push_back(k);
      const int v = idx[uniform(0, static_cast<int>(idx.size()) - 1)];
      const int vy = v / s->failures.w, vx = v % s->failures.w;
      // Any patch-aligned crop containing the voxel.
      const int cell_y = snap_down(vy, patch_size), cell_x = snap_down(vx, patch_size);
      row = cell_y - patch_size * uniform(0, cells - 1);
      col = cell_x - patch_size * uniform(0, cells - 1);
    } else {
      s = &data[uniform(0, static_cast<int>(data.size()) - 1)];
      const int hmax = s->image.h - crop, wmax = s->image.w - crop;
      row = hmax <= 0 ? snap_down(hmax / 2, patch_size) : patch_size * uniform(0, hmax / patch_size);
      col = wmax <= 0 ? snap_down(wmax / 2, patch_size) : patch_size * uniform(0, wmax / patch_size);
    }
    fill(*s, row, col, crop, patch_size, b.inputs[i].data_ptr<float>(), b.labels[i].data_ptr<float>());
  }
  return b;
}

DetectorTrainResult train_detector(const DetectorConfig& config, const std::vector<DetectionSlice>& data,
                                   const fs::path& out_dir, const ProgressFn& progress) {
  config.validate();
  fs::create_directories(out_dir);
  torch::manual_seed(config.seed);
  std::mt19937_64 rng(config.seed);

  DetectorTrainResult result;
  result.w_pos = config.w_pos;
  if (result.w_pos == 0.0) {
    // Per-volume statistics are approximated per slice here; the pipeline
    // passes the volume-level weight explicitly.
    std::vector<std::pair<long long, long long>> counts;
    for (const auto& s : data) {
      const auto g = failure::patch_labels(failure::pad_to_multiple(s.failures, config.patch_size), config.patch_size);
      counts.push_back({g.positives(), static_cast<long long>(g.cells.size())});
    }
    result.w_pos = detect::compute_w_pos(counts);
  }

  DetectorOptions opts{config.patch_size, config.dropout_p, 2};
  SResNet net(opts);
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.lr).weight_decay(config.weight_decay));
  std::string csv = "iteration,loss,lr\n";
  for (int it = 0; it < config.iterations; ++it) {
    const double lr = config.lr * std::pow(config.decay, it / config.decay_step);
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
    auto batch = sample_training_batch(data, config.batch_size, config.forced_positive_fraction, config.crop,
                                       config.patch_size, rng);
    opt.zero_grad();
    auto p = torch::softmax(net->forward(batch.inputs), 1).select(1, 1);
    auto loss = detection_loss(p, batch.labels, result.w_pos, Reduction::Mean);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw Error(ErrorCode::Divergence, fmt::format("non-finite detector loss at {}", it));
    loss.backward();
    opt.step();
    result.loss_trace.push_back(value);
    csv += fmt::format("{},{:.8g},{:.8g}\n", it, value, lr);
    if (progress) progress(it, value, lr);
  }
  result.checkpoint = out_dir / "detector.pt";
  save_atomic(net.ptr(), result.checkpoint);
  auto meta = to_json(config);
  meta["w_pos"] = result.w_pos;
  {
    io::write_text_atomic(out_dir / "loss.csv", csv);
    io::write_text_atomic(out_dir / "config.json", meta.dump(2));
  }
  return result;
}

Detector load_detector(const fs::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw Error(ErrorCode::MissingFile, (dir / "config.json").string());
  Detector d;
  d.config = detector_config_from_json(nlohmann::json::parse(in));
  d.net = SResNet(DetectorOptions{d.config.patch_size, d.config.dropout_p, 2});
  const auto path = dir / "detector.pt";
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  d.net->load(archive);
  return d;
}

detect::DetectionResult detect_failure_regions(Detector& detector, const ImageVolume& image,
                                               const unc::UncertaintyMap& umap, const LabelVolume& auto_seg,
                                               double threshold) {
  if (umap.kind != detector.config.umap_kind)
    throw Error(ErrorCode::UmapKindMismatch,
                fmt::format("detector trained on {} maps, got {}", unc::to_string(detector.config.umap_kind),
                            unc::to_string(umap.kind)));
  if (!(image.shape() == umap.values.shape()) || !(image.shape() == auto_seg.shape()))
    throw Error(ErrorCode::ShapeMismatch, "image, uncertainty map and segmentation differ in shape");
  torch::NoGradGuard no_grad;
  detector.net->eval();
  const int p = detector.config.patch_size;
  detect::DetectionResult result;
  result.volume_shape = image.shape();
  for (int z = 0; z < image.depth(); ++z) {
    const auto crop = detect::crop_for_detection(extract_slice(image, z), extract_slice(umap.values, z),
                                                 extract_slice(auto_seg, z), detect::kMinCrop, std::max(8, p));
    auto input = torch::zeros({1, 2, crop.rect.height, crop.rect.width});
    std::copy(crop.image.data.begin(), crop.image.data.end(), input.data_ptr<float>());
    std::copy(crop.umap.data.begin(), crop.umap.data.end(), input.data_ptr<float>() + crop.image.data.size());
    auto probs = torch::softmax(detector.net->forward(input), 1).select(1, 1)[0].contiguous();
    detect::SliceDetection s;
    s.z = z;
    s.rect = crop.rect;
    s.patch_size = p;
    s.rows = static_cast<int>(probs.size(0));
    s.cols = static_cast<int>(probs.size(1));
    s.probs.assign(probs.data_ptr<float>(), probs.data_ptr<float>() + probs.numel());
    result.slices.push_back(std::move(s));
  }
  detect::apply_threshold(result, threshold);
  return result;
}

}  // namespace cmr::nn
