#include "cmr/nn/segmentation.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "cmr/error.hpp"
#include "cmr/io/text_file.hpp"
#include "cmr/nn/losses.hpp"

namespace cmr::nn {
namespace fs = std::filesystem;

SegModelConfig SegModelConfig::defaults(seg::Arch arch, seg::LossKind loss) {
  SegModelConfig c;
  c.arch = arch;
  c.loss = loss;
  c.train_patch = arch == seg::Arch::DN ? 151 : 128;
  return c;
}

void SegModelConfig::validate() const {
  if (!(dropout_p > 0.0 && dropout_p < 1.0)) throw Error(ErrorCode::ConfigError, "dropout_p must lie in (0,1)");
  if (num_classes != 4) throw Error(ErrorCode::ConfigError, "num_classes must be 4");
  if (arch == seg::Arch::DN && train_patch != 151) throw Error(ErrorCode::ConfigError, "DN trains on 151x151 patches");
  if (arch != seg::Arch::DN && train_patch != 128)
    throw Error(ErrorCode::ConfigError, "DRN and U-net train on 128x128 patches");
  if (iterations < 1 || batch_size < 1) throw Error(ErrorCode::ConfigError, "iterations and batch_size must be >= 1");
  if (!(lr > 0) || !(snapshot_lr > 0) || decay_step < 1 || snapshot_cycle < 1)
    throw Error(ErrorCode::ConfigError, "invalid learning-rate schedule");
  if (weight_decay < 0 || !(width > 0)) throw Error(ErrorCode::ConfigError, "invalid weight_decay or width");
}

NetworkOptions SegModelConfig::network() const { return {arch, dropout_p, num_classes, width}; }

nlohmann::json to_json(const SegModelConfig& c) {
  return {{"arch", seg::to_string(c.arch)},
          {"loss", seg::to_string(c.loss)},
          {"dropout_p", c.dropout_p},
          {"num_classes", c.num_classes},
          {"train_patch", c.train_patch},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"decay_step", c.decay_step},
          {"decay", c.decay},
          {"snapshot_lr", c.snapshot_lr},
          {"snapshot_cycle", c.snapshot_cycle},
          {"weight_decay", c.weight_decay},
          {"width", c.width},
          {"seed", c.seed}};
}

SegModelConfig seg_config_from_json(const nlohmann::json& j) {
  SegModelConfig c = SegModelConfig::defaults(seg::parse_arch(j.at("arch").get<std::string>()),
                                              seg::parse_loss(j.at("loss").get<std::string>()));
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.train_patch = j.value("train_patch", c.train_patch);
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.decay_step = j.value("decay_step", c.decay_step);
  c.decay = j.value("decay", c.decay);
  c.snapshot_lr = j.value("snapshot_lr", c.snapshot_lr);
  c.snapshot_cycle = j.value("snapshot_cycle", c.snapshot_cycle);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.width = j.value("width", c.width);
  c.seed = j.value("seed", c.seed);
  return c;
}

double learning_rate(const SegModelConfig& c, int iteration) {
  if (c.arch == seg::Arch::DN) {
    const double phase = static_cast<double>(iteration % c.snapshot_cycle) / c.snapshot_cycle;
    return 0.5 * c.snapshot_lr * (1.0 + std::cos(std::numbers::pi * phase));
  }
  return c.lr * std::pow(c.decay, iteration / c.decay_step);
}

void save_atomic(const std::shared_ptr<torch::nn::Module>& module, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    torch::serialize::OutputArchive archive;
    module->save(archive);
    archive.save_to(tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

// Random crop of `in_size` (image) centred on an `out_size` label window.
void sample_patch(const TrainingSlice& s, int in_size, int out_size, std::mt19937_64& rng, float* img, std::int64_t* lab) {
  const int margin = (in_size - out_size) / 2;
  auto pick = [&](int n) {
    // Label window start; may be negative when the slice is small (zero padded).
    if (n <= out_size) return -(out_size - n) / 2;
    return std::uniform_int_distribution<int>(0, n - out_size)(rng);
  };
  const int y0 = pick(s.image.h), x0 = pick(s.image.w);
  const int k = std::uniform_int_distribution<int>(0, 3)(rng);
  auto rot = [&](int y, int x, int n, int& ry, int& rx) {
    switch (k) {
      case 0: ry = y; rx = x; break;
      case 1: ry = x; rx = n - 1 - y; break;
      case 2: ry = n - 1 - y; rx = n - 1 - x; break;
      default: ry = n - 1 - x; rx = y; break;
    }
  };
  for (int y = 0; y < in_size; ++y)
    for (int x = 0; x < in_size; ++x) {
      const int sy = y0 - margin + y, sx = x0 - margin + x;
      int ry, rx;
      rot(y, x, in_size, ry, rx);
      img[ry * in_size + rx] = s.image.contains(sy, sx) ? s.image(sy, sx) : 0.0f;
    }
  for (int y = 0; y < out_size; ++y)
    for (int x = 0; x < out_size; ++x) {
      const int sy = y0 + y, sx = x0 + x;
      int ry, rx;
      rot(y, x, out_size, ry, rx);
      lab[ry * out_size + rx] = s.labels.contains(sy, sx) ? s.labels(sy, sx) : 0;
    }
}

}  // namespace

TrainResult train_segmentation(const SegModelConfig& config, const std::vector<TrainingSlice>& data,
                               const fs::path& out_dir, const ProgressFn& progress) {
  config.validate();
  if (data.empty()) throw Error(ErrorCode::InvalidArgument, "no training slices");
  fs::create_directories(out_dir);
  torch::manual_seed(config.seed);
  std::mt19937_64 rng(config.seed);

  auto net = build_segmentation_model(config.network());
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(learning_rate(config, 0)).weight_decay(config.weight_decay));

  const int out_size = config.train_patch;
  const int in_size = out_size + 2 * net->input_margin();
  const int B = config.batch_size;
  auto images = torch::zeros({B, 1, in_size, in_size});
  auto labels = torch::zeros({B, out_size, out_size}, torch::kLong);

  TrainResult result;
  std::string csv = "iteration,loss,lr\n";
  auto snapshot = [&](const std::string& name) {
    const auto path = out_dir / name;
    save_atomic(net, path);
    result.checkpoints.push_back(path);
  };

  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (int it = 0; it < config.iterations; ++it) {
    const double lr = learning_rate(config, it);
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
    for (int b = 0; b < B; ++b)
      sample_patch(data[pick(rng)], in_size, out_size, rng, images[b].data_ptr<float>(), labels[b].data_ptr<std::int64_t>());

    opt.zero_grad();
    auto probs = torch::softmax(net->forward(images), 1);
    auto loss = segmentation_loss(config.loss, probs, labels);
    const double value = loss.item<double>();
    if (!std::isfinite(value))
      throw Error(ErrorCode::Divergence, fmt::format("non-finite loss at iteration {} (lr {})", it, lr));
    loss.backward();
    opt.step();

    result.loss_trace.push_back(value);
    csv += fmt::format("{},{:.8g},{:.8g}\n", it, value, lr);
    if (progress) progress(it, value, lr);
    if (config.arch == seg::Arch::DN && (it + 1) % config.snapshot_cycle == 0)
      snapshot(fmt::format("snapshot_{:03d}.pt", (it + 1) / config.snapshot_cycle));
  }
  if (result.checkpoints.empty()) snapshot(config.arch == seg::Arch::DN ? "snapshot_001.pt" : "model.pt");
  io::write_text_atomic(out_dir / "loss.csv", csv);
  nlohmann::json meta = to_json(config);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& p : result.checkpoints) files.push_back(p.filename().string());
  meta["checkpoints"] = files;
  io::write_text_atomic(out_dir / "config.json", meta.dump(2));
  return result;
}

SegModel load_segmentation_model(const fs::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw Error(ErrorCode::MissingFile, (dir / "config.json").string());
  const auto meta = nlohmann::json::parse(in);
  SegModel m;
  m.config = seg_config_from_json(meta);
  for (const auto& name : meta.at("checkpoints")) {
    auto net = build_segmentation_model(m.config.network());
    const auto path = dir / name.get<std::string>();
    if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    net->load(archive);
    m.members.push_back(net);
  }
  if (m.members.empty()) throw Error(ErrorCode::MissingFile, "no checkpoints in " + dir.string());
  return m;
}

torch::Tensor predict_batch(SegNetImpl& net, const torch::Tensor& images) {
  const int h = static_cast<int>(images.size(2)), w = static_cast<int>(images.size(3));
  const int margin = net.input_margin();
  const int mult = net.size_multiple();
  const int ph = (h + mult - 1) / mult * mult, pw = (w + mult - 1) / mult * mult;
  auto x = torch::constant_pad_nd(images, {margin, margin + pw - w, margin, margin + ph - h}, 0.0);
  auto probs = torch::softmax(net.forward(x), 1);
  return probs.index({torch::indexing::Slice(), torch::indexing::Slice(), torch::indexing::Slice(0, h),
                      torch::indexing::Slice(0, w)});
}

seg::ProbabilityVolume sample_predictions(const SegModel& model, const ImageVolume& image, int T, bool mc,
                                          std::uint64_t seed) {
  if (T < 1) throw Error(ErrorCode::InvalidArgument, "T must be >= 1");
  torch::NoGradGuard no_grad;
  torch::manual_seed(seed);
  for (const auto& m : model.members) set_inference_mode(*m, mc);
  const Shape3 s = image.shape();
  const int C = model.config.num_classes;
  auto input = torch::from_blob(const_cast<float*>(image.data().data()), {s.z, 1, s.h, s.w}, torch::kFloat).clone();
  std::vector<float> samples(static_cast<std::size_t>(T) * s.size() * C);
  const int chunk = 4;
  for (int t = 0; t < T; ++t) {
    for (int z0 = 0; z0 < s.z; z0 += chunk) {
      const int z1 = std::min(s.z, z0 + chunk);
      auto batch = input.slice(0, z0, z1);
      torch::Tensor acc;
      for (const auto& m : model.members) {
        auto p = predict_batch(*m, batch);
        acc = acc.defined() ? acc + p : p;
      }
      acc = (acc / static_cast<double>(model.members.size())).permute({0, 2, 3, 1}).contiguous();
      std::copy_n(acc.data_ptr<float>(), acc.numel(),
                  samples.data() + (static_cast<std::size_t>(t) * s.size() + static_cast<std::size_t>(z0) * s.slice_size()) * C);
    }
  }
  auto pv = seg::from_samples(s, T, std::move(samples), true);
  pv.mc_enabled = mc && T >= 2;  // a single stochastic pass is not an MC estimate
  return pv;
}

seg::ProbabilityVolume mc_inference(const SegModel& model, const ImageVolume& image, int T, bool mc_enabled,
                                    std::uint64_t seed) {
  if (mc_enabled && T < 2) throw Error(ErrorCode::InvalidArgument, "MC inference needs T >= 2");
  if (!mc_enabled) {
    auto pv = sample_predictions(model, image, 1, false, seed);
    pv.samples.clear();
    pv.T = 1;
    return pv;
  }
  return sample_predictions(model, image, T, true, seed);
}

}  // namespace cmr::nn
