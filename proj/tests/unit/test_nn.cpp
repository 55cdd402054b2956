#include <cmath>
#include <random>

#include "cmr/io/phantom.hpp"
#include "cmr/io/preprocess.hpp"
#include "cmr/nn/detector.hpp"
#include "cmr/nn/losses.hpp"
#include "cmr/nn/networks.hpp"
#include "cmr/nn/segmentation.hpp"

// libtorch ships a glog-style CHECK that would shadow the test macro.
#undef CHECK
#include <doctest.h>

using namespace cmr;
namespace fs = std::filesystem;

namespace {

nn::SegNet small(seg::Arch a, double p = 0.1) { return nn::build_segmentation_model({a, p, 4, 0.125}); }

// Central finite differences of a scalar function of `x` (double precision).
template <typename F>
void check_gradient(F f, torch::Tensor x) {
  x = x.clone().set_requires_grad(true);
  auto y = f(x);
  y.backward();
  auto g = x.grad().clone();
  const double h = 1e-6;
  auto flat = x.detach().clone().view(-1);
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto xp = flat.clone(), xm = flat.clone();
    xp[i] += h;
    xm[i] -= h;
    const double fd = (f(xp.view(x.sizes())).template item<double>() - f(xm.view(x.sizes())).template item<double>()) / (2 * h);
    const double an = g.view(-1)[i].item<double>();
    CHECK(std::abs(fd - an) <= 1e-3 * std::max(1e-3, std::abs(fd)));
  }
}

}  // namespace

TEST_CASE("network output geometry") {
  torch::NoGradGuard ng;
  auto dn = small(seg::Arch::DN);
  dn->eval();
  CHECK((dn->forward(torch::zeros({1, 1, 281, 281})).sizes() == std::vector<int64_t>{1, 4, 151, 151}));
  CHECK((dn->forward(torch::zeros({1, 1, 140, 150})).sizes() == std::vector<int64_t>{1, 4, 10, 20}));
  auto drn = small(seg::Arch::DRN);
  drn->eval();
  CHECK((drn->forward(torch::zeros({2, 1, 128, 128})).sizes() == std::vector<int64_t>{2, 4, 128, 128}));
  auto unet = small(seg::Arch::UNet);
  unet->eval();
  auto x = torch::rand({1, 1, 128, 128});
  auto a = unet->forward(x);
  CHECK((a.sizes() == std::vector<int64_t>{1, 4, 128, 128}));
  CHECK(torch::equal(a, unet->forward(x)));
  for (auto* net : {dn.get(), drn.get(), unet.get()}) {
    auto p = nn::predict_batch(*net, torch::rand({1, 1, 37, 45}));
    CHECK((p.sizes() == std::vector<int64_t>{1, 4, 37, 45}));
    CHECK(torch::allclose(p.sum(1), torch::ones({1, 37, 45}), 1e-5, 1e-5));
  }
}

TEST_CASE("dropout placement") {
  auto count = [](torch::nn::Module& m) {
    int n = 0;
    for (auto& c : m.modules(false)) n += c->as<torch::nn::Dropout>() != nullptr;
    return n;
  };
  CHECK(count(*small(seg::Arch::DN)) == 9);
  CHECK(count(*small(seg::Arch::UNet)) == 9);
  CHECK(count(*small(seg::Arch::DRN)) == 13);  // 3 plain convs, 8 residual blocks, 2 trailing convs
}

TEST_CASE("inference modes") {
  torch::NoGradGuard ng;
  nn::SegModel m;
  m.config = nn::SegModelConfig::defaults(seg::Arch::DRN, seg::LossKind::CrossEntropy);
  m.members.push_back(small(seg::Arch::DRN));
  ImageVolume img({2, 40, 40});
  std::mt19937 rng(1);
  for (auto& v : img.data()) v = std::uniform_real_distribution<float>(0, 1)(rng);

  auto det = nn::mc_inference(m, img, 10, false);
  CHECK_FALSE(det.mc_enabled);
  CHECK(det.samples.empty());
  CHECK_NOTHROW(seg::validate(det));
  CHECK(nn::mc_inference(m, img, 10, false).probs == det.probs);

  auto mc = nn::mc_inference(m, img, 3, true);
  CHECK(mc.mc_enabled);
  CHECK(mc.T == 3);
  CHECK(mc.samples.size() == 3 * img.size() * 4);
  CHECK_NOTHROW(seg::validate(mc));
  bool differs = false;
  for (std::size_t i = 0; i < img.size() * 4; ++i) differs |= mc.samples[i] != mc.samples[img.size() * 4 + i];
  CHECK(differs);
  CHECK_THROWS_AS(nn::mc_inference(m, img, 1, true), Error);
  auto one = nn::sample_predictions(m, img, 1, true);
  CHECK(one.T == 1);

  nn::SegModel nodrop = m;
  nodrop.members = {small(seg::Arch::DRN, 0.0)};
  auto z = nn::mc_inference(nodrop, img, 10, true);
  auto b = unc::bayesian_map(z);
  CHECK(*std::max_element(b.values.data().begin(), b.values.data().end()) == 0.0f);
}

TEST_CASE("loss values") {
  const int N = 64;
  auto target = torch::full({1, 8, 8}, 3, torch::kLong);
  auto uniform = torch::full({1, 4, 8, 8}, 0.25, torch::kDouble);
  auto onehot = torch::one_hot(target, 4).permute({0, 3, 1, 2}).to(torch::kDouble);

  auto printed = nn::soft_dice_score(onehot, target, 1.0, 0.0);
  CHECK(printed[3].item<double>() == doctest::Approx(0.5));
  CHECK(nn::soft_dice_score(uniform, target, 1.0, 0.0)[3].item<double>() == doctest::Approx(0.2));
  CHECK(nn::soft_dice_score(onehot, target)[3].item<double>() == doctest::Approx(1.0));
  CHECK(nn::soft_dice_score(onehot, target)[1].item<double>() == doctest::Approx(1.0));  // empty class
  CHECK(nn::soft_dice_loss(onehot, target).item<double>() == doctest::Approx(0.0));

  CHECK(nn::cross_entropy_loss(onehot, target).item<double>() == doctest::Approx(0.0));
  CHECK(nn::brier_loss(onehot, target).item<double>() == doctest::Approx(0.0));
  CHECK(nn::cross_entropy_loss(uniform, target).item<double>() == doctest::Approx(N * std::log(4.0)));
  CHECK(nn::brier_loss(uniform, target, nn::Reduction::Mean).item<double>() == doctest::Approx(0.75));
  auto wrong = torch::zeros({1, 4, 8, 8}, torch::kDouble);
  wrong.select(1, 0).fill_(1.0);
  const double ce = nn::cross_entropy_loss(wrong, target).item<double>();
  CHECK(std::isfinite(ce));
  CHECK(ce == doctest::Approx(-N * std::log(1e-7)));
  CHECK_THROWS_AS(nn::cross_entropy_loss(uniform, torch::zeros({1, 7, 8}, torch::kLong)), Error);
}

TEST_CASE("detection loss values") {
  auto p = torch::tensor({0.5}, torch::kDouble);
  auto t = torch::tensor({1.0}, torch::kDouble);
  CHECK(nn::detection_loss(p, t, 49).item<double>() == doctest::Approx(49 * std::log(2.0)));
  auto pn = torch::full({10}, 0.5, torch::kDouble);
  auto tn = torch::zeros({10}, torch::kDouble);
  CHECK(nn::detection_loss(pn, tn, 49).item<double>() == doctest::Approx(10 * std::log(2.0)));
  CHECK(nn::detection_loss(pn, tn, 1).item<double>() == doctest::Approx(10 * std::log(2.0)));
  auto perfect = torch::tensor({1.0, 0.0, 1.0}, torch::kDouble);
  CHECK(nn::detection_loss(perfect, perfect, 49).item<double>() == doctest::Approx(0.0).epsilon(1e-4));
  auto r = torch::rand({20}, torch::kDouble) * 0.98 + 0.01;
  auto lab = torch::randint(0, 2, {20}).to(torch::kDouble);
  CHECK(nn::detection_loss(r, lab, 1.0).item<double>() ==
        doctest::Approx(torch::binary_cross_entropy(r, lab, {}, at::Reduction::Sum).item<double>()));
}

TEST_CASE("loss gradients match finite differences") {
  torch::manual_seed(3);
  for (int k = 0; k < 3; ++k) {
    auto logits = torch::randn({1, 4, 8, 8}, torch::kDouble);
    auto target = torch::randint(0, 4, {1, 8, 8}, torch::kLong);
    check_gradient([&](const torch::Tensor& z) { return nn::soft_dice_loss(torch::softmax(z, 1), target); }, logits);
    check_gradient([&](const torch::Tensor& z) { return nn::cross_entropy_loss(torch::softmax(z, 1), target); }, logits);
    check_gradient([&](const torch::Tensor& z) { return nn::brier_loss(torch::softmax(z, 1), target); }, logits);
    auto dl = torch::randn({1, 2, 8, 8}, torch::kDouble);
    auto t = torch::randint(0, 2, {1, 8, 8}).to(torch::kDouble);
    check_gradient([&](const torch::Tensor& z) { return nn::detection_loss(torch::softmax(z, 1).select(1, 1), t, 30.0); }, dl);
  }
}

TEST_CASE("learning rate schedules") {
  auto drn = nn::SegModelConfig::defaults(seg::Arch::DRN, seg::LossKind::CrossEntropy);
  CHECK(nn::learning_rate(drn, 0) == doctest::Approx(1e-3));
  CHECK(nn::learning_rate(drn, 24999) == doctest::Approx(1e-3));
  CHECK(nn::learning_rate(drn, 30000) == doctest::Approx(1e-4));
  auto dn = nn::SegModelConfig::defaults(seg::Arch::DN, seg::LossKind::Brier);
  CHECK(nn::learning_rate(dn, 0) == doctest::Approx(0.02));
  CHECK(nn::learning_rate(dn, 10000) == doctest::Approx(0.02));
  CHECK(nn::learning_rate(dn, 5000) == doctest::Approx(0.01));
  CHECK(nn::learning_rate(dn, 9999) < 1e-4);
  CHECK(dn.train_patch == 151);
  auto bad = drn;
  bad.train_patch = 151;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = drn;
  bad.dropout_p = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(nn::seg_config_from_json(nn::to_json(dn)).snapshot_cycle == 10000);
}

TEST_CASE("detector geometry") {
  torch::NoGradGuard ng;
  auto det = nn::build_detector();
  det->eval();
  CHECK((det->forward(torch::zeros({1, 2, 80, 80})).sizes() == std::vector<int64_t>{1, 2, 10, 10}));
  CHECK((det->forward(torch::zeros({1, 2, 96, 80})).sizes() == std::vector<int64_t>{1, 2, 12, 10}));
  CHECK_THROWS_AS(det->forward(torch::zeros({1, 2, 81, 80})), Error);
  auto d4 = nn::build_detector({4, 0.5, 2});
  d4->eval();
  CHECK((d4->forward(torch::zeros({1, 2, 80, 80})).sizes() == std::vector<int64_t>{1, 2, 20, 20}));
  auto d16 = nn::build_detector({16, 0.5, 2});
  d16->eval();
  CHECK((d16->forward(torch::zeros({1, 2, 80, 80})).sizes() == std::vector<int64_t>{1, 2, 5, 5}));
}

TEST_CASE("detector batch sampling") {
  std::vector<nn::DetectionSlice> data(5);
  for (auto& s : data) {
    s.image = Slice2D<float>(100, 120, 0.5f);
    s.umap = Slice2D<float>(100, 120, 0.1f);
    s.failures = Slice2D<std::uint8_t>(100, 120, 0);
  }
  data[3].failures(57, 91) = 1;
  std::mt19937_64 rng(4);
  auto b = nn::sample_training_batch(data, 32, 1.0 / 3.0, 80, 8, rng);
  CHECK(b.forced == 10);
  CHECK((b.inputs.sizes() == std::vector<int64_t>{32, 2, 80, 80}));
  for (int i = 0; i < b.forced; ++i) CHECK(b.labels[i].sum().item<float>() == 1.0f);
  std::mt19937_64 r1(9), r2(9);
  auto x1 = nn::sample_training_batch(data, 8, 1.0 / 3.0, 80, 8, r1);
  auto x2 = nn::sample_training_batch(data, 8, 1.0 / 3.0, 80, 8, r2);
  CHECK(torch::equal(x1.labels, x2.labels));
  CHECK(torch::equal(x1.inputs, x2.inputs));
  data[3].failures(57, 91) = 0;
  CHECK_THROWS_AS(nn::sample_training_batch(data, 8, 1.0 / 3.0, 80, 8, rng), Error);
}

TEST_CASE("smoke training reduces the loss") {
  torch::set_num_threads(1);
  io::PhantomOptions opt;
  auto study = io::preprocess_volume(io::generate_phantom(1, io::DiseaseGroup::NOR, opt));
  std::vector<nn::TrainingSlice> data;
  for (auto p : io::kPhases)
    for (int z = 0; z < study.phase(p).image.depth(); ++z)
      data.push_back({extract_slice(study.phase(p).image, z), extract_slice(study.phase(p).reference, z)});
  auto cfg = nn::SegModelConfig::defaults(seg::Arch::DRN, seg::LossKind::CrossEntropy);
  cfg.iterations = 200;
  cfg.batch_size = 2;
  cfg.width = 0.125;
  cfg.seed = 1;
  const auto dir = fs::temp_directory_path() / "cmr_unit_train";
  fs::remove_all(dir);
  auto r = nn::train_segmentation(cfg, data, dir);
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) {
    first += r.loss_trace[i];
    last += r.loss_trace[150 + i];
  }
  CHECK(last < first);
  CHECK(fs::exists(dir / "model.pt"));
  CHECK(fs::exists(dir / "loss.csv"));
  auto model = nn::load_segmentation_model(dir);
  CHECK(model.members.size() == 1);
  auto pv = nn::mc_inference(model, study.phase(io::Phase::ED).image, 2, true);
  CHECK(pv.shape == study.phase(io::Phase::ED).image.shape());

  // detector round trip and kind check
  nn::DetectorConfig dc;
  dc.iterations = 2;
  dc.batch_size = 3;
  std::vector<nn::DetectionSlice> dd;
  for (const auto& s : data) {
    nn::DetectionSlice d{s.image, Slice2D<float>(s.image.h, s.image.w, 0.2f), Slice2D<std::uint8_t>(s.image.h, s.image.w, 0)};
    dd.push_back(d);
  }
  dd[4].failures(60, 60) = 1;
  auto tr = nn::train_detector(dc, dd, dir / "det");
  CHECK(tr.w_pos > 1.0);
  auto detector = nn::load_detector(dir / "det");
  unc::UncertaintyMap um;
  um.values = ImageVolume(study.phase(io::Phase::ED).image.shape(), 0.1f);
  um.kind = unc::MapKind::Bayesian;
  const auto& seg_labels = study.phase(io::Phase::ED).reference;
  CHECK_THROWS_AS(nn::detect_failure_regions(detector, study.phase(io::Phase::ED).image, um, seg_labels), Error);
  um.kind = unc::MapKind::Entropy;
  auto res = nn::detect_failure_regions(detector, study.phase(io::Phase::ED).image, um, seg_labels, 0.0);
  CHECK(res.slices.size() == static_cast<std::size_t>(seg_labels.depth()));
  for (const auto& s : res.slices) {
    CHECK(s.rows * 8 == s.rect.height);
    CHECK(s.cols * 8 == s.rect.width);
  }
}

TEST_CASE("divergence aborts training") {
  std::vector<nn::TrainingSlice> data{{Slice2D<float>(64, 64, std::nanf("")), Slice2D<std::uint8_t>(64, 64, 1)}};
  auto cfg = nn::SegModelConfig::defaults(seg::Arch::DRN, seg::LossKind::Brier);
  cfg.iterations = 3;
  cfg.batch_size = 1;
  cfg.width = 0.125;
  try {
    nn::train_segmentation(cfg, data, fs::temp_directory_path() / "cmr_unit_nan");
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Divergence);
  }
}
