#include "cmr/nn/networks.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cmr/error.hpp"

namespace cmr::nn {
namespace {

namespace tnn = torch::nn;

int scaled(int channels, double width) { return std::max(2, static_cast<int>(std::lround(channels * width))); }

tnn::Conv2d conv(int in, int out, int k, int stride = 1, int pad = 0, int dilation = 1, bool bias = true) {
  return tnn::Conv2d(tnn::Conv2dOptions(in, out, k).stride(stride).padding(pad).dilation(dilation).bias(bias));
}

// ---- dilated network ------------------------------------------------------

class DilatedNet : public SegNetImpl {
 public:
  explicit DilatedNet(const NetworkOptions& o) {
    const int f = scaled(32, o.width);
    const int fc = scaled(128, o.width);
    const int dil[8] = {1, 1, 2, 4, 8, 16, 32, 1};
    int in = 1;
    for (int i = 0; i < 8; ++i) {
      body_->push_back(conv(in, f, 3, 1, 0, dil[i], i == 0));
      if (i > 0) body_->push_back(tnn::BatchNorm2d(f));
      body_->push_back(tnn::ReLU());
      body_->push_back(tnn::Dropout(o.dropout_p));
      in = f;
    }
    body_->push_back(conv(f, fc, 1, 1, 0, 1, false));
    body_->push_back(tnn::BatchNorm2d(fc));
    body_->push_back(tnn::ReLU());
    body_->push_back(tnn::Dropout(o.dropout_p));
    body_->push_back(conv(fc, o.num_classes, 1));
    register_module("body", body_);
  }
  torch::Tensor forward(torch::Tensor x) override { return body_->forward(x); }
  int input_margin() const override { return 65; }
  seg::Arch arch() const override { return seg::Arch::DN; }

 private:
  tnn::Sequential body_;
};

// ---- dilated residual network (DRN-D-22) ----------------------------------

void conv_bn_relu(tnn::Sequential& s, int in, int out, int k, int stride, int pad, int dilation, double p) {
  s->push_back(conv(in, out, k, stride, pad, dilation, false));
  s->push_back(tnn::BatchNorm2d(out));
  s->push_back(tnn::ReLU());
  s->push_back(tnn::Dropout(p));
}

class BasicBlockImpl : public tnn::Module {
 public:
  BasicBlockImpl(int in, int out, int stride, int dilation, double p) {
    conv1_ = register_module("conv1", conv(in, out, 3, stride, dilation, dilation, false));
    bn1_ = register_module("bn1", tnn::BatchNorm2d(out));
    conv2_ = register_module("conv2", conv(out, out, 3, 1, dilation, dilation, false));
    bn2_ = register_module("bn2", tnn::BatchNorm2d(out));
    drop_ = register_module("drop", tnn::Dropout(p));
    if (stride != 1 || in != out) {
      down_ = tnn::Sequential(conv(in, out, 1, stride, 0, 1, false), tnn::BatchNorm2d(out));
      register_module("down", down_);
    }
  }
  torch::Tensor forward(torch::Tensor x) {
    auto y = drop_(torch::relu(bn1_(conv1_(x))));
    y = bn2_(conv2_(y));
    auto skip = down_ ? down_->forward(x) : x;
    return drop_(torch::relu(y + skip));
  }

 private:
  tnn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  tnn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
  tnn::Dropout drop_{nullptr};
  tnn::Sequential down_{nullptr};
};
TORCH_MODULE(BasicBlock);

class DilatedResidualNet : public SegNetImpl {
 public:
  explicit DilatedResidualNet(const NetworkOptions& o) {
    const double p = o.dropout_p;
    const int c1 = scaled(16, o.width), c2 = scaled(32, o.width), c3 = scaled(64, o.width), c4 = scaled(128, o.width),
              c5 = scaled(256, o.width), c6 = scaled(512, o.width);
    conv_bn_relu(features_, 1, c1, 7, 1, 3, 1, p);
    conv_bn_relu(features_, c1, c1, 3, 1, 1, 1, p);
    conv_bn_relu(features_, c1, c2, 3, 2, 1, 1, p);
    features_->push_back(BasicBlock(c2, c3, 2, 1, p));
    features_->push_back(BasicBlock(c3, c3, 1, 1, p));
    features_->push_back(BasicBlock(c3, c4, 2, 1, p));
    features_->push_back(BasicBlock(c4, c4, 1, 1, p));
    features_->push_back(BasicBlock(c4, c5, 1, 2, p));
    features_->push_back(BasicBlock(c5, c5, 1, 2, p));
    features_->push_back(BasicBlock(c5, c6, 1, 4, p));
    features_->push_back(BasicBlock(c6, c6, 1, 4, p));
    conv_bn_relu(features_, c6, c6, 3, 1, 2, 2, p);
    conv_bn_relu(features_, c6, c6, 3, 1, 1, 1, p);
    register_module("features", features_);
    classifier_ = register_module("classifier", conv(c6, o.num_classes, 1));
  }
  torch::Tensor forward(torch::Tensor x) override {
    const auto h = x.size(2), w = x.size(3);
    auto y = classifier_(features_->forward(x));
    return torch::nn::functional::interpolate(
        y, torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kBilinear).align_corners(false));
  }
  int size_multiple() const override { return 8; }
  seg::Arch arch() const override { return seg::Arch::DRN; }

 private:
  tnn::Sequential features_;
  tnn::Conv2d classifier_{nullptr};
};

// ---- U-net ------------------------------------------------------------------

tnn::Sequential unet_convs(int in, int out, bool norm, double p) {
  tnn::Sequential s;
  for (int i = 0; i < 2; ++i) {
    s->push_back(conv(i == 0 ? in : out, out, 3, 1, 1));
    if (norm) s->push_back(tnn::InstanceNorm2d(tnn::InstanceNorm2dOptions(out).affine(true)));
    s->push_back(tnn::LeakyReLU(tnn::LeakyReLUOptions().negative_slope(0.01)));
  }
  s->push_back(tnn::Dropout(p));
  return s;
}

class UNet : public SegNetImpl {
 public:
  explicit UNet(const NetworkOptions& o) {
    int c[5];
    for (int i = 0; i < 5; ++i) c[i] = scaled(64 << i, o.width);
    int in = 1;
    for (int i = 0; i < 4; ++i) {
      down_.push_back(register_module(fmt::format("down{}", i), unet_convs(in, c[i], true, o.dropout_p)));
      in = c[i];
    }
    bottleneck_ = register_module("bottleneck", unet_convs(c[3], c[4], true, o.dropout_p));
    for (int i = 3; i >= 0; --i) {
      up_.push_back(register_module(fmt::format("up{}", i),
                                    tnn::ConvTranspose2d(tnn::ConvTranspose2dOptions(c[i + 1], c[i], 2).stride(2))));
      dec_.push_back(register_module(fmt::format("dec{}", i), unet_convs(2 * c[i], c[i], false, o.dropout_p)));
    }
    head_ = register_module("head", conv(c[0], o.num_classes, 1));
  }
  torch::Tensor forward(torch::Tensor x) override {
    std::vector<torch::Tensor> skips;
    for (std::size_t i = 0; i < down_.size(); ++i) {
      if (i > 0) x = torch::max_pool2d(x, 2, 2);
      x = down_[i]->forward(x);
      skips.push_back(x);
    }
    x = bottleneck_->forward(torch::max_pool2d(x, 2, 2));
    for (std::size_t i = 0; i < up_.size(); ++i) {
      x = up_[i]->forward(x);
      x = dec_[i]->forward(torch::cat({skips[skips.size() - 1 - i], x}, 1));
    }
    return head_(x);
  }
  int size_multiple() const override { return 16; }
  seg::Arch arch() const override { return seg::Arch::UNet; }

 private:
  std::vector<tnn::Sequential> down_;
  tnn::Sequential bottleneck_{nullptr};
  std::vector<tnn::ConvTranspose2d> up_;
  std::vector<tnn::Sequential> dec_;
  tnn::Conv2d head_{nullptr};
};

// ---- detector -----------------------------------------------------------------

class ResBlockImpl : public tnn::Module {
 public:
  ResBlockImpl(int in, int out, int stride) {
    body_ = register_module("body", tnn::Sequential(conv(in, out, 3, stride, 1, 1, false), tnn::BatchNorm2d(out),
                                                    tnn::ReLU(), conv(out, out, 3, 1, 1, 1, false),
                                                    tnn::BatchNorm2d(out)));
    if (stride != 1 || in != out)
      skip_ = register_module("skip", tnn::Sequential(conv(in, out, 1, stride, 0, 1, false), tnn::BatchNorm2d(out)));
  }
  torch::Tensor forward(torch::Tensor x) {
    auto s = skip_ ? skip_->forward(x) : x;
    return torch::relu(body_->forward(x) + s);
  }

 private:
  tnn::Sequential body_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(ResBlock);

}  // namespace

SegNet build_segmentation_model(const NetworkOptions& o) {
  if (!(o.dropout_p >= 0.0 && o.dropout_p < 1.0)) throw Error(ErrorCode::InvalidArgument, "dropout_p outside [0,1)");
  if (o.num_classes < 2) throw Error(ErrorCode::InvalidArgument, "num_classes < 2");
  if (!(o.width > 0.0)) throw Error(ErrorCode::InvalidArgument, "width must be positive");
  switch (o.arch) {
    case seg::Arch::DN: return std::make_shared<DilatedNet>(o);
    case seg::Arch::DRN: return std::make_shared<DilatedResidualNet>(o);
    case seg::Arch::UNet: return std::make_shared<UNet>(o);
  }
  throw Error(ErrorCode::UnknownArchitecture, "unsupported architecture");
}

void set_inference_mode(torch::nn::Module& model, bool mc) {
  model.eval();
  if (!mc) return;
  for (auto& m : model.modules(false)) {
    if (m->as<tnn::Dropout>()) m->train(true);
  }
}

SResNetImpl::SResNetImpl(const DetectorOptions& o) : options_(o) {
  if (o.patch_size != 4 && o.patch_size != 8 && o.patch_size != 16)
    throw Error(ErrorCode::InvalidArgument, fmt::format("unsupported patch size {}", o.patch_size));
  const int s3 = o.patch_size == 4 ? 1 : 2;
  features_ = tnn::Sequential(conv(o.in_channels, 16, 7, 1, 3, 1, false), tnn::BatchNorm2d(16), tnn::ReLU(),
                              conv(16, 32, 3, 1, 1, 1, false), tnn::BatchNorm2d(32), tnn::ReLU(), ResBlock(32, 32, 2),
                              ResBlock(32, 64, 2), ResBlock(64, 128, s3));
  if (o.patch_size == 16) features_->push_back(tnn::MaxPool2d(tnn::MaxPool2dOptions(2).stride(2)));
  register_module("features", features_);
  classifier_ = tnn::Sequential(tnn::Dropout(o.dropout_p), conv(128, 128, 1), tnn::ReLU(), tnn::Dropout(o.dropout_p),
                                conv(128, 128, 1), tnn::ReLU(), tnn::Dropout(o.dropout_p), conv(128, 2, 1));
  register_module("classifier", classifier_);
}

torch::Tensor SResNetImpl::forward(torch::Tensor x) {
  const int p = options_.patch_size;
  if (x.dim() != 4 || x.size(2) % p != 0 || x.size(3) % p != 0)
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("detector input {}x{} is not a multiple of {}", x.size(-2), x.size(-1), p));
  return classifier_->forward(features_->forward(x));
}

SResNet build_detector(const DetectorOptions& options) { return SResNet(options); }

}  // namespace cmr::nn
