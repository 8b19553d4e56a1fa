#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ivsp/ops.hpp"
#include "ivsp/tensor.hpp"

namespace ivsp {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Three stacked convolutions (3x3 -> 1x1 -> 3x3) with ReLU between, spatial
// extent preserved. The closing layer starts at zero so a fresh coupling
// layer is the identity.
struct Subnet {
  Tensor w1, b1, w2, b2, w3, b3;

  Subnet() = default;

  Subnet(int64_t in_ch, int64_t out_ch, int64_t hidden, Rng& rng, bool zero_init_last) {
    auto he = [&](Shape s, int64_t fan_in) {
      return rng.normal_tensor(std::move(s), static_cast<float>(std::sqrt(2.0 / fan_in)));
    };
    w1 = he({hidden, in_ch, 3, 3}, in_ch * 9);
    b1 = Tensor::zeros({hidden});
    w2 = he({hidden, hidden, 1, 1}, hidden);
    b2 = Tensor::zeros({hidden});
    if (zero_init_last) {
      w3 = Tensor::zeros({out_ch, hidden, 3, 3});
      b3 = Tensor::zeros({out_ch});
    } else {
      w3 = he({out_ch, hidden, 3, 3}, hidden * 9);
      b3 = rng.normal_tensor({out_ch}, 0.05f);
    }
    for (Tensor* t : {&w1, &b1, &w2, &b2, &w3, &b3}) t->set_requires_grad(true);
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h1 = relu(add_channel_bias(conv2d(x, w1), b1));
    Tensor h2 = relu(add_channel_bias(conv2d(h1, w2), b2));
    return add_channel_bias(conv2d(h2, w3), b3);
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".conv1.weight", w1});
    out.push_back({prefix + ".conv1.bias", b1});
    out.push_back({prefix + ".conv2.weight", w2});
    out.push_back({prefix + ".conv2.bias", b2});
    out.push_back({prefix + ".conv3.weight", w3});
    out.push_back({prefix + ".conv3.bias", b3});
  }
};

// Affine coupling over a channel split at d. The first branch is updated
// additively from the second before the scale/translation read it, which is
// what makes the closed-form inverse possible.
class CouplingLayer {
public:
  CouplingLayer() = default;

  CouplingLayer(int64_t channels, int64_t d, int64_t hidden, Rng& rng, bool zero_init_last,
                float scale_bound = 1.0f)
      : channels_(channels), d_(d), scale_bound_(scale_bound) {
    if (d <= 0 || d >= channels) throw ShapeError("coupling split must satisfy 0 < d < D");
    subnet_r_ = Subnet(channels - d, d, hidden, rng, zero_init_last);
    subnet_s_ = Subnet(d, channels - d, hidden, rng, zero_init_last);
    subnet_t_ = Subnet(d, channels - d, hidden, rng, zero_init_last);
  }

  Tensor forward(const Tensor& m) const {
    check_channels(m);
    auto [m1, m2] = split_channels(m, d_);
    Tensor n1 = add(m1, subnet_r_(m2));
    Tensor scale = bounded_scale(n1);
    Tensor n2 = add(hadamard_mul(m2, exp(scale)), subnet_t_(n1));
    return concat_channels({n1, n2});
  }

  Tensor inverse(const Tensor& n) const {
    check_channels(n);
    auto [n1, n2] = split_channels(n, d_);
    Tensor scale = bounded_scale(n1);
    Tensor m2 = hadamard_mul(sub(n2, subnet_t_(n1)), exp(scalar_mul(scale, -1.0f)));
    Tensor m1 = sub(n1, subnet_r_(m2));
    return concat_channels({m1, m2});
  }

  int64_t split_index() const { return d_; }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    subnet_r_.collect(prefix + ".r", out);
    subnet_s_.collect(prefix + ".s", out);
    subnet_t_.collect(prefix + ".t", out);
  }

private:
  Tensor bounded_scale(const Tensor& n1) const {
    return scalar_mul(tanh(subnet_s_(n1)), scale_bound_);
  }
  void check_channels(const Tensor& t) const {
    if (t.rank() != 4 || t.dim(1) != channels_)
      throw ShapeError("coupling layer expects " + std::to_string(channels_) + " channels, got " +
                       shape_str(t.shape()));
  }

  int64_t channels_ = 0;
  int64_t d_ = 0;
  float scale_bound_ = 1.0f;
  Subnet subnet_r_, subnet_s_, subnet_t_;
};

// Learnable channel-mixing matrix applied per pixel; the flow's permutation
// between couplings. Stored as a plain DxD matrix, inverted directly.
class InvConv1x1 {
public:
  InvConv1x1() = default;

  InvConv1x1(int64_t channels, Rng& rng) : channels_(channels) {
    weight_ = random_rotation(channels, rng);
    weight_.set_requires_grad(true);
  }

  explicit InvConv1x1(Tensor weight) : channels_(weight.dim(0)), weight_(std::move(weight)) {
    if (weight_.rank() != 2 || weight_.dim(0) != weight_.dim(1))
      throw ShapeError("InvConv1x1 weight must be square");
    weight_.set_requires_grad(true);
  }

  Tensor forward(const Tensor& x) const {
    check_channels(x);
    return conv2d(x, reshape(weight_, {channels_, channels_, 1, 1}));
  }

  Tensor inverse(const Tensor& y) const {
    check_channels(y);
    Tensor winv = matinv_2d(weight_);  // raises NumericError when near singular
    return conv2d(y, reshape(winv, {channels_, channels_, 1, 1}));
  }

  const Tensor& weight() const { return weight_; }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight_});
  }

  static Tensor random_rotation(int64_t n, Rng& rng) {
    // Gram-Schmidt on a random Gaussian matrix, then force det = +1
    std::vector<std::vector<double>> rows(n, std::vector<double>(n));
    for (auto& r : rows)
      for (double& v : r) v = rng.normal();
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (int64_t k = 0; k < n; ++k) dot += rows[i][k] * rows[j][k];
        for (int64_t k = 0; k < n; ++k) rows[i][k] -= dot * rows[j][k];
      }
      double norm = 0.0;
      for (double v : rows[i]) norm += v * v;
      norm = std::sqrt(norm);
      for (double& v : rows[i]) v /= norm;
    }
    Tensor w(Shape{n, n});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) w.raw()[i * n + j] = static_cast<float>(rows[i][j]);
    if (det_2d(w) < 0.0)
      for (int64_t j = 0; j < n; ++j) w.raw()[(n - 1) * n + j] *= -1.0f;
    return w;
  }

private:
  void check_channels(const Tensor& t) const {
    if (t.rank() != 4 || t.dim(1) != channels_)
      throw ShapeError("InvConv1x1 expects " + std::to_string(channels_) + " channels, got " +
                       shape_str(t.shape()));
  }

  int64_t channels_ = 0;
  Tensor weight_;
};

struct FlowOptions {
  int64_t blocks = 8;
  int64_t channels = 3;
  int64_t split = 1;       // d: channels kept in the first branch
  int64_t hidden = 32;
  float scale_bound = 1.0f;
  bool zero_init_last = true;   // couplings start as the identity
  bool identity_convs = false;  // 1x1 convs start as identity instead of rotations
  uint64_t seed = 0;
};

// The bijection: an ordered stack of (coupling, 1x1 conv) blocks. Inference
// on a fixed model is safe from multiple threads; training mutates
// parameters and is single-writer.
class FlowModel {
public:
  FlowModel() = default;

  explicit FlowModel(FlowOptions opt) : opt_(opt) {
    Rng rng(opt.seed);
    for (int64_t i = 0; i < opt.blocks; ++i) {
      couplings_.emplace_back(opt.channels, opt.split, opt.hidden, rng, opt.zero_init_last,
                              opt.scale_bound);
      if (opt.identity_convs) {
        Tensor eye(Shape{opt.channels, opt.channels});
        for (int64_t d = 0; d < opt.channels; ++d) eye.raw()[d * opt.channels + d] = 1.0f;
        convs_.emplace_back(eye);
      } else {
        convs_.emplace_back(opt.channels, rng);
      }
    }
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (size_t i = 0; i < couplings_.size(); ++i) {
      h = couplings_[i].forward(h);
      h = convs_[i].forward(h);
    }
    return h;
  }

  Tensor inverse(const Tensor& y) const {
    Tensor h = y;
    for (size_t i = couplings_.size(); i-- > 0;) {
      h = convs_[i].inverse(h);
      h = couplings_[i].inverse(h);
    }
    return h;
  }

  std::vector<NamedParam> named_parameters() const {
    std::vector<NamedParam> out;
    for (size_t i = 0; i < couplings_.size(); ++i) {
      std::string prefix = "block" + std::to_string(i);
      couplings_[i].collect(prefix + ".coupling", out);
      convs_[i].collect(prefix + ".invconv", out);
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& np : named_parameters()) out.push_back(np.tensor);
    return out;
  }

  const FlowOptions& options() const { return opt_; }
  int64_t block_count() const { return static_cast<int64_t>(couplings_.size()); }
  const InvConv1x1& conv_block(size_t i) const { return convs_[i]; }
  const CouplingLayer& coupling_block(size_t i) const { return couplings_[i]; }

private:
  FlowOptions opt_;
  std::vector<CouplingLayer> couplings_;
  std::vector<InvConv1x1> convs_;
};

}  // namespace ivsp
