#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ivsp/checkpoint.hpp"
#include "ivsp/flow.hpp"
#include "ivsp/jpeg_codec.hpp"
#include "ivsp/jpeg_sim.hpp"
#include "ivsp/metrics.hpp"
#include "ivsp/optim.hpp"

namespace ivsp {

struct TrainConfig {
  double lambda = 1.0;  // inverse-term weight
  int64_t steps = 2000;
  int64_t batch = 1;
  int64_t crop = 64;
  double lr = 1e-4;
  uint64_t seed = 0;
  bool jpeg_in_loop = true;
  int jpeg_quality = 90;
  bool jpeg_on_target = false;  // simulate JPEG of the ground truth instead of f(x)
  int64_t blocks = 8;
  int64_t hidden = 32;
  int64_t checkpoint_interval = 500;
  std::string checkpoint_path;  // empty: no checkpoints written
  std::string loss_log_path;    // empty: no CSV log

  void validate() const {
    if (lambda < 0.0) throw DataError("lambda must be >= 0");
    if (crop < 16 || crop % 2) throw DataError("crop must be even and >= 16");
    if (batch < 1) throw DataError("batch must be >= 1");
    if (steps < 0) throw DataError("steps must be >= 0");
    if (lr <= 0.0) throw DataError("lr must be positive");
  }
};

// Pixel-aligned training pair: gamma-encoded white-balanced demosaiced RAW
// and its 8-bit sRGB rendition.
struct PairedSample {
  Tensor raw_input;
  Tensor rgb_target;
};

struct AugmentSpec {
  int64_t y0 = 0, x0 = 0;
  int rotation = 0;  // quarter turns
  bool hflip = false;
};

inline AugmentSpec sample_augment(Rng& rng, int64_t h, int64_t w, int64_t crop) {
  if (h < crop || w < crop) throw DataError("image smaller than the training crop");
  AugmentSpec s;
  // even offsets preserve the Bayer phase of the underlying mosaic
  s.y0 = h == crop ? 0 : 2 * rng.index((h - crop) / 2 + 1);
  s.x0 = w == crop ? 0 : 2 * rng.index((w - crop) / 2 + 1);
  s.y0 = std::min(s.y0, h - crop);
  s.x0 = std::min(s.x0, w - crop);
  s.rotation = static_cast<int>(rng.index(4));
  s.hflip = rng.chance(0.5);
  return s;
}

// quarter-turn rotation of a square image tensor (data op, pre-tape)
inline Tensor rotate_quarter(const Tensor& img, int turns) {
  turns = ((turns % 4) + 4) % 4;
  if (turns == 0) return img.clone();
  int64_t n = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3);
  if (h != w) throw ShapeError("rotate_quarter expects square images");
  Tensor out(img.shape());
  for (int64_t p = 0; p < n * c; ++p) {
    const float* src = img.raw() + p * h * w;
    float* dst = out.raw() + p * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        int64_t sy = y, sx = x;
        if (turns == 1) {  // 90 degrees counterclockwise
          sy = x;
          sx = w - 1 - y;
        } else if (turns == 2) {
          sy = h - 1 - y;
          sx = w - 1 - x;
        } else {
          sy = h - 1 - x;
          sx = y;
        }
        dst[y * w + x] = src[sy * w + sx];
      }
  }
  return out;
}

inline Tensor hflip_image(const Tensor& img) {
  int64_t n = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3);
  Tensor out(img.shape());
  for (int64_t p = 0; p < n * c; ++p) {
    const float* src = img.raw() + p * h * w;
    float* dst = out.raw() + p * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) dst[y * w + x] = src[y * w + (w - 1 - x)];
  }
  return out;
}

inline Tensor apply_augment_one(const Tensor& img, const AugmentSpec& s, int64_t crop_size) {
  Tensor c = crop(img, s.y0, s.x0, crop_size, crop_size);
  Tensor r = rotate_quarter(c, s.rotation);
  return s.hflip ? hflip_image(r) : r;
}

// Identical geometric transform applied to both tensors of the pair.
inline PairedSample apply_augment(const PairedSample& sample, const AugmentSpec& s,
                                  int64_t crop_size) {
  return {apply_augment_one(sample.raw_input, s, crop_size),
          apply_augment_one(sample.rgb_target, s, crop_size)};
}

inline PairedSample augment(const PairedSample& sample, int64_t crop_size, Rng& rng) {
  AugmentSpec s = sample_augment(rng, sample.raw_input.dim(2), sample.raw_input.dim(3), crop_size);
  return apply_augment(sample, s, crop_size);
}

// values clamped to [0,1]; boundary-only helper, breaks the gradient chain
inline Tensor clamp01(const Tensor& t) {
  Tensor out(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) out.raw()[i] = std::clamp(t.raw()[i], 0.0f, 1.0f);
  return out;
}

struct LossTerms {
  Tensor total;
  float forward_l1 = 0.0f;
  float inverse_l1 = 0.0f;
};

// L = ||f(x) - y||_1 + lambda ||f^-1(y') - x||_1. With the JPEG simulator in
// the loop, y' = sim(f(x)) so the inverse pass learns to undo compression of
// the model's own renders; without it, y' = y.
inline LossTerms bidirectional_loss(const FlowModel& model, const Tensor& x, const Tensor& y,
                                    const TrainConfig& cfg) {
  if (x.shape() != y.shape())
    throw ShapeError("paired sample shapes disagree: " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  Tensor rendered = model.forward(x);
  Tensor forward_l1 = mean(abs(sub(rendered, y)));

  Tensor inverse_input = y;
  if (cfg.jpeg_in_loop) {
    JpegConfig jcfg(cfg.jpeg_quality);
    inverse_input = jpeg_simulate(cfg.jpeg_on_target ? y : rendered, jcfg);
  }
  Tensor recovered = model.inverse(inverse_input);
  Tensor inverse_l1 = mean(abs(sub(recovered, x)));

  LossTerms terms;
  terms.total = add(forward_l1, scalar_mul(inverse_l1, static_cast<float>(cfg.lambda)));
  terms.forward_l1 = forward_l1.item();
  terms.inverse_l1 = inverse_l1.item();
  return terms;
}

inline Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  int64_t c = items[0].dim(1), h = items[0].dim(2), w = items[0].dim(3);
  Tensor out(Shape{static_cast<int64_t>(items.size()), c, h, w});
  int64_t stride = c * h * w;
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].dim(0) != 1 || items[i].dim(1) != c || items[i].dim(2) != h ||
        items[i].dim(3) != w)
      throw ShapeError("stack_batch: inconsistent item shapes");
    std::copy(items[i].raw(), items[i].raw() + stride, out.raw() + static_cast<int64_t>(i) * stride);
  }
  return out;
}

struct LossRow {
  int64_t step = 0;
  float forward_l1 = 0.0f;
  float inverse_l1 = 0.0f;
  float total = 0.0f;
};

struct TrainResult {
  FlowModel model;
  std::vector<LossRow> history;
  bool aborted = false;
  int64_t completed_steps = 0;
};

// Deterministic training loop. A non-finite loss aborts and leaves the last
// good checkpoint on disk.
inline TrainResult train(const std::vector<PairedSample>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");

  FlowOptions fopt;
  fopt.blocks = cfg.blocks;
  fopt.hidden = cfg.hidden;
  fopt.seed = cfg.seed;
  TrainResult result{FlowModel(fopt), {}, false, 0};

  Adam opt(result.model.parameters(), cfg.lr);
  Rng data_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::ofstream log;
  if (!cfg.loss_log_path.empty()) {
    log.open(cfg.loss_log_path);
    if (!log) throw DataError("cannot open loss log: " + cfg.loss_log_path);
    log << "step,forward_l1,inverse_l1,total\n";
  }

  auto write_ckpt = [&] {
    if (!cfg.checkpoint_path.empty()) save_checkpoint(result.model, cfg.checkpoint_path);
  };
  if (cfg.steps == 0) {
    write_ckpt();
    return result;
  }

  for (int64_t step = 1; step <= cfg.steps; ++step) {
    std::vector<Tensor> xs, ys;
    for (int64_t b = 0; b < cfg.batch; ++b) {
      const PairedSample& pick =
          dataset[static_cast<size_t>(data_rng.index(static_cast<int64_t>(dataset.size())))];
      PairedSample crop_pair = augment(pick, cfg.crop, data_rng);
      xs.push_back(crop_pair.raw_input);
      ys.push_back(crop_pair.rgb_target);
    }
    Tensor x = cfg.batch == 1 ? xs[0] : stack_batch(xs);
    Tensor y = cfg.batch == 1 ? ys[0] : stack_batch(ys);

    bool bad = false;
    LossTerms terms;
    try {
      Tape tape;
      terms = bidirectional_loss(result.model, x, y, cfg);
      if (!std::isfinite(terms.total.item())) bad = true;
      if (!bad) tape.backward(terms.total);
    } catch (const NumericError&) {
      bad = true;
    }
    if (bad) {
      result.aborted = true;
      break;  // last good checkpoint stays on disk
    }

    opt.step();
    opt.zero_grad();
    result.completed_steps = step;

    LossRow row{step, terms.forward_l1, terms.inverse_l1, terms.total.item()};
    result.history.push_back(row);
    if (log)
      log << row.step << ',' << row.forward_l1 << ',' << row.inverse_l1 << ',' << row.total
          << '\n';

    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) write_ckpt();
  }
  write_ckpt();
  return result;
}

struct EvalResult {
  double rgb_psnr = 0.0;
  double rgb_ssim = 0.0;
  double raw_psnr = 0.0;
};

// Test-time protocol: render, write a real JPEG, decode it back and invert.
// RAW error is measured in the gamma-encoded, white-balanced space, peak 1.
inline EvalResult evaluate(const FlowModel& model, const std::vector<PairedSample>& samples,
                           int quality, bool real_codec = true) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  JpegConfig cfg(quality);
  EvalResult acc;
  for (const PairedSample& s : samples) {
    Tensor rendered = clamp01(model.forward(s.raw_input));
    Tensor compressed = real_codec ? codec_decode(codec_encode(rendered, cfg))
                                   : clamp01(jpeg_simulate(rendered, cfg));
    Tensor recovered = clamp01(model.inverse(compressed));
    acc.rgb_psnr += psnr(rendered, s.rgb_target, 1.0);
    acc.rgb_ssim += ssim(luma(rendered), luma(s.rgb_target), 1.0);
    acc.raw_psnr += psnr(recovered, s.raw_input, 1.0);
  }
  double n = static_cast<double>(samples.size());
  return {acc.rgb_psnr / n, acc.rgb_ssim / n, acc.raw_psnr / n};
}

}  // namespace ivsp
