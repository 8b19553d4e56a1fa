#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "ivsp/tensor.hpp"

// Central finite-difference gradient oracle. Independent of the tape: the
// loss closure is re-evaluated with perturbed leaf data and no tape active,
// so only forward values are exercised. Differences are formed in float64.
//
// Probes where the two-step Richardson check disagrees are skipped: those
// straddle a kink (ReLU, |.|) where the one-sided derivative is genuinely
// undefined and central differences are meaningless.
namespace testutil {

struct GradCheck {
  double vec_rel = 0.0;   // ||g_an - g_fd|| / max(||g_an||, ||g_fd||) over all probes
  double elem_rel = 0.0;  // worst per-element relative error (floored denom)
  int64_t checked = 0;
  int64_t skipped = 0;    // kink-contaminated probes

  bool healthy() const { return checked > 0 && skipped * 10 <= checked * 3; }
};

inline GradCheck check_gradients(std::vector<ivsp::Tensor> leaves,
                                 const std::function<ivsp::Tensor()>& loss_fn, double h = 1e-3,
                                 int64_t max_per_leaf = -1, uint64_t sample_seed = 17) {
  using namespace ivsp;
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  GradCheck rep;
  Rng pick(sample_seed);
  double nn = 0.0, na = 0.0, nf = 0.0;
  for (auto& t : leaves) {
    auto g = t.grad();
    auto d = t.data();
    std::vector<int64_t> idxs;
    if (max_per_leaf < 0 || max_per_leaf >= t.numel()) {
      idxs.resize(static_cast<size_t>(t.numel()));
      std::iota(idxs.begin(), idxs.end(), 0);
    } else {
      for (int64_t k = 0; k < max_per_leaf; ++k) idxs.push_back(pick.index(t.numel()));
    }
    for (int64_t i : idxs) {
      float keep = d[i];
      auto probe = [&](double step) {
        d[i] = static_cast<float>(keep + step);
        double lp = loss_fn().item64();
        d[i] = static_cast<float>(keep - step);
        double lm = loss_fn().item64();
        d[i] = keep;
        return (lp - lm) / (2.0 * step);
      };
      double fd = probe(h);
      double fd_half = probe(h / 2);
      if (std::fabs(fd - fd_half) > 0.05 * std::max({std::fabs(fd), std::fabs(fd_half), 1e-4})) {
        ++rep.skipped;
        continue;
      }
      double an = g[i];
      nn += (an - fd) * (an - fd);
      na += an * an;
      nf += fd * fd;
      double rel = std::fabs(an - fd) / std::max({1e-4, std::fabs(an), std::fabs(fd)});
      rep.elem_rel = std::max(rep.elem_rel, rel);
      ++rep.checked;
    }
  }
  rep.vec_rel = std::sqrt(nn) / std::max({std::sqrt(na), std::sqrt(nf), 1e-8});
  return rep;
}

inline double max_abs_diff(const ivsp::Tensor& a, const ivsp::Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a.raw()[i]) - b.raw()[i]));
  return m;
}

}  // namespace testutil
