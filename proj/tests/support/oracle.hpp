#pragma once

// Brute-force reference for the modality contribution of a linear model.
// Deliberately shares no code with the library: its own model evaluation,
// masking, mean computation and plain (uncompensated) sums, following the
// textbook loop order with the baseline recomputed inside the modality loop.

#include <cmath>
#include <vector>

namespace oracle {

struct Instance {
  // x[k][i][j]: sample k, modality i, feature j
  std::vector<std::vector<std::vector<double>>> x;
  // w[c][i][j]: output c, modality i, feature j
  std::vector<std::vector<std::vector<double>>> w;
  std::vector<double> bias;  // [c]
  // patches[i][l]: feature indices of patch l of modality i
  std::vector<std::vector<std::vector<int>>> patches;
  bool mean_fill = false;
};

struct Result {
  std::vector<double> m;
  std::vector<std::vector<double>> mp;
  std::vector<std::vector<double>> d_patch_sum;  // [i][l] 1^T d_{i,l}
};

inline std::vector<double> evaluate(const Instance& inst, const std::vector<std::vector<double>>& x) {
  std::vector<double> p(inst.bias);
  for (std::size_t c = 0; c < p.size(); ++c) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < x[i].size(); ++j) p[c] += inst.w[c][i][j] * x[i][j];
    }
  }
  return p;
}

inline Result run(const Instance& inst) {
  const int N = static_cast<int>(inst.x.size());
  const int n = static_cast<int>(inst.x[0].size());
  const int C = static_cast<int>(inst.bias.size());

  // fill[i][j]
  std::vector<std::vector<double>> fill(n);
  for (int i = 0; i < n; ++i) {
    fill[i].assign(inst.x[0][i].size(), 0.0);
    if (inst.mean_fill) {
      for (int k = 0; k < N; ++k) {
        for (std::size_t j = 0; j < fill[i].size(); ++j) fill[i][j] += inst.x[k][i][j];
      }
      for (double& v : fill[i]) v /= N;
    }
  }

  Result r;
  std::vector<std::vector<double>> d(n, std::vector<double>(C, 0.0));
  std::vector<std::vector<std::vector<double>>> d_patch(n);
  for (int i = 0; i < n; ++i) {
    const int h = static_cast<int>(inst.patches[i].size());
    d_patch[i].assign(h, std::vector<double>(C, 0.0));
    for (int k = 0; k < N; ++k) {
      const auto p0 = evaluate(inst, inst.x[k]);
      std::vector<double> dk(C, 0.0);
      for (int l = 0; l < h; ++l) {
        auto masked = inst.x[k];
        for (int j : inst.patches[i][l]) masked[i][j] = fill[i][j];
        const auto p = evaluate(inst, masked);
        for (int c = 0; c < C; ++c) {
          const double dist = std::fabs(p0[c] - p[c]);
          dk[c] += dist;
          d_patch[i][l][c] += dist / N;
        }
      }
      for (int c = 0; c < C; ++c) d[i][c] += dk[c] / N;
    }
  }

  double total = 0.0;
  std::vector<double> per(n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < C; ++c) per[i] += d[i][c];
    total += per[i];
  }
  for (int i = 0; i < n; ++i) r.m.push_back(total == 0.0 ? 1.0 / n : per[i] / total);

  for (int i = 0; i < n; ++i) {
    std::vector<double> sums;
    double mod_total = 0.0;
    for (const auto& dl : d_patch[i]) {
      double s = 0.0;
      for (double v : dl) s += v;
      sums.push_back(s);
      mod_total += s;
    }
    std::vector<double> mp;
    for (double s : sums) mp.push_back(mod_total == 0.0 ? 1.0 / sums.size() : s / mod_total);
    r.mp.push_back(mp);
    r.d_patch_sum.push_back(sums);
  }
  return r;
}

}  // namespace oracle
