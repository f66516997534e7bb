#pragma once

// Random linear-model instances expressed both as oracle input and as
// library objects (samples, built-in spec, explicit plans, fills).

#include <algorithm>
#include <atomic>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcontrib/analysis.hpp"
#include "mcontrib/model.hpp"
#include "mcontrib/sample_source.hpp"
#include "support/oracle.hpp"

namespace testing_support {

struct Generated {
  oracle::Instance instance;
  std::vector<mcontrib::Sample> samples;
  nlohmann::json spec;
  mcontrib::AnalysisOptions options;
};

inline std::string modality_name(std::size_t i) { return "mod" + std::to_string(i); }

struct Limits {
  int max_samples = 8;
  int max_modalities = 3;
  int max_features = 16;
  int max_outputs = 3;
};

/// Random instance with random disjoint covering patches per modality.
inline Generated random_instance(std::mt19937_64& rng, bool mean_fill, const Limits& lim = {}) {
  std::uniform_int_distribution<int> n_samples(1, lim.max_samples);
  std::uniform_int_distribution<int> n_mod(1, lim.max_modalities);
  std::uniform_int_distribution<int> n_feat(1, lim.max_features);
  std::uniform_int_distribution<int> n_out(1, lim.max_outputs);
  std::uniform_real_distribution<double> value(-3.0, 3.0);

  Generated g;
  auto& inst = g.instance;
  inst.mean_fill = mean_fill;
  const int N = n_samples(rng);
  const int n = n_mod(rng);
  const int C = n_out(rng);
  std::vector<int> features(n);
  for (int& f : features) f = n_feat(rng);

  inst.w.assign(C, {});
  inst.bias.resize(C);
  for (int c = 0; c < C; ++c) {
    inst.bias[c] = value(rng);
    for (int i = 0; i < n; ++i) {
      std::vector<double> row(features[i]);
      for (double& v : row) v = value(rng);
      inst.w[c].push_back(row);
    }
  }
  inst.x.assign(N, {});
  for (int k = 0; k < N; ++k) {
    for (int i = 0; i < n; ++i) {
      std::vector<double> row(features[i]);
      for (double& v : row) v = value(rng);
      inst.x[k].push_back(row);
    }
  }
  inst.patches.assign(n, {});
  for (int i = 0; i < n; ++i) {
    std::vector<int> idx(features[i]);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::uniform_int_distribution<int> n_patch(1, features[i]);
    const int h = n_patch(rng);
    // Random cut points give h nonempty groups.
    std::vector<int> cuts(features[i] - 1);
    std::iota(cuts.begin(), cuts.end(), 1);
    std::shuffle(cuts.begin(), cuts.end(), rng);
    cuts.resize(h - 1);
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(features[i]);
    int start = 0;
    for (int cut : cuts) {
      inst.patches[i].emplace_back(idx.begin() + start, idx.begin() + cut);
      start = cut;
    }
  }

  nlohmann::json weights = nlohmann::json::object();
  for (int i = 0; i < n; ++i) {
    nlohmann::json rows = nlohmann::json::array();
    for (int c = 0; c < C; ++c) rows.push_back(inst.w[c][i]);
    weights[modality_name(i)] = rows;
  }
  g.spec = {{"type", "linear"}, {"weights", weights}, {"bias", inst.bias}};

  for (int k = 0; k < N; ++k) {
    mcontrib::Sample s;
    for (int i = 0; i < n; ++i) s.push_back({modality_name(i), mcontrib::Tensor::vector(inst.x[k][i])});
    g.samples.push_back(std::move(s));
  }
  for (int i = 0; i < n; ++i) {
    mcontrib::FixedPlan plan;
    for (const auto& p : inst.patches[i]) plan.patches.emplace_back(p.begin(), p.end());
    g.options.plans.push_back(plan);
  }
  mcontrib::InMemoryDataset data(g.samples);
  for (int i = 0; i < n; ++i) {
    if (mean_fill) {
      g.options.fills.push_back(mcontrib::compute_fill(data, i));
    } else {
      g.options.fills.push_back(mcontrib::ZeroFill{});
    }
  }
  return g;
}

/// Model wrapper that counts every input it evaluates.
class CountingModel final : public mcontrib::Model {
 public:
  explicit CountingModel(mcontrib::Model& inner) : inner_(inner) {}
  mcontrib::ModelInfo info() const override { return inner_.info(); }
  std::string identity() const override { return "counting:" + inner_.identity(); }
  std::vector<mcontrib::OutputVector> predict_batch(std::span<const mcontrib::Sample> inputs) override {
    calls_ += inputs.size();
    ++batches_;
    return inner_.predict_batch(inputs);
  }
  std::size_t calls() const { return calls_; }
  std::size_t batches() const { return batches_; }

 private:
  mcontrib::Model& inner_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> batches_{0};
};

/// Multiplies every output of `inner` by `factor`.
class ScaledModel final : public mcontrib::Model {
 public:
  ScaledModel(mcontrib::Model& inner, double factor) : inner_(inner), factor_(factor) {}
  mcontrib::ModelInfo info() const override { return inner_.info(); }
  std::string identity() const override { return inner_.identity(); }
  std::vector<mcontrib::OutputVector> predict_batch(std::span<const mcontrib::Sample> inputs) override {
    auto out = inner_.predict_batch(inputs);
    for (auto& o : out) {
      for (double& v : o) v *= factor_;
    }
    return out;
  }

 private:
  mcontrib::Model& inner_;
  double factor_;
};

}  // namespace testing_support
