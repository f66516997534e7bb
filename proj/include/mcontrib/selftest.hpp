#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcontrib/analysis.hpp"
#include "mcontrib/model.hpp"
#include "mcontrib/sample_source.hpp"

namespace mcontrib {

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestOptions {
  /// Perturbs one expected value so the suite must fail.
  bool inject_fault = false;
  unsigned seed = 20240611;
  int linear_instances = 50;
};

namespace detail {

inline AnalysisOptions entry_options(std::size_t modalities) {
  AnalysisOptions opt;
  opt.plans.assign(modalities, EntryPlan{});
  opt.fills.assign(modalities, ZeroFill{});
  return opt;
}

inline bool close(double a, double b, double tol = 1e-9) { return std::fabs(a - b) <= tol; }

}  // namespace detail

/// Embedded oracle checks: linear closed form, the worked two-modality
/// example, unimodal collapse and normalization.
inline std::vector<SelftestCheck> run_selftest(const SelftestOptions& options = {}) {
  std::vector<SelftestCheck> checks;
  const double fault = options.inject_fault ? 1e-3 : 0.0;

  // Worked example: p = x1[0] + x1[1] + x2[0], x1 = [1,2], x2 = [3].
  {
    SelftestCheck c{"worked example m = [0.5, 0.5], mp(x1) = [1/3, 2/3]"};
    nlohmann::json spec = {{"type", "linear"}, {"weights", {{"x1", {1.0, 1.0}}, {"x2", {1.0}}}}};
    BuiltinModel model = BuiltinModel::from_json(spec);
    InMemoryDataset data({Sample{{"x1", Tensor::vector({1, 2})}, {"x2", Tensor::vector({3})}}});
    const auto table = run_analysis(data, model, detail::entry_options(2));
    const auto m = modality_contribution(table).shares;
    const auto mp = patch_importance(table, 0).shares;
    c.passed = detail::close(m[0], 0.5 + fault) && detail::close(m[1], 0.5) && detail::close(mp[0], 1.0 / 3) &&
               detail::close(mp[1], 2.0 / 3);
    c.detail = "m = " + std::to_string(m[0]) + " : " + std::to_string(m[1]);
    checks.push_back(std::move(c));
  }

  // Linear closed form: m_i proportional to the sample mean of sum_j |w_ij x_ij|.
  {
    SelftestCheck c{"linear closed form on random instances"};
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> value(-2.0, 2.0);
    std::uniform_int_distribution<int> count(1, 6);
    double worst = 0.0;
    for (int inst = 0; inst < options.linear_instances; ++inst) {
      const int n_mod = count(rng) % 3 + 1;
      const int n_samples = count(rng);
      std::vector<std::vector<double>> w(n_mod);
      nlohmann::json weights = nlohmann::json::object();
      for (int i = 0; i < n_mod; ++i) {
        w[i].resize(count(rng));
        for (double& x : w[i]) x = value(rng);
        weights["m" + std::to_string(i)] = w[i];
      }
      BuiltinModel model = BuiltinModel::from_json({{"type", "linear"}, {"weights", weights}, {"bias", value(rng)}});
      std::vector<Sample> samples;
      std::vector<double> expected(n_mod, 0.0);
      for (int k = 0; k < n_samples; ++k) {
        Sample s;
        for (int i = 0; i < n_mod; ++i) {
          std::vector<double> x(w[i].size());
          for (std::size_t j = 0; j < x.size(); ++j) {
            x[j] = value(rng);
            expected[i] += std::fabs(w[i][j] * x[j]) / n_samples;
          }
          s.push_back({"m" + std::to_string(i), Tensor::vector(x)});
        }
        samples.push_back(std::move(s));
      }
      double total = 0.0;
      for (double e : expected) total += e;
      const auto table = run_analysis(InMemoryDataset(samples), model, detail::entry_options(n_mod));
      const auto m = modality_contribution(table).shares;
      for (int i = 0; i < n_mod; ++i) {
        const double want = (total > 0 ? expected[i] / total : 1.0 / n_mod) + (inst == 0 && i == 0 ? fault : 0.0);
        worst = std::max(worst, std::fabs(m[i] - want));
      }
    }
    c.passed = worst <= 1e-9;
    c.detail = "max |m - closed form| = " + std::to_string(worst);
    checks.push_back(std::move(c));
  }

  // Unimodal collapse: a model that only reads modality 1.
  {
    SelftestCheck c{"single-modality model collapses to m = [0, 1]"};
    nlohmann::json inner = {{"type", "linear"}, {"weights", {{"a", {1.0, -2.0}}, {"b", {0.5, 3.0}}}}};
    BuiltinModel model = BuiltinModel::from_json({{"type", "single"}, {"modality", 1}, {"inner", inner}});
    InMemoryDataset data({Sample{{"a", Tensor::vector({1, 2})}, {"b", Tensor::vector({-1, 4})}},
                          Sample{{"a", Tensor::vector({3, 0.5})}, {"b", Tensor::vector({2, 2})}}});
    const auto table = run_analysis(data, model, detail::entry_options(2));
    const auto m = modality_contribution(table).shares;
    const auto hits = detect_collapse(m);
    c.passed = m[0] == 0.0 + fault && m[1] == 1.0 && hits == std::vector<std::size_t>{0};
    c.detail = "m = " + std::to_string(m[0]) + " : " + std::to_string(m[1]);
    checks.push_back(std::move(c));
  }

  // Normalization of m, mp and mp*m on a three-modality softmax model.
  {
    SelftestCheck c{"normalization sums equal 1"};
    nlohmann::json spec = {{"type", "softmax_linear"},
                           {"weights",
                            {{"a", {{0.3, -1.0, 2.0}, {1.0, 0.5, -0.5}}},
                             {"b", {{2.0, 1.0}, {-1.0, 0.25}}},
                             {"c", {{0.7}, {-0.7}}}}},
                           {"bias", {0.1, -0.1}}};
    BuiltinModel model = BuiltinModel::from_json(spec);
    InMemoryDataset data({Sample{{"a", Tensor::vector({1, 2, 3})}, {"b", Tensor::vector({0.5, -1})}, {"c", Tensor::vector({2})}},
                          Sample{{"a", Tensor::vector({-1, 0, 1})}, {"b", Tensor::vector({2, 2})}, {"c", Tensor::vector({-3})}}});
    const auto report = summarize(run_analysis(data, model, detail::entry_options(3)));
    double worst = std::fabs(kahan_total(report.m) - 1.0);
    for (const auto& mod : report.modalities) worst = std::max(worst, std::fabs(kahan_total(mod.mp) - 1.0));
    worst = std::max(worst, std::fabs(report.weighted_total() - 1.0 - fault));
    c.passed = worst <= 1e-9;
    c.detail = "max deviation = " + std::to_string(worst);
    checks.push_back(std::move(c));
  }
  return checks;
}

}  // namespace mcontrib
