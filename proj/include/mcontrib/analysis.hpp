#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <future>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mcontrib/error.hpp"
#include "mcontrib/kahan.hpp"
#include "mcontrib/masking.hpp"
#include "mcontrib/model.hpp"
#include "mcontrib/sample_source.hpp"
#include "mcontrib/tensor.hpp"

namespace mcontrib {

/// Per-component absolute output change; entries are nonnegative.
using DistanceVector = std::vector<double>;

/// Elementwise |p0 - p_masked|. `context` names the model call in the error.
inline DistanceVector output_distance(const OutputVector& baseline, const OutputVector& masked,
                                      const std::string& context = "masked model call") {
  if (baseline.size() != masked.size()) {
    throw OutputLengthError(context + ": output length " + std::to_string(masked.size()) +
                            " differs from baseline length " + std::to_string(baseline.size()));
  }
  DistanceVector d(baseline.size());
  for (std::size_t c = 0; c < d.size(); ++c) d[c] = std::fabs(baseline[c] - masked[c]);
  return d;
}

// --- plan rules ------------------------------------------------------------

/// One singleton patch per entry of a tensor modality.
struct EntryPlan {};
/// Contiguous runs over the flattened tensor.
struct ChunkPlan {
  std::size_t patches = 1;
};
struct GridPlan {
  PatchGrid grid;
};
/// One patch per token; h varies per sample.
struct TokenPlan {};
/// Caller-supplied patches, used verbatim for every sample.
struct FixedPlan {
  std::vector<Patch> patches;
};

using PlanRule = std::variant<EntryPlan, ChunkPlan, GridPlan, TokenPlan, FixedPlan>;

inline bool has_variable_h(const PlanRule& rule) { return std::holds_alternative<TokenPlan>(rule); }

/// Expands `rule` into the concrete plan for one sample's modality input.
inline OcclusionPlan make_plan(const PlanRule& rule, std::size_t modality, const ModalityInput& input,
                               const std::string& sample_id = {}) {
  const bool is_text = std::holds_alternative<TokenList>(input);
  const std::size_t size = element_count(input);
  if (std::holds_alternative<TokenPlan>(rule)) {
    if (!is_text) throw PlanError("token plan requires a text modality");
    return plan_text(size, sample_id, modality);
  }
  if (const auto* fixed = std::get_if<FixedPlan>(&rule)) {
    OcclusionPlan plan{modality, fixed->patches};
    if (plan.patches.empty()) throw PlanError("explicit plan has no patches");
    for (std::size_t l = 0; l < plan.patches.size(); ++l) {
      if (plan.patches[l].empty()) throw PlanError("explicit patch " + std::to_string(l) + " is empty");
      for (std::size_t idx : plan.patches[l]) {
        if (idx >= size) throw PlanError("explicit patch index " + std::to_string(idx) + " out of range");
      }
    }
    return plan;
  }
  if (std::holds_alternative<EntryPlan>(rule)) {
    return is_text ? plan_text(size, sample_id, modality) : plan_tabular(size, modality);
  }
  if (const auto* chunks = std::get_if<ChunkPlan>(&rule)) return plan_chunks(size, chunks->patches, modality);
  const auto& grid = std::get<GridPlan>(rule).grid;
  const auto* tensor = std::get_if<Tensor>(&input);
  if (!tensor) throw PlanError("image plan requires a tensor modality");
  if (tensor->shape != grid.tensor_shape()) {
    throw PlanError("input shape " + shape_string(tensor->shape) + " does not match grid shape " +
                    shape_string(grid.tensor_shape()));
  }
  return plan_image(grid, modality);
}

// --- analysis engine -------------------------------------------------------

struct AnalysisOptions {
  std::vector<PlanRule> plans;      // one per modality
  std::vector<FillStrategy> fills;  // one per modality
  PostTransform post_transform = PostTransform::None;
  std::size_t jobs = 1;
  /// Re-issue every baseline call at the end and compare.
  bool recheck = false;
  /// Tolerance for the recheck on models that are not bit-exact.
  double recheck_tolerance = 1e-6;
};

/// Accumulated output distances of one run.
struct DistanceTable {
  std::size_t sample_count = 0;
  std::size_t output_dim = 0;
  std::vector<std::string> modality_names;
  std::vector<std::string> sample_ids;
  std::vector<bool> variable_h;
  /// d_i: dataset-averaged modality distance.
  std::vector<DistanceVector> per_modality;
  /// d_{i,l}: dataset-averaged patch distance; empty for variable-h modalities.
  std::vector<std::vector<DistanceVector>> per_patch;
  /// d_i^k: per-sample modality distance, [i][k].
  std::vector<std::vector<DistanceVector>> per_sample;
  /// d_{i,l}^k for variable-h modalities only, [i][k][l].
  std::vector<std::vector<std::vector<DistanceVector>>> per_sample_patch;
  /// Unmasked tokens of variable-h text modalities, [i][k].
  std::vector<std::vector<TokenList>> sample_tokens;
  std::size_t model_calls = 0;

  std::size_t modality_count() const { return modality_names.size(); }
};

namespace detail {

[[noreturn]] inline void rethrow_model_error(const std::string& context) {
  try {
    throw;
  } catch (const TimeoutError& e) {
    throw TimeoutError(context + ": " + e.what());
  } catch (const TransportError& e) {
    throw TransportError(context + ": " + e.what());
  } catch (const MalformedResponseError& e) {
    throw MalformedResponseError(context + ": " + e.what());
  } catch (const OutputLengthError& e) {
    throw OutputLengthError(context + ": " + e.what());
  } catch (const NonFiniteOutputError& e) {
    throw NonFiniteOutputError(context + ": " + e.what());
  } catch (const RemoteModelError& e) {
    throw RemoteModelError(context + ": " + e.what());
  } catch (const ProtocolError& e) {
    throw ProtocolError(context + ": " + e.what());
  } catch (const NondeterminismError& e) {
    throw NondeterminismError(context + ": " + e.what());
  } catch (const ModelError& e) {
    throw ModelError(context + ": " + e.what());
  }
}

// A single model request of one sample: the baseline (modality == npos) or
// one masked patch.
struct Request {
  std::size_t modality;
  std::size_t patch;
  static constexpr std::size_t baseline = static_cast<std::size_t>(-1);
};

inline std::string describe(const Request& r, const std::string& sample_id, std::size_t k,
                            const std::vector<std::string>& names) {
  std::string out = "sample '" + sample_id + "' (#" + std::to_string(k) + ")";
  if (r.modality == Request::baseline) return out + ", baseline call";
  return out + ", modality '" + names[r.modality] + "', patch " + std::to_string(r.patch);
}

// Cap on tensor elements materialized per chunk of masked inputs.
inline constexpr std::size_t chunk_element_budget = std::size_t{1} << 24;

}  // namespace detail

/// Drives one baseline pass plus one masked pass per patch for every sample
/// and accumulates the output distances in fixed (modality, sample, patch)
/// order with compensated sums. Labels never enter this path.
template <SampleSource D>
DistanceTable run_analysis(const D& dataset, Model& model, const AnalysisOptions& options) {
  const std::size_t n_samples = dataset.size();
  if (n_samples == 0) throw DatasetError("dataset has no samples");
  const auto names = dataset.modality_names();
  const std::size_t n_mod = names.size();
  if (n_mod == 0) throw DatasetError("dataset has no modalities");
  if (options.plans.size() != n_mod) {
    throw PlanError("expected " + std::to_string(n_mod) + " plan rules, got " + std::to_string(options.plans.size()));
  }
  if (options.fills.size() != n_mod) {
    throw PlanError("expected " + std::to_string(n_mod) + " fill strategies, got " +
                    std::to_string(options.fills.size()));
  }

  const ModelInfo info = model.info();
  const std::size_t batch_limit = std::max<std::size_t>(info.batch_limit, 1);
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.jobs, std::max<std::size_t>(info.max_concurrency, 1)));

  DistanceTable table;
  table.sample_count = n_samples;
  table.output_dim = info.output_dim;
  table.modality_names = names;
  table.variable_h.resize(n_mod);
  for (std::size_t i = 0; i < n_mod; ++i) table.variable_h[i] = has_variable_h(options.plans[i]);
  table.per_sample.assign(n_mod, {});
  table.per_sample_patch.assign(n_mod, {});
  table.sample_tokens.assign(n_mod, {});

  std::vector<KahanVector> modality_acc(n_mod);
  std::vector<std::vector<KahanVector>> patch_acc(n_mod);
  std::vector<std::optional<std::size_t>> fixed_h(n_mod);
  std::vector<OutputVector> baselines;
  baselines.reserve(options.recheck ? n_samples : 0);

  for (std::size_t k = 0; k < n_samples; ++k) {
    const Sample sample = dataset.sample(k);
    std::string sample_id = std::to_string(k);
    if constexpr (requires { dataset.sample_id(k); }) sample_id = dataset.sample_id(k);
    table.sample_ids.push_back(sample_id);

    if (sample.size() != n_mod) {
      throw DatasetError("sample '" + sample_id + "' has " + std::to_string(sample.size()) + " modalities, expected " +
                         std::to_string(n_mod));
    }
    for (std::size_t i = 0; i < n_mod; ++i) {
      if (sample[i].name != names[i]) {
        throw DatasetError("sample '" + sample_id + "' lists modality '" + sample[i].name + "' where '" + names[i] +
                           "' was expected");
      }
    }

    std::vector<OcclusionPlan> plans;
    plans.reserve(n_mod);
    for (std::size_t i = 0; i < n_mod; ++i) {
      plans.push_back(make_plan(options.plans[i], i, sample[i].value, sample_id));
      const std::size_t h = plans.back().patch_count();
      if (!table.variable_h[i]) {
        if (!fixed_h[i]) {
          fixed_h[i] = h;
        } else if (*fixed_h[i] != h) {
          throw PlanError("modality '" + names[i] + "' has " + std::to_string(h) + " patches in sample '" + sample_id +
                          "' but " + std::to_string(*fixed_h[i]) + " earlier");
        }
      }
    }

    std::vector<detail::Request> requests;
    requests.push_back({detail::Request::baseline, 0});
    for (std::size_t i = 0; i < n_mod; ++i) {
      for (std::size_t l = 0; l < plans[i].patch_count(); ++l) requests.push_back({i, l});
    }

    std::size_t sample_elements = 0;
    for (const auto& input : sample) sample_elements += std::max<std::size_t>(element_count(input.value), 1);
    const std::size_t chunk =
        std::max<std::size_t>(1, std::min(batch_limit, detail::chunk_element_budget / sample_elements));

    auto build = [&](const detail::Request& r) {
      if (r.modality == detail::Request::baseline) return sample;
      Sample masked = sample;
      masked[r.modality].value =
          apply_mask(sample[r.modality].value, plans[r.modality].patches[r.patch], options.fills[r.modality]);
      return masked;
    };

    std::vector<OutputVector> outputs(requests.size());
    auto run_chunk = [&](std::size_t begin, std::size_t end) {
      std::vector<Sample> batch;
      batch.reserve(end - begin);
      for (std::size_t q = begin; q < end; ++q) batch.push_back(build(requests[q]));
      std::vector<OutputVector> result;
      try {
        result = model.predict_batch(batch);
      } catch (const ModelError& e) {
        const long idx = e.batch_index();
        if (idx >= 0 && static_cast<std::size_t>(idx) < batch.size()) {
          detail::rethrow_model_error(detail::describe(requests[begin + idx], sample_id, k, names));
        }
        detail::rethrow_model_error(detail::describe(requests[begin], sample_id, k, names) + " (batch of " +
                                    std::to_string(batch.size()) + ")");
      }
      if (result.size() != batch.size()) {
        throw MalformedResponseError(detail::describe(requests[begin], sample_id, k, names) + ": model returned " +
                                     std::to_string(result.size()) + " outputs for a batch of " +
                                     std::to_string(batch.size()));
      }
      for (std::size_t q = begin; q < end; ++q) outputs[q] = std::move(result[q - begin]);
    };

    std::vector<std::pair<std::size_t, std::size_t>> chunks;
    for (std::size_t begin = 0; begin < requests.size(); begin += chunk) {
      chunks.emplace_back(begin, std::min(begin + chunk, requests.size()));
    }
    if (workers <= 1 || chunks.size() <= 1) {
      for (const auto& [b, e] : chunks) run_chunk(b, e);
    } else {
      for (std::size_t wave = 0; wave < chunks.size(); wave += workers) {
        std::vector<std::future<void>> pending;
        const std::size_t wave_end = std::min(wave + workers, chunks.size());
        for (std::size_t c = wave; c < wave_end; ++c) {
          pending.push_back(std::async(std::launch::async, run_chunk, chunks[c].first, chunks[c].second));
        }
        // Surface the lowest-index failure first.
        for (auto& p : pending) p.wait();
        for (auto& p : pending) p.get();
      }
    }
    table.model_calls += requests.size();

    for (std::size_t q = 0; q < requests.size(); ++q) {
      check_output(outputs[q], table.output_dim, detail::describe(requests[q], sample_id, k, names));
      if (table.output_dim == 0) table.output_dim = outputs[q].size();
      apply_post_transform(options.post_transform, outputs[q]);
    }
    const OutputVector& baseline = outputs.front();
    if (options.recheck) baselines.push_back(baseline);

    if (k == 0) {
      for (std::size_t i = 0; i < n_mod; ++i) {
        modality_acc[i] = KahanVector(table.output_dim);
        if (!table.variable_h[i]) patch_acc[i].assign(*fixed_h[i], KahanVector(table.output_dim));
      }
    }

    std::size_t q = 1;
    for (std::size_t i = 0; i < n_mod; ++i) {
      KahanVector sample_acc(table.output_dim);
      std::vector<DistanceVector> sample_patches;
      for (std::size_t l = 0; l < plans[i].patch_count(); ++l, ++q) {
        DistanceVector d = output_distance(baseline, outputs[q], detail::describe(requests[q], sample_id, k, names));
        sample_acc.add(d);
        if (table.variable_h[i]) {
          sample_patches.push_back(std::move(d));
        } else {
          patch_acc[i][l].add(d);
        }
      }
      DistanceVector d_sample = sample_acc.values();
      modality_acc[i].add(d_sample);
      table.per_sample[i].push_back(std::move(d_sample));
      if (table.variable_h[i]) {
        table.per_sample_patch[i].push_back(std::move(sample_patches));
        table.sample_tokens[i].push_back(std::get<TokenList>(sample[i].value));
      }
    }
  }

  const double n = static_cast<double>(n_samples);
  table.per_modality.resize(n_mod);
  table.per_patch.assign(n_mod, {});
  for (std::size_t i = 0; i < n_mod; ++i) {
    table.per_modality[i] = modality_acc[i].values();
    for (double& v : table.per_modality[i]) v /= n;
    if (!table.variable_h[i]) {
      for (const auto& acc : patch_acc[i]) {
        DistanceVector d = acc.values();
        for (double& v : d) v /= n;
        table.per_patch[i].push_back(std::move(d));
      }
    }
  }

  if (options.recheck) {
    for (std::size_t k = 0; k < n_samples; ++k) {
      const std::string context = "determinism recheck of sample '" + table.sample_ids[k] + "'";
      OutputVector again;
      try {
        again = model.predict(dataset.sample(k));
      } catch (const ModelError&) {
        detail::rethrow_model_error(context);
      }
      ++table.model_calls;
      check_output(again, table.output_dim, context);
      apply_post_transform(options.post_transform, again);
      for (std::size_t c = 0; c < again.size(); ++c) {
        const double a = baselines[k][c];
        const double b = again[c];
        const bool same = info.bit_exact ? a == b
                                         : std::fabs(a - b) <= options.recheck_tolerance * std::max(1.0, std::fabs(a));
        if (!same) {
          throw NondeterminismError(context + ": component " + std::to_string(c) + " changed from " +
                                    std::to_string(a) + " to " + std::to_string(b) +
                                    "; the model is not deterministic (dropout or sampling left on?)");
        }
      }
    }
  }
  return table;
}

// --- normalization ---------------------------------------------------------

/// Shares of a nonnegative total. All-zero totals give a uniform vector and
/// set `degenerate`.
struct Normalized {
  std::vector<double> shares;
  bool degenerate = false;
};

inline Normalized normalize_shares(std::span<const double> totals) {
  Normalized out;
  out.shares.resize(totals.size());
  const double denom = kahan_total(totals);
  if (denom == 0.0) {
    out.degenerate = true;
    std::fill(out.shares.begin(), out.shares.end(), totals.empty() ? 0.0 : 1.0 / static_cast<double>(totals.size()));
    return out;
  }
  for (std::size_t i = 0; i < totals.size(); ++i) out.shares[i] = totals[i] / denom;
  return out;
}

inline double component_total(const DistanceVector& d) { return kahan_total(d); }

/// m: each modality's share of the summed output distance.
inline Normalized modality_contribution(const DistanceTable& table) {
  std::vector<double> totals;
  totals.reserve(table.per_modality.size());
  for (const auto& d : table.per_modality) totals.push_back(component_total(d));
  return normalize_shares(totals);
}

/// Normalizes a list of per-patch distance vectors.
inline Normalized patch_shares(const std::vector<DistanceVector>& patches) {
  std::vector<double> totals;
  totals.reserve(patches.size());
  for (const auto& d : patches) totals.push_back(component_total(d));
  return normalize_shares(totals);
}

/// mp_i: each patch's share of modality i's distance, dataset-averaged.
inline Normalized patch_importance(const DistanceTable& table, std::size_t modality) {
  if (modality >= table.modality_count()) throw Error("modality index out of range");
  if (table.variable_h[modality]) {
    throw Error("modality '" + table.modality_names[modality] +
                "' has a per-sample patch count; use sample_patch_importance");
  }
  return patch_shares(table.per_patch[modality]);
}

/// mp of one sample for a variable-h modality.
inline Normalized sample_patch_importance(const DistanceTable& table, std::size_t modality, std::size_t sample) {
  if (modality >= table.modality_count() || !table.variable_h[modality]) {
    throw Error("per-sample patch importance is kept for variable-h modalities only");
  }
  return patch_shares(table.per_sample_patch[modality].at(sample));
}

/// m computed from a single sample's distances.
inline Normalized sample_modality_contribution(const DistanceTable& table, std::size_t sample) {
  std::vector<double> totals;
  for (const auto& per_sample : table.per_sample) totals.push_back(component_total(per_sample.at(sample)));
  return normalize_shares(totals);
}

/// mp_i^l * m_i for every modality and patch.
inline std::vector<std::vector<double>> weighted_patch_importance(const std::vector<std::vector<double>>& mp,
                                                                  const std::vector<double>& m) {
  if (mp.size() != m.size()) throw Error("mp and m cover different modality counts");
  std::vector<std::vector<double>> out(mp.size());
  for (std::size_t i = 0; i < mp.size(); ++i) {
    out[i].reserve(mp[i].size());
    for (double v : mp[i]) out[i].push_back(v * m[i]);
  }
  return out;
}

enum class ClassMode { Mean, Max };

struct ClassScore {
  double score = 0.0;
  std::size_t argmax_class = 0;  // meaningful for ClassMode::Max
};

/// MEAN: average over output components. MAX: largest component, lowest
/// class index on ties.
inline std::vector<ClassScore> per_class_scores(const std::vector<DistanceVector>& patches, ClassMode mode) {
  std::vector<ClassScore> out;
  out.reserve(patches.size());
  for (const auto& d : patches) {
    ClassScore s;
    if (d.empty()) {
      out.push_back(s);
      continue;
    }
    if (mode == ClassMode::Mean) {
      s.score = kahan_total(d) / static_cast<double>(d.size());
    } else {
      s.score = d[0];
      for (std::size_t c = 1; c < d.size(); ++c) {
        if (d[c] > s.score) {
          s.score = d[c];
          s.argmax_class = c;
        }
      }
    }
    out.push_back(s);
  }
  return out;
}

inline std::vector<ClassScore> per_class_scores(const DistanceTable& table, std::size_t modality, ClassMode mode) {
  if (modality >= table.modality_count() || table.variable_h[modality]) {
    throw Error("dataset-averaged per-class scores need a fixed-h modality");
  }
  return per_class_scores(table.per_patch[modality], mode);
}

inline constexpr double default_collapse_threshold = 0.02;

/// Indices with m_i <= threshold (inclusive).
inline std::vector<std::size_t> detect_collapse(const std::vector<double>& m,
                                                double threshold = default_collapse_threshold) {
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] <= threshold) hits.push_back(i);
  }
  return hits;
}

// --- report assembly -------------------------------------------------------

struct SamplePatchResult {
  std::size_t sample = 0;
  std::string sample_id;
  TokenList tokens;
  std::vector<double> mp;
  bool degenerate = false;
  std::vector<DistanceVector> per_class;  // h x C when retained
};

struct ModalityResult {
  std::string name;
  bool variable_h = false;
  double m = 0.0;
  /// Fixed-h modalities only.
  std::vector<double> mp;
  std::vector<double> weighted_mp;
  bool mp_degenerate = false;
  std::vector<DistanceVector> per_class;  // h x C when retained
  /// Variable-h modalities only.
  std::vector<SamplePatchResult> samples;
};

struct ContributionReport {
  std::vector<double> m;
  bool degenerate = false;
  double collapse_threshold = default_collapse_threshold;
  std::vector<std::size_t> collapse_threshold_hits;
  std::vector<ModalityResult> modalities;
  std::size_t sample_count = 0;
  std::size_t output_dim = 0;
  std::size_t model_calls = 0;
  std::vector<std::string> sample_ids;
  /// Single-sample m for every sample.
  std::vector<std::vector<double>> sample_m;
  std::vector<bool> sample_degenerate;

  /// Sum over fixed-h patches of mp*m plus m of variable-h modalities.
  double weighted_total() const {
    KahanSum<double> acc;
    for (const auto& mod : modalities) {
      if (mod.variable_h) {
        acc.add(mod.m);
      } else {
        for (double w : mod.weighted_mp) acc.add(w);
      }
    }
    return acc.value();
  }
};

struct SummaryOptions {
  double collapse_threshold = default_collapse_threshold;
  bool per_class = false;
};

inline ContributionReport summarize(const DistanceTable& table, const SummaryOptions& options = {}) {
  ContributionReport report;
  const Normalized m = modality_contribution(table);
  report.m = m.shares;
  report.degenerate = m.degenerate;
  report.collapse_threshold = options.collapse_threshold;
  report.collapse_threshold_hits = detect_collapse(report.m, options.collapse_threshold);
  report.sample_count = table.sample_count;
  report.output_dim = table.output_dim;
  report.model_calls = table.model_calls;
  report.sample_ids = table.sample_ids;
  for (std::size_t k = 0; k < table.sample_count; ++k) {
    const Normalized sm = sample_modality_contribution(table, k);
    report.sample_m.push_back(sm.shares);
    report.sample_degenerate.push_back(sm.degenerate);
  }
  for (std::size_t i = 0; i < table.modality_count(); ++i) {
    ModalityResult mod;
    mod.name = table.modality_names[i];
    mod.variable_h = table.variable_h[i];
    mod.m = report.m[i];
    if (!mod.variable_h) {
      const Normalized mp = patch_importance(table, i);
      mod.mp = mp.shares;
      mod.mp_degenerate = mp.degenerate;
      mod.weighted_mp = weighted_patch_importance({mod.mp}, {mod.m}).front();
      if (options.per_class) mod.per_class = table.per_patch[i];
    } else {
      for (std::size_t k = 0; k < table.sample_count; ++k) {
        SamplePatchResult s;
        s.sample = k;
        s.sample_id = table.sample_ids[k];
        s.tokens = table.sample_tokens[i][k];
        const Normalized mp = sample_patch_importance(table, i, k);
        s.mp = mp.shares;
        s.degenerate = mp.degenerate;
        if (options.per_class) s.per_class = table.per_sample_patch[i][k];
        mod.samples.push_back(std::move(s));
      }
    }
    report.modalities.push_back(std::move(mod));
  }
  return report;
}

}  // namespace mcontrib
