#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mcontrib/analysis.hpp"
#include "mcontrib/dataset.hpp"
#include "mcontrib/http_model.hpp"
#include "mcontrib/model.hpp"
#include "mcontrib/report.hpp"
#include "mcontrib/selftest.hpp"
#include "mcontrib/subprocess_model.hpp"

namespace mcontrib::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_error = 1;
inline constexpr int exit_degenerate = 2;

/// Environment variable holding the default per-call model timeout, seconds.
inline constexpr const char* timeout_env = "MCONTRIB_TIMEOUT";

struct AnalyzeOptions {
  std::string manifest;
  std::string model;
  std::vector<std::string> fills;
  std::string out_dir = "mcontrib-out";
  std::string post_transform = "none";
  double collapse_threshold = default_collapse_threshold;
  double timeout_seconds = 0.0;  // 0: environment or 60 s
  std::size_t jobs = 1;
  bool per_class = false;
  bool strict = false;
  bool recheck = false;
};

struct RenderOptions {
  std::string report;
  std::string what = "all";  // heatmap|tokens|all
  std::string mode = "mp";   // mp|mean|max (heatmaps)
  std::string out_dir = ".";
};

inline std::chrono::milliseconds resolve_timeout(double seconds) {
  if (seconds <= 0.0) {
    if (const char* env = std::getenv(timeout_env)) {
      char* end = nullptr;
      const double v = std::strtod(env, &end);
      if (end == env || v <= 0.0) throw Error(std::string(timeout_env) + " must be a positive number of seconds");
      seconds = v;
    } else {
      seconds = 60.0;
    }
  }
  return std::chrono::milliseconds(static_cast<long long>(seconds * 1000.0));
}

/// builtin:<json or file> | exec:<command> | http:<url>
inline std::unique_ptr<Model> open_model(const std::string& flag, std::chrono::milliseconds timeout,
                                         std::size_t jobs) {
  const auto colon = flag.find(':');
  if (colon == std::string::npos) throw Error("--model must look like builtin:<spec>, exec:<cmd> or http:<url>");
  const std::string kind = flag.substr(0, colon);
  const std::string rest = flag.substr(colon + 1);
  if (kind == "builtin") {
    std::string text = rest;
    if (!text.empty() && text.front() != '{') text = read_file(rest.front() == '@' ? rest.substr(1) : rest);
    nlohmann::json spec;
    try {
      spec = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("built-in model spec is not valid JSON: ") + e.what());
    }
    return std::make_unique<BuiltinModel>(BuiltinModel::from_json(spec));
  }
  if (kind == "exec") return std::make_unique<SubprocessModel>(rest, timeout);
  if (kind == "http") {
    // Both http://host:port/path and http:host:port/path are accepted.
    const std::string url = rest.starts_with("//") ? "http:" + rest : rest;
    return std::make_unique<HttpModel>(url, timeout, std::max<std::size_t>(jobs, 1));
  }
  throw Error("unknown model kind '" + kind + "' (expected builtin, exec or http)");
}

/// Applies --fill flags: zero|mean set every tensor modality, token:<sym>
/// sets the text mask token.
inline void apply_fill_flags(Manifest& manifest, const std::vector<std::string>& fills) {
  for (const auto& f : fills) {
    if (f == "zero" || f == "mean") {
      for (auto& m : manifest.modalities) {
        if (m.kind != ModalityKind::Text) m.fill = f == "zero" ? FillKind::Zero : FillKind::Mean;
      }
    } else if (f.rfind("token:", 0) == 0 && f.size() > 6) {
      for (auto& m : manifest.modalities) {
        if (m.kind == ModalityKind::Text) m.mask_token = f.substr(6);
      }
    } else {
      throw Error("--fill must be zero, mean or token:<symbol>, got '" + f + "'");
    }
  }
}

inline std::string file_safe(const std::string& name) {
  std::string out;
  for (char ch : name) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
                    ch == '_' || ch == '.';
    out += ok ? ch : '_';
  }
  return out.empty() ? "_" : out;
}

/// Writes heatmaps and token/attribute tables for a stored report document.
/// Returns the written paths. Throws when `mode` or `what` needs per-class
/// data the report does not hold.
inline std::vector<std::string> render_artifacts(const nlohmann::json& doc, const std::string& what,
                                                 const std::string& mode, const std::string& out_dir) {
  if (what != "heatmap" && what != "tokens" && what != "all") throw Error("--what must be heatmap, tokens or all");
  if (mode != "mp" && mode != "mean" && mode != "max") throw Error("--mode must be mp, mean or max");
  std::filesystem::create_directories(out_dir);
  const auto mods = read_report_modalities(doc);
  const std::string missing_class =
      "the report holds no per-class scores; re-run analyze with --per-class to enable MEAN/MAX output";
  std::vector<std::string> written;
  const std::filesystem::path dir(out_dir);

  if (what == "heatmap" || what == "all") {
    for (const auto& m : mods) {
      if (!m.grid) continue;
      std::vector<double> scores;
      if (mode == "mp") {
        scores = m.mp;
      } else {
        if (m.per_class.empty()) throw Error("modality '" + m.name + "': " + missing_class);
        for (const auto& s : per_class_scores(m.per_class, mode == "mean" ? ClassMode::Mean : ClassMode::Max)) {
          scores.push_back(s.score);
        }
      }
      const auto stem = (dir / ("heatmap_" + file_safe(m.name) + "_" + mode)).string();
      for (auto& p : write_patch_heatmap(scores, *m.grid, stem)) written.push_back(std::move(p));
    }
  }
  if (what == "tokens" || what == "all") {
    for (const auto& m : mods) {
      if (m.kind == "image") continue;
      if (!m.samples.empty()) {
        for (const auto& s : m.samples) {
          if (s.per_class.empty()) {
            if (what == "tokens") throw Error("modality '" + m.name + "': " + missing_class);
            continue;
          }
          const auto path = (dir / ("tokens_" + file_safe(m.name) + "_" + file_safe(s.id) + ".csv")).string();
          write_file(path, write_token_scores(s.tokens, per_class_scores(s.per_class, ClassMode::Mean),
                                              per_class_scores(s.per_class, ClassMode::Max)));
          written.push_back(path);
        }
      } else if (!m.mp.empty()) {
        if (m.per_class.empty()) {
          if (what == "tokens") throw Error("modality '" + m.name + "': " + missing_class);
          continue;
        }
        const auto path = (dir / ("attributes_" + file_safe(m.name) + ".csv")).string();
        write_file(path, write_token_scores(m.patch_labels, per_class_scores(m.per_class, ClassMode::Mean),
                                            per_class_scores(m.per_class, ClassMode::Max)));
        written.push_back(path);
      }
    }
  }
  return written;
}

inline RunMetadata run_metadata(const Manifest& manifest, const Model& model, const AnalyzeOptions& opt) {
  RunMetadata meta;
  meta.dataset = manifest.name;
  meta.model = model.identity();
  meta.post_transform = opt.post_transform;
  meta.per_class = opt.per_class;
  meta.recheck = opt.recheck;
  for (const auto& m : manifest.modalities) {
    ModalityMetadata mm;
    mm.kind = to_string(m.kind);
    mm.fill = m.fill == FillKind::Token ? "token:" + m.mask_token : to_string(m.fill);
    if (m.kind == ModalityKind::Image) mm.grid = m.grid;
    if (m.kind == ModalityKind::Tabular && !m.chunks) {
      for (const auto& c : m.columns) mm.patch_labels.push_back(c.name);
    }
    meta.modalities.push_back(std::move(mm));
  }
  return meta;
}

/// End-to-end run: load, plan, analyze, write report + run log + artifacts.
inline int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out, std::ostream& err) {
  const auto started = std::chrono::steady_clock::now();
  Manifest manifest = load_manifest(opt.manifest);
  apply_fill_flags(manifest, opt.fills);
  if (opt.collapse_threshold < 0.0 || opt.collapse_threshold > 1.0) {
    throw Error("--collapse-threshold must lie in [0, 1]");
  }

  ManifestDataset dataset(manifest);
  std::vector<std::string> warnings;
  AnalysisOptions analysis;
  analysis.plans = plan_rules(manifest);
  analysis.fills = resolve_fills(manifest, dataset, &warnings);
  analysis.post_transform = parse_post_transform(opt.post_transform);
  analysis.jobs = std::max<std::size_t>(opt.jobs, 1);
  analysis.recheck = opt.recheck;

  auto model = open_model(opt.model, resolve_timeout(opt.timeout_seconds), analysis.jobs);
  const DistanceTable table = run_analysis(dataset, *model, analysis);
  const ContributionReport report = summarize(table, {opt.collapse_threshold, opt.per_class});
  const RunMetadata meta = run_metadata(manifest, *model, opt);
  const auto doc = report_to_json(report, meta);

  std::filesystem::create_directories(opt.out_dir);
  const std::filesystem::path dir(opt.out_dir);
  const std::string report_path = (dir / "report.json").string();
  write_file(report_path, doc.dump(2) + "\n");
  std::vector<std::string> outputs{report_path};
  const auto artifacts = render_artifacts(nlohmann::json::parse(doc.dump()), "all", "mp", opt.out_dir);
  outputs.insert(outputs.end(), artifacts.begin(), artifacts.end());
  if (opt.per_class) {
    for (const char* mode : {"mean", "max"}) {
      const auto more = render_artifacts(nlohmann::json::parse(doc.dump()), "heatmap", mode, opt.out_dir);
      outputs.insert(outputs.end(), more.begin(), more.end());
    }
  }

  for (std::size_t i : report.collapse_threshold_hits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", report.m[i]);
    warnings.push_back("possible unimodal collapse: modality '" + report.modalities[i].name + "' has m = " + buf +
                       " <= " + std::to_string(opt.collapse_threshold));
  }
  if (report.degenerate) warnings.push_back("degenerate run: no occlusion changed the output; m is uniform");

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  nlohmann::ordered_json log;
  log["model"] = meta.model;
  log["model_calls"] = table.model_calls;
  log["wall_time_seconds"] = wall;
  log["settings"] = {{"manifest", opt.manifest},
                     {"fills", opt.fills},
                     {"post_transform", opt.post_transform},
                     {"collapse_threshold", opt.collapse_threshold},
                     {"per_class", opt.per_class},
                     {"strict", opt.strict},
                     {"recheck", opt.recheck},
                     {"jobs", analysis.jobs},
                     {"timeout_ms", resolve_timeout(opt.timeout_seconds).count()}};
  log["warnings"] = warnings;
  log["outputs"] = outputs;
  write_file((dir / "run_log.json").string(), log.dump(2) + "\n");

  std::string names;
  for (std::size_t i = 0; i < manifest.modalities.size(); ++i) names += (i ? " : " : "") + manifest.modalities[i].name;
  out << "modality contribution (" << names << ") = " << ratio_string(report.m) << "\n";
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  out << "report written to " << report_path << "\n";
  if (report.degenerate && opt.strict) return exit_degenerate;
  return exit_ok;
}

inline int cmd_selftest(const SelftestOptions& options, std::ostream& out) {
  const auto started = std::chrono::steady_clock::now();
  bool ok = true;
  for (const auto& c : run_selftest(options)) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    ok = ok && c.passed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  out << (ok ? "selftest passed" : "selftest FAILED") << " in " << secs << " s\n";
  return ok ? exit_ok : exit_error;
}

inline int cmd_render(const RenderOptions& opt, std::ostream& out) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(opt.report));
  } catch (const nlohmann::json::exception& e) {
    throw Error(opt.report + ": not valid JSON: " + e.what());
  }
  const auto written = render_artifacts(doc, opt.what, opt.mode, opt.out_dir);
  for (const auto& p : written) out << p << "\n";
  if (written.empty()) out << "nothing to render\n";
  return exit_ok;
}

/// Parses arguments and dispatches. Never throws; errors map to exit 1.
inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Occlusion-based modality contribution analysis for black-box multimodal models"};
  app.require_subcommand(1);

  AnalyzeOptions analyze;
  auto* a = app.add_subcommand("analyze", "Measure modality contributions of a model on a dataset");
  a->add_option("manifest", analyze.manifest, "Dataset manifest (JSON)")->required();
  a->add_option("--model", analyze.model, "builtin:<json|file> | exec:<command> | http:<url>")->required();
  a->add_option("--fill", analyze.fills, "zero | mean | token:<symbol> (repeatable)");
  a->add_option("--out", analyze.out_dir, "Output directory");
  a->add_option("--post-transform", analyze.post_transform, "none | softmax | sigmoid")
      ->check(CLI::IsMember({"none", "softmax", "sigmoid"}));
  a->add_option("--collapse-threshold", analyze.collapse_threshold, "Flag modalities with m at or below this");
  a->add_option("--jobs", analyze.jobs, "Maximum concurrent model calls")->check(CLI::PositiveNumber);
  a->add_option("--timeout", analyze.timeout_seconds,
                std::string("Per-call model timeout in seconds (default $") + timeout_env + " or 60)");
  a->add_flag("--per-class", analyze.per_class, "Keep per-class patch scores (MEAN/MAX artifacts)");
  a->add_flag("--strict", analyze.strict, "Exit with status 2 on a degenerate run");
  a->add_flag("--recheck", analyze.recheck, "Repeat every baseline call at the end to detect nondeterminism");

  SelftestOptions selftest;
  auto* s = app.add_subcommand("selftest", "Run the embedded oracle checks");
  s->add_flag("--inject-fault", selftest.inject_fault, "Perturb one expectation (the suite must fail)");

  RenderOptions render;
  auto* r = app.add_subcommand("render", "Regenerate heatmaps and token tables from a stored report");
  r->add_option("report", render.report, "report.json written by analyze")->required();
  r->add_option("--what", render.what, "heatmap | tokens | all")->check(CLI::IsMember({"heatmap", "tokens", "all"}));
  r->add_option("--mode", render.mode, "Heatmap scores: mp | mean | max")->check(CLI::IsMember({"mp", "mean", "max"}));
  r->add_option("--out", render.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? exit_ok : exit_error;
  }

  try {
    if (*a) return cmd_analyze(analyze, out, err);
    if (*s) return cmd_selftest(selftest, out);
    if (*r) return cmd_render(render, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_error;
  }
  return exit_error;
}

}  // namespace mcontrib::cli
