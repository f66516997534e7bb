#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcontrib/analysis.hpp"
#include "mcontrib/container.hpp"
#include "mcontrib/error.hpp"
#include "mcontrib/masking.hpp"

namespace mcontrib {

inline constexpr const char* report_format = "mcontrib-report/1";

/// "0.24 : 0.76"
inline std::string ratio_string(const std::vector<double>& m) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.2f", m[i]);
    if (i) out += " : ";
    out += buf;
  }
  return out;
}

/// Settings and identities that sit next to the numbers in a report.
struct ModalityMetadata {
  std::string kind;  // tabular|text|image
  std::string fill;
  std::optional<PatchGrid> grid;
  std::vector<std::string> patch_labels;  // e.g. tabular column names
};

struct RunMetadata {
  std::string dataset;
  std::string model;
  std::string post_transform = "none";
  bool per_class = false;
  bool recheck = false;
  std::vector<ModalityMetadata> modalities;
};

namespace detail {

inline std::string axis_name(ChannelAxis axis) {
  switch (axis) {
    case ChannelAxis::First: return "first";
    case ChannelAxis::Last: return "last";
    default: return "none";
  }
}

inline ChannelAxis parse_axis(const std::string& name) {
  if (name == "first") return ChannelAxis::First;
  if (name == "last") return ChannelAxis::Last;
  return ChannelAxis::None;
}

inline nlohmann::ordered_json class_matrix(const std::vector<DistanceVector>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) j.push_back(r);
  return j;
}

}  // namespace detail

/// Report document: m, mp, mp*m, flags, settings and sum checks. Numbers
/// are written with round-trip precision so they re-sum to 1 as stored.
inline nlohmann::ordered_json report_to_json(const ContributionReport& report, const RunMetadata& meta) {
  using json = nlohmann::ordered_json;
  if (!meta.modalities.empty() && meta.modalities.size() != report.modalities.size()) {
    throw Error("run metadata lists " + std::to_string(meta.modalities.size()) + " modalities, report has " +
                std::to_string(report.modalities.size()));
  }
  json doc;
  doc["format"] = report_format;
  doc["dataset"] = meta.dataset;
  doc["model"] = meta.model;
  doc["settings"] = {{"post_transform", meta.post_transform},
                     {"collapse_threshold", report.collapse_threshold},
                     {"per_class", meta.per_class},
                     {"recheck", meta.recheck}};
  doc["sample_count"] = report.sample_count;
  doc["output_dim"] = report.output_dim;
  doc["model_calls"] = report.model_calls;
  doc["m"] = report.m;
  doc["ratio"] = ratio_string(report.m);
  doc["degenerate"] = report.degenerate;

  json collapse_names = json::array();
  for (std::size_t i : report.collapse_threshold_hits) collapse_names.push_back(report.modalities[i].name);
  doc["collapse"] = {{"threshold", report.collapse_threshold},
                     {"indices", report.collapse_threshold_hits},
                     {"modalities", collapse_names}};

  json checks;
  checks["sum_m"] = kahan_total(report.m);
  json sum_mp = json::object();
  for (const auto& mod : report.modalities) {
    if (!mod.variable_h) sum_mp[mod.name] = kahan_total(mod.mp);
  }
  checks["sum_mp"] = sum_mp;
  checks["sum_weighted"] = report.weighted_total();
  doc["checks"] = checks;

  json mods = json::array();
  for (std::size_t i = 0; i < report.modalities.size(); ++i) {
    const auto& mod = report.modalities[i];
    const ModalityMetadata* mm = meta.modalities.empty() ? nullptr : &meta.modalities[i];
    json jm;
    jm["name"] = mod.name;
    jm["kind"] = mm ? mm->kind : std::string();
    jm["fill"] = mm ? mm->fill : std::string();
    jm["h"] = mod.variable_h ? json(nullptr) : json(mod.mp.size());
    jm["m"] = mod.m;
    if (mm && mm->grid) {
      jm["grid"] = {{"image_shape", mm->grid->image_shape},
                    {"patch_shape", mm->grid->patch_shape},
                    {"channels", mm->grid->channels},
                    {"channel_axis", detail::axis_name(mm->grid->channel_axis)}};
    }
    if (!mod.variable_h) {
      jm["mp_degenerate"] = mod.mp_degenerate;
      json patches = json::array();
      for (std::size_t l = 0; l < mod.mp.size(); ++l) {
        json p;
        p["index"] = l;
        if (mm && l < mm->patch_labels.size()) p["label"] = mm->patch_labels[l];
        p["mp"] = mod.mp[l];
        p["m_l"] = mod.weighted_mp[l];
        patches.push_back(std::move(p));
      }
      jm["patches"] = std::move(patches);
      if (!mod.per_class.empty()) jm["per_class"] = detail::class_matrix(mod.per_class);
    } else {
      json samples = json::array();
      for (const auto& s : mod.samples) {
        json js;
        js["id"] = s.sample_id;
        js["tokens"] = s.tokens;
        js["mp"] = s.mp;
        js["degenerate"] = s.degenerate;
        if (!s.per_class.empty()) js["per_class"] = detail::class_matrix(s.per_class);
        samples.push_back(std::move(js));
      }
      jm["samples"] = std::move(samples);
    }
    mods.push_back(std::move(jm));
  }
  doc["modalities"] = std::move(mods);

  json per_sample = json::array();
  for (std::size_t k = 0; k < report.sample_m.size(); ++k) {
    per_sample.push_back({{"id", report.sample_ids[k]},
                          {"m", report.sample_m[k]},
                          {"ratio", ratio_string(report.sample_m[k])},
                          {"degenerate", static_cast<bool>(report.sample_degenerate[k])}});
  }
  doc["per_sample"] = std::move(per_sample);
  return doc;
}

inline std::string report_to_string(const ContributionReport& report, const RunMetadata& meta) {
  return report_to_json(report, meta).dump(2) + "\n";
}

inline void write_report(const std::string& path, const ContributionReport& report, const RunMetadata& meta) {
  write_file(path, report_to_string(report, meta));
}

// --- heatmaps --------------------------------------------------------------

/// Maps scores to 0..255: min -> 0, max -> 255, all-equal -> 128.
inline std::vector<unsigned char> normalize_gray(const std::vector<double>& scores) {
  std::vector<unsigned char> out(scores.size(), 128);
  if (scores.empty()) return out;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double min = *lo;
  const double span = *hi - *lo;
  if (span <= 0.0) return out;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    out[l] = static_cast<unsigned char>(std::lround((scores[l] - min) / span * 255.0));
  }
  return out;
}

inline std::string encode_pgm(std::size_t width, std::size_t height, const std::vector<unsigned char>& pixels) {
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

/// One P5 image per slice: a 2D grid gives one image of image_shape
/// (rows x cols); a 3D grid gives image_shape[0] slices of shape[1] x shape[2].
/// Each tile is filled with its normalized score.
inline std::vector<std::string> render_patch_heatmap(const std::vector<double>& scores, const PatchGrid& grid) {
  validate_grid(grid);
  if (scores.size() != grid.patch_count()) {
    throw Error("heatmap needs " + std::to_string(grid.patch_count()) + " scores for the grid, got " +
                std::to_string(scores.size()));
  }
  const auto gray = normalize_gray(scores);
  const auto tiles = grid.tiles();
  const bool volume = grid.image_shape.size() == 3;
  const std::size_t slices = volume ? grid.image_shape[0] : 1;
  const std::size_t rows = grid.image_shape[volume ? 1 : 0];
  const std::size_t cols = grid.image_shape[volume ? 2 : 1];
  std::vector<std::string> images;
  for (std::size_t z = 0; z < slices; ++z) {
    std::vector<unsigned char> pixels(rows * cols);
    for (std::size_t y = 0; y < rows; ++y) {
      for (std::size_t x = 0; x < cols; ++x) {
        std::size_t tile = 0;
        if (volume) {
          const std::size_t tz = z / grid.patch_shape[0];
          const std::size_t ty = y / grid.patch_shape[1];
          const std::size_t tx = x / grid.patch_shape[2];
          tile = (tz * tiles[1] + ty) * tiles[2] + tx;
        } else {
          tile = (y / grid.patch_shape[0]) * tiles[1] + x / grid.patch_shape[1];
        }
        pixels[y * cols + x] = gray[tile];
      }
    }
    images.push_back(encode_pgm(cols, rows, pixels));
  }
  return images;
}

/// Writes the heatmap to `out_stem`.pgm (2D) or `out_stem`_zNNN.pgm per
/// slice (3D). Returns the written paths.
inline std::vector<std::string> write_patch_heatmap(const std::vector<double>& scores, const PatchGrid& grid,
                                                    const std::string& out_stem) {
  const auto images = render_patch_heatmap(scores, grid);
  std::vector<std::string> paths;
  for (std::size_t z = 0; z < images.size(); ++z) {
    std::string path = out_stem;
    if (images.size() > 1) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "_z%03zu", z);
      path += buf;
    }
    path += ".pgm";
    write_file(path, images[z]);
    paths.push_back(path);
  }
  return paths;
}

// --- token / attribute tables ----------------------------------------------

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string number9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

/// CSV `token,mean,max,argmax_class`, one row per token.
inline std::string write_token_scores(const std::vector<std::string>& tokens, const std::vector<ClassScore>& mean,
                                      const std::vector<ClassScore>& max) {
  if (tokens.size() != mean.size() || tokens.size() != max.size()) {
    throw Error("token table needs aligned inputs: " + std::to_string(tokens.size()) + " tokens, " +
                std::to_string(mean.size()) + " mean scores, " + std::to_string(max.size()) + " max scores");
  }
  std::string out = "token,mean,max,argmax_class\n";
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    out += detail::csv_field(tokens[t]) + "," + detail::number9(mean[t].score) + "," + detail::number9(max[t].score) +
           "," + std::to_string(max[t].argmax_class) + "\n";
  }
  return out;
}

// --- reading a stored report back ------------------------------------------

/// What the renderer needs from one modality of a stored report.
struct StoredModality {
  std::string name;
  std::string kind;
  std::optional<PatchGrid> grid;
  std::vector<double> mp;
  std::vector<std::string> patch_labels;
  std::vector<DistanceVector> per_class;
  struct StoredSample {
    std::string id;
    TokenList tokens;
    std::vector<double> mp;
    std::vector<DistanceVector> per_class;
  };
  std::vector<StoredSample> samples;
};

inline std::vector<StoredModality> read_report_modalities(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != report_format) {
    throw Error("not a contribution report (expected format '" + std::string(report_format) + "')");
  }
  std::vector<StoredModality> out;
  try {
    for (const auto& jm : doc.at("modalities")) {
      StoredModality m;
      m.name = jm.at("name").get<std::string>();
      m.kind = jm.value("kind", "");
      if (jm.contains("grid")) {
        const auto& g = jm["grid"];
        PatchGrid grid;
        grid.image_shape = g.at("image_shape").get<std::vector<std::size_t>>();
        grid.patch_shape = g.at("patch_shape").get<std::vector<std::size_t>>();
        grid.channels = g.value("channels", std::size_t{1});
        grid.channel_axis = detail::parse_axis(g.value("channel_axis", "none"));
        m.grid = grid;
      }
      if (jm.contains("patches")) {
        for (const auto& p : jm["patches"]) {
          m.mp.push_back(p.at("mp").get<double>());
          m.patch_labels.push_back(p.value("label", std::to_string(m.patch_labels.size())));
        }
      }
      if (jm.contains("per_class")) m.per_class = jm["per_class"].get<std::vector<DistanceVector>>();
      if (jm.contains("samples")) {
        for (const auto& js : jm["samples"]) {
          StoredModality::StoredSample s;
          s.id = js.at("id").get<std::string>();
          s.tokens = js.at("tokens").get<TokenList>();
          s.mp = js.at("mp").get<std::vector<double>>();
          if (js.contains("per_class")) s.per_class = js["per_class"].get<std::vector<DistanceVector>>();
          m.samples.push_back(std::move(s));
        }
      }
      out.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
  return out;
}

}  // namespace mcontrib
