#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcontrib/analysis.hpp"
#include "mcontrib/container.hpp"
#include "mcontrib/error.hpp"
#include "mcontrib/json_util.hpp"
#include "mcontrib/masking.hpp"
#include "mcontrib/tensor.hpp"

namespace mcontrib {

// --- tabular encoding ------------------------------------------------------

/// How one CSV column becomes a number: passthrough, or an explicit
/// enumeration map. `missing` is the sentinel written for empty cells.
struct ColumnEncoding {
  std::string name;
  std::map<std::string, double> categories;  // empty = numeric passthrough
  std::optional<double> missing;
  std::vector<std::string> missing_markers{""};

  bool numeric() const { return categories.empty(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  double value = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace detail

inline double encode_field(const std::string& raw, const ColumnEncoding& enc) {
  const std::string value = detail::trim(raw);
  if (std::find(enc.missing_markers.begin(), enc.missing_markers.end(), value) != enc.missing_markers.end()) {
    if (enc.missing) return *enc.missing;
    throw DatasetError("column '" + enc.name + "' is missing a value and declares no missing sentinel");
  }
  if (enc.numeric()) {
    if (auto v = detail::parse_double(value)) return *v;
    throw DatasetError("column '" + enc.name + "': '" + value + "' is not a number");
  }
  auto it = enc.categories.find(value);
  if (it == enc.categories.end()) {
    std::string allowed;
    for (const auto& [k, v] : enc.categories) allowed += (allowed.empty() ? "" : ", ") + k;
    throw DatasetError("column '" + enc.name + "': unmapped category '" + value + "' (allowed: " + allowed + ")");
  }
  return it->second;
}

/// Encodes one row of fields with a per-column rule table.
inline Tensor encode_tabular(const std::vector<std::string>& row, const std::vector<ColumnEncoding>& encodings) {
  if (row.size() != encodings.size()) {
    throw DatasetError("row has " + std::to_string(row.size()) + " fields but " + std::to_string(encodings.size()) +
                       " encoding rules");
  }
  std::vector<double> values(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) values[j] = encode_field(row[j], encodings[j]);
  return Tensor::vector(std::move(values));
}

// --- CSV -------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_offsets;  // byte offset of each data row

  std::optional<std::size_t> column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }
};

/// RFC 4180-style CSV with a header row. Quoted fields may contain commas,
/// doubled quotes and newlines.
inline CsvTable parse_csv(const std::string& text, const std::string& source = "<csv>") {
  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t record_start = 0;
  auto finish_record = [&](std::size_t offset) {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
    const bool blank = record.size() == 1 && record.front().empty();
    if (!blank) {
      if (table.header.empty()) {
        table.header = std::move(record);
      } else {
        if (record.size() != table.header.size()) {
          throw DatasetError(source + ": byte " + std::to_string(record_start) + ": row has " +
                             std::to_string(record.size()) + " fields, header has " +
                             std::to_string(table.header.size()));
        }
        table.rows.push_back(std::move(record));
        table.row_offsets.push_back(record_start);
      }
    }
    record.clear();
    record_start = offset;
  };
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    const char ch = text[pos];
    if (quoted) {
      if (ch == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field += '"';
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      record.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (ch == '\n') {
      finish_record(pos + 1);
    } else if (ch == '\r') {
      // handled by the following '\n'
    } else {
      field += ch;
      field_started = true;
    }
  }
  if (quoted) throw DatasetError(source + ": byte " + std::to_string(record_start) + ": unterminated quoted field");
  if (!field.empty() || !record.empty()) finish_record(text.size());
  if (table.header.empty()) throw DatasetError(source + ": byte 0: missing header row");
  return table;
}

// --- manifest --------------------------------------------------------------

enum class ModalityKind { Tabular, Text, Image };

inline std::string to_string(ModalityKind kind) {
  switch (kind) {
    case ModalityKind::Tabular: return "tabular";
    case ModalityKind::Text: return "text";
    default: return "image";
  }
}

/// Declared fill of a modality, resolved to a FillStrategy once the dataset
/// is available.
enum class FillKind { Zero, Mean, Token };

inline std::string to_string(FillKind kind) {
  switch (kind) {
    case FillKind::Zero: return "zero";
    case FillKind::Mean: return "mean";
    default: return "token";
  }
}

struct ModalitySpec {
  std::string name;
  ModalityKind kind = ModalityKind::Tabular;
  std::vector<std::size_t> shape;  // empty for text
  FillKind fill = FillKind::Zero;
  std::string mask_token = "[MASK]";
  PatchGrid grid;              // image only
  std::size_t chunks = 0;      // tabular: 0 = one patch per entry
  std::vector<ColumnEncoding> columns;  // tabular CSV columns, in tensor order
  std::string key_column;               // tabular CSV lookup column

  /// Patch count; empty for text, where it is set per sample.
  std::optional<std::size_t> h() const {
    if (kind == ModalityKind::Text) return std::nullopt;
    if (kind == ModalityKind::Image) return grid.patch_count();
    return chunks ? chunks : Tensor::element_count(shape);
  }

  PlanRule plan_rule() const {
    if (kind == ModalityKind::Text) return TokenPlan{};
    if (kind == ModalityKind::Image) return GridPlan{grid};
    if (chunks) return ChunkPlan{chunks};
    return EntryPlan{};
  }
};

struct SampleRecord {
  std::string id;
  std::map<std::string, nlohmann::json> inputs;  // modality name -> reference
};

struct Manifest {
  std::string name;
  std::filesystem::path base_dir;
  std::vector<ModalitySpec> modalities;
  std::vector<SampleRecord> samples;

  std::size_t modality_count() const { return modalities.size(); }
  std::size_t sample_count() const { return samples.size(); }

  std::optional<std::size_t> modality_index(const std::string& modality) const {
    for (std::size_t i = 0; i < modalities.size(); ++i) {
      if (modalities[i].name == modality) return i;
    }
    return std::nullopt;
  }
};

namespace detail {

struct JsonPath {
  std::string path;
  JsonPath operator/(const std::string& key) const { return {path + "." + key}; }
  JsonPath operator[](std::size_t index) const { return {path + "[" + std::to_string(index) + "]"}; }
};

[[noreturn]] inline void schema_error(const JsonPath& at, const std::string& why) {
  throw DatasetError("manifest " + at.path + ": " + why);
}

inline const nlohmann::json& require(const nlohmann::json& obj, const std::string& key, const JsonPath& at) {
  if (!obj.is_object() || !obj.contains(key)) schema_error(at / key, "required field is missing");
  return obj[key];
}

inline std::string require_string(const nlohmann::json& obj, const std::string& key, const JsonPath& at) {
  const auto& v = require(obj, key, at);
  if (!v.is_string() || v.get<std::string>().empty()) schema_error(at / key, "must be a nonempty string");
  return v.get<std::string>();
}

inline std::vector<std::size_t> parse_shape(const nlohmann::json& v, const JsonPath& at) {
  if (!v.is_array() || v.empty()) schema_error(at, "must be a nonempty array of positive integers");
  std::vector<std::size_t> shape;
  for (std::size_t d = 0; d < v.size(); ++d) {
    if (!detail::is_index(v[d]) || v[d].get<std::size_t>() == 0) schema_error(at[d], "must be a positive integer");
    shape.push_back(v[d].get<std::size_t>());
  }
  return shape;
}

inline ColumnEncoding parse_column(const nlohmann::json& c, const JsonPath& at) {
  ColumnEncoding enc;
  if (c.is_string()) {
    enc.name = c.get<std::string>();
    return enc;
  }
  enc.name = require_string(c, "name", at);
  if (c.contains("map")) {
    if (!c["map"].is_object() || c["map"].empty()) schema_error(at / "map", "must be a nonempty object");
    for (const auto& [k, v] : c["map"].items()) {
      if (!v.is_number()) schema_error(at / "map" / k, "must be a number");
      enc.categories[k] = v.get<double>();
    }
  }
  if (c.contains("missing")) {
    if (!c["missing"].is_number()) schema_error(at / "missing", "must be a number");
    enc.missing = c["missing"].get<double>();
  }
  if (c.contains("missing_markers")) {
    try {
      enc.missing_markers = c["missing_markers"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception&) {
      schema_error(at / "missing_markers", "must be an array of strings");
    }
  }
  return enc;
}

inline ModalitySpec parse_modality(const nlohmann::json& m, const JsonPath& at) {
  ModalitySpec spec;
  spec.name = require_string(m, "name", at);
  const std::string kind = require_string(m, "kind", at);
  if (kind == "tabular") {
    spec.kind = ModalityKind::Tabular;
  } else if (kind == "text") {
    spec.kind = ModalityKind::Text;
  } else if (kind == "image") {
    spec.kind = ModalityKind::Image;
  } else {
    schema_error(at / "kind", "must be one of tabular|text|image, got '" + kind + "'");
  }

  const nlohmann::json mask = m.contains("mask") ? m["mask"] : nlohmann::json::object();
  if (!mask.is_object()) schema_error(at / "mask", "must be an object");
  const std::string fill = mask.value("fill", spec.kind == ModalityKind::Text ? "token" : "zero");
  if (fill == "zero") {
    spec.fill = FillKind::Zero;
  } else if (fill == "mean") {
    spec.fill = FillKind::Mean;
  } else if (fill == "token") {
    spec.fill = FillKind::Token;
  } else {
    schema_error(at / "mask" / "fill", "must be one of zero|mean|token");
  }
  if (mask.contains("token")) {
    if (!mask["token"].is_string()) schema_error(at / "mask" / "token", "must be a string");
    spec.mask_token = mask["token"].get<std::string>();
  }
  if (spec.kind == ModalityKind::Text && spec.fill != FillKind::Token) {
    schema_error(at / "mask" / "fill", "text modalities are masked with a token");
  }
  if (spec.kind != ModalityKind::Text && spec.fill == FillKind::Token) {
    schema_error(at / "mask" / "fill", "token fill is only valid for text modalities");
  }

  if (spec.kind == ModalityKind::Tabular) {
    if (m.contains("columns")) {
      const auto& cols = m["columns"];
      if (!cols.is_array() || cols.empty()) schema_error(at / "columns", "must be a nonempty array");
      for (std::size_t j = 0; j < cols.size(); ++j) spec.columns.push_back(parse_column(cols[j], (at / "columns")[j]));
    }
    if (m.contains("shape")) {
      spec.shape = parse_shape(m["shape"], at / "shape");
    } else if (!spec.columns.empty()) {
      spec.shape = {spec.columns.size()};
    } else {
      schema_error(at / "shape", "tabular modalities need 'shape' or 'columns'");
    }
    if (spec.shape.size() != 1) schema_error(at / "shape", "tabular shape must be 1-D");
    if (!spec.columns.empty() && spec.columns.size() != spec.shape[0]) {
      schema_error(at / "columns", "lists " + std::to_string(spec.columns.size()) + " columns but shape is " +
                                       shape_string(spec.shape));
    }
    if (m.contains("key_column")) spec.key_column = require_string(m, "key_column", at);
    if (mask.contains("patches")) {
      if (!detail::is_index(mask["patches"])) schema_error(at / "mask" / "patches", "must be a positive integer");
      spec.chunks = mask["patches"].get<std::size_t>();
      if (spec.chunks == 0 || spec.chunks > spec.shape[0]) {
        schema_error(at / "mask" / "patches", "must lie in [1, " + std::to_string(spec.shape[0]) + "]");
      }
    }
  } else if (spec.kind == ModalityKind::Image) {
    spec.shape = parse_shape(require(m, "shape", at), at / "shape");
    const auto patch = parse_shape(require(mask, "patch_shape", at / "mask"), at / "mask" / "patch_shape");
    std::string axis = m.value("channel_axis", std::string(spec.shape.size() == patch.size() + 1 ? "last" : "none"));
    PatchGrid grid;
    grid.patch_shape = patch;
    if (axis == "none") {
      grid.image_shape = spec.shape;
      grid.channel_axis = ChannelAxis::None;
    } else if (axis == "last" || axis == "first") {
      if (spec.shape.size() != patch.size() + 1) {
        schema_error(at / "channel_axis", "a channel axis needs shape to have one more axis than patch_shape");
      }
      grid.channel_axis = axis == "last" ? ChannelAxis::Last : ChannelAxis::First;
      grid.channels = axis == "last" ? spec.shape.back() : spec.shape.front();
      grid.image_shape = axis == "last" ? std::vector<std::size_t>(spec.shape.begin(), spec.shape.end() - 1)
                                        : std::vector<std::size_t>(spec.shape.begin() + 1, spec.shape.end());
    } else {
      schema_error(at / "channel_axis", "must be one of none|first|last");
    }
    try {
      validate_grid(grid);
    } catch (const PlanError& e) {
      schema_error(at / "mask" / "patch_shape", e.what());
    }
    spec.grid = grid;
  }

  if (m.contains("h")) {
    if (!detail::is_index(m["h"])) schema_error(at / "h", "must be a positive integer");
    const auto declared = m["h"].get<std::size_t>();
    const auto derived = spec.h();
    if (!derived) schema_error(at / "h", "text modalities have a per-sample h (one patch per token)");
    if (*derived != declared) {
      schema_error(at / "h", "declares " + std::to_string(declared) + " patches but the mask settings give " +
                                 std::to_string(*derived));
    }
  }
  return spec;
}

}  // namespace detail

/// Parses and validates a manifest document. Relative file references are
/// resolved against `base_dir`.
inline Manifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  using detail::JsonPath;
  const JsonPath root{"$"};
  if (!doc.is_object()) detail::schema_error(root, "must be an object");
  Manifest manifest;
  manifest.base_dir = base_dir;
  manifest.name = doc.value("name", std::string("unnamed"));

  const auto& mods = detail::require(doc, "modalities", root);
  if (!mods.is_array() || mods.empty()) detail::schema_error(root / "modalities", "must be a nonempty array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < mods.size(); ++i) {
    auto spec = detail::parse_modality(mods[i], (root / "modalities")[i]);
    if (!names.insert(spec.name).second) {
      detail::schema_error((root / "modalities")[i] / "name", "duplicate modality name '" + spec.name + "'");
    }
    manifest.modalities.push_back(std::move(spec));
  }

  const auto& samples = detail::require(doc, "samples", root);
  if (!samples.is_array() || samples.empty()) detail::schema_error(root / "samples", "must be a nonempty array");
  std::set<std::string> ids;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const JsonPath at = (root / "samples")[k];
    const auto& s = samples[k];
    SampleRecord rec;
    if (s.contains("id")) {
      rec.id = s["id"].is_string() ? s["id"].get<std::string>() : s["id"].dump();
    } else {
      rec.id = std::to_string(k);
    }
    if (!ids.insert(rec.id).second) detail::schema_error(at / "id", "duplicate sample id '" + rec.id + "'");
    const auto& inputs = detail::require(s, "inputs", at);
    if (!inputs.is_object()) detail::schema_error(at / "inputs", "must be an object");
    for (const auto& spec : manifest.modalities) {
      if (!inputs.contains(spec.name)) {
        detail::schema_error(at / "inputs", "sample '" + rec.id + "' does not reference modality '" + spec.name + "'");
      }
      const auto& ref = inputs[spec.name];
      if (ref.is_string()) {
        rec.inputs[spec.name] = nlohmann::json{{"file", ref}};
      } else if (ref.is_object() || ref.is_array()) {
        rec.inputs[spec.name] = ref.is_array() ? nlohmann::json{{"values", ref}} : ref;
      } else {
        detail::schema_error(at / "inputs" / spec.name, "must be a file path, an object or an inline array");
      }
    }
    for (const auto& [name, ref] : inputs.items()) {
      if (!manifest.modality_index(name)) {
        detail::schema_error(at / "inputs" / name, "references undeclared modality '" + name + "'");
      }
    }
    manifest.samples.push_back(std::move(rec));
  }
  return manifest;
}

/// Loads a manifest file; samples are checked eagerly so broken references
/// fail before any model call.
inline Manifest load_manifest(const std::string& path, bool check_samples = true);

/// Lazily loads manifest samples. CSV files are parsed once and cached.
class ManifestDataset {
 public:
  explicit ManifestDataset(Manifest manifest) : manifest_(std::make_shared<const Manifest>(std::move(manifest))) {}

  const Manifest& manifest() const { return *manifest_; }

  std::size_t size() const { return manifest_->sample_count(); }

  std::vector<std::string> modality_names() const {
    std::vector<std::string> names;
    for (const auto& m : manifest_->modalities) names.push_back(m.name);
    return names;
  }

  std::string sample_id(std::size_t k) const { return manifest_->samples.at(k).id; }

  Sample sample(std::size_t k) const {
    if (k >= size()) throw DatasetError("sample index " + std::to_string(k) + " out of range");
    const auto& rec = manifest_->samples[k];
    Sample sample;
    for (const auto& spec : manifest_->modalities) {
      try {
        sample.push_back({spec.name, load_input(spec, rec.inputs.at(spec.name), k)});
      } catch (const DatasetError& e) {
        throw DatasetError("sample '" + rec.id + "', modality '" + spec.name + "': " + e.what());
      }
    }
    return sample;
  }

 private:
  std::string resolve(const std::string& file) const {
    std::filesystem::path p(file);
    if (p.is_relative()) p = manifest_->base_dir / p;
    return p.string();
  }

  std::shared_ptr<const CsvTable> csv(const std::string& path) const {
    std::lock_guard lock(cache_mutex_);
    auto it = csv_cache_.find(path);
    if (it != csv_cache_.end()) return it->second;
    auto table = std::make_shared<const CsvTable>(parse_csv(read_file(path), path));
    csv_cache_.emplace(path, table);
    return table;
  }

  static Tensor check_shape(Tensor t, const ModalitySpec& spec) {
    if (t.shape != spec.shape) {
      throw DatasetError("tensor shape " + shape_string(t.shape) + " does not match declared shape " +
                         shape_string(spec.shape));
    }
    if (!t.all_finite()) throw DatasetError("tensor contains non-finite values");
    return t;
  }

  ModalityInput load_input(const ModalitySpec& spec, const nlohmann::json& ref, std::size_t k) const {
    if (spec.kind == ModalityKind::Text) {
      std::string text;
      if (ref.contains("text")) {
        text = ref["text"].get<std::string>();
      } else if (ref.contains("file")) {
        text = read_file(resolve(ref["file"].get<std::string>()));
      } else {
        throw DatasetError("text reference needs 'text' or 'file'");
      }
      TokenList tokens = tokenize(text);
      if (tokens.empty()) throw DatasetError("text is empty");
      return tokens;
    }
    if (ref.contains("values")) {
      std::vector<double> values;
      try {
        values = ref["values"].get<std::vector<double>>();
      } catch (const nlohmann::json::exception&) {
        throw DatasetError("inline 'values' must be an array of numbers");
      }
      if (values.size() != Tensor::element_count(spec.shape)) {
        throw DatasetError("inline values hold " + std::to_string(values.size()) + " numbers but shape " +
                           shape_string(spec.shape) + " needs " + std::to_string(Tensor::element_count(spec.shape)));
      }
      return check_shape(Tensor(spec.shape, std::move(values)), spec);
    }
    if (!ref.contains("file") || !ref["file"].is_string()) throw DatasetError("reference needs 'file' or 'values'");
    const std::string path = resolve(ref["file"].get<std::string>());
    if (spec.kind == ModalityKind::Image || path.ends_with(".mtn")) return check_shape(read_mtn(path), spec);
    return check_shape(load_csv_row(spec, path, ref, k), spec);
  }

  Tensor load_csv_row(const ModalitySpec& spec, const std::string& path, const nlohmann::json& ref,
                      std::size_t k) const {
    const auto table = csv(path);
    std::size_t row = k;
    if (ref.contains("row")) {
      if (!detail::is_index(ref["row"])) throw DatasetError("'row' must be a nonnegative integer");
      row = ref["row"].get<std::size_t>();
    } else if (ref.contains("key")) {
      if (spec.key_column.empty()) throw DatasetError("'key' lookup needs the modality's 'key_column'");
      const auto col = table->column(spec.key_column);
      if (!col) throw DatasetError(path + ": no column '" + spec.key_column + "'");
      const std::string key = ref["key"].is_string() ? ref["key"].get<std::string>() : ref["key"].dump();
      auto it = std::find_if(table->rows.begin(), table->rows.end(),
                             [&](const auto& r) { return detail::trim(r[*col]) == key; });
      if (it == table->rows.end()) throw DatasetError(path + ": no row with " + spec.key_column + " = '" + key + "'");
      row = static_cast<std::size_t>(it - table->rows.begin());
    }
    if (row >= table->rows.size()) {
      throw DatasetError(path + ": row " + std::to_string(row) + " out of range (" +
                         std::to_string(table->rows.size()) + " data rows)");
    }
    std::vector<ColumnEncoding> encodings = spec.columns;
    if (encodings.empty()) {
      for (const auto& h : table->header) {
        if (h != spec.key_column) encodings.push_back(ColumnEncoding{h});
      }
    }
    std::vector<std::string> fields;
    for (const auto& enc : encodings) {
      const auto col = table->column(enc.name);
      if (!col) throw DatasetError(path + ": no column '" + enc.name + "'");
      fields.push_back(table->rows[row][*col]);
    }
    try {
      return encode_tabular(fields, encodings);
    } catch (const DatasetError& e) {
      throw DatasetError(path + ": byte " + std::to_string(table->row_offsets[row]) + ": " + e.what());
    }
  }

 public:
  /// Whitespace split, case preserved.
  static TokenList tokenize(const std::string& text) {
    TokenList tokens;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
  }

 private:
  std::shared_ptr<const Manifest> manifest_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, std::shared_ptr<const CsvTable>> csv_cache_;
};

static_assert(SampleSource<ManifestDataset>);

inline Manifest load_manifest(const std::string& path, bool check_samples) {
  const std::string text = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError(path + ": byte " + std::to_string(e.byte) + ": manifest is not valid JSON");
  }
  auto base = std::filesystem::path(path).parent_path();
  Manifest manifest = parse_manifest(doc, base);
  if (check_samples) {
    ManifestDataset probe(manifest);
    for (std::size_t k = 0; k < probe.size(); ++k) probe.sample(k);
  }
  return manifest;
}

/// Loads sample `k` of `manifest`.
inline Sample load_sample(const Manifest& manifest, std::size_t k) { return ManifestDataset(manifest).sample(k); }

/// Plan rules in manifest order.
inline std::vector<PlanRule> plan_rules(const Manifest& manifest) {
  std::vector<PlanRule> rules;
  for (const auto& m : manifest.modalities) rules.push_back(m.plan_rule());
  return rules;
}

/// Fill strategies in manifest order; dataset means are computed here.
/// `warnings` collects notes such as single-sample mean fill.
template <SampleSource D>
std::vector<FillStrategy> resolve_fills(const Manifest& manifest, const D& dataset,
                                        std::vector<std::string>* warnings = nullptr) {
  std::vector<FillStrategy> fills;
  for (std::size_t i = 0; i < manifest.modalities.size(); ++i) {
    const auto& m = manifest.modalities[i];
    switch (m.fill) {
      case FillKind::Zero: fills.emplace_back(ZeroFill{}); break;
      case FillKind::Token: fills.emplace_back(MaskTokenFill{m.mask_token}); break;
      case FillKind::Mean:
        if (dataset.size() == 1 && warnings) {
          warnings->push_back("modality '" + m.name +
                              "': mean fill over a single sample equals the sample; every distance will be zero");
        }
        fills.emplace_back(compute_fill(dataset, i));
        break;
    }
  }
  return fills;
}

}  // namespace mcontrib
