#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mcontrib/error.hpp"
#include "mcontrib/kahan.hpp"
#include "mcontrib/sample_source.hpp"
#include "mcontrib/tensor.hpp"

namespace mcontrib {

/// Flat indices masked together in one forward pass.
using Patch = std::vector<std::size_t>;

/// The h patches a modality is split into, in the order they are evaluated.
struct OcclusionPlan {
  std::size_t modality = 0;
  std::vector<Patch> patches;

  std::size_t patch_count() const { return patches.size(); }
};

/// Checks that `plan` is a disjoint, covering partition of `element_count`
/// flat indices with no empty patch.
inline void validate_partition(const OcclusionPlan& plan, std::size_t element_count) {
  if (plan.patches.empty()) throw PlanError("occlusion plan has no patches");
  std::vector<char> seen(element_count, 0);
  std::size_t covered = 0;
  for (std::size_t l = 0; l < plan.patches.size(); ++l) {
    const auto& patch = plan.patches[l];
    if (patch.empty()) throw PlanError("patch " + std::to_string(l) + " is empty");
    for (std::size_t idx : patch) {
      if (idx >= element_count) {
        throw PlanError("patch " + std::to_string(l) + " index " + std::to_string(idx) +
                        " out of range for " + std::to_string(element_count) + " elements");
      }
      if (seen[idx]) throw PlanError("index " + std::to_string(idx) + " appears in more than one patch");
      seen[idx] = 1;
      ++covered;
    }
  }
  if (covered != element_count) {
    throw PlanError("plan covers " + std::to_string(covered) + " of " + std::to_string(element_count) + " elements");
  }
}

/// One singleton patch per entry.
inline OcclusionPlan plan_tabular(std::size_t length, std::size_t modality = 0) {
  if (length == 0) throw PlanError("tabular modality has no entries to mask");
  OcclusionPlan plan{modality, {}};
  plan.patches.reserve(length);
  for (std::size_t j = 0; j < length; ++j) plan.patches.push_back({j});
  return plan;
}

/// Splits [0, length) into `patch_count` contiguous runs. When the split is
/// uneven the leading runs are one element longer.
inline OcclusionPlan plan_chunks(std::size_t length, std::size_t patch_count, std::size_t modality = 0) {
  if (length == 0) throw PlanError("modality has no entries to mask");
  if (patch_count == 0 || patch_count > length) {
    throw PlanError("cannot split " + std::to_string(length) + " entries into " + std::to_string(patch_count) +
                    " patches");
  }
  OcclusionPlan plan{modality, {}};
  const std::size_t base = length / patch_count;
  const std::size_t extra = length % patch_count;
  std::size_t next = 0;
  for (std::size_t l = 0; l < patch_count; ++l) {
    const std::size_t len = base + (l < extra ? 1 : 0);
    Patch patch(len);
    for (std::size_t j = 0; j < len; ++j) patch[j] = next++;
    plan.patches.push_back(std::move(patch));
  }
  return plan;
}

/// One patch per token position. `sample_id` only feeds the error message.
inline OcclusionPlan plan_text(std::size_t token_count, const std::string& sample_id = {}, std::size_t modality = 0) {
  if (token_count == 0) {
    throw PlanError("text" + (sample_id.empty() ? std::string() : " of sample '" + sample_id + "'") +
                    " is empty; nothing to mask");
  }
  return plan_tabular(token_count, modality);
}

enum class ChannelAxis { None, First, Last };

/// Tiling of a 2D image or 3D volume. The channel axis is never split.
struct PatchGrid {
  std::vector<std::size_t> image_shape;
  std::vector<std::size_t> patch_shape;
  std::size_t channels = 1;
  ChannelAxis channel_axis = ChannelAxis::None;

  /// Full tensor shape including the channel axis.
  std::vector<std::size_t> tensor_shape() const {
    std::vector<std::size_t> s = image_shape;
    if (channel_axis == ChannelAxis::First) s.insert(s.begin(), channels);
    if (channel_axis == ChannelAxis::Last) s.push_back(channels);
    return s;
  }

  /// Tiles per spatial axis.
  std::vector<std::size_t> tiles() const {
    std::vector<std::size_t> t(image_shape.size());
    for (std::size_t d = 0; d < image_shape.size(); ++d) t[d] = image_shape[d] / patch_shape[d];
    return t;
  }

  std::size_t patch_count() const { return Tensor::element_count(tiles()); }
};

namespace detail {

inline std::size_t nearest_divisor(std::size_t extent, std::size_t wanted) {
  std::size_t best = 1;
  std::size_t best_gap = static_cast<std::size_t>(-1);
  for (std::size_t c = 1; c <= extent; ++c) {
    if (extent % c != 0) continue;
    const std::size_t gap = c > wanted ? c - wanted : wanted - c;
    if (gap < best_gap) {
      best = c;
      best_gap = gap;
    }
  }
  return best;
}

}  // namespace detail

inline void validate_grid(const PatchGrid& grid) {
  const std::size_t dims = grid.image_shape.size();
  if (dims != 2 && dims != 3) {
    throw PlanError("image grids must have 2 or 3 spatial axes, got " + std::to_string(dims));
  }
  if (grid.patch_shape.size() != dims) {
    throw PlanError("patch_shape " + shape_string(grid.patch_shape) + " does not match image shape " +
                    shape_string(grid.image_shape));
  }
  if (grid.channels == 0) throw PlanError("channel count must be positive");
  bool divisible = true;
  for (std::size_t d = 0; d < dims; ++d) {
    if (grid.patch_shape[d] == 0 || grid.image_shape[d] == 0 || grid.image_shape[d] % grid.patch_shape[d] != 0) {
      divisible = false;
    }
  }
  if (!divisible) {
    std::vector<std::size_t> suggestion(dims);
    for (std::size_t d = 0; d < dims; ++d) {
      suggestion[d] = detail::nearest_divisor(grid.image_shape[d], std::max<std::size_t>(grid.patch_shape[d], 1));
    }
    throw PlanError("patch_shape " + shape_string(grid.patch_shape) + " does not divide image shape " +
                    shape_string(grid.image_shape) + "; nearest valid patch_shape is " + shape_string(suggestion));
  }
}

/// Row-major tiling: tile (t0, t1[, t2]) with the last spatial axis varying
/// fastest. Every patch holds all channels of its tile.
inline OcclusionPlan plan_image(const PatchGrid& grid, std::size_t modality = 0) {
  validate_grid(grid);
  const std::size_t dims = grid.image_shape.size();
  const auto tiles = grid.tiles();
  const std::size_t h = grid.patch_count();
  const std::size_t channels = grid.channel_axis == ChannelAxis::None ? 1 : grid.channels;
  const std::size_t pixels = Tensor::element_count(grid.image_shape);
  const std::size_t tile_pixels = Tensor::element_count(grid.patch_shape);

  OcclusionPlan plan{modality, {}};
  plan.patches.reserve(h);
  std::vector<std::size_t> tile_pos(dims, 0);
  std::vector<std::size_t> local(dims, 0);
  for (std::size_t l = 0; l < h; ++l) {
    // Decode l into tile coordinates.
    std::size_t rest = l;
    for (std::size_t d = dims; d-- > 0;) {
      tile_pos[d] = rest % tiles[d];
      rest /= tiles[d];
    }
    Patch patch;
    patch.reserve(tile_pixels * channels);
    for (std::size_t p = 0; p < tile_pixels; ++p) {
      std::size_t r = p;
      for (std::size_t d = dims; d-- > 0;) {
        local[d] = r % grid.patch_shape[d];
        r /= grid.patch_shape[d];
      }
      std::size_t pixel = 0;
      for (std::size_t d = 0; d < dims; ++d) {
        pixel = pixel * grid.image_shape[d] + tile_pos[d] * grid.patch_shape[d] + local[d];
      }
      for (std::size_t c = 0; c < channels; ++c) {
        if (grid.channel_axis == ChannelAxis::First) {
          patch.push_back(c * pixels + pixel);
        } else {
          patch.push_back(pixel * channels + c);
        }
      }
    }
    std::sort(patch.begin(), patch.end());
    plan.patches.push_back(std::move(patch));
  }
  return plan;
}

struct ZeroFill {
  friend bool operator==(const ZeroFill&, const ZeroFill&) = default;
};

/// Replaces masked entries with the per-position dataset mean.
struct MeanFill {
  Tensor mean;
  friend bool operator==(const MeanFill&, const MeanFill&) = default;
};

/// Text only: replaces masked tokens with `symbol`.
struct MaskTokenFill {
  std::string symbol = "[MASK]";
  friend bool operator==(const MaskTokenFill&, const MaskTokenFill&) = default;
};

using FillStrategy = std::variant<ZeroFill, MeanFill, MaskTokenFill>;

inline std::string fill_name(const FillStrategy& fill) {
  if (std::holds_alternative<ZeroFill>(fill)) return "zero";
  if (std::holds_alternative<MeanFill>(fill)) return "mean";
  return "token:" + std::get<MaskTokenFill>(fill).symbol;
}

/// Elementwise mean of one modality across tensors that share a shape.
inline Tensor mean_tensor(const std::vector<Tensor>& tensors) {
  if (tensors.empty()) throw DatasetError("cannot compute a dataset mean over zero samples");
  const auto& shape = tensors.front().shape;
  std::vector<KahanSum<double>> sums(tensors.front().size());
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    if (tensors[k].shape != shape) {
      throw DatasetError("sample " + std::to_string(k) + " has shape " + shape_string(tensors[k].shape) +
                         " but sample 0 has " + shape_string(shape));
    }
    for (std::size_t j = 0; j < sums.size(); ++j) sums[j].add(tensors[k].data[j]);
  }
  std::vector<double> mean(sums.size());
  const double n = static_cast<double>(tensors.size());
  for (std::size_t j = 0; j < sums.size(); ++j) mean[j] = sums[j].value() / n;
  return Tensor(shape, std::move(mean));
}

/// Dataset-mean fill for modality `modality` of `source`.
template <SampleSource D>
MeanFill compute_fill(const D& source, std::size_t modality) {
  std::vector<Tensor> tensors;
  tensors.reserve(source.size());
  for (std::size_t k = 0; k < source.size(); ++k) {
    Sample s = source.sample(k);
    if (modality >= s.size()) throw DatasetError("modality index " + std::to_string(modality) + " out of range");
    auto* t = std::get_if<Tensor>(&s[modality].value);
    if (!t) throw DatasetError("dataset-mean fill is unavailable for text modality '" + s[modality].name + "'");
    tensors.push_back(std::move(*t));
  }
  return MeanFill{mean_tensor(tensors)};
}

/// Copy of `input` with every index in `patch` replaced by the fill value.
inline ModalityInput apply_mask(const ModalityInput& input, const Patch& patch, const FillStrategy& fill) {
  const std::size_t size = element_count(input);
  for (std::size_t idx : patch) {
    if (idx >= size) {
      throw PlanError("mask index " + std::to_string(idx) + " out of range for " + std::to_string(size) + " elements");
    }
  }
  if (const auto* tensor = std::get_if<Tensor>(&input)) {
    if (std::holds_alternative<MaskTokenFill>(fill)) throw PlanError("mask-token fill applies to text modalities only");
    Tensor out = *tensor;
    if (const auto* mean = std::get_if<MeanFill>(&fill)) {
      if (mean->mean.shape != tensor->shape) {
        throw PlanError("mean fill shape " + shape_string(mean->mean.shape) + " does not match input shape " +
                        shape_string(tensor->shape));
      }
      for (std::size_t idx : patch) out.data[idx] = mean->mean.data[idx];
    } else {
      for (std::size_t idx : patch) out.data[idx] = 0.0;
    }
    return out;
  }
  const auto* token = std::get_if<MaskTokenFill>(&fill);
  if (!token) throw PlanError("text modalities are masked with a mask token, not " + fill_name(fill) + " fill");
  TokenList out = std::get<TokenList>(input);
  for (std::size_t idx : patch) out[idx] = token->symbol;
  return out;
}

}  // namespace mcontrib
