#pragma once

#include <concepts>
#include <cstddef>
#include <string>
#include <vector>

#include "mcontrib/tensor.hpp"

namespace mcontrib {

/// Anything that can hand out samples by index: an in-memory vector, a
/// manifest-backed lazy loader, a test fixture.
template <typename D>
concept SampleSource = requires(const D& d, std::size_t k) {
  { d.size() } -> std::convertible_to<std::size_t>;
  { d.modality_names() } -> std::convertible_to<std::vector<std::string>>;
  { d.sample(k) } -> std::convertible_to<Sample>;
};

/// Samples held in memory. Modality names are taken from the first sample.
class InMemoryDataset {
 public:
  InMemoryDataset() = default;
  explicit InMemoryDataset(std::vector<Sample> samples) : samples_(std::move(samples)) {
    if (!samples_.empty()) {
      for (const auto& input : samples_.front()) names_.push_back(input.name);
    }
    for (std::size_t k = 0; k < samples_.size(); ++k) {
      const auto& s = samples_[k];
      bool ok = s.size() == names_.size();
      for (std::size_t i = 0; ok && i < s.size(); ++i) ok = s[i].name == names_[i];
      if (!ok) throw DatasetError("sample " + std::to_string(k) + " does not list the same modalities as sample 0");
    }
  }

  std::size_t size() const { return samples_.size(); }
  std::vector<std::string> modality_names() const { return names_; }
  Sample sample(std::size_t k) const { return samples_.at(k); }

 private:
  std::vector<Sample> samples_;
  std::vector<std::string> names_;
};

static_assert(SampleSource<InMemoryDataset>);

}  // namespace mcontrib
