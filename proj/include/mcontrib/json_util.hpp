#pragma once

#include "json.hpp"

namespace mcontrib::detail {

/// True for a nonnegative JSON integer. Parsed text yields unsigned values
/// but documents built in code hold signed ones.
inline bool is_index(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

}  // namespace mcontrib::detail
