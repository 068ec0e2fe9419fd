#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mlkrig/impute.hpp"

namespace mlkrig {

/// Everything persisted by `mlkrig fit`.
struct SavedModel {
  FittedModel model;
  Index leaf_min = 0;
  bool fixed_theta = false;
  std::string response;
  std::vector<std::string> predictors;
  std::map<std::string, ColumnTransform> transforms;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// FNV-1a hash of the field layout; stored in the header and checked on load.
std::uint64_t model_schema_hash();

/// Little-endian binary file: magic "MLKRIGMD", version, schema hash, then the
/// fields. The multilevel basis is not stored; load rebuilds it from the
/// locations, trend and leaf_min, which is deterministic.
void save_model(const std::string& path, const SavedModel& saved);
SavedModel load_model(const std::string& path);  // throws ParseError

}  // namespace mlkrig
