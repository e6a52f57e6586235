// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace test_paths {

inline std::string scenario(const std::string& name) {
  return std::string(MSMU_SCENARIO_DIR) + "/" + name;
}

}  // namespace test_paths
