#pragma once

#include <array>
#include <string_view>
#include <utility>

namespace siem {

inline constexpr std::string_view kVersion = "1.0.0";

inline constexpr std::array<std::pair<std::string_view, std::string_view>, 10> kModuleVersions{{
    {"schedule", "1.0.0"},
    {"target", "1.0.0"},
    {"scoremodel", "1.0.0"},
    {"sampler", "1.0.0"},
    {"qwiener", "1.0.0"},
    {"spde", "1.0.0"},
    {"siem", "1.0.0"},
    {"ratio", "1.0.0"},
    {"metrics", "1.0.0"},
    {"cli", "1.0.0"},
}};

}  // namespace siem
