#pragma once

#include "ecoprod/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ecoprod::plot {

/// 2-D scatter, one colour per integer label.
std::string scatter_svg(const Matrix& points, const std::vector<int>& labels, const std::string& title);

/// SHAP beeswarm: one row per feature (given order, top first), points at
/// their attribution, coloured from blue (low feature value) to red (high).
std::string beeswarm_svg(const Matrix& phi, const Matrix& feature_values,
                         const std::vector<std::string>& names, const std::vector<int>& order,
                         const std::string& title);

/// Horizontal bars.
std::string bar_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                    const std::string& title);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ecoprod::plot
