#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cme/tree.hpp"

namespace cme::viz {

/// Centered projection onto the top two principal directions, [n x 2]. Each direction
/// is signed so its largest-magnitude loading is positive. Constant input gives zeros.
MatrixD project_2d(const MatrixD& activations);

/// CSV with header x,y,concept_value; one row per sample.
void write_projection_csv(const std::filesystem::path& file, const MatrixD& coords, const Labels& concept_values);

/// DOT digraph of a fitted tree. Internal nodes read "name ≤ threshold"; leaves show the
/// class name. Empty name lists fall back to feature/class indices.
std::string export_tree_dot(const learn::TreeModel& tree, const std::vector<std::string>& concept_names,
                            const std::vector<std::string>& class_names = {});

}  // namespace cme::viz
