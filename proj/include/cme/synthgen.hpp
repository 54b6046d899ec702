#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "cme/data_core.hpp"

namespace cme::synth {

enum class Shape : int32_t { kSquare = 0, kEllipse = 1, kHeart = 2 };

/// Sprite grid definition. Value lists are taken from the original dSprites grid
/// (40 rotations, 32 positions per axis) and thinned with the strides below.
struct SpriteConfig {
  int image_size = 16;
  std::vector<Shape> shapes{Shape::kSquare, Shape::kEllipse, Shape::kHeart};
  int scale_count = 6;
  int rotation_count = 40;
  int rotation_stride = 5;
  int position_count = 32;
  int position_stride = 2;
  /// Sprite circumradius at scale 1, as a fraction of image width.
  double max_radius_fraction = 0.45;

  /// The full 737280-combination grid.
  static SpriteConfig full();

  void validate() const;
  std::vector<double> scale_values() const;
  std::vector<double> rotation_values() const;
  std::vector<double> position_values() const;
  std::size_t combination_count() const;
};

/// Column order of the concept matrix.
inline constexpr std::array<std::string_view, 6> kConceptNames{"color", "shape", "scale",
                                                               "rotation", "posX", "posY"};
enum ConceptColumn : int { kColor = 0, kShape, kScale, kRotation, kPosX, kPosY };

struct SpriteDataset {
  int image_size = 0;
  std::vector<uint8_t> pixels;  // [N x s x s], values in {0, 1}
  ConceptTable concepts;

  std::size_t size() const { return static_cast<std::size_t>(concepts.values.rows()); }
  /// One row per image, pixels as 0.0 / 1.0.
  RowMatrixF pixel_matrix() const;
  SpriteDataset subset(const IndexList& rows) const;
};

/// Concept rows for every Cartesian combination, in (shape, scale, rotation, posX, posY)
/// lexicographic order; no rasterisation.
ConceptTable enumerate_concepts(const SpriteConfig& config);

/// Rasterises one sprite from its concept codes.
std::vector<uint8_t> render_sprite(const SpriteConfig& config, std::span<const int32_t> concept_row);

SpriteDataset generate_dsprites(const SpriteConfig& config);

enum class Task { kTask1, kTask2 };

Task parse_task(std::string_view name);
std::string_view task_name(Task task);
int task_class_count(Task task, int scale_count = 6);

/// Task 1: the shape code. Task 2: shape * scale_count + scale.
Labels make_task_labels(const IntMatrix& concepts, Task task, int scale_count = 6);
Labels make_task_labels(const IntMatrix& concepts, std::string_view task, int scale_count = 6);

}  // namespace cme::synth
