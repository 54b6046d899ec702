#include "cme/synthgen.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace cme::synth {

namespace {

std::vector<double> linspace(double lo, double hi, int count) {
  std::vector<double> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    v[static_cast<std::size_t>(i)] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
  }
  return v;
}

std::vector<double> every_nth(const std::vector<double>& v, int stride) {
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); i += static_cast<std::size_t>(stride)) out.push_back(v[i]);
  return out;
}

// Unit-circle glyphs; (u, v) are sprite-frame coordinates with v pointing up.
bool inside_square(double u, double v) {
  constexpr double half = std::numbers::sqrt2 / 2.0;
  return std::abs(u) <= half && std::abs(v) <= half;
}

bool inside_ellipse(double u, double v) { return u * u + (v / 0.5) * (v / 0.5) <= 1.0; }

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

bool inside_heart(double u, double v) {
  constexpr double lobe_x = 0.36, lobe_y = 0.22, lobe_r = 0.38;
  const double dl = (u + lobe_x) * (u + lobe_x) + (v - lobe_y) * (v - lobe_y);
  const double dr = (u - lobe_x) * (u - lobe_x) + (v - lobe_y) * (v - lobe_y);
  if (dl <= lobe_r * lobe_r || dr <= lobe_r * lobe_r) return true;
  // Triangle (-0.72, 0.14) -> (0, -0.82) -> (0.72, 0.14), counter-clockwise.
  const double e0 = edge(-0.72, 0.14, 0.0, -0.82, u, v);
  const double e1 = edge(0.0, -0.82, 0.72, 0.14, u, v);
  const double e2 = edge(0.72, 0.14, -0.72, 0.14, u, v);
  return e0 >= 0 && e1 >= 0 && e2 >= 0;
}

}  // namespace

SpriteConfig SpriteConfig::full() {
  SpriteConfig c;
  c.rotation_stride = 1;
  c.position_stride = 1;
  return c;
}

void SpriteConfig::validate() const {
  if (image_size < 8) throw ValidationError(fmt::format("image_size must be ≥ 8, got {}", image_size));
  if (shapes.empty()) throw ValidationError("shape set is empty");
  if (scale_count < 1 || rotation_count < 1 || position_count < 1) {
    throw ValidationError("value counts must be positive");
  }
  if (rotation_stride < 1 || position_stride < 1) throw ValidationError("strides must be positive");
  if (max_radius_fraction <= 0.0 || max_radius_fraction > 0.5) {
    throw ValidationError("max_radius_fraction must lie in (0, 0.5]");
  }
}

std::vector<double> SpriteConfig::scale_values() const { return linspace(0.5, 1.0, scale_count); }

std::vector<double> SpriteConfig::rotation_values() const {
  return every_nth(linspace(0.0, 2.0 * std::numbers::pi, rotation_count), rotation_stride);
}

std::vector<double> SpriteConfig::position_values() const {
  return every_nth(linspace(0.0, 1.0, position_count), position_stride);
}

std::size_t SpriteConfig::combination_count() const {
  const std::size_t pos = position_values().size();
  return shapes.size() * scale_values().size() * rotation_values().size() * pos * pos;
}

ConceptTable enumerate_concepts(const SpriteConfig& config) {
  config.validate();
  const auto n_scale = static_cast<int32_t>(config.scale_values().size());
  const auto n_rot = static_cast<int32_t>(config.rotation_values().size());
  const auto n_pos = static_cast<int32_t>(config.position_values().size());
  ConceptTable table;
  table.names.assign(kConceptNames.begin(), kConceptNames.end());
  table.cardinalities = {1, static_cast<int32_t>(config.shapes.size()), n_scale, n_rot, n_pos, n_pos};
  table.values.resize(static_cast<Eigen::Index>(config.combination_count()), 6);
  Eigen::Index r = 0;
  for (std::size_t s = 0; s < config.shapes.size(); ++s) {
    for (int32_t sc = 0; sc < n_scale; ++sc) {
      for (int32_t rot = 0; rot < n_rot; ++rot) {
        for (int32_t x = 0; x < n_pos; ++x) {
          for (int32_t y = 0; y < n_pos; ++y, ++r) {
            table.values.row(r) << 0, static_cast<int32_t>(config.shapes[s]) , sc, rot, x, y;
          }
        }
      }
    }
  }
  // Shape codes are the enum values; cardinality must still cover them.
  for (auto s : config.shapes) {
    table.cardinalities[kShape] = std::max(table.cardinalities[kShape], static_cast<int32_t>(s) + 1);
  }
  return table;
}

std::vector<uint8_t> render_sprite(const SpriteConfig& config, std::span<const int32_t> row) {
  if (row.size() != 6) throw ValidationError("concept row must have 6 entries");
  const auto scales = config.scale_values();
  const auto rotations = config.rotation_values();
  const auto positions = config.position_values();
  const int size = config.image_size;
  const double max_radius = config.max_radius_fraction * size;
  const double radius = scales.at(static_cast<std::size_t>(row[kScale])) * max_radius;
  const double theta = rotations.at(static_cast<std::size_t>(row[kRotation]));
  const double span = size - 2.0 * max_radius;
  const double cx = max_radius + positions.at(static_cast<std::size_t>(row[kPosX])) * span;
  const double cy = max_radius + positions.at(static_cast<std::size_t>(row[kPosY])) * span;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const auto shape = static_cast<Shape>(row[kShape]);

  std::vector<uint8_t> img(static_cast<std::size_t>(size * size), 0);
  for (int py = 0; py < size; ++py) {
    for (int px = 0; px < size; ++px) {
      const double dx = px + 0.5 - cx;
      const double dy = cy - (py + 0.5);
      // Undo the sprite rotation, then normalise by its radius.
      const double u = (dx * cos_t + dy * sin_t) / radius;
      const double v = (-dx * sin_t + dy * cos_t) / radius;
      bool on = false;
      switch (shape) {
        case Shape::kSquare: on = inside_square(u, v); break;
        case Shape::kEllipse: on = inside_ellipse(u, v); break;
        case Shape::kHeart: on = inside_heart(u, v); break;
      }
      img[static_cast<std::size_t>(py * size + px)] = on ? 1 : 0;
    }
  }
  return img;
}

SpriteDataset generate_dsprites(const SpriteConfig& config) {
  SpriteDataset ds;
  ds.image_size = config.image_size;
  ds.concepts = enumerate_concepts(config);
  const std::size_t n = ds.size();
  const std::size_t pixels = static_cast<std::size_t>(config.image_size * config.image_size);
  ds.pixels.resize(n * pixels);
  parallel_for(n, [&](std::size_t i) {
    const auto row = ds.concepts.values.row(static_cast<Eigen::Index>(i));
    const std::array<int32_t, 6> codes{row(0), row(1), row(2), row(3), row(4), row(5)};
    const auto img = render_sprite(config, codes);
    std::copy(img.begin(), img.end(), ds.pixels.begin() + static_cast<std::ptrdiff_t>(i * pixels));
  });
  return ds;
}

RowMatrixF SpriteDataset::pixel_matrix() const {
  const auto pixels_per_image = static_cast<Eigen::Index>(image_size * image_size);
  RowMatrixF m(static_cast<Eigen::Index>(size()), pixels_per_image);
  for (std::size_t i = 0; i < pixels.size(); ++i) m.data()[i] = static_cast<float>(pixels[i]);
  return m;
}

SpriteDataset SpriteDataset::subset(const IndexList& rows) const {
  SpriteDataset out;
  out.image_size = image_size;
  out.concepts = {concepts.names, concepts.cardinalities, take_rows(concepts.values, rows)};
  const std::size_t per = static_cast<std::size_t>(image_size * image_size);
  out.pixels.resize(rows.size() * per);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(rows[r] * per), per,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(r * per));
  }
  return out;
}

Task parse_task(std::string_view name) {
  if (name == "task1") return Task::kTask1;
  if (name == "task2") return Task::kTask2;
  throw ValidationError(fmt::format("unknown task id '{}' (expected task1 or task2)", name));
}

std::string_view task_name(Task task) { return task == Task::kTask1 ? "task1" : "task2"; }

int task_class_count(Task task, int scale_count) { return task == Task::kTask1 ? 3 : 3 * scale_count; }

Labels make_task_labels(const IntMatrix& concepts, Task task, int scale_count) {
  if (concepts.cols() != 6) throw ValidationError("task labels need the 6-column sprite concept matrix");
  Labels labels(static_cast<std::size_t>(concepts.rows()));
  for (Eigen::Index r = 0; r < concepts.rows(); ++r) {
    const int32_t shape = concepts(r, kShape);
    labels[static_cast<std::size_t>(r)] = task == Task::kTask1 ? shape : shape * scale_count + concepts(r, kScale);
  }
  return labels;
}

Labels make_task_labels(const IntMatrix& concepts, std::string_view task, int scale_count) {
  return make_task_labels(concepts, parse_task(task), scale_count);
}

}  // namespace cme::synth
