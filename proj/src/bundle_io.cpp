#include "cme/bundle_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <zlib.h>

namespace cme {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
std::vector<unsigned char> to_le_bytes(std::span<const T> values) {
  static_assert(sizeof(T) == 4);
  std::vector<unsigned char> bytes(values.size() * 4);
  std::memcpy(bytes.data(), values.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
  return bytes;
}

template <typename T>
std::vector<T> from_le_bytes(std::vector<unsigned char> bytes) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
  std::vector<T> out(bytes.size() / 4);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

uint32_t write_bytes(const fs::path& file, const std::vector<unsigned char>& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot open '{}' for writing", file.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(fmt::format("failed writing '{}'", file.string()));
  return crc32_of(bytes);
}

std::vector<unsigned char> read_bytes(const fs::path& file, std::size_t expected_bytes,
                                      std::optional<uint32_t> expected_crc) {
  std::error_code ec;
  const auto size = fs::file_size(file, ec);
  if (ec) throw FormatError(fmt::format("missing blob '{}'", file.string()));
  if (size != expected_bytes) {
    throw FormatError(fmt::format("shape mismatch: '{}' has {} bytes, manifest shape requires {}",
                                  file.filename().string(), size, expected_bytes));
  }
  std::vector<unsigned char> bytes(expected_bytes);
  std::ifstream in(file, std::ios::binary);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw FormatError(fmt::format("truncated blob '{}'", file.string()));
  if (expected_crc && crc32_of(bytes) != *expected_crc) {
    throw FormatError(fmt::format("checksum mismatch for '{}'", file.filename().string()));
  }
  return bytes;
}

std::size_t shape_product(const json& shape) {
  std::size_t p = 1;
  for (const auto& d : shape) p *= d.get<std::size_t>();
  return p;
}

json file_entry(const std::string& file, std::vector<std::size_t> shape, uint32_t crc) {
  return json{{"file", file}, {"shape", shape}, {"crc32", crc}};
}

std::optional<uint32_t> crc_field(const json& entry) {
  if (entry.contains("crc32")) return entry.at("crc32").get<uint32_t>();
  return std::nullopt;
}

Labels read_label_entry(const fs::path& dir, const json& entry, std::size_t n, const char* what) {
  const auto& shape = entry.at("shape");
  if (shape.size() != 1 || shape[0].get<std::size_t>() != n) {
    throw FormatError(fmt::format("{} shape does not match sample_count {}", what, n));
  }
  return read_i32_blob(dir / entry.at("file").get<std::string>(), n, crc_field(entry));
}

}  // namespace

uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large blobs.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<uint32_t>(crc);
}

uint32_t write_f32_blob(const fs::path& file, std::span<const float> values) {
  return write_bytes(file, to_le_bytes(values));
}

uint32_t write_i32_blob(const fs::path& file, std::span<const int32_t> values) {
  return write_bytes(file, to_le_bytes(values));
}

std::vector<float> read_f32_blob(const fs::path& file, std::size_t expected_count,
                                 std::optional<uint32_t> expected_crc) {
  return from_le_bytes<float>(read_bytes(file, expected_count * 4, expected_crc));
}

std::vector<int32_t> read_i32_blob(const fs::path& file, std::size_t expected_count,
                                   std::optional<uint32_t> expected_crc) {
  return from_le_bytes<int32_t>(read_bytes(file, expected_count * 4, expected_crc));
}

void save_bundle(const ActivationBundle& bundle, const fs::path& dir) {
  bundle.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));

  const std::size_t n = bundle.sample_count;
  json manifest;
  manifest["version"] = kBundleVersion;
  manifest["sample_count"] = n;
  json layers = json::array();
  for (std::size_t i = 0; i < bundle.layers.size(); ++i) {
    const auto& l = bundle.layers[i];
    const std::string file = fmt::format("layer_{:03d}.f32", i);
    const auto crc = write_f32_blob(dir / file, {l.activations.data(), static_cast<std::size_t>(l.activations.size())});
    json entry = file_entry(file, {n, static_cast<std::size_t>(l.activations.cols())}, crc);
    entry["id"] = l.id;
    layers.push_back(std::move(entry));
  }
  manifest["layers"] = std::move(layers);
  if (bundle.model_outputs) {
    const auto crc = write_i32_blob(dir / "model_outputs.i32", *bundle.model_outputs);
    manifest["model_outputs"] = file_entry("model_outputs.i32", {n}, crc);
  }
  if (bundle.dataset_labels) {
    const auto crc = write_i32_blob(dir / "dataset_labels.i32", *bundle.dataset_labels);
    manifest["dataset_labels"] = file_entry("dataset_labels.i32", {n}, crc);
  }
  if (bundle.concepts) {
    const auto& c = *bundle.concepts;
    const auto crc = write_i32_blob(dir / "concepts.i32", {c.values.data(), static_cast<std::size_t>(c.values.size())});
    json entry = file_entry("concepts.i32", {n, c.concept_count()}, crc);
    entry["names"] = c.names;
    entry["cardinalities"] = c.cardinalities;
    entry["missing_value"] = kMissing;
    manifest["concepts"] = std::move(entry);
  }
  if (bundle.input_ref) manifest["input_ref"] = *bundle.input_ref;

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write manifest in '{}'", dir.string()));
  out << manifest.dump(2) << '\n';
}

ActivationBundle load_bundle(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError(fmt::format("missing '{}'", manifest_path.string()));
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("unparsable manifest '{}': {}", manifest_path.string(), e.what()));
  }

  try {
    if (manifest.at("version").get<int>() != kBundleVersion) {
      throw FormatError(fmt::format("unsupported bundle version {}", manifest.at("version").dump()));
    }
    ActivationBundle bundle;
    bundle.sample_count = manifest.at("sample_count").get<std::size_t>();
    const std::size_t n = bundle.sample_count;
    for (const auto& entry : manifest.at("layers")) {
      const auto& shape = entry.at("shape");
      if (shape.size() != 2 || shape[0].get<std::size_t>() != n) {
        throw FormatError(fmt::format("layer '{}' shape must be [{}, m]", entry.at("id").get<std::string>(), n));
      }
      const auto m = shape[1].get<std::size_t>();
      auto values = read_f32_blob(dir / entry.at("file").get<std::string>(), shape_product(shape), crc_field(entry));
      Layer layer{entry.at("id").get<std::string>(), RowMatrixF(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m))};
      std::copy(values.begin(), values.end(), layer.activations.data());
      bundle.layers.push_back(std::move(layer));
    }
    if (manifest.contains("model_outputs")) {
      bundle.model_outputs = read_label_entry(dir, manifest.at("model_outputs"), n, "model_outputs");
    }
    if (manifest.contains("dataset_labels")) {
      bundle.dataset_labels = read_label_entry(dir, manifest.at("dataset_labels"), n, "dataset_labels");
    }
    if (manifest.contains("concepts")) {
      const auto& entry = manifest.at("concepts");
      ConceptTable table;
      table.names = entry.at("names").get<std::vector<std::string>>();
      table.cardinalities = entry.at("cardinalities").get<std::vector<int32_t>>();
      const std::size_t k = table.names.size();
      if (entry.contains("missing_value") && entry.at("missing_value").get<int32_t>() != kMissing) {
        throw FormatError("concept missing_value must be -1");
      }
      const auto& shape = entry.at("shape");
      if (shape.size() != 2 || shape[0].get<std::size_t>() != n || shape[1].get<std::size_t>() != k) {
        throw FormatError("concept shape must be [sample_count, k]");
      }
      auto values = read_i32_blob(dir / entry.at("file").get<std::string>(), n * k, crc_field(entry));
      table.values = IntMatrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
      std::copy(values.begin(), values.end(), table.values.data());
      bundle.concepts = std::move(table);
    }
    if (manifest.contains("input_ref")) bundle.input_ref = manifest.at("input_ref").get<std::vector<std::string>>();
    bundle.validate();
    return bundle;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed manifest '{}': {}", manifest_path.string(), e.what()));
  }
}

}  // namespace cme
