#pragma once

#include <filesystem>

#include "cme/extraction.hpp"

namespace cme {

/// Writes model.json plus f32/i32 blobs for dense parameters. Spreading models that
/// share a node set share one blob.
void save_extracted_model(const extract::ExtractedModel& model, const std::filesystem::path& dir);

/// Inverse of save_extracted_model; predictions of the loaded model match the saved one exactly.
extract::ExtractedModel load_extracted_model(const std::filesystem::path& dir);

/// Same files for a concept map alone (phat.json), as used by the baseline.
void save_phat(const extract::PHat& p_hat, const std::filesystem::path& dir);
extract::PHat load_phat(const std::filesystem::path& dir);

}  // namespace cme
