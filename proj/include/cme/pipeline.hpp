#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cme/extraction.hpp"
#include "cme/intervention.hpp"
#include "cme/refmodel.hpp"
#include "cme/synthgen.hpp"

namespace cme::pipeline {

struct DataConfig {
  std::string task = "task1";
  synth::SpriteConfig sprites;
  std::size_t max_samples = 10000;  // the generated grid is decimated to at most this many
};

struct LabelledConfig {
  std::string mode = "total";  // "total" or "per_class"
  std::size_t count = 100;     // total rows, or rows per task class
};

struct ExtractConfig {
  LabelledConfig labelled;
  extract::LearnerSpec learner;
  double val_fraction = 0.2;
  extract::LayerTieBreak layer_tie_break = extract::LayerTieBreak::kEarliest;
  extract::QHatSpec q_hat;
  std::string baseline_layer;  // empty: the last hidden layer
};

struct EvaluateConfig {
  std::vector<std::string> relevant_concepts;  // empty: the concepts the task label depends on
};

struct InterveneConfig {
  int max_corrected = -1;  // negative: every concept
};

struct VisualizeConfig {
  std::vector<std::string> layers;    // empty: all recorded layers
  std::vector<std::string> concepts;  // empty: all concepts
  std::size_t max_points = 2000;
};

struct Config {
  uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";
  std::vector<std::string> stages;  // empty: every stage in order
  DataConfig data;
  ref::MlpHyper model;
  ExtractConfig extract;
  EvaluateConfig evaluate;
  InterveneConfig intervene;
  VisualizeConfig visualize;
};

/// generate, train-ref, extract, evaluate, intervene, visualize.
const std::vector<std::string>& stage_names();

/// Throws ValidationError naming the offending key on any schema violation.
Config parse_config(const nlohmann::json& j);
Config load_config(const std::filesystem::path& file);
nlohmann::json config_to_json(const Config& config);

/// Independent per-stage seed stream.
uint64_t stage_seed(uint64_t root_seed, std::string_view stage);

// In-memory stages, shared by the CLI and the tests.

/// Sprite grid decimated to max_samples, as a bundle with one "pixels" layer, task
/// labels, concepts and grid positions (input_ref). No model outputs.
ActivationBundle generate_data(const DataConfig& config, uint64_t seed);

struct TrainedReference {
  ref::MlpModel model;
  ActivationBundle train;  // recorded layers, model outputs, labels and concepts of the train split
  ActivationBundle test;
};

TrainedReference train_reference(const ActivationBundle& data, const ref::MlpHyper& hyper, uint64_t seed);

struct Extraction {
  ConceptDataset concepts;
  extract::PredictorGrid grid;
  std::vector<std::size_t> selected;
  extract::ExtractedModel model;
  extract::ExtractedModel baseline;  // single-layer concept map with a surrogate fitted like the main one
  std::string baseline_layer;
};

/// Fits every extraction artifact from a train bundle carrying concepts and labels.
Extraction run_extraction(const ActivationBundle& train, const ExtractConfig& config, uint64_t seed);

/// Task-relevant concept names for a task id.
std::vector<std::string> default_relevant_concepts(synth::Task task);

/// Metrics of the extracted model and the baseline on one labelled bundle.
nlohmann::json evaluate_models(const extract::ExtractedModel& cme, const extract::ExtractedModel& baseline,
                               const ActivationBundle& bundle, const std::vector<std::string>& relevant_concepts);

struct InterventionResult {
  intervention::InterventionCurve curve;
  double ground_truth_accuracy = 0.0;  // q̂ trained and tested on ground-truth concepts
};

/// Ranks concepts with a logistic q̂ on ground-truth train concepts, then corrects the
/// top-i predicted concepts for i = 0..max_corrected and refits on task labels.
InterventionResult run_intervention(const extract::PHat& p_hat, const ActivationBundle& train,
                                    const ActivationBundle& test, const extract::QHatSpec& learner, int max_corrected);

/// Runs one stage against the on-disk layout under config.out_dir. Returns false when
/// the stage was skipped because its outputs already exist (and force is off).
bool run_stage(const Config& config, std::string_view stage, bool force);

/// Runs config.stages (all when empty) in order and rewrites the run manifest.
void run_all(const Config& config, bool force);

/// Rewrites run_manifest.json listing every file under the output directory.
void write_run_manifest(const Config& config);

}  // namespace cme::pipeline
