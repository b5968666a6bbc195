#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "r2u/dataset.hpp"
#include "r2u/prepare.hpp"
#include "r2u/unlearn.hpp"

namespace r2u {

enum class TaskKind { ClassWise, RandomData, Resistance, DurationSweep };
const char* to_string(TaskKind t);

enum class DataSource { SynthBlobs, Idx, Corpus, StyledCorpus };
const char* to_string(DataSource s);

struct DatasetConfig {
  DataSource source = DataSource::SynthBlobs;
  // synth_blobs
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t dim = 32;
  double separation = 12.0;
  // idx
  std::filesystem::path images;
  std::filesystem::path labels;
  std::optional<std::size_t> limit;
  // corpus
  std::filesystem::path corpus;
  // styled_corpus
  std::size_t lines_per_text = 40;
  // random_data / resistance on a plain dataset
  SplitFractions fractions;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{256};  // classifier hidden widths
  std::size_t context = 16;              // CharLM
  std::size_t embed_dim = 32;
  std::size_t lm_hidden = 128;
};

struct TrainerConfig {
  TrainerKind kind = TrainerKind::Standard;
  std::size_t epochs = 20;
  // Ready2Unlearn only: Standard for epochs - M, then Ready2Unlearn for M.
  std::optional<std::size_t> prepared_epochs;
  TrainerSettings settings;
};

struct UnlearnTaskConfig {
  UnlearnConfig run;
  // Retain accuracy is recorded every `retain_every` steps (0: never) and at
  // the first step where forget accuracy drops to each milestone.
  std::size_t retain_every = 1;
  std::vector<double> milestones;
};

struct SweepConfig {
  std::vector<std::size_t> m_values{2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  double threshold = 0.5;  // forget accuracy
  bool parallel = false;
};

struct ExperimentConfig {
  TaskKind task = TaskKind::ClassWise;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "r2u_out";
  DatasetConfig dataset;
  ModelConfig model;
  TrainerConfig trainer;
  MetaHyper meta;
  UnlearnTaskConfig unlearn;
  RecoverConfig recovery;
  std::optional<std::vector<std::int32_t>> forget_classes;  // ClassWise; default every class
  SweepConfig sweep;

  // Range checks and path existence. Throws ValidationError naming the field.
  void validate() const;
};

// Parses a JSON document. meta.lambda1, meta.lambda2 and meta.lambda3 are
// required; unknown keys are rejected. Throws ValidationError. For corpus
// sources an absent unlearn.minibatch means 32.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Every field with defaults filled in; parse_config(resolved_config_json(c))
// reproduces c.
std::string resolved_config_json(const ExperimentConfig& cfg);

struct RunArtifacts {
  std::filesystem::path config_echo;
  std::filesystem::path metrics_csv;
  std::filesystem::path trajectory_csv;
  std::filesystem::path summary_csv;
  std::optional<std::filesystem::path> token_report_json;
  std::vector<std::filesystem::path> snapshots;
};

// One learn -> unlearn (-> recover) pipeline for a single forget set.
struct PipelineOutcome {
  std::string label;  // forget class index, "random" or "styled"
  TrainLog train_log;
  SetScore pre_forget;
  std::optional<SetScore> pre_retain;
  UnlearnResult unlearned;
  std::optional<RecoverResult> recovered;
  double efficiency = 0.0;
  std::optional<double> retention;
  std::optional<double> resistance;
  // Per milestone: first step at which forget accuracy <= milestone (0 when
  // already met before unlearning) and the retain accuracy there.
  std::vector<std::optional<std::size_t>> milestone_steps;
  std::vector<std::optional<double>> milestone_retain;
  ParamState prepared;
};

// Runs the task in cfg and writes its artifacts under cfg.output_dir.
// Files written by a failed run are removed before the error propagates.
RunArtifacts run_experiment(const ExperimentConfig& cfg);

struct SweepRow {
  std::size_t m = 0;
  std::optional<std::size_t> steps_to_threshold;
  double pre_forget_acc = 0.0;
};

// Trains with Standard x (E - M) then Ready2Unlearn x M for each M, seeded
// base seed + M on data drawn from the base seed, and records the GA steps
// until forget accuracy <= sweep.threshold. Writes sweep.csv and the config
// echo. Throws ValidationError if some M exceeds the epoch budget.
std::vector<SweepRow> run_duration_sweep(const ExperimentConfig& cfg);

// Data drawn from the config's source before any training.
struct ExperimentData {
  LabeledDataset base;                  // classification data or corpus windows
  std::optional<StyledCorpus> styled;
  std::optional<CharVocab> vocab;       // LM sources
  std::optional<std::string> report_text;
};

ExperimentData load_data(const ExperimentConfig& cfg, SeededRng& rng);
ModelSpec model_spec_for(const ExperimentConfig& cfg, const ExperimentData& data);
// ClassWise/DurationSweep: partition_by_class(forget_class); RandomData and
// Resistance on a plain source: partition_random; styled source: partition_styled.
RiskPartition partition_for(const ExperimentConfig& cfg, const ExperimentData& data,
                            std::optional<std::int32_t> forget_class, SeededRng& rng);
Schedule schedule_for(const TrainerConfig& t);
PipelineOutcome run_pipeline(const ExperimentConfig& cfg, const RiskPartition& part,
                             const ModelSpec& spec, SeededRng& rng, std::string label);

}  // namespace r2u
