// SPDX-License-Identifier: Apache-2.0
//
// Pipeline orchestration: JSON run configuration, staged execution with
// per-stage checkpoints and resume, ablation presets, and the metadata-only
// parameter-count presets.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "shrinkpipe/compress.hpp"
#include "shrinkpipe/distill.hpp"
#include "shrinkpipe/model.hpp"

namespace shrinkpipe {

enum class StageKind { kTeacherFinetune, kLayerKd, kFfnPrune, kHiddenKd, kVocabTrim };

StageKind stage_kind_from_string(std::string_view name);  // throws ConfigError
std::string to_string(StageKind kind);

struct StageConfig {
    StageKind kind = StageKind::kTeacherFinetune;
    DistillPlan plan;            // teacher-finetune, layer-kd, hidden-kd
    int k = 0;                   // layer-kd: student layers; hidden-kd: new hidden size
    int target_ffn = 0;          // ffn-prune
    int importance_batches = 8;  // ffn-prune
    bool use_svd = false;        // hidden-kd: projection instead of truncation
    int vocab = 0;               // vocab-trim: kept vocabulary size incl. specials
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::string corpus_path;
    std::string out_dir = "runs/pipeline";
    double val_fraction = 0.1;
    ModelConfig model;
    std::vector<StageConfig> stages;

    // Stage list must be a non-empty subsequence of teacher-finetune ->
    // layer-kd -> ffn-prune -> hidden-kd -> vocab-trim (each at most once),
    // and every stage must strictly shrink the model it will receive.
    void validate() const;  // throws ConfigError
};

PipelineConfig parse_pipeline_config(const std::string& json_text);           // throws ConfigError
PipelineConfig load_pipeline_config(const std::filesystem::path& path);      // + IoError

// Accepts either a bare model-config object or any object with a "model"
// field (pipeline configs, checkpoint config.json files).
ModelConfig parse_model_config(const std::string& json_text);  // throws ConfigError

struct PipelineResult {
    CompressionReport report;
    std::filesystem::path report_csv;
    std::filesystem::path report_table;
};

// Runs the configured stages under out_dir (checkpoints/, reports/,
// traces/, run_meta.json). resume_stage names a configured stage to start
// from; earlier stages are restored from their checkpoints instead of
// recomputed. All emitted files except run_meta.json are byte-deterministic
// in (config, seed).
PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir,
                            const std::string& resume_stage = "");

// Reassembles the report of a finished run from the per-stage metrics under
// out_dir without recomputing anything; rewrites reports/pipeline.{csv,txt}.
PipelineResult rebuild_report(const PipelineConfig& config, const std::filesystem::path& out_dir);

struct AblationArm {
    std::string name;
    std::vector<float> series;  // aligned per-epoch metric (may be a single point)
    std::int64_t params = 0;    // model or adapter parameters when meaningful
    double final_metric = 0.0;
};

struct AblationResult {
    std::string preset;
    std::string series_name;  // what the aligned series measures
    std::vector<AblationArm> arms;
    std::string note;  // free-text observation, e.g. the MSE-vs-KL convergence call

    std::string to_csv() const;      // epoch,<arm>,... aligned rows
    std::string summary_csv() const; // arm,params,final_metric rows
};

const std::vector<std::string>& ablation_preset_names();

// Runs one ablation preset; arm i uses seed config.seed + i. Writes
// reports/<preset>.csv (+ .txt when a note exists) and traces/<preset>_<arm>.csv
// under out_dir. Unknown preset -> ConfigError listing valid names.
AblationResult run_ablation(const std::string& preset, const PipelineConfig& config,
                            const std::filesystem::path& out_dir);

// Masked-LM accuracy of a model/tokenizer pair on the validation share of
// the given documents; the masking stream is fixed by seed, so scores are
// comparable across models evaluated with the same arguments.
double evaluate_masked_accuracy(EncoderModel& model, const Tokenizer& tokenizer,
                                const std::vector<std::string>& docs, double val_fraction,
                                std::uint64_t seed, const DistillPlan& plan);

struct ParamRow {
    std::string stage;
    ModelConfig config;
    std::int64_t params = 0;
    double reduction_pct = 0.0;  // vs the first row
};

// Metadata-only stage tables: presets "xlmr-table1" and "mbert-table11".
// Unknown preset -> ConfigError listing valid names.
std::vector<ParamRow> count_params_preset(const std::string& preset);
const std::vector<std::string>& count_params_preset_names();

std::vector<ParamRow> param_rows_for_config(const ModelConfig& config);

std::string param_table_csv(const std::vector<ParamRow>& rows);
std::string param_table_text(const std::vector<ParamRow>& rows);

}  // namespace shrinkpipe
