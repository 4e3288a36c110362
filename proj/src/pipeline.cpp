// SPDX-License-Identifier: Apache-2.0

#include "shrinkpipe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "shrinkpipe/adapters.hpp"
#include "shrinkpipe/checkpoint.hpp"
#include "shrinkpipe/corpus.hpp"
#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/rng.hpp"
#include "shrinkpipe/tokenizer.hpp"

namespace shrinkpipe {

namespace fs = std::filesystem;
using nlohmann::json;

StageKind stage_kind_from_string(std::string_view name) {
    if (name == "teacher-finetune") return StageKind::kTeacherFinetune;
    if (name == "layer-kd") return StageKind::kLayerKd;
    if (name == "ffn-prune") return StageKind::kFfnPrune;
    if (name == "hidden-kd") return StageKind::kHiddenKd;
    if (name == "vocab-trim") return StageKind::kVocabTrim;
    throw ConfigError("unknown stage '" + std::string(name) +
                      "'; valid stages: teacher-finetune, layer-kd, ffn-prune, hidden-kd, vocab-trim");
}

std::string to_string(StageKind kind) {
    switch (kind) {
        case StageKind::kTeacherFinetune: return "teacher-finetune";
        case StageKind::kLayerKd: return "layer-kd";
        case StageKind::kFfnPrune: return "ffn-prune";
        case StageKind::kHiddenKd: return "hidden-kd";
        case StageKind::kVocabTrim: return "vocab-trim";
    }
    throw ConfigError("unknown stage kind");
}

namespace {

std::string fmt_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string timestamp_utc() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

json parse_json_text(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError(what + ": invalid JSON");
    return j;
}

template <typename T>
T json_get(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for \"" + std::string(key) + "\"");
    }
}

int json_require_int(const json& j, const char* key, const std::string& what) {
    if (!j.contains(key)) throw ConfigError(what + ": missing \"" + key + "\"");
    try {
        return j.at(key).get<int>();
    } catch (const json::exception&) {
        throw ConfigError(what + ": bad value for \"" + key + "\"");
    }
}

ModelConfig model_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("model config: must be an object");
    ModelConfig cfg;
    cfg.num_layers = json_require_int(j, "num_layers", "model config");
    cfg.hidden_size = json_require_int(j, "hidden_size", "model config");
    cfg.num_heads = json_require_int(j, "num_heads", "model config");
    cfg.ffn_size = json_require_int(j, "ffn_size", "model config");
    cfg.vocab_size = json_require_int(j, "vocab_size", "model config");
    cfg.max_positions = json_require_int(j, "max_positions", "model config");
    cfg.tie_output_projection = json_get<bool>(j, "tie_output_projection", true);
    return cfg;
}

json model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["num_layers"] = cfg.num_layers;
    j["hidden_size"] = cfg.hidden_size;
    j["num_heads"] = cfg.num_heads;
    j["ffn_size"] = cfg.ffn_size;
    j["vocab_size"] = cfg.vocab_size;
    j["max_positions"] = cfg.max_positions;
    j["tie_output_projection"] = cfg.tie_output_projection;
    return j;
}

DistillPlan plan_from_json(const json& j, DistillPlan plan) {
    if (!j.is_object()) throw ConfigError("plan: must be an object");
    if (j.contains("loss")) plan.loss_kind = loss_kind_from_string(j.at("loss").get<std::string>());
    plan.alpha = json_get<float>(j, "alpha", plan.alpha);
    plan.temperature = json_get<float>(j, "temperature", plan.temperature);
    plan.epochs = json_get<int>(j, "epochs", plan.epochs);
    plan.learning_rate = json_get<float>(j, "learning_rate", plan.learning_rate);
    plan.batch_size = json_get<int>(j, "batch_size", plan.batch_size);
    if (j.contains("init_strategy"))
        plan.init_strategy = init_strategy_from_string(j.at("init_strategy").get<std::string>());
    plan.distill_enabled = json_get<bool>(j, "distill", plan.distill_enabled);
    plan.mask_rate = json_get<float>(j, "mask_rate", plan.mask_rate);
    plan.seq_len = json_get<int>(j, "seq_len", plan.seq_len);
    plan.warmup_frac = json_get<double>(j, "warmup_frac", plan.warmup_frac);
    return plan;
}

StageConfig stage_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("pipeline config: each stage must be an object");
    if (!j.contains("name")) throw ConfigError("pipeline config: stage entry missing \"name\"");
    StageConfig sc;
    sc.kind = stage_kind_from_string(j.at("name").get<std::string>());
    if (j.contains("plan")) sc.plan = plan_from_json(j.at("plan"), sc.plan);
    sc.k = json_get<int>(j, "k", sc.k);
    sc.target_ffn = json_get<int>(j, "target_ffn", sc.target_ffn);
    sc.importance_batches = json_get<int>(j, "importance_batches", sc.importance_batches);
    sc.vocab = json_get<int>(j, "vocab", sc.vocab);
    if (j.contains("method")) {
        const std::string method = j.at("method").get<std::string>();
        if (method == "truncate")
            sc.use_svd = false;
        else if (method == "svd")
            sc.use_svd = true;
        else
            throw ConfigError("pipeline config: hidden-kd method must be \"truncate\" or \"svd\"");
    }
    return sc;
}

fs::path stage_dir(const fs::path& ckpt_root, std::size_t index, StageKind kind) {
    return ckpt_root / ("stage_" + std::to_string(index) + "_" + to_string(kind));
}

void write_stage_metrics(const fs::path& dir, const StageRecord& rec) {
    json j;
    j["stage"] = rec.stage;
    j["params"] = rec.params;
    j["val_masked_acc"] = rec.val_masked_acc;
    j["checkpoint"] = rec.checkpoint;
    j["config"] = model_config_to_json(rec.config_after);
    write_text(dir / "metrics.json", j.dump(2) + "\n");
}

PipelineResult finalize_report(std::vector<StageRecord> all, const fs::path& reports_dir) {
    PipelineResult result;
    result.report = build_report(std::move(all));
    result.report_csv = reports_dir / "pipeline.csv";
    result.report_table = reports_dir / "pipeline.txt";
    write_text(result.report_csv, result.report.to_csv());
    write_text(result.report_table, result.report.to_table());
    return result;
}

StageRecord read_stage_metrics(const fs::path& dir) {
    std::ifstream in(dir / "metrics.json", std::ios::binary);
    if (!in)
        throw IoError("pipeline resume: missing stage metrics at " + (dir / "metrics.json").string());
    std::stringstream buf;
    buf << in.rdbuf();
    json j = json::parse(buf.str(), nullptr, false);
    if (j.is_discarded()) throw IoError("pipeline resume: corrupt metrics.json in " + dir.string());
    StageRecord rec;
    try {
        rec.stage = j.at("stage").get<std::string>();
        rec.params = j.at("params").get<std::int64_t>();
        rec.val_masked_acc = j.at("val_masked_acc").get<double>();
        rec.checkpoint = j.at("checkpoint").get<std::string>();
        rec.config_after = model_config_from_json(j.at("config"));
    } catch (const json::exception&) {
        throw IoError("pipeline resume: incomplete metrics.json in " + dir.string());
    }
    return rec;
}

}  // namespace

void PipelineConfig::validate() const {
    model.validate();
    if (corpus_path.empty()) throw ConfigError("pipeline config: corpus path is required");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError("pipeline config: val_fraction must lie in [0, 1)");
    if (stages.empty()) throw ConfigError("pipeline config: empty stage list");
    int last_order = -1;
    ModelConfig sim = model;
    for (const StageConfig& sc : stages) {
        const int order = static_cast<int>(sc.kind);
        if (order <= last_order)
            throw ConfigError("pipeline config: stage '" + to_string(sc.kind) +
                              "' violates the order teacher-finetune -> layer-kd -> ffn-prune -> "
                              "hidden-kd -> vocab-trim (each stage at most once)");
        last_order = order;
        sc.plan.validate();
        switch (sc.kind) {
            case StageKind::kTeacherFinetune:
                break;
            case StageKind::kLayerKd:
                if (sc.k < 1 || sc.k >= sim.num_layers)
                    throw ConfigError("layer-kd: k must lie in [1, num_layers) to shrink the model");
                if (sc.plan.init_strategy == InitStrategy::kStride && sim.num_layers % sc.k != 0)
                    throw ConfigError("layer-kd: stride initialization needs k to divide the layer count");
                sim.num_layers = sc.k;
                break;
            case StageKind::kFfnPrune:
                if (sc.target_ffn < 1 || sc.target_ffn >= sim.ffn_size)
                    throw ConfigError("ffn-prune: target_ffn must lie in [1, ffn_size) to shrink the model");
                if (sc.importance_batches < 1)
                    throw ConfigError("ffn-prune: importance_batches must be >= 1");
                sim.ffn_size = sc.target_ffn;
                break;
            case StageKind::kHiddenKd:
                if (sc.k < 1 || sc.k >= sim.hidden_size)
                    throw ConfigError("hidden-kd: k must lie in [1, hidden_size) to shrink the model");
                if (sc.k % sim.num_heads != 0)
                    throw ConfigError("hidden-kd: k must be divisible by the head count");
                sim.hidden_size = sc.k;
                break;
            case StageKind::kVocabTrim:
                if (sc.vocab < kNumSpecials)
                    throw ConfigError("vocab-trim: vocab must be at least " + std::to_string(kNumSpecials));
                if (sc.vocab >= sim.vocab_size)
                    throw ConfigError("vocab-trim: vocab must be smaller than the current vocabulary");
                sim.vocab_size = sc.vocab;
                break;
        }
    }
}

PipelineConfig parse_pipeline_config(const std::string& json_text) {
    const json j = parse_json_text(json_text, "pipeline config");
    if (!j.is_object()) throw ConfigError("pipeline config: top level must be an object");
    PipelineConfig cfg;
    cfg.seed = json_get<std::uint64_t>(j, "seed", cfg.seed);
    cfg.corpus_path = json_get<std::string>(j, "corpus", cfg.corpus_path);
    cfg.out_dir = json_get<std::string>(j, "out", cfg.out_dir);
    cfg.val_fraction = json_get<double>(j, "val_fraction", cfg.val_fraction);
    if (!j.contains("model")) throw ConfigError("pipeline config: missing \"model\"");
    cfg.model = model_config_from_json(j.at("model"));
    if (j.contains("stages")) {
        if (!j.at("stages").is_array()) throw ConfigError("pipeline config: \"stages\" must be an array");
        for (const json& stage : j.at("stages")) cfg.stages.push_back(stage_from_json(stage));
    }
    return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read pipeline config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_pipeline_config(buf.str());
}

ModelConfig parse_model_config(const std::string& json_text) {
    const json j = parse_json_text(json_text, "model config");
    if (j.is_object() && j.contains("model")) return model_config_from_json(j.at("model"));
    return model_config_from_json(j);
}

PipelineResult run_pipeline(const PipelineConfig& config, const fs::path& out_dir,
                            const std::string& resume_stage) {
    config.validate();
    const std::string started = timestamp_utc();
    const fs::path ckpt_root = out_dir / "checkpoints";
    const fs::path reports_dir = out_dir / "reports";
    const fs::path traces_dir = out_dir / "traces";
    fs::create_directories(ckpt_root);
    fs::create_directories(reports_dir);
    fs::create_directories(traces_dir);

    std::size_t start = 0;
    if (!resume_stage.empty()) {
        bool found = false;
        for (std::size_t i = 0; i < config.stages.size(); ++i) {
            if (to_string(config.stages[i].kind) == resume_stage) {
                start = i;
                found = true;
                break;
            }
        }
        if (!found)
            throw ConfigError("pipeline: resume stage '" + resume_stage +
                              "' is not in the configured stage list");
    }

    const std::vector<std::string> docs = read_document_lines(config.corpus_path);
    Tokenizer tokenizer = Tokenizer::build(docs, config.model.vocab_size);
    ModelConfig base_config = config.model;
    base_config.vocab_size = tokenizer.vocab_size();
    base_config.validate();

    Corpus corpus = encode_corpus(tokenizer, docs);
    CorpusSplit split = split_corpus(corpus, config.val_fraction, derive_seed(config.seed, "split"));

    std::vector<StageRecord> records(config.stages.size());
    EncoderModel current = EncoderModel::random_init(base_config, derive_seed(config.seed, "init"));

    if (start > 0) {
        for (std::size_t i = 0; i < start; ++i)
            records[i] = read_stage_metrics(stage_dir(ckpt_root, i, config.stages[i].kind));
        LoadedCheckpoint loaded =
            load_checkpoint(stage_dir(ckpt_root, start - 1, config.stages[start - 1].kind));
        current = std::move(loaded.model);
        tokenizer = std::move(loaded.tokenizer);
        corpus = encode_corpus(tokenizer, docs);
        split = split_corpus(corpus, config.val_fraction, derive_seed(config.seed, "split"));
    }

    for (std::size_t i = start; i < config.stages.size(); ++i) {
        const StageConfig& sc = config.stages[i];
        DistillPlan plan = sc.plan;
        plan.seed = derive_seed(config.seed, "stage", static_cast<std::uint64_t>(i));

        TrainingTrace trace;
        bool trained = false;
        switch (sc.kind) {
            case StageKind::kTeacherFinetune: {
                trace = mlm_finetune_teacher(current, split.train, split.validation, plan);
                trained = true;
                break;
            }
            case StageKind::kLayerKd: {
                EncoderModel student =
                    init_student(current, plan.init_strategy, sc.k, derive_seed(plan.seed, "init"));
                trace = train_distill(student, current, split.train, split.validation, plan);
                current = std::move(student);
                trained = true;
                break;
            }
            case StageKind::kFfnPrune: {
                const NeuronImportance importance =
                    accumulate_importance(current, split.validation, sc.importance_batches, plan);
                current = prune_ffn(current, importance, sc.target_ffn);
                break;
            }
            case StageKind::kHiddenKd: {
                EncoderModel teacher = std::move(current);
                EncoderModel student = sc.use_svd ? svd_reduce(teacher, sc.k) : truncate_hidden(teacher, sc.k);
                trace = train_distill(student, teacher, split.train, split.validation, plan);
                current = std::move(student);
                trained = true;
                break;
            }
            case StageKind::kVocabTrim: {
                if (sc.vocab >= tokenizer.vocab_size())
                    throw ConfigError("vocab-trim: target " + std::to_string(sc.vocab) +
                                      " does not shrink the actual vocabulary of " +
                                      std::to_string(tokenizer.vocab_size()));
                const std::vector<int> kept = select_top_tokens(tokenizer, corpus, sc.vocab);
                TrimmedModel trimmed = trim_vocab_model(current, tokenizer, kept);
                current = std::move(trimmed.model);
                tokenizer = std::move(trimmed.tokenizer);
                break;
            }
        }

        StageRecord rec;
        rec.stage = to_string(sc.kind);
        rec.config_after = current.config;
        rec.params = param_count(current.config);
        if (trained && !trace.val_masked_acc.empty())
            rec.val_masked_acc = trace.val_masked_acc.back();
        const fs::path dir = stage_dir(ckpt_root, i, sc.kind);
        save_checkpoint(current, tokenizer, dir);
        // Relative to out_dir so reports are portable and reruns into
        // different directories stay byte-identical.
        rec.checkpoint = (fs::path("checkpoints") / dir.filename()).generic_string();
        write_stage_metrics(dir, rec);
        if (trained)
            write_text(traces_dir / (dir.filename().string() + ".csv"), trace.to_csv());
        records[i] = std::move(rec);
    }

    std::vector<StageRecord> all;
    if (config.stages.front().kind != StageKind::kTeacherFinetune) {
        StageRecord baseline;
        baseline.stage = "original";
        baseline.config_after = base_config;
        baseline.params = param_count(base_config);
        all.push_back(std::move(baseline));
    }
    for (StageRecord& rec : records) all.push_back(std::move(rec));

    PipelineResult result = finalize_report(std::move(all), reports_dir);

    json meta;
    meta["started"] = started;
    meta["finished"] = timestamp_utc();
    write_text(out_dir / "run_meta.json", meta.dump(2) + "\n");
    return result;
}

PipelineResult rebuild_report(const PipelineConfig& config, const fs::path& out_dir) {
    config.validate();
    const fs::path ckpt_root = out_dir / "checkpoints";
    const fs::path reports_dir = out_dir / "reports";
    fs::create_directories(reports_dir);

    std::vector<StageRecord> all;
    if (config.stages.front().kind != StageKind::kTeacherFinetune) {
        const std::vector<std::string> docs = read_document_lines(config.corpus_path);
        const Tokenizer tokenizer = Tokenizer::build(docs, config.model.vocab_size);
        StageRecord baseline;
        baseline.stage = "original";
        baseline.config_after = config.model;
        baseline.config_after.vocab_size = tokenizer.vocab_size();
        baseline.params = param_count(baseline.config_after);
        all.push_back(std::move(baseline));
    }
    for (std::size_t i = 0; i < config.stages.size(); ++i)
        all.push_back(read_stage_metrics(stage_dir(ckpt_root, i, config.stages[i].kind)));
    return finalize_report(std::move(all), reports_dir);
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

std::string AblationResult::to_csv() const {
    std::string out = "epoch";
    for (const AblationArm& arm : arms) out += "," + arm.name;
    out += "\n";
    std::size_t rows = 0;
    for (const AblationArm& arm : arms) rows = std::max(rows, arm.series.size());
    for (std::size_t e = 0; e < rows; ++e) {
        out += std::to_string(e + 1);
        for (const AblationArm& arm : arms) {
            out += ",";
            if (e < arm.series.size()) out += fmt_fixed(arm.series[e], 6);
        }
        out += "\n";
    }
    return out;
}

std::string AblationResult::summary_csv() const {
    std::string out = "arm,params,final_metric\n";
    for (const AblationArm& arm : arms)
        out += arm.name + "," + std::to_string(arm.params) + "," + fmt_fixed(arm.final_metric, 6) + "\n";
    return out;
}

const std::vector<std::string>& ablation_preset_names() {
    static const std::vector<std::string> names = {"init-strategies", "mse-vs-kl",   "alpha-sweep",
                                                   "svd-vs-trunc",    "vocab-sweep", "adapter-r"};
    return names;
}

namespace {

struct AblationContext {
    std::vector<std::string> docs;
    Tokenizer tokenizer;
    ModelConfig cfg;
    Corpus corpus;
    CorpusSplit split;
    EncoderModel teacher;
    DistillPlan student_plan;  // from the layer-kd stage when present
    DistillPlan hidden_plan;   // from the hidden-kd stage when present
    int student_k = 0;
    int hidden_k = 0;

    AblationContext() : tokenizer(Tokenizer::build({"seed corpus"}, kNumSpecials + 2)) {}
};

const StageConfig* find_stage(const PipelineConfig& config, StageKind kind) {
    for (const StageConfig& sc : config.stages)
        if (sc.kind == kind) return &sc;
    return nullptr;
}

AblationContext make_ablation_context(const PipelineConfig& config) {
    config.model.validate();
    if (config.corpus_path.empty()) throw ConfigError("ablation: corpus path is required");
    if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0))
        throw ConfigError("ablation: val_fraction must lie in [0, 1)");

    AblationContext ctx;
    ctx.docs = read_document_lines(config.corpus_path);
    ctx.tokenizer = Tokenizer::build(ctx.docs, config.model.vocab_size);
    ctx.cfg = config.model;
    ctx.cfg.vocab_size = ctx.tokenizer.vocab_size();
    ctx.cfg.validate();
    ctx.corpus = encode_corpus(ctx.tokenizer, ctx.docs);
    ctx.split = split_corpus(ctx.corpus, config.val_fraction, derive_seed(config.seed, "split"));

    ctx.teacher = EncoderModel::random_init(ctx.cfg, derive_seed(config.seed, "init"));
    if (const StageConfig* tf = find_stage(config, StageKind::kTeacherFinetune)) {
        DistillPlan plan = tf->plan;
        plan.seed = derive_seed(config.seed, "teacher");
        mlm_finetune_teacher(ctx.teacher, ctx.split.train, ctx.split.validation, plan);
    }

    if (const StageConfig* lk = find_stage(config, StageKind::kLayerKd)) {
        ctx.student_plan = lk->plan;
        ctx.student_k = lk->k;
    } else {
        ctx.student_k = std::max(1, ctx.cfg.num_layers / 2);
    }
    if (const StageConfig* hk = find_stage(config, StageKind::kHiddenKd)) {
        ctx.hidden_plan = hk->plan;
        ctx.hidden_k = hk->k;
    } else {
        ctx.hidden_plan = ctx.student_plan;
        const int heads = ctx.cfg.num_heads;
        const int half = ctx.cfg.hidden_size / 2;
        ctx.hidden_k = std::max(heads, half - half % heads);
    }
    return ctx;
}

std::string series_csv(const std::string& name, const std::vector<float>& series) {
    std::string out = "epoch," + name + "\n";
    for (std::size_t e = 0; e < series.size(); ++e)
        out += std::to_string(e + 1) + "," + fmt_fixed(series[e], 6) + "\n";
    return out;
}

// First 1-based epoch whose value reaches 99% of the series' best.
int epoch_reaching_best(const std::vector<float>& series) {
    if (series.empty()) return 0;
    const float best = *std::max_element(series.begin(), series.end());
    const float threshold = 0.99f * best;
    for (std::size_t e = 0; e < series.size(); ++e)
        if (series[e] >= threshold) return static_cast<int>(e) + 1;
    return static_cast<int>(series.size());
}

}  // namespace

double evaluate_masked_accuracy(EncoderModel& model, const Tokenizer& tokenizer,
                                const std::vector<std::string>& docs, double val_fraction,
                                std::uint64_t seed, const DistillPlan& plan) {
    const Corpus corpus = encode_corpus(tokenizer, docs);
    const CorpusSplit split = split_corpus(corpus, val_fraction, derive_seed(seed, "split"));
    const Corpus& eval = split.validation.docs.empty() ? split.train : split.validation;
    const std::vector<int> stream = pack_corpus(eval, plan.seq_len);
    const int rows = static_cast<int>(stream.size()) / plan.seq_len;
    if (rows == 0) throw DataError("evaluate: corpus is shorter than one sequence");
    Rng rng(derive_seed(seed, "mask-eval"));
    double correct = 0.0;
    std::int64_t total = 0;
    for (int row0 = 0; row0 < rows; row0 += plan.batch_size) {
        const int b = std::min(plan.batch_size, rows - row0);
        const auto first = stream.begin() + static_cast<std::ptrdiff_t>(row0) * plan.seq_len;
        std::vector<int> ids(first, first + static_cast<std::ptrdiff_t>(b) * plan.seq_len);
        MaskedBatch mb = apply_masking(ids, b, plan.seq_len, plan.mask_rate, tokenizer.vocab_size(), rng);
        std::int64_t count = 0;
        for (std::uint8_t m : mb.mask) count += m;
        if (count == 0) continue;
        TokenBatch batch{mb.input_ids, b, plan.seq_len, {}};
        const Tensor logits = forward(model, batch);
        correct += masked_accuracy(logits, mb) * static_cast<double>(count);
        total += count;
    }
    return total == 0 ? 0.0 : correct / static_cast<double>(total);
}

AblationResult run_ablation(const std::string& preset, const PipelineConfig& config,
                            const fs::path& out_dir) {
    const auto& names = ablation_preset_names();
    if (std::find(names.begin(), names.end(), preset) == names.end()) {
        std::string valid;
        for (const std::string& n : names) valid += (valid.empty() ? "" : ", ") + n;
        throw ConfigError("unknown ablation preset '" + preset + "'; valid presets: " + valid);
    }

    const fs::path reports_dir = out_dir / "reports";
    const fs::path traces_dir = out_dir / "traces";
    fs::create_directories(reports_dir);
    fs::create_directories(traces_dir);

    AblationResult result;
    result.preset = preset;
    result.series_name = "val_masked_acc";
    std::vector<std::string> arm_traces;  // CSV text per arm, written below

    AblationContext ctx = make_ablation_context(config);

    const auto distill_arm = [&](const std::string& name, const DistillPlan& plan,
                                 EncoderModel student) {
        TrainingTrace trace = train_distill(student, ctx.teacher, ctx.split.train, ctx.split.validation, plan);
        AblationArm arm;
        arm.name = name;
        arm.series = trace.val_masked_acc;
        arm.params = param_count(student.config);
        arm.final_metric = arm.series.empty() ? 0.0 : arm.series.back();
        result.arms.push_back(std::move(arm));
        arm_traces.push_back(trace.to_csv());
    };

    if (preset == "init-strategies") {
        const InitStrategy strategies[] = {InitStrategy::kFirstK, InitStrategy::kLastK, InitStrategy::kStride,
                                           InitStrategy::kFirstLast, InitStrategy::kRandom};
        for (std::size_t a = 0; a < std::size(strategies); ++a) {
            DistillPlan plan = ctx.student_plan;
            plan.seed = config.seed + a;
            plan.init_strategy = strategies[a];
            EncoderModel student =
                init_student(ctx.teacher, strategies[a], ctx.student_k, derive_seed(plan.seed, "init"));
            distill_arm(to_string(strategies[a]), plan, std::move(student));
        }
    } else if (preset == "mse-vs-kl") {
        const LossKind kinds[] = {LossKind::kMse, LossKind::kKl};
        for (std::size_t a = 0; a < std::size(kinds); ++a) {
            DistillPlan plan = ctx.student_plan;
            plan.seed = config.seed + a;
            plan.loss_kind = kinds[a];
            plan.distill_enabled = true;
            EncoderModel student = init_student(ctx.teacher, plan.init_strategy, ctx.student_k,
                                                derive_seed(plan.seed, "init"));
            distill_arm(to_string(kinds[a]), plan, std::move(student));
        }
        const std::vector<float>& mse = result.arms[0].series;
        const std::vector<float>& kl = result.arms[1].series;
        const int mse_epoch = epoch_reaching_best(mse);
        const int kl_epoch = epoch_reaching_best(kl);
        const bool faster = mse_epoch < kl_epoch ||
                            (mse_epoch == kl_epoch &&
                             result.arms[0].final_metric >= result.arms[1].final_metric);
        result.note = "mse reached 99% of its best validation accuracy at epoch " +
                      std::to_string(mse_epoch) + " (final " + fmt_fixed(result.arms[0].final_metric, 4) +
                      "); kl at epoch " + std::to_string(kl_epoch) + " (final " +
                      fmt_fixed(result.arms[1].final_metric, 4) + "). mse converges faster: " +
                      (faster ? "yes" : "no") + ".";
    } else if (preset == "alpha-sweep") {
        const float alphas[] = {0.2f, 0.4f, 0.5f, 0.6f, 0.8f};
        for (std::size_t a = 0; a < std::size(alphas); ++a) {
            DistillPlan plan = ctx.student_plan;
            plan.seed = config.seed + a;
            plan.alpha = alphas[a];
            plan.distill_enabled = true;
            EncoderModel student = init_student(ctx.teacher, plan.init_strategy, ctx.student_k,
                                                derive_seed(plan.seed, "init"));
            distill_arm("alpha=" + fmt_fixed(alphas[a], 1), plan, std::move(student));
        }
    } else if (preset == "svd-vs-trunc") {
        const int k = ctx.hidden_k;
        if (k < 1 || k >= ctx.cfg.hidden_size || k % ctx.cfg.num_heads != 0)
            throw ConfigError("svd-vs-trunc: no valid reduced hidden size for this model");
        for (std::size_t a = 0; a < 2; ++a) {
            DistillPlan plan = ctx.hidden_plan;
            plan.seed = config.seed + a;
            EncoderModel student = a == 0 ? truncate_hidden(ctx.teacher, k) : svd_reduce(ctx.teacher, k);
            distill_arm(a == 0 ? "truncate" : "svd", plan, std::move(student));
        }
    } else if (preset == "vocab-sweep") {
        result.series_name = "val_masked_acc_after_trim";
        const int full = ctx.tokenizer.vocab_size();
        const int requested[] = {10000, 20000, 30000, 40000, full};
        const char* labels[] = {"10k", "20k", "30k", "40k", "full"};
        for (std::size_t a = 0; a < std::size(requested); ++a) {
            const int n = std::min(requested[a], full);
            const std::vector<int> kept = select_top_tokens(ctx.tokenizer, ctx.corpus, n);
            TrimmedModel trimmed = trim_vocab_model(ctx.teacher, ctx.tokenizer, kept);
            const double acc = evaluate_masked_accuracy(trimmed.model, trimmed.tokenizer, ctx.docs,
                                                        config.val_fraction, config.seed, ctx.student_plan);
            AblationArm arm;
            arm.name = labels[a];
            arm.series = {static_cast<float>(acc)};
            arm.params = param_count(trimmed.model.config);
            arm.final_metric = acc;
            result.arms.push_back(arm);
            arm_traces.push_back(series_csv(result.series_name, arm.series));
        }
    } else {  // adapter-r
        result.series_name = "dev_macro_f1";
        SyntheticSpec spec;
        spec.seed = config.seed;
        const SyntheticData data = generate_synthetic_corpus(spec);
        const TaskSplit<ClassificationExample> task =
            split_examples(data.topic_data, 0.15, 0.15, derive_seed(config.seed, "task-split"));
        const int factors[] = {2, 4, 8, 16};
        for (std::size_t a = 0; a < std::size(factors); ++a) {
            TaskHyperparams hp = default_task_hyperparams(TaskKind::kClassification);
            hp.seed = config.seed + a;
            const TaskResult trained =
                train_classification_adapter(ctx.teacher, ctx.tokenizer, task, data.num_topics, factors[a], hp);
            AblationArm arm;
            arm.name = "r=" + std::to_string(factors[a]);
            arm.series = trained.dev_history;
            arm.params = adapter_param_count(ctx.cfg, factors[a]);
            arm.final_metric = trained.test_metric;
            result.arms.push_back(std::move(arm));
            arm_traces.push_back(series_csv(result.series_name, result.arms.back().series));
        }
    }

    write_text(reports_dir / (preset + ".csv"), result.to_csv());
    write_text(reports_dir / (preset + "_summary.csv"), result.summary_csv());
    if (!result.note.empty()) write_text(reports_dir / (preset + ".txt"), result.note + "\n");
    for (std::size_t a = 0; a < result.arms.size(); ++a)
        write_text(traces_dir / (preset + "_" + result.arms[a].name + ".csv"), arm_traces[a]);
    return result;
}

// ---------------------------------------------------------------------------
// Parameter-count presets
// ---------------------------------------------------------------------------

const std::vector<std::string>& count_params_preset_names() {
    static const std::vector<std::string> names = {"xlmr-table1", "mbert-table11"};
    return names;
}

namespace {

std::vector<ParamRow> staged_param_rows(const ModelConfig& base) {
    const auto make = [](std::string stage, const ModelConfig& cfg) {
        return ParamRow{std::move(stage), cfg, param_count(cfg), 0.0};
    };
    std::vector<ParamRow> rows;
    rows.push_back(make("original", base));

    ModelConfig reduced = base;
    reduced.num_layers = 6;
    rows.push_back(make("layer-reduction", reduced));
    reduced.ffn_size = 2048;
    rows.push_back(make("ffn-pruning", reduced));

    for (const int hidden : {564, 456, 312}) {
        ModelConfig narrow = reduced;
        narrow.hidden_size = hidden;
        rows.push_back(make("hidden-" + std::to_string(hidden), narrow));
        ModelConfig trimmed = narrow;
        trimmed.vocab_size = 40000;
        rows.push_back(make("hidden-" + std::to_string(hidden) + "+vocab-40k", trimmed));
    }

    const double base_params = static_cast<double>(rows.front().params);
    for (ParamRow& row : rows)
        row.reduction_pct = 100.0 * (1.0 - static_cast<double>(row.params) / base_params);
    return rows;
}

}  // namespace

std::vector<ParamRow> count_params_preset(const std::string& preset) {
    ModelConfig base;
    base.num_layers = 12;
    base.hidden_size = 768;
    base.num_heads = 12;
    base.ffn_size = 3072;
    base.tie_output_projection = true;
    if (preset == "xlmr-table1") {
        base.vocab_size = 250002;
        base.max_positions = 514;
    } else if (preset == "mbert-table11") {
        base.vocab_size = 119547;
        base.max_positions = 512;
    } else {
        std::string valid;
        for (const std::string& n : count_params_preset_names())
            valid += (valid.empty() ? "" : ", ") + n;
        throw ConfigError("unknown count-params preset '" + preset + "'; valid presets: " + valid);
    }
    return staged_param_rows(base);
}

std::vector<ParamRow> param_rows_for_config(const ModelConfig& config) {
    config.validate();
    return {ParamRow{"model", config, param_count(config), 0.0}};
}

std::string param_table_csv(const std::vector<ParamRow>& rows) {
    std::string out = "stage,layers,hidden,heads,ffn,vocab,max_positions,params,reduction_pct\n";
    for (const ParamRow& r : rows) {
        out += r.stage + "," + std::to_string(r.config.num_layers) + "," +
               std::to_string(r.config.hidden_size) + "," + std::to_string(r.config.num_heads) + "," +
               std::to_string(r.config.ffn_size) + "," + std::to_string(r.config.vocab_size) + "," +
               std::to_string(r.config.max_positions) + "," + std::to_string(r.params) + "," +
               fmt_fixed(r.reduction_pct, 2) + "\n";
    }
    return out;
}

std::string param_table_text(const std::vector<ParamRow>& rows) {
    std::size_t width = 5;
    for (const ParamRow& r : rows) width = std::max(width, r.stage.size());
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(width) + 2) << "stage" << std::right << std::setw(14)
        << "params" << std::setw(12) << "reduction" << "\n";
    for (const ParamRow& r : rows) {
        out << std::left << std::setw(static_cast<int>(width) + 2) << r.stage << std::right << std::setw(14)
            << r.params << std::setw(12)
            << (&r == &rows.front() ? std::string("--") : "-" + fmt_fixed(r.reduction_pct, 2) + "%")
            << "\n";
    }
    return out.str();
}

}  // namespace shrinkpipe
