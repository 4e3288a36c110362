// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Every subcommand is a thin wrapper over the
// library; exit codes distinguish config (2), data (3), numeric (4), and
// I/O (5) failures.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "shrinkpipe/adapters.hpp"
#include "shrinkpipe/checkpoint.hpp"
#include "shrinkpipe/compress.hpp"
#include "shrinkpipe/corpus.hpp"
#include "shrinkpipe/distill.hpp"
#include "shrinkpipe/errors.hpp"
#include "shrinkpipe/model.hpp"
#include "shrinkpipe/pipeline.hpp"
#include "shrinkpipe/rng.hpp"
#include "shrinkpipe/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace shrinkpipe;

namespace {

struct CommonOpts {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool has_seed = false;
};

PipelineConfig load_overridden_config(const CommonOpts& o) {
    PipelineConfig cfg = load_pipeline_config(o.config);
    if (o.has_seed) cfg.seed = o.seed;
    if (!o.out.empty()) cfg.out_dir = o.out;
    return cfg;
}

const StageConfig* find_stage(const PipelineConfig& cfg, StageKind kind) {
    for (const StageConfig& s : cfg.stages)
        if (s.kind == kind) return &s;
    return nullptr;
}

DistillPlan stage_plan(const PipelineConfig& cfg, StageKind kind) {
    const StageConfig* s = find_stage(cfg, kind);
    return s != nullptr ? s->plan : DistillPlan{};
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct PreparedData {
    ModelConfig model_config;
    Corpus corpus;
    CorpusSplit split;
};

// Reads the configured corpus and splits it; tokenizer is caller-supplied
// so checkpointed vocabularies stay authoritative.
PreparedData prepare_data(const PipelineConfig& cfg, const Tokenizer& tokenizer) {
    PreparedData data;
    data.model_config = cfg.model;
    data.model_config.vocab_size = tokenizer.vocab_size();
    const std::vector<std::string> docs = read_document_lines(cfg.corpus_path);
    data.corpus = encode_corpus(tokenizer, docs);
    data.split = split_corpus(data.corpus, cfg.val_fraction, derive_seed(cfg.seed, "split"));
    return data;
}

float final_val_acc(const TrainingTrace& trace) {
    return trace.val_masked_acc.empty() ? 0.0f : trace.val_masked_acc.back();
}

void run_teacher(const CommonOpts& o) {
    const PipelineConfig cfg = load_overridden_config(o);
    cfg.model.validate();
    if (cfg.corpus_path.empty()) throw ConfigError("teacher: config needs a corpus path");
    const std::vector<std::string> docs = read_document_lines(cfg.corpus_path);
    Tokenizer tokenizer = Tokenizer::build(docs, cfg.model.vocab_size);
    PreparedData data = prepare_data(cfg, tokenizer);
    data.model_config.validate();

    EncoderModel model = EncoderModel::random_init(data.model_config, derive_seed(cfg.seed, "init"));
    DistillPlan plan = stage_plan(cfg, StageKind::kTeacherFinetune);
    plan.seed = derive_seed(cfg.seed, "teacher");
    plan.validate();
    const TrainingTrace trace = mlm_finetune_teacher(model, data.split.train, data.split.validation, plan);

    const fs::path out(cfg.out_dir);
    const fs::path ckpt = out / "checkpoints" / "teacher";
    save_checkpoint(model, tokenizer, ckpt);
    write_text_file(out / "traces" / "teacher.csv", trace.to_csv());
    std::cout << "teacher: params " << model.actual_param_count() << ", final val masked accuracy "
              << final_val_acc(trace) << "\ncheckpoint: " << ckpt.string() << "\n";
}

struct DistillOpts : CommonOpts {
    std::string teacher;
    std::string strategy;
    int k = 0;
};

void run_distill(const DistillOpts& o) {
    const PipelineConfig cfg = load_overridden_config(o);
    LoadedCheckpoint teacher = load_checkpoint(o.teacher);
    const PreparedData data = prepare_data(cfg, teacher.tokenizer);

    DistillPlan plan = stage_plan(cfg, StageKind::kLayerKd);
    const StageConfig* lk = find_stage(cfg, StageKind::kLayerKd);
    const int k = o.k > 0 ? o.k
                          : (lk != nullptr && lk->k > 0 ? lk->k
                                                        : std::max(1, teacher.model.config.num_layers / 2));
    if (!o.strategy.empty()) plan.init_strategy = init_strategy_from_string(o.strategy);
    plan.seed = derive_seed(cfg.seed, "distill");
    plan.validate();

    EncoderModel student =
        init_student(teacher.model, plan.init_strategy, k, derive_seed(plan.seed, "init"));
    const TrainingTrace trace =
        train_distill(student, teacher.model, data.split.train, data.split.validation, plan);

    const fs::path out(cfg.out_dir);
    const fs::path ckpt = out / "checkpoints" / "student";
    save_checkpoint(student, teacher.tokenizer, ckpt);
    write_text_file(out / "traces" / "distill.csv", trace.to_csv());
    std::cout << "student: " << to_string(plan.init_strategy) << " init, " << k << " layers, params "
              << student.actual_param_count() << ", final val masked accuracy " << final_val_acc(trace)
              << "\ncheckpoint: " << ckpt.string() << "\n";
}

struct PruneOpts : CommonOpts {
    std::string checkpoint;
    int target_ffn = 0;
    int batches = 8;
};

void run_prune(const PruneOpts& o) {
    const PipelineConfig cfg = load_overridden_config(o);
    LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);
    const PreparedData data = prepare_data(cfg, loaded.tokenizer);

    DistillPlan plan = stage_plan(cfg, StageKind::kFfnPrune);
    plan.seed = derive_seed(cfg.seed, "prune");
    plan.validate();
    const Corpus& eval_corpus =
        data.split.validation.docs.empty() ? data.split.train : data.split.validation;
    const NeuronImportance importance =
        accumulate_importance(loaded.model, eval_corpus, o.batches, plan);
    EncoderModel pruned = prune_ffn(loaded.model, importance, o.target_ffn);

    const fs::path ckpt = fs::path(cfg.out_dir) / "checkpoints" / "pruned";
    save_checkpoint(pruned, loaded.tokenizer, ckpt);
    std::cout << "pruned ffn " << loaded.model.config.ffn_size << " -> " << pruned.config.ffn_size
              << ", params " << param_count(loaded.model.config) << " -> " << param_count(pruned.config)
              << "\ncheckpoint: " << ckpt.string() << "\n";
}

struct TruncateOpts {
    std::string checkpoint;
    std::string method = "truncate";
    std::string out = "runs/cli";
    int k = 0;
};

void run_truncate(const TruncateOpts& o) {
    if (o.method != "truncate" && o.method != "svd")
        throw ConfigError("truncate: --method must be \"truncate\" or \"svd\"");
    LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);
    EncoderModel reduced =
        o.method == "svd" ? svd_reduce(loaded.model, o.k) : truncate_hidden(loaded.model, o.k);
    const fs::path ckpt = fs::path(o.out) / "checkpoints" / "truncated";
    save_checkpoint(reduced, loaded.tokenizer, ckpt);
    std::cout << "hidden " << loaded.model.config.hidden_size << " -> " << reduced.config.hidden_size
              << " (" << o.method << "), params " << param_count(loaded.model.config) << " -> "
              << param_count(reduced.config) << "\ncheckpoint: " << ckpt.string() << "\n";
}

struct TrimOpts : CommonOpts {
    std::string checkpoint;
    int vocab = 0;
};

void run_trim(const TrimOpts& o) {
    const PipelineConfig cfg = load_overridden_config(o);
    LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);
    const PreparedData data = prepare_data(cfg, loaded.tokenizer);

    const std::vector<int> kept = select_top_tokens(loaded.tokenizer, data.corpus, o.vocab);
    TrimmedModel trimmed = trim_vocab_model(loaded.model, loaded.tokenizer, kept);

    const fs::path ckpt = fs::path(cfg.out_dir) / "checkpoints" / "trimmed";
    save_checkpoint(trimmed.model, trimmed.tokenizer, ckpt);
    std::cout << "vocab " << loaded.model.config.vocab_size << " -> " << trimmed.model.config.vocab_size
              << ", params " << param_count(loaded.model.config) << " -> "
              << param_count(trimmed.model.config) << "\ncheckpoint: " << ckpt.string() << "\n";
}

struct AdapterOpts {
    std::string checkpoint;
    std::string task = "classification";
    std::string out = "runs/cli";
    int r = 16;
    int epochs = 5;
    int max_len = 0;       // 0: task default, capped at the checkpoint's positions
    int batch_size = 0;    // 0: task default
    float learning_rate = 0.0f;  // 0: task default
    std::uint64_t seed = 1;
};

void run_adapter(const AdapterOpts& o) {
    if (o.task != "classification" && o.task != "tagging")
        throw ConfigError("adapter: --task must be \"classification\" or \"tagging\"");
    LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);

    SyntheticSpec spec;
    spec.seed = o.seed;
    const SyntheticData data = generate_synthetic_corpus(spec);

    const auto fill = [&](TaskHyperparams hp) {
        hp.seed = o.seed;
        hp.epochs = o.epochs;
        if (o.batch_size > 0) hp.batch_size = o.batch_size;
        if (o.learning_rate > 0.0f) hp.learning_rate = o.learning_rate;
        if (o.max_len > 0)
            hp.max_len = o.max_len;
        else
            hp.max_len = std::min(hp.max_len, loaded.model.config.max_positions);
        return hp;
    };

    TaskResult result;
    std::string metric;
    if (o.task == "classification") {
        const TaskHyperparams hp = fill(default_task_hyperparams(TaskKind::kClassification));
        const TaskSplit<ClassificationExample> split =
            split_examples(data.topic_data, 0.15, 0.15, derive_seed(o.seed, "task-split"));
        result = train_classification_adapter(loaded.model, loaded.tokenizer, split, data.num_topics,
                                              o.r, hp);
        metric = "macro-F1";
    } else {
        const TaskHyperparams hp = fill(default_task_hyperparams(TaskKind::kTagging));
        const TaskSplit<TaggingExample> split =
            split_examples(data.tagging_data, 0.15, 0.15, derive_seed(o.seed, "task-split"));
        result = train_tagging_adapter(loaded.model, loaded.tokenizer, split, data.tag_names, o.r, hp);
        metric = "span-F1";
    }

    std::string trace = "epoch,dev_" + metric + "\n";
    for (std::size_t e = 0; e < result.dev_history.size(); ++e)
        trace += std::to_string(e + 1) + "," + std::to_string(result.dev_history[e]) + "\n";
    write_text_file(fs::path(o.out) / "traces" / ("adapter_" + o.task + ".csv"), trace);

    std::cout << "adapter r=" << o.r << " (" << o.task << "): " << adapter_actual_param_count(result.adapter)
              << " adapter params, dev " << metric << " " << result.dev_metric << ", test " << metric
              << " " << result.test_metric << "\n";
}

struct EvalOpts : CommonOpts {
    std::string checkpoint;
};

void run_eval(const EvalOpts& o) {
    const PipelineConfig cfg = load_overridden_config(o);
    LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);
    DistillPlan plan = stage_plan(cfg, StageKind::kTeacherFinetune);
    plan.validate();
    const double acc = evaluate_masked_accuracy(loaded.model, loaded.tokenizer,
                                                read_document_lines(cfg.corpus_path), cfg.val_fraction,
                                                cfg.seed, plan);
    std::cout << "masked validation accuracy: " << acc << "\n";
}

struct PipelineOpts : CommonOpts {
    std::string stage;
    std::string preset;
};

void run_pipeline_cmd(const PipelineOpts& o) {
    if (!o.preset.empty()) {
        const std::vector<ParamRow> rows = count_params_preset(o.preset);
        std::cout << param_table_text(rows);
        if (!o.out.empty())
            write_text_file(fs::path(o.out) / "reports" / (o.preset + ".csv"), param_table_csv(rows));
        return;
    }
    if (o.config.empty()) throw ConfigError("pipeline: either --config or --preset is required");
    const PipelineConfig cfg = load_overridden_config(o);
    const PipelineResult result = run_pipeline(cfg, cfg.out_dir, o.stage);
    std::cout << result.report.to_table() << "report: " << result.report_csv.string() << "\n";
}

struct AblateOpts : CommonOpts {
    std::string preset;
};

void run_ablate(const AblateOpts& o) {
    const PipelineConfig cfg = load_overridden_config(o);
    const AblationResult result = run_ablation(o.preset, cfg, cfg.out_dir);
    std::cout << result.summary_csv();
    if (!result.note.empty()) std::cout << result.note << "\n";
}

struct CountOpts {
    std::string preset;
    std::string config;
    std::string checkpoint;
    std::string out;
};

void run_count(const CountOpts& o) {
    std::vector<ParamRow> rows;
    if (!o.preset.empty()) {
        rows = count_params_preset(o.preset);
    } else if (!o.config.empty()) {
        rows = param_rows_for_config(parse_model_config(read_text_file(o.config)));
    } else if (!o.checkpoint.empty()) {
        rows = param_rows_for_config(parse_model_config(read_text_file(fs::path(o.checkpoint) / "config.json")));
    } else {
        throw ConfigError("count-params: one of --preset, --config, --checkpoint is required");
    }
    std::cout << param_table_text(rows);
    if (!o.out.empty())
        write_text_file(fs::path(o.out) / "reports" / "count-params.csv", param_table_csv(rows));
}

void run_report(const CommonOpts& o) {
    const PipelineConfig cfg = load_overridden_config(o);
    const PipelineResult result = rebuild_report(cfg, cfg.out_dir);
    std::cout << result.report.to_table() << "report: " << result.report_csv.string() << "\n";
}

void add_common(CLI::App* cmd, CommonOpts* o, bool config_required = true) {
    CLI::Option* config = cmd->add_option("--config", o->config, "Pipeline config JSON file");
    if (config_required) config->required();
    cmd->add_option("--out", o->out, "Output directory (overrides the config)");
    CLI::Option* seed = cmd->add_option("--seed", o->seed, "Seed (overrides the config)");
    cmd->parse_complete_callback([o, seed] { o->has_seed = seed->count() > 0; });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shrinkpipe: transformer-encoder compression pipeline"};
    app.require_subcommand(1);

    auto teacher = std::make_shared<CommonOpts>();
    {
        CLI::App* cmd = app.add_subcommand("teacher", "Train an MLM teacher from scratch on the corpus");
        add_common(cmd, teacher.get());
        cmd->callback([teacher] { run_teacher(*teacher); });
    }

    auto distill = std::make_shared<DistillOpts>();
    {
        CLI::App* cmd = app.add_subcommand("distill", "Distill a teacher checkpoint into a shallower student");
        add_common(cmd, distill.get());
        cmd->add_option("--teacher", distill->teacher, "Teacher checkpoint directory")->required();
        cmd->add_option("--k", distill->k, "Student layer count");
        cmd->add_option("--strategy", distill->strategy,
                        "Init strategy: first-k | last-k | stride | first+last | random");
        cmd->callback([distill] { run_distill(*distill); });
    }

    auto prune = std::make_shared<PruneOpts>();
    {
        CLI::App* cmd = app.add_subcommand("prune", "Structured FFN pruning by gradient importance");
        add_common(cmd, prune.get());
        cmd->add_option("--checkpoint", prune->checkpoint, "Model checkpoint directory")->required();
        cmd->add_option("--target-ffn", prune->target_ffn, "Neurons to keep per layer")->required();
        cmd->add_option("--batches", prune->batches, "Importance accumulation batches");
        cmd->callback([prune] { run_prune(*prune); });
    }

    auto truncate = std::make_shared<TruncateOpts>();
    {
        CLI::App* cmd = app.add_subcommand("truncate", "Reduce the hidden size of a checkpoint");
        cmd->add_option("--checkpoint", truncate->checkpoint, "Model checkpoint directory")->required();
        cmd->add_option("--k", truncate->k, "New hidden size")->required();
        cmd->add_option("--method", truncate->method, "truncate | svd");
        cmd->add_option("--out", truncate->out, "Output directory");
        cmd->callback([truncate] { run_truncate(*truncate); });
    }

    auto trim = std::make_shared<TrimOpts>();
    {
        CLI::App* cmd = app.add_subcommand("trim-vocab", "Trim the vocabulary to the top-n corpus tokens");
        add_common(cmd, trim.get());
        cmd->add_option("--checkpoint", trim->checkpoint, "Model checkpoint directory")->required();
        cmd->add_option("--vocab", trim->vocab, "Kept vocabulary size including specials")->required();
        cmd->callback([trim] { run_trim(*trim); });
    }

    auto adapter = std::make_shared<AdapterOpts>();
    {
        CLI::App* cmd = app.add_subcommand(
            "adapter", "Train a bottleneck adapter on the synthetic downstream task (frozen backbone)");
        cmd->add_option("--checkpoint", adapter->checkpoint, "Backbone checkpoint directory")->required();
        cmd->add_option("--task", adapter->task, "classification | tagging");
        cmd->add_option("--r", adapter->r, "Reduction factor (bottleneck = hidden/r)");
        cmd->add_option("--epochs", adapter->epochs, "Training epochs");
        cmd->add_option("--max-len", adapter->max_len, "Sequence length (default: task default, capped at positions)");
        cmd->add_option("--batch-size", adapter->batch_size, "Batch size (default: task default)");
        cmd->add_option("--lr", adapter->learning_rate, "Learning rate (default: task default)");
        cmd->add_option("--seed", adapter->seed, "Seed for data and initialization");
        cmd->add_option("--out", adapter->out, "Output directory");
        cmd->callback([adapter] { run_adapter(*adapter); });
    }

    auto eval = std::make_shared<EvalOpts>();
    {
        CLI::App* cmd = app.add_subcommand("eval", "Masked-LM validation accuracy of a checkpoint");
        add_common(cmd, eval.get());
        cmd->add_option("--checkpoint", eval->checkpoint, "Model checkpoint directory")->required();
        cmd->callback([eval] { run_eval(*eval); });
    }

    auto pipeline = std::make_shared<PipelineOpts>();
    {
        CLI::App* cmd = app.add_subcommand("pipeline", "Run the staged compression pipeline");
        add_common(cmd, pipeline.get(), /*config_required=*/false);
        cmd->add_option("--stage", pipeline->stage, "Resume from this configured stage");
        cmd->add_option("--preset", pipeline->preset,
                        "Emit a metadata-only stage table: xlmr-table1 | mbert-table11");
        cmd->callback([pipeline] { run_pipeline_cmd(*pipeline); });
    }

    auto ablate = std::make_shared<AblateOpts>();
    {
        CLI::App* cmd = app.add_subcommand("ablate", "Run an ablation preset");
        add_common(cmd, ablate.get());
        cmd->add_option("--preset", ablate->preset,
                        "init-strategies | mse-vs-kl | alpha-sweep | svd-vs-trunc | vocab-sweep | adapter-r")
            ->required();
        cmd->callback([ablate] { run_ablate(*ablate); });
    }

    auto count = std::make_shared<CountOpts>();
    {
        CLI::App* cmd = app.add_subcommand("count-params", "Exact parameter counts from metadata only");
        cmd->add_option("--preset", count->preset, "xlmr-table1 | mbert-table11");
        cmd->add_option("--config", count->config, "Model or pipeline config JSON file");
        cmd->add_option("--checkpoint", count->checkpoint, "Checkpoint directory");
        cmd->add_option("--out", count->out, "Also write the CSV under this directory");
        cmd->callback([count] { run_count(*count); });
    }

    auto report = std::make_shared<CommonOpts>();
    {
        CLI::App* cmd = app.add_subcommand("report", "Rebuild the pipeline report from stage metrics");
        add_common(cmd, report.get());
        cmd->callback([report] { run_report(*report); });
    }

    try {
        app.parse(argc, argv);
        return exit_code::ok;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_code::ok : exit_code::config;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return exit_code::numeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return exit_code::io;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_code::data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
