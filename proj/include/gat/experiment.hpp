#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gat/data.hpp"
#include "gat/metrics.hpp"
#include "gat/train.hpp"
#include "json.hpp"

namespace gat {

const std::vector<std::string>& preset_names();

// One trained model of a preset.
struct Variant {
    std::string name;
    TrainMode mode = TrainMode::gat;
    std::vector<std::string> auxiliary;  // auxiliary task preset names
    TrainConfig config;
    double data_fraction = 1.0;  // of the training split, stratified
};

struct ExperimentOptions {
    std::string preset;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    TrainConfig base;              // before preset-specific changes
    nlohmann::json overrides;      // merged into every variant config last
    std::vector<std::size_t> hidden{128, 64};
    SyntheticOptions data;         // used unless corpus_path is set
    std::optional<std::filesystem::path> corpus_path;
    std::filesystem::path out_root = "runs";
    std::string timestamp;         // empty: current UTC time
    // Explicit experiment directory, e.g. to resume; overrides out_root/preset/timestamp.
    std::optional<std::filesystem::path> dir;
    std::size_t threads = 1;
    bool save_models = true;
};

std::vector<Variant> preset_variants(const ExperimentOptions& options);

struct RunRow {
    std::string variant;
    std::uint64_t seed = 0;
    std::string mode;
    std::string tasks;  // '+'-joined task names
    double data_fraction = 1.0;
    std::size_t train_count = 0;
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    std::optional<double> clean_auc;
    std::optional<double> robust_auc;
    double vulnerability = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    // Input-gradient measures between the target and auxiliary heads on the
    // test split, averaged per batch; absent for single-task models.
    std::optional<PairMetrics> gradient_metrics;
    std::vector<bool> robust_correct;  // per test sample, for McNemar
    nlohmann::json epochs;             // EpochRecord list
    double seconds = 0.0;              // wall clock; kept out of runs.csv
};

nlohmann::json to_json(const RunRow& row);
RunRow run_row_from_json(const nlohmann::json& j);

struct AggregateRow {
    std::string variant;
    std::size_t runs = 0;
    double clean_mean = 0.0, clean_std = 0.0;
    double robust_mean = 0.0, robust_std = 0.0;
    double vulnerability_mean = 0.0, vulnerability_std = 0.0;
};

// Mean and sample standard deviation (0 for a single run) per variant, in
// first-appearance order.
std::vector<AggregateRow> aggregate(const std::vector<RunRow>& rows);

struct TransferCell {
    std::uint64_t seed = 0;
    std::string surrogate;
    std::string target;
    double success_rate = 0.0;  // 1 - robust accuracy of target on surrogate-crafted inputs
};

struct ExperimentResult {
    std::filesystem::path dir;
    std::vector<RunRow> rows;
    std::vector<AggregateRow> aggregates;
    std::vector<TransferCell> transfer;
    std::map<std::string, PearsonResult> correlation;  // metric -> r against robust accuracy
};

// Runs every (variant, seed) pair and writes runs.csv, aggregate.csv, report.md
// and manifest.json (last) under out_root/preset/timestamp. Completed runs are
// journaled; calling again with the same directory resumes.
ExperimentResult run_experiment(const ExperimentOptions& options);

// Rebuilds report.md from an experiment directory's journal and returns it.
std::string render_report(const std::filesystem::path& dir);

// Input-gradient pair measures between the target and every enabled auxiliary
// head, averaged over batches of `ids`. Batches where some head's gradient is
// exactly zero are skipped; nullopt if that leaves none.
std::optional<PairMetrics> input_gradient_metrics(const MultiTaskModel& model, const LabeledCorpus& corpus,
                                   std::span<const std::size_t> ids, std::uint64_t pool_seed, std::uint64_t seed,
                                   std::size_t batch_size = 100);

std::string runs_csv(const std::vector<RunRow>& rows);
std::string aggregate_csv(const std::vector<AggregateRow>& rows);

}  // namespace gat
