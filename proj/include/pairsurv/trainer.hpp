#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pairsurv/data.hpp"
#include "pairsurv/loss.hpp"
#include "pairsurv/metrics.hpp"
#include "pairsurv/model.hpp"

namespace pairsurv {

struct LrSchedule {
    double base = 1e-3;
    double tau = 1e4;
    // lr(i) = 1 / (1e-3 + i); starts near 1000, diverges on real data.
    bool literal = false;

    bool operator==(const LrSchedule&) const = default;
};

// base / (1 + i / tau), or the literal schedule when selected.
double lr_at(const LrSchedule& schedule, std::uint64_t iteration);

struct TrainConfig {
    std::size_t batch_size = 2048;
    std::uint64_t iterations = 10000;
    std::uint64_t eval_every = 500;
    LrSchedule lr;
    std::size_t hidden_layers = 2;
    std::size_t hidden_width = 40;
    double dropout_rate = 0.35;
    LossConfig loss;
    bool ipw = true;
    int num_intervals = 30;
    int folds = 5;
    std::size_t bootstrap_reps = 1000;
    double ci_level = 0.95;
    std::uint64_t seed = 0;
    // Folds trained concurrently; results do not depend on it.
    std::size_t threads = 1;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

inline constexpr std::uint64_t kFullIterationBudget = 100000;

// Structured-text (JSON) snapshot. Missing keys keep their defaults; unknown
// keys are rejected.
std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

struct EvalRecord {
    std::uint64_t iteration = 0;
    BatchLoss train_loss;  // mean over the iterations since the previous record
    std::vector<double> validation;  // per cause; NaN when undefined on the split
    double validation_mean = 0.0;
};

struct TrainHistory {
    std::vector<EvalRecord> records;
    std::optional<std::size_t> best;  // index into records
};

struct TrainResult {
    Model model;
    TrainHistory history;
};

// Trains on `split.train`, scores `split.validation` every eval_every
// iterations (and after the last one) and returns the parameters with the best
// mean validation C-index. Single-threaded and bit-reproducible under seed.
TrainResult train(const Dataset& dataset, const Split& split, const TrainConfig& config, std::uint64_t seed);

struct FoldResult {
    int fold = 0;
    TrainResult training;
    CtReport test;
};

struct AggregateRow {
    int cause = 0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    double numerator = 0.0;
    std::uint64_t denominator = 0;
};

struct CvResult {
    std::vector<Split> splits;
    std::vector<FoldResult> folds;
    std::vector<AggregateRow> aggregate;
};

CvResult run_cv(const Dataset& dataset, const TrainConfig& config);

std::vector<AggregateRow> aggregate_folds(const std::vector<FoldResult>& folds);

// Run directory: config.json, history.csv, report.csv, checkpoints/fold<k>.json.
void write_run_dir(const std::filesystem::path& dir, const Dataset& dataset, const TrainConfig& config,
                   const CvResult& result);

void write_history_csv(std::ostream& out, const std::vector<FoldResult>& folds, int num_causes);
// One row per (fold, cause) with bootstrap intervals, then `aggregate` rows
// whose lo/hi are the across-fold min/max.
void write_run_report_csv(std::ostream& out, const CvResult& result);

}  // namespace pairsurv
