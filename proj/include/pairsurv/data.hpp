#pragma once

// Discrete-time competing-risks datasets: CSV ingestion, mean/mode imputation,
// one-hot encoding, quantile time grids and stratified cross-validation splits.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pairsurv {

enum class FeatureKind { real, categorical };

struct FeatureColumn {
    std::string name;
    FeatureKind kind = FeatureKind::real;

    bool operator==(const FeatureColumn&) const = default;
};

using FeatureSchema = std::vector<FeatureColumn>;

// Schema sidecar: one `name:kind` entry per line, kind in {real, categorical}.
// Blank lines and lines starting with '#' are ignored.
FeatureSchema parse_schema(std::istream& in);
FeatureSchema load_schema(const std::filesystem::path& path);
void write_schema(std::ostream& out, const FeatureSchema& schema);

// One covariate column before imputation. Categorical cells hold a level code
// (index into `levels`); levels are ordered numerically when every level parses
// as a number, lexicographically otherwise.
struct RawColumn {
    FeatureColumn spec;
    std::vector<std::optional<double>> cells;
    std::vector<std::string> levels;

    bool operator==(const RawColumn&) const = default;
};

struct RawTable {
    std::vector<double> times;
    std::vector<int> events;
    std::vector<RawColumn> columns;

    std::size_t rows() const noexcept { return times.size(); }
    bool operator==(const RawTable&) const = default;
};

// Parses `time,event,<covariates...>`. With max_cause set, events above it are
// rejected; otherwise any nonnegative label is accepted. Empty cells are
// recorded as missing. Errors name the 1-based data row and the column.
RawTable load_csv(std::istream& in, const FeatureSchema& schema, std::optional<int> max_cause = std::nullopt);
RawTable load_csv(const std::filesystem::path& path, const FeatureSchema& schema,
                  std::optional<int> max_cause = std::nullopt);

// Mean fill for real columns, mode fill (smallest code on ties) for categorical.
RawTable impute(const RawTable& raw);

// Flat real covariates: reals as-is, categoricals one-hot over their levels.
struct EncodedCovariates {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<double> values;  // row-major rows x dim
    std::vector<std::string> names;
};
EncodedCovariates encode(const RawTable& complete);

class TimeGrid {
public:
    TimeGrid() = default;
    explicit TimeGrid(std::vector<double> boundaries);

    std::size_t size() const noexcept { return boundaries_.size(); }
    const std::vector<double>& boundaries() const noexcept { return boundaries_; }
    double operator[](std::size_t k) const { return boundaries_[k]; }
    // Smallest k with boundaries[k] >= t, clamped to the last index; grid cell
    // k covers (boundaries[k-1], boundaries[k]].
    int index_of(double t) const;

    bool operator==(const TimeGrid&) const = default;

private:
    std::vector<double> boundaries_;
};

struct Discretization {
    TimeGrid grid;
    std::vector<int> time_index;
    std::vector<std::string> warnings;
};

// Grid from the empirical quantiles at levels j/(K-1), first boundary forced to
// 0, duplicate boundaries collapsed.
Discretization discretize(std::span<const double> times, int num_intervals);

struct Subject {
    std::vector<double> covariates;
    int time_index = 0;
    int event = 0;  // 0 = censored, 1..M = cause
};

struct Dataset {
    std::vector<Subject> subjects;
    TimeGrid grid;
    FeatureSchema schema;
    std::vector<std::string> covariate_names;
    int num_causes = 1;

    std::size_t size() const noexcept { return subjects.size(); }
    std::size_t covariate_dim() const noexcept { return subjects.empty() ? covariate_names.size() : subjects[0].covariates.size(); }
    std::size_t num_intervals() const noexcept { return grid.size(); }
};

// impute -> encode -> discretize. num_causes defaults to the largest label seen.
Dataset build_dataset(const RawTable& raw, const FeatureSchema& schema, int num_intervals,
                      std::optional<int> num_causes = std::nullopt, std::vector<std::string>* warnings = nullptr);

// Same pipeline but mapping times onto an existing grid.
Dataset build_dataset_on_grid(const RawTable& raw, const FeatureSchema& schema, const TimeGrid& grid, int num_causes);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

// Per event label: shuffle by seed, deal round-robin into `folds` groups (the
// deal position carries across labels). Fold f tests on group f, validates on
// group f+1 and trains on the rest.
std::vector<Split> stratified_split(std::span<const int> events, int folds, std::uint64_t seed);
std::vector<Split> stratified_split(const Dataset& dataset, int folds, std::uint64_t seed);

}  // namespace pairsurv
