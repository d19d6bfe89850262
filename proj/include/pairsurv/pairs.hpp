#pragma once

// Comparable pair sets: (i, j) belongs to cause m when D_i = m and subject j's
// grid time is strictly later than subject i's. Censored or other-cause
// subjects may appear on the right.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pairsurv/data.hpp"
#include "pairsurv/numcore.hpp"

namespace pairsurv {

struct ComparablePair {
    std::size_t left = 0;
    std::size_t right = 0;
    int cause = 0;
    double weight = 1.0;

    bool operator==(const ComparablePair&) const = default;
};

// Explicit pair list sorted by (left time index, left id, right id). Intended for
// small datasets; training uses PairIndex, which never materializes the pairs.
std::vector<ComparablePair> build_comparable_set(const Dataset& dataset, int cause);
std::vector<ComparablePair> build_comparable_set(const Dataset& dataset, std::span<const std::size_t> members,
                                                 int cause);

// Implicit pooled pair set over a subset of subjects. Members are kept sorted by
// (time index, id); the right partners of a left subject at grid index k form
// the suffix of members with time index > k, so storage is O(members).
//
// Flat pair order: cause, then left (time index, id), then right (time index, id).
class PairIndex {
public:
    PairIndex() = default;
    explicit PairIndex(const Dataset& dataset);
    PairIndex(const Dataset& dataset, std::span<const std::size_t> members);

    int num_causes() const noexcept { return num_causes_; }
    int num_intervals() const noexcept { return num_intervals_; }

    std::uint64_t size() const noexcept { return cause_offset_.empty() ? 0 : cause_offset_.back(); }
    std::uint64_t size(int cause) const;
    // Number of pairs whose left member has the given cause and grid index.
    std::uint64_t count(int cause, int k) const;
    double weight(int cause, int k) const;
    std::size_t occupied_cells() const;

    ComparablePair at(std::uint64_t flat) const;
    std::vector<ComparablePair> pairs(int cause) const;

private:
    friend PairIndex ipw_weights(PairIndex index);

    struct Left {
        std::size_t id;
        int k;
        std::uint64_t first;  // flat position of this subject's first pair
    };

    std::size_t cell(int cause, int k) const;

    int num_causes_ = 0;
    int num_intervals_ = 0;
    std::vector<std::size_t> by_time_;
    std::vector<std::size_t> later_start_;  // per k: first position in by_time_ with time index > k
    std::vector<Left> lefts_;
    std::vector<int> left_cause_;
    std::vector<std::uint64_t> cause_offset_;  // flat start per cause, plus the total
    std::vector<std::uint64_t> counts_;        // (cause-1) * K + k
    std::vector<double> weights_;
};

// Inverse-propensity weights: a pair in cell (m, k) gets total / count(m, k),
// the reciprocal of the cell's share of all pairs.
PairIndex ipw_weights(PairIndex index);

// batch_size draws, uniform with replacement over the pooled pairs of all causes.
std::vector<ComparablePair> sample_batch(const PairIndex& index, std::size_t batch_size, Rng& rng);

}  // namespace pairsurv
