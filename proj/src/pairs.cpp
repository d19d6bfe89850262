#include "pairsurv/pairs.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "pairsurv/errors.hpp"

namespace pairsurv {

namespace {

void check_cause(int cause, int num_causes) {
    if (cause == 0) throw ConfigError("cause 0 denotes censoring and has no comparable set");
    if (cause < 0 || cause > num_causes) {
        throw ConfigError("cause " + std::to_string(cause) + " outside 1.." + std::to_string(num_causes));
    }
}

std::vector<std::size_t> all_ids(std::size_t n) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
}

}  // namespace

std::vector<ComparablePair> build_comparable_set(const Dataset& dataset, std::span<const std::size_t> members,
                                                 int cause) {
    check_cause(cause, dataset.num_causes);
    std::vector<std::size_t> lefts;
    for (std::size_t id : members) {
        if (dataset.subjects.at(id).event == cause) lefts.push_back(id);
    }
    std::sort(lefts.begin(), lefts.end(), [&](std::size_t a, std::size_t b) {
        const int ka = dataset.subjects[a].time_index, kb = dataset.subjects[b].time_index;
        return ka != kb ? ka < kb : a < b;
    });
    std::vector<std::size_t> rights(members.begin(), members.end());
    std::sort(rights.begin(), rights.end());

    std::vector<ComparablePair> out;
    for (std::size_t i : lefts) {
        const int ki = dataset.subjects[i].time_index;
        for (std::size_t j : rights) {
            if (dataset.subjects[j].time_index > ki) out.push_back({i, j, cause, 1.0});
        }
    }
    return out;
}

std::vector<ComparablePair> build_comparable_set(const Dataset& dataset, int cause) {
    const auto ids = all_ids(dataset.size());
    return build_comparable_set(dataset, ids, cause);
}

PairIndex::PairIndex(const Dataset& dataset) : PairIndex(dataset, all_ids(dataset.size())) {}

PairIndex::PairIndex(const Dataset& dataset, std::span<const std::size_t> members)
    : num_causes_(dataset.num_causes), num_intervals_(static_cast<int>(dataset.num_intervals())) {
    const auto K = static_cast<std::size_t>(num_intervals_);
    const auto& subjects = dataset.subjects;
    by_time_.assign(members.begin(), members.end());
    for (std::size_t id : by_time_) {
        const int k = subjects.at(id).time_index;
        if (k < 0 || static_cast<std::size_t>(k) >= K) {
            throw DataError("subject " + std::to_string(id) + " has time index " + std::to_string(k) +
                            " outside the grid");
        }
    }
    auto by_time_less = [&](std::size_t a, std::size_t b) {
        const int ka = subjects[a].time_index, kb = subjects[b].time_index;
        return ka != kb ? ka < kb : a < b;
    };
    std::sort(by_time_.begin(), by_time_.end(), by_time_less);
    by_time_.erase(std::unique(by_time_.begin(), by_time_.end()), by_time_.end());

    later_start_.assign(K, by_time_.size());
    {
        std::size_t pos = 0;
        for (std::size_t k = 0; k < K; ++k) {
            while (pos < by_time_.size() && subjects[by_time_[pos]].time_index <= static_cast<int>(k)) ++pos;
            later_start_[k] = pos;
        }
    }

    counts_.assign(static_cast<std::size_t>(num_causes_) * K, 0);
    cause_offset_.assign(static_cast<std::size_t>(num_causes_) + 1, 0);
    std::uint64_t flat = 0;
    for (int m = 1; m <= num_causes_; ++m) {
        cause_offset_[static_cast<std::size_t>(m - 1)] = flat;
        for (std::size_t id : by_time_) {
            const auto& s = subjects[id];
            if (s.event != m) continue;
            const std::uint64_t n = by_time_.size() - later_start_[static_cast<std::size_t>(s.time_index)];
            if (n == 0) continue;
            lefts_.push_back({id, s.time_index, flat});
            left_cause_.push_back(m);
            counts_[cell(m, s.time_index)] += n;
            flat += n;
        }
    }
    cause_offset_.back() = flat;
    weights_.assign(counts_.size(), 1.0);
}

std::size_t PairIndex::cell(int cause, int k) const {
    return static_cast<std::size_t>(cause - 1) * static_cast<std::size_t>(num_intervals_) + static_cast<std::size_t>(k);
}

std::uint64_t PairIndex::size(int cause) const {
    check_cause(cause, num_causes_);
    return cause_offset_[static_cast<std::size_t>(cause)] - cause_offset_[static_cast<std::size_t>(cause - 1)];
}

std::uint64_t PairIndex::count(int cause, int k) const {
    check_cause(cause, num_causes_);
    if (k < 0 || k >= num_intervals_) throw std::out_of_range("time index " + std::to_string(k) + " outside the grid");
    return counts_[cell(cause, k)];
}

double PairIndex::weight(int cause, int k) const {
    check_cause(cause, num_causes_);
    if (k < 0 || k >= num_intervals_) throw std::out_of_range("time index " + std::to_string(k) + " outside the grid");
    return weights_[cell(cause, k)];
}

std::size_t PairIndex::occupied_cells() const {
    return static_cast<std::size_t>(std::count_if(counts_.begin(), counts_.end(), [](std::uint64_t c) { return c > 0; }));
}

ComparablePair PairIndex::at(std::uint64_t flat) const {
    if (flat >= size()) throw std::out_of_range("pair " + std::to_string(flat) + " outside index of " + std::to_string(size()));
    const auto it = std::upper_bound(lefts_.begin(), lefts_.end(), flat,
                                     [](std::uint64_t f, const Left& l) { return f < l.first; });
    const auto pos = static_cast<std::size_t>(it - lefts_.begin()) - 1;
    const Left& left = lefts_[pos];
    const int cause = left_cause_[pos];
    const std::size_t right = by_time_[later_start_[static_cast<std::size_t>(left.k)] + (flat - left.first)];
    return {left.id, right, cause, weights_[cell(cause, left.k)]};
}

std::vector<ComparablePair> PairIndex::pairs(int cause) const {
    check_cause(cause, num_causes_);
    std::vector<ComparablePair> out;
    out.reserve(size(cause));
    for (std::size_t pos = 0; pos < lefts_.size(); ++pos) {
        if (left_cause_[pos] != cause) continue;
        const Left& left = lefts_[pos];
        const double w = weights_[cell(cause, left.k)];
        for (std::size_t r = later_start_[static_cast<std::size_t>(left.k)]; r < by_time_.size(); ++r) {
            out.push_back({left.id, by_time_[r], cause, w});
        }
    }
    return out;
}

PairIndex ipw_weights(PairIndex index) {
    const double total = static_cast<double>(index.size());
    for (std::size_t c = 0; c < index.counts_.size(); ++c) {
        index.weights_[c] = index.counts_[c] > 0 ? total / static_cast<double>(index.counts_[c]) : 1.0;
    }
    return index;
}

std::vector<ComparablePair> sample_batch(const PairIndex& index, std::size_t batch_size, Rng& rng) {
    if (index.size() == 0) throw DataError("cannot sample from an empty pair index");
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    std::uniform_int_distribution<std::uint64_t> pick(0, index.size() - 1);
    std::vector<ComparablePair> batch;
    batch.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) batch.push_back(index.at(pick(rng)));
    return batch;
}

}  // namespace pairsurv
