#include "pairsurv/loss.hpp"

#include <algorithm>
#include <string>

#include "pairsurv/errors.hpp"

namespace pairsurv {

namespace {

void check_cif(const Tape& tape, Var cif, const PairBatch& batch) {
    const Tensor& v = tape.value(cif);
    const std::size_t width = static_cast<std::size_t>(batch.num_causes()) * batch.num_intervals();
    if (v.rank() != 2 || v.shape()[1] != width) {
        throw std::invalid_argument("loss: CIF node must be rows x " + std::to_string(width));
    }
    if (v.shape()[0] < batch.rows()) {
        throw DataError("loss: missing CIF rows (have " + std::to_string(v.shape()[0]) + ", batch needs " +
                        std::to_string(batch.rows()) + ")");
    }
}

std::size_t flat(const PairBatch& batch, std::size_t row, int cause, int k) {
    return (row * static_cast<std::size_t>(batch.num_causes()) + static_cast<std::size_t>(cause - 1)) *
               batch.num_intervals() +
           static_cast<std::size_t>(k);
}

std::vector<double> weights(const PairBatch& batch) {
    std::vector<double> w;
    w.reserve(batch.pairs().size());
    for (const auto& p : batch.pairs()) w.push_back(p.weight);
    return w;
}

}  // namespace

void LossConfig::validate() const {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
    if (!(beta >= 0.0)) throw ConfigError("beta must be nonnegative");
}

PairBatch::PairBatch(int num_causes, std::size_t num_intervals, std::size_t rows, std::vector<PairRow> pairs)
    : num_causes_(num_causes), num_intervals_(num_intervals), rows_(rows), pairs_(std::move(pairs)) {
    for (const auto& p : pairs_) {
        if (p.left_row >= rows_ || p.right_row >= rows_) throw DataError("pair refers to a subject without a CIF row");
        if (p.cause < 0 || p.cause > num_causes_) throw DataError("pair cause " + std::to_string(p.cause) + " out of range");
        if (p.left_time < 0 || static_cast<std::size_t>(p.left_time) >= num_intervals_) {
            throw DataError("pair left time index " + std::to_string(p.left_time) + " outside the grid");
        }
    }
}

PairBatch PairBatch::gather(const Dataset& dataset, std::span<const ComparablePair> pairs) {
    std::vector<std::size_t> ids;
    ids.reserve(2 * pairs.size());
    for (const auto& p : pairs) {
        ids.push_back(p.left);
        ids.push_back(p.right);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    auto row_of = [&](std::size_t id) {
        return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
    };
    std::vector<PairRow> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) {
        rows.push_back({row_of(p.left), row_of(p.right), p.cause, dataset.subjects.at(p.left).time_index, p.weight});
    }
    PairBatch batch(dataset.num_causes, dataset.num_intervals(), ids.size(), std::move(rows));
    batch.subjects_ = std::move(ids);
    return batch;
}

double PairBatch::total_weight() const noexcept {
    double s = 0.0;
    for (const auto& p : pairs_) s += p.weight;
    return s;
}

BatchLoss LossGraph::values(const Tape& tape) const {
    return {tape.value(discrimination).item(), tape.value(accuracy).item(), tape.value(interpolation).item(),
            tape.value(total).item()};
}

Var discrimination_term(Tape& tape, Var cif, const PairBatch& batch, const LossConfig& config) {
    config.validate();
    check_cif(tape, cif, batch);
    SparseRows gaps;
    gaps.reserve(batch.pairs().size(), 2 * batch.pairs().size());
    for (const auto& p : batch.pairs()) {
        if (p.cause == 0) throw DataError("discrimination term: pair with censored left member");
        gaps.add_row({{flat(batch, p.left_row, p.cause, p.left_time), 1.0},
                      {flat(batch, p.right_row, p.cause, p.left_time), -1.0}});
    }
    tape.set_scope("discrimination term");
    const Var s = tape.scaled_sigmoid(tape.sparse_linear(cif, std::move(gaps)), config.alpha);
    const Var out = tape.dot(s, weights(batch));
    tape.set_scope({});
    return out;
}

Var accuracy_term(Tape& tape, Var cif, const PairBatch& batch, const LossConfig& config) {
    config.validate();
    check_cif(tape, cif, batch);
    SparseRows margins;
    const auto M = batch.num_causes();
    margins.reserve(batch.pairs().size(), batch.pairs().size() * static_cast<std::size_t>(M));
    std::vector<SparseRows::Term> terms;
    for (const auto& p : batch.pairs()) {
        if (p.cause == 0) throw DataError("accuracy term: left member of a pair is censored");
        terms.clear();
        for (int m = 1; m <= M; ++m) {
            terms.push_back({flat(batch, p.left_row, m, p.left_time), m == p.cause ? 1.0 : -1.0});
        }
        margins.add_row(terms);
    }
    tape.set_scope("accuracy term");
    const Var s = tape.scaled_sigmoid(tape.sparse_linear(cif, std::move(margins)), config.kappa);
    const Var out = tape.dot(s, weights(batch));
    tape.set_scope({});
    return out;
}

Var interpolation_term(Tape& tape, Var cif, const PairBatch& batch, const LossConfig& config) {
    config.validate();
    check_cif(tape, cif, batch);
    SparseRows earlier;
    std::vector<double> w;
    for (const auto& p : batch.pairs()) {
        if (p.cause == 0) throw DataError("interpolation term: pair with censored left member");
        for (int k = 0; k < p.left_time; ++k) {
            earlier.add_row({{flat(batch, p.right_row, p.cause, k), 1.0}});
            w.push_back(config.beta * p.weight);
        }
    }
    tape.set_scope("interpolation term");
    const Var out = tape.dot(tape.square(tape.sparse_linear(cif, std::move(earlier))), std::move(w));
    tape.set_scope({});
    return out;
}

LossGraph total_loss(Tape& tape, Var cif, const PairBatch& batch, const LossConfig& config) {
    LossGraph g;
    g.discrimination = discrimination_term(tape, cif, batch, config);
    g.accuracy = accuracy_term(tape, cif, batch, config);
    g.interpolation = interpolation_term(tape, cif, batch, config);
    tape.set_scope("total loss");
    g.total = tape.sub(tape.sub(g.interpolation, g.discrimination), g.accuracy);
    tape.set_scope({});
    return g;
}

BatchLoss evaluate_loss(const CifTable& cifs, const PairBatch& batch, const LossConfig& config) {
    Tape tape;
    const std::size_t width = static_cast<std::size_t>(cifs.num_causes()) * cifs.num_intervals();
    const Var cif = tape.constant(Tensor::matrix(cifs.rows(), width,
                                                 std::vector<double>(cifs.values().begin(), cifs.values().end())));
    return total_loss(tape, cif, batch, config).values(tape);
}

}  // namespace pairsurv
