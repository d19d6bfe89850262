#pragma once

// Pairwise training objective over a batch of comparable pairs:
//   discrimination  sum_p w_p * sigmoid(alpha * [R^m(T_l, x_l) - R^m(T_l, x_r)])
//   accuracy        sum_p w_p * sigmoid(kappa * [R^{D_l}(T_l, x_l) - sum_{m != D_l} R^m(T_l, x_l)])
//   interpolation   beta * sum_p w_p * sum_{k < T_l} R^m(t_k, x_r)^2
// minimized as  interpolation - discrimination - accuracy.

#include <cstddef>
#include <span>
#include <vector>

#include "pairsurv/data.hpp"
#include "pairsurv/model.hpp"
#include "pairsurv/numcore.hpp"
#include "pairsurv/pairs.hpp"

namespace pairsurv {

struct LossConfig {
    double alpha = 500.0;
    double kappa = 500.0;
    double beta = 0.01;

    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

struct BatchLoss {
    double discrimination = 0.0;
    double accuracy = 0.0;
    double interpolation = 0.0;
    double total = 0.0;
};

// A pair expressed in rows of a CIF table / CIF tape node.
struct PairRow {
    std::size_t left_row = 0;
    std::size_t right_row = 0;
    int cause = 0;
    int left_time = 0;
    double weight = 1.0;
};

class PairBatch {
public:
    PairBatch(int num_causes, std::size_t num_intervals, std::size_t rows, std::vector<PairRow> pairs);

    // Deduplicates the subjects of `pairs` (ascending id) so each is forwarded once.
    static PairBatch gather(const Dataset& dataset, std::span<const ComparablePair> pairs);

    int num_causes() const noexcept { return num_causes_; }
    std::size_t num_intervals() const noexcept { return num_intervals_; }
    std::size_t rows() const noexcept { return rows_; }
    const std::vector<PairRow>& pairs() const noexcept { return pairs_; }
    // Dataset id of each row; empty for hand-built batches.
    const std::vector<std::size_t>& subjects() const noexcept { return subjects_; }
    double total_weight() const noexcept;

private:
    int num_causes_;
    std::size_t num_intervals_;
    std::size_t rows_;
    std::vector<PairRow> pairs_;
    std::vector<std::size_t> subjects_;
};

struct LossGraph {
    Var discrimination;
    Var accuracy;
    Var interpolation;
    Var total;

    BatchLoss values(const Tape& tape) const;
};

// `cif` is a rows x (M*K) node (Model::Graph::cif or a constant).
Var discrimination_term(Tape& tape, Var cif, const PairBatch& batch, const LossConfig& config);
Var accuracy_term(Tape& tape, Var cif, const PairBatch& batch, const LossConfig& config);
Var interpolation_term(Tape& tape, Var cif, const PairBatch& batch, const LossConfig& config);
LossGraph total_loss(Tape& tape, Var cif, const PairBatch& batch, const LossConfig& config);

// Value-only evaluation on a precomputed CIF table.
BatchLoss evaluate_loss(const CifTable& cifs, const PairBatch& batch, const LossConfig& config);

}  // namespace pairsurv
