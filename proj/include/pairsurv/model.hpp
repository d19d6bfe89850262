#pragma once

// Shared SELU trunk feeding one affine head of M*K+1 logits. A joint softmax
// turns the logits into interval probabilities Pr^m(t_k, x) plus one event-free
// slot; prefix sums along k give the cumulative incidence estimates.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pairsurv/data.hpp"
#include "pairsurv/numcore.hpp"

namespace pairsurv {

struct ModelConfig {
    std::size_t input_dim = 1;
    std::size_t hidden_layers = 2;
    std::size_t hidden_width = 40;
    int num_causes = 2;
    std::size_t num_intervals = 30;
    double dropout_rate = 0.35;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t output_slots() const noexcept { return static_cast<std::size_t>(num_causes) * num_intervals + 1; }
    bool operator==(const ModelConfig&) const = default;
};

// Estimated CIF of one subject: entry (m, k) = R~^m(t_k, x), causes 1-based.
class CifMatrix {
public:
    CifMatrix(int num_causes, std::size_t num_intervals, std::vector<double> values);

    int num_causes() const noexcept { return num_causes_; }
    std::size_t num_intervals() const noexcept { return num_intervals_; }
    double operator()(int cause, std::size_t k) const;
    std::span<const double> values() const noexcept { return values_; }

private:
    int num_causes_;
    std::size_t num_intervals_;
    std::vector<double> values_;
};

double risk_at(const CifMatrix& cif, int cause, int k);

// CIF estimates for a batch of subjects, laid out n x M x K.
class CifTable {
public:
    CifTable() = default;
    CifTable(std::size_t rows, int num_causes, std::size_t num_intervals, std::vector<double> values);
    CifTable(std::size_t rows, int num_causes, std::size_t num_intervals);

    std::size_t rows() const noexcept { return rows_; }
    int num_causes() const noexcept { return num_causes_; }
    std::size_t num_intervals() const noexcept { return num_intervals_; }
    double risk(std::size_t row, int cause, std::size_t k) const {
        return values_[(row * static_cast<std::size_t>(num_causes_) + static_cast<std::size_t>(cause - 1)) * num_intervals_ + k];
    }
    double& risk(std::size_t row, int cause, std::size_t k) {
        return values_[(row * static_cast<std::size_t>(num_causes_) + static_cast<std::size_t>(cause - 1)) * num_intervals_ + k];
    }
    CifMatrix subject(std::size_t row) const;
    std::span<const double> values() const noexcept { return values_; }

private:
    std::size_t rows_ = 0;
    int num_causes_ = 1;
    std::size_t num_intervals_ = 0;
    std::vector<double> values_;
};

class Model {
public:
    struct Graph {
        Var probabilities;  // n x (M*K + 1)
        Var cif;            // n x (M*K), cause-major
    };

    Model() = default;
    Model(ModelConfig config, std::vector<Tensor> parameters);

    // Trunk and head weights ~ N(0, 1/fan_in), biases 0.
    static Model init(const ModelConfig& config, Rng& rng);
    static Model init(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    std::vector<Tensor>& parameters() noexcept { return params_; }
    const std::vector<Tensor>& parameters() const noexcept { return params_; }

    // Records the network on `tape`. params must be this model's parameters
    // recorded on the same tape (in order); x is n x input_dim. rng is required
    // when training with a nonzero dropout rate.
    Graph forward(Tape& tape, std::span<const Var> params, Var x, bool training, Rng* rng) const;

    CifTable predict(const Tensor& x) const;
    CifTable predict(const Dataset& dataset, std::span<const std::size_t> ids) const;
    CifTable predict(const Dataset& dataset) const;
    CifMatrix predict_one(std::span<const double> x) const;

    bool operator==(const Model&) const = default;

private:
    ModelConfig config_;
    std::vector<Tensor> params_;  // W_0, b_0, ..., W_head, b_head
};

// Rows of `dataset` gathered into an n x S tensor.
Tensor covariate_matrix(const Dataset& dataset, std::span<const std::size_t> ids);

// Everything needed to score new data: network, time grid and covariate layout.
struct Checkpoint {
    Model model;
    TimeGrid grid;
    FeatureSchema schema;
    std::vector<std::string> covariate_names;

    bool operator==(const Checkpoint&) const = default;
};

// Structured-text (JSON) checkpoint; doubles are written round-trip exact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_string(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_string(const std::string& text);

}  // namespace pairsurv
