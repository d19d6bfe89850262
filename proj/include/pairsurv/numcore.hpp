#pragma once

// Dense 64-bit tensors, a tensor-level reverse-mode tape, and the handful of
// primitives the survival network needs (SELU, alpha dropout, scaled sigmoid,
// softmax, block prefix sums, sparse gathers) plus Adam.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pairsurv {

using Rng = std::mt19937_64;

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor scalar(double value) { return Tensor({}, std::vector<double>{value}); }
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    // Leading extent; 1 for scalars.
    std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
    // Product of the trailing extents; 1 for scalars and vectors.
    std::size_t cols() const noexcept { return rows() == 0 ? 0 : size() / rows(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double item() const;

    bool all_finite() const noexcept;
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    bool operator==(const Tensor&) const = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

// Numerically stable logistic function; never evaluates exp of a positive argument.
double stable_sigmoid(double z) noexcept;

Tensor selu(const Tensor& x);
// 1 / (1 + exp(-a x)) elementwise; a must be positive.
Tensor scaled_sigmoid(double a, const Tensor& x);
// Self-normalizing dropout for SELU networks. Identity when !training or rate == 0.
Tensor alpha_dropout(const Tensor& x, double rate, bool training, Rng& rng);

// Rows of (flat index, coefficient) terms; row r of the product is
// sum_t coef_t * x.flat[index_t].
class SparseRows {
public:
    struct Term {
        std::size_t index;
        double coef;
    };

    void add_row(std::span<const Term> terms);
    void add_row(std::initializer_list<Term> terms) { add_row(std::span<const Term>(terms.begin(), terms.size())); }
    void reserve(std::size_t rows, std::size_t terms);

    std::size_t rows() const noexcept { return offsets_.size() - 1; }
    std::span<const Term> row(std::size_t r) const {
        return std::span<const Term>(terms_).subspan(offsets_[r], offsets_[r + 1] - offsets_[r]);
    }
    std::size_t max_index() const noexcept { return max_index_; }

private:
    std::vector<std::size_t> offsets_{0};
    std::vector<Term> terms_;
    std::size_t max_index_ = 0;
};

// Handle to a node recorded on a Tape.
struct Var {
    std::size_t id = 0;
};

// Records tensor primitives in execution order; backward() replays them in
// reverse. One tape per loss evaluation, single writer.
class Tape {
public:
    Var parameter(Tensor value);
    Var constant(Tensor value);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    // Gradient of the last backward() root with respect to v.
    const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Label used in non-finite diagnostics for subsequently recorded nodes.
    void set_scope(std::string scope) { scope_ = std::move(scope); }

    Var matmul(Var a, Var b);
    Var add_bias(Var x, Var bias);
    Var selu(Var x);
    Var alpha_dropout(Var x, double rate, bool training, Rng& rng);
    Var scaled_sigmoid(Var x, double a);
    Var softmax_rows(Var x);
    // Row-wise cumulative sums over `blocks` consecutive runs of `block_len`
    // columns; trailing columns beyond blocks * block_len are dropped.
    Var block_prefix_sum(Var x, std::size_t blocks, std::size_t block_len);
    Var sparse_linear(Var x, SparseRows rows);
    Var square(Var x);
    Var mul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var x, double c);
    Var sum(Var x);
    Var dot(Var x, std::vector<double> weights);

    void backward(Var root);

private:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::vector<std::size_t> parents;
        BackwardFn backward;
    };

    Var push(Tensor value, std::vector<std::size_t> parents, const char* op, BackwardFn fn);
    bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    Tensor& grad_of(std::size_t id) { return nodes_[id].grad; }
    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }

    std::vector<Node> nodes_;
    std::string scope_;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class AdamState {
public:
    AdamState() = default;
    explicit AdamState(std::span<const Tensor> params, AdamConfig config = {});

    std::uint64_t step_count() const noexcept { return steps_; }
    const AdamConfig& config() const noexcept { return config_; }
    const std::vector<Tensor>& first_moment() const noexcept { return m_; }
    const std::vector<Tensor>& second_moment() const noexcept { return v_; }

private:
    friend void adam_step(AdamState& state, std::span<Tensor> params, std::span<const Tensor> grads, double lr);

    AdamConfig config_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t steps_ = 0;
};

// Bias-corrected Adam update, in place.
void adam_step(AdamState& state, std::span<Tensor> params, std::span<const Tensor> grads, double lr);

}  // namespace pairsurv
