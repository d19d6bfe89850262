#include "pairsurv/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pairsurv/errors.hpp"

namespace pairsurv {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

double selu_scalar(double x) {
    return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}

// Per-element affine map equivalent to one alpha-dropout draw:
// y = scale * x + shift.
struct DropoutAffine {
    Tensor scale;
    Tensor shift;
};

void check_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
}

DropoutAffine draw_dropout(const std::vector<std::size_t>& shape, double rate, Rng& rng) {
    const double keep = 1.0 - rate;
    const double saturated = -kSeluLambda * kSeluAlpha;
    const double a = 1.0 / std::sqrt(keep + saturated * saturated * keep * rate);
    const double b = -a * saturated * rate;
    DropoutAffine out{Tensor(shape), Tensor(shape)};
    // The mask comes from a splitmix64 stream seeded by one draw of rng;
    // kept iff the 64-bit word is below keep * 2^64.
    const auto threshold = static_cast<std::uint64_t>(std::ldexp(keep, 64));
    std::uint64_t state = rng();
    for (std::size_t i = 0; i < out.scale.size(); ++i) {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
        if (z < threshold) {
            out.scale[i] = a;
            out.shift[i] = b;
        } else {
            out.scale[i] = 0.0;
            out.shift[i] = a * saturated + b;
        }
    }
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (product(shape_) != values_.size()) {
        throw std::invalid_argument("tensor shape " + shape_str(shape_) + " does not match " +
                                    std::to_string(values_.size()) + " values");
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

double Tensor::item() const {
    if (values_.size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape_));
    return values_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double stable_sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Tensor selu(const Tensor& x) {
    if (!x.all_finite()) throw NumericError("selu: non-finite input");
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = selu_scalar(x[i]);
    return y;
}

Tensor scaled_sigmoid(double a, const Tensor& x) {
    if (!(a > 0.0)) throw ConfigError("sigmoid scale must be positive, got " + std::to_string(a));
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(a * x[i]);
    return y;
}

Tensor alpha_dropout(const Tensor& x, double rate, bool training, Rng& rng) {
    check_rate(rate);
    if (!training || rate == 0.0) return x;
    const auto affine = draw_dropout(x.shape(), rate, rng);
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = affine.scale[i] * x[i] + affine.shift[i];
    return y;
}

void SparseRows::add_row(std::span<const Term> terms) {
    for (const auto& t : terms) {
        terms_.push_back(t);
        max_index_ = std::max(max_index_, t.index);
    }
    offsets_.push_back(terms_.size());
}

void SparseRows::reserve(std::size_t rows, std::size_t terms) {
    offsets_.reserve(rows + 1);
    terms_.reserve(terms);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Tensor value, std::vector<std::size_t> parents, const char* op, BackwardFn fn) {
    if (!value.all_finite()) {
        std::string where = scope_.empty() ? std::string() : " in " + scope_;
        throw NumericError(std::string("non-finite value produced by ") + op + where);
    }
    Node node;
    node.value = std::move(value);
    node.requires_grad = std::any_of(parents.begin(), parents.end(),
                                     [this](std::size_t p) { return nodes_[p].requires_grad; });
    node.parents = std::move(parents);
    if (node.requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
    if (!value.all_finite()) throw NumericError("non-finite parameter" + (scope_.empty() ? "" : " in " + scope_));
    Node node;
    node.value = std::move(value);
    node.requires_grad = true;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw NumericError("non-finite input" + (scope_.empty() ? "" : " in " + scope_));
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

namespace {

// Row-major kernels in axpy form so the inner loop vectorizes. The avx2 clone
// has no FMA, so both clones round identically.
[[gnu::target_clones("avx2", "default")]] void gemm_nn(const double* __restrict a, const double* __restrict b,
                                                      double* __restrict c, std::size_t n, std::size_t p,
                                                      std::size_t q) {
    for (std::size_t i = 0; i < n; ++i) {
        double* __restrict crow = c + i * q;
        for (std::size_t k = 0; k < p; ++k) {
            const double aik = a[i * p + k];
            const double* __restrict brow = b + k * q;
            for (std::size_t j = 0; j < q; ++j) crow[j] += aik * brow[j];
        }
    }
}

// c (p x q) += a^T b with a n x p, b n x q.
[[gnu::target_clones("avx2", "default")]] void gemm_tn(const double* __restrict a, const double* __restrict b,
                                                      double* __restrict c, std::size_t n, std::size_t p,
                                                      std::size_t q) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* __restrict brow = b + i * q;
        for (std::size_t k = 0; k < p; ++k) {
            const double aik = a[i * p + k];
            double* __restrict crow = c + k * q;
            for (std::size_t j = 0; j < q; ++j) crow[j] += aik * brow[j];
        }
    }
}

}  // namespace

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(A.shape()) + " and " +
                                    shape_str(B.shape()));
    }
    const std::size_t n = A.shape()[0], p = A.shape()[1], q = B.shape()[1];
    Tensor C({n, q});
    gemm_nn(A.data(), B.data(), C.data(), n, p, q);
    return push(std::move(C), {a.id, b.id}, "matmul", [a, b, n, p, q](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        if (t.needs_grad(a.id)) {
            // ga (n x p) += gy (n x q) * B^T
            const Tensor& B = t.value_of(b.id);
            std::vector<double> bt(q * p);
            for (std::size_t k = 0; k < p; ++k)
                for (std::size_t j = 0; j < q; ++j) bt[j * p + k] = B[k * q + j];
            gemm_nn(gy.data(), bt.data(), t.grad_of(a.id).data(), n, q, p);
        }
        if (t.needs_grad(b.id)) gemm_tn(t.value_of(a.id).data(), gy.data(), t.grad_of(b.id).data(), n, p, q);
    });
}

Var Tape::add_bias(Var x, Var bias) {
    const Tensor& X = value(x);
    const Tensor& B = value(bias);
    if (X.rank() != 2 || B.rank() != 1 || X.shape()[1] != B.size()) {
        throw std::invalid_argument("add_bias: incompatible shapes " + shape_str(X.shape()) + " and " +
                                    shape_str(B.shape()));
    }
    const std::size_t n = X.shape()[0], q = X.shape()[1];
    Tensor Y = X;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) Y[i * q + j] += B[j];
    return push(std::move(Y), {x.id, bias.id}, "add_bias", [x, bias, n, q](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        if (t.needs_grad(x.id)) {
            Tensor& gx = t.grad_of(x.id);
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
        }
        if (t.needs_grad(bias.id)) {
            Tensor& gb = t.grad_of(bias.id);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < q; ++j) gb[j] += gy[i * q + j];
        }
    });
}

Var Tape::selu(Var x) {
    const Tensor& X = value(x);
    if (!X.all_finite()) throw NumericError("selu: non-finite input" + (scope_.empty() ? "" : " in " + scope_));
    Tensor Y(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) Y[i] = selu_scalar(X[i]);
    return push(std::move(Y), {x.id}, "selu", [x](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& X = t.value_of(x.id);
        const Tensor& Y = t.value_of(self);
        Tensor& gx = t.grad_of(x.id);
        for (std::size_t i = 0; i < X.size(); ++i) {
            // for x <= 0, d/dx lambda*alpha*(e^x - 1) = y + lambda*alpha
            const double d = X[i] > 0.0 ? kSeluLambda : Y[i] + kSeluLambda * kSeluAlpha;
            gx[i] += d * gy[i];
        }
    });
}

Var Tape::alpha_dropout(Var x, double rate, bool training, Rng& rng) {
    check_rate(rate);
    if (!training || rate == 0.0) return x;
    const Tensor& X = value(x);
    auto affine = draw_dropout(X.shape(), rate, rng);
    Tensor Y(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) Y[i] = affine.scale[i] * X[i] + affine.shift[i];
    return push(std::move(Y), {x.id}, "alpha_dropout",
                [x, scale = std::move(affine.scale)](Tape& t, std::size_t self) {
                    const Tensor& gy = t.grad_of(self);
                    Tensor& gx = t.grad_of(x.id);
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += scale[i] * gy[i];
                });
}

Var Tape::scaled_sigmoid(Var x, double a) {
    Tensor Y = pairsurv::scaled_sigmoid(a, value(x));
    return push(std::move(Y), {x.id}, "scaled_sigmoid", [x, a](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& y = t.value_of(self);
        Tensor& gx = t.grad_of(x.id);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += a * y[i] * (1.0 - y[i]) * gy[i];
    });
}

Var Tape::softmax_rows(Var x) {
    const Tensor& X = value(x);
    if (X.rank() != 2) throw std::invalid_argument("softmax_rows: expected a matrix, got " + shape_str(X.shape()));
    const std::size_t n = X.shape()[0], q = X.shape()[1];
    Tensor Y(X.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* xr = X.data() + i * q;
        double* yr = Y.data() + i * q;
        const double mx = *std::max_element(xr, xr + q);
        double z = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            z += yr[j];
        }
        for (std::size_t j = 0; j < q; ++j) yr[j] /= z;
    }
    return push(std::move(Y), {x.id}, "softmax", [x, n, q](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& y = t.value_of(self);
        Tensor& gx = t.grad_of(x.id);
        for (std::size_t i = 0; i < n; ++i) {
            const double* yr = y.data() + i * q;
            const double* gr = gy.data() + i * q;
            double inner = 0.0;
            for (std::size_t j = 0; j < q; ++j) inner += gr[j] * yr[j];
            for (std::size_t j = 0; j < q; ++j) gx[i * q + j] += yr[j] * (gr[j] - inner);
        }
    });
}

Var Tape::block_prefix_sum(Var x, std::size_t blocks, std::size_t block_len) {
    const Tensor& X = value(x);
    const std::size_t width = blocks * block_len;
    if (X.rank() != 2 || X.shape()[1] < width) {
        throw std::invalid_argument("block_prefix_sum: input " + shape_str(X.shape()) + " narrower than " +
                                    std::to_string(width));
    }
    const std::size_t n = X.shape()[0], q = X.shape()[1];
    Tensor Y({n, width});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t b = 0; b < blocks; ++b) {
            double run = 0.0;
            for (std::size_t k = 0; k < block_len; ++k) {
                run += X[i * q + b * block_len + k];
                Y[i * width + b * block_len + k] = run;
            }
        }
    }
    return push(std::move(Y), {x.id}, "block_prefix_sum", [x, n, q, blocks, block_len, width](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        Tensor& gx = t.grad_of(x.id);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t b = 0; b < blocks; ++b) {
                double run = 0.0;
                for (std::size_t k = block_len; k-- > 0;) {
                    run += gy[i * width + b * block_len + k];
                    gx[i * q + b * block_len + k] += run;
                }
            }
        }
    });
}

Var Tape::sparse_linear(Var x, SparseRows rows) {
    const Tensor& X = value(x);
    if (rows.rows() > 0 && rows.max_index() >= X.size()) {
        throw std::out_of_range("sparse_linear: index " + std::to_string(rows.max_index()) +
                                " outside tensor of size " + std::to_string(X.size()));
    }
    Tensor Y({rows.rows()});
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        double acc = 0.0;
        for (const auto& term : rows.row(r)) acc += term.coef * X[term.index];
        Y[r] = acc;
    }
    return push(std::move(Y), {x.id}, "sparse_linear", [x, rows = std::move(rows)](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        Tensor& gx = t.grad_of(x.id);
        for (std::size_t r = 0; r < rows.rows(); ++r)
            for (const auto& term : rows.row(r)) gx[term.index] += term.coef * gy[r];
    });
}

Var Tape::square(Var x) {
    const Tensor& X = value(x);
    Tensor Y(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] * X[i];
    return push(std::move(Y), {x.id}, "square", [x](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& X = t.value_of(x.id);
        Tensor& gx = t.grad_of(x.id);
        for (std::size_t i = 0; i < X.size(); ++i) gx[i] += 2.0 * X[i] * gy[i];
    });
}

Var Tape::mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require_same_shape(A, B, "mul");
    Tensor Y(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] * B[i];
    return push(std::move(Y), {a.id, b.id}, "mul", [a, b](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        const Tensor& A = t.value_of(a.id);
        const Tensor& B = t.value_of(b.id);
        if (t.needs_grad(a.id)) {
            Tensor& ga = t.grad_of(a.id);
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += B[i] * gy[i];
        }
        if (t.needs_grad(b.id)) {
            Tensor& gb = t.grad_of(b.id);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += A[i] * gy[i];
        }
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require_same_shape(A, B, "add");
    Tensor Y(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] + B[i];
    return push(std::move(Y), {a.id, b.id}, "add", [a, b](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        for (std::size_t id : {a.id, b.id}) {
            if (!t.needs_grad(id)) continue;
            Tensor& g = t.grad_of(id);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
    });
}

Var Tape::sub(Var a, Var b) {
    return add(a, scale(b, -1.0));
}

Var Tape::scale(Var x, double c) {
    const Tensor& X = value(x);
    Tensor Y(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) Y[i] = c * X[i];
    return push(std::move(Y), {x.id}, "scale", [x, c](Tape& t, std::size_t self) {
        const Tensor& gy = t.grad_of(self);
        Tensor& gx = t.grad_of(x.id);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += c * gy[i];
    });
}

Var Tape::sum(Var x) {
    const Tensor& X = value(x);
    double s = 0.0;
    for (double v : X.values()) s += v;
    return push(Tensor::scalar(s), {x.id}, "sum", [x](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0];
        Tensor& gx = t.grad_of(x.id);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

Var Tape::dot(Var x, std::vector<double> weights) {
    const Tensor& X = value(x);
    if (weights.size() != X.size()) {
        throw std::invalid_argument("dot: " + std::to_string(weights.size()) + " weights for tensor of size " +
                                    std::to_string(X.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) s += weights[i] * X[i];
    return push(Tensor::scalar(s), {x.id}, "dot", [x, w = std::move(weights)](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0];
        Tensor& gx = t.grad_of(x.id);
        for (std::size_t i = 0; i < w.size(); ++i) gx[i] += w[i] * g;
    });
}

void Tape::backward(Var root) {
    if (root.id >= nodes_.size()) throw std::out_of_range("backward: root not on this tape");
    if (nodes_[root.id].value.size() != 1) {
        throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                    shape_str(nodes_[root.id].value.shape()));
    }
    for (auto& node : nodes_) node.grad = Tensor(node.value.shape());
    nodes_[root.id].grad[0] = 1.0;
    for (std::size_t id = root.id + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (node.backward) node.backward(*this, id);
    }
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(std::span<const Tensor> params, AdamConfig config) : config_(config) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
    }
}

void adam_step(AdamState& state, std::span<Tensor> params, std::span<const Tensor> grads, double lr) {
    if (params.size() != grads.size() || params.size() != state.m_.size()) {
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " params, " +
                                    std::to_string(grads.size()) + " grads, " + std::to_string(state.m_.size()) +
                                    " moment slots");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(params[i], grads[i], "adam_step");
        require_same_shape(params[i], state.m_[i], "adam_step");
    }
    const auto& cfg = state.config_;
    ++state.steps_;
    const double t = static_cast<double>(state.steps_);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        const Tensor& g = grads[i];
        Tensor& m = state.m_[i];
        Tensor& v = state.v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

}  // namespace pairsurv
