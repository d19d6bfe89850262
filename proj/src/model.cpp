#include "pairsurv/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pairsurv/errors.hpp"

namespace pairsurv {

namespace {

constexpr int kCheckpointVersion = 1;

void check_cause_index(int cause, int num_causes, int k, std::size_t num_intervals) {
    if (cause < 1 || cause > num_causes) {
        throw std::out_of_range("cause " + std::to_string(cause) + " outside 1.." + std::to_string(num_causes));
    }
    if (k < 0 || static_cast<std::size_t>(k) >= num_intervals) {
        throw std::out_of_range("time index " + std::to_string(k) + " outside 0.." + std::to_string(num_intervals - 1));
    }
}

// When the free slot underflows, rounding in the prefix sums can push the
// end-of-horizon mass a few ulps past 1. Returns per-entry factors (1 on
// untouched rows) that pull such rows back to at most 1 - M*eps, or nothing
// if no row needs it.
std::optional<Tensor> end_mass_shrink(const Tensor& cif, int num_causes, std::size_t num_intervals) {
    const std::size_t rows = cif.shape()[0];
    const std::size_t width = cif.shape()[1];
    const auto M = static_cast<std::size_t>(num_causes);
    const double eps = std::numeric_limits<double>::epsilon();
    const double cap = 1.0 - static_cast<double>(M) * eps;
    auto end_mass = [&](std::size_t r, double f) {
        double s = 0.0;
        for (std::size_t m = 0; m < M; ++m) s += f * cif.at(r, m * num_intervals + num_intervals - 1);
        return s;
    };
    std::optional<Tensor> factors;
    for (std::size_t r = 0; r < rows; ++r) {
        if (end_mass(r, 1.0) <= cap) continue;
        double f = 1.0;
        while (end_mass(r, f) > cap) f -= static_cast<double>(M) * eps;
        if (!factors) factors = Tensor::matrix(rows, width, std::vector<double>(rows * width, 1.0));
        for (std::size_t c = 0; c < width; ++c) factors->at(r, c) = f;
    }
    return factors;
}

}  // namespace

void ModelConfig::validate() const {
    if (input_dim < 1) throw ConfigError("input dimension must be at least 1");
    if (hidden_layers > 0 && hidden_width < 1) throw ConfigError("hidden width must be at least 1");
    if (num_causes < 1) throw ConfigError("number of causes must be at least 1");
    if (num_intervals < 1) throw ConfigError("number of intervals must be at least 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(dropout_rate));
    }
}

// ---------------------------------------------------------------------------

CifMatrix::CifMatrix(int num_causes, std::size_t num_intervals, std::vector<double> values)
    : num_causes_(num_causes), num_intervals_(num_intervals), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(num_causes_) * num_intervals_) {
        throw std::invalid_argument("CIF matrix needs M*K values");
    }
}

double CifMatrix::operator()(int cause, std::size_t k) const {
    check_cause_index(cause, num_causes_, static_cast<int>(k), num_intervals_);
    return values_[static_cast<std::size_t>(cause - 1) * num_intervals_ + k];
}

double risk_at(const CifMatrix& cif, int cause, int k) {
    check_cause_index(cause, cif.num_causes(), k, cif.num_intervals());
    return cif(cause, static_cast<std::size_t>(k));
}

CifTable::CifTable(std::size_t rows, int num_causes, std::size_t num_intervals, std::vector<double> values)
    : rows_(rows), num_causes_(num_causes), num_intervals_(num_intervals), values_(std::move(values)) {
    if (values_.size() != rows_ * static_cast<std::size_t>(num_causes_) * num_intervals_) {
        throw std::invalid_argument("CIF table needs n*M*K values");
    }
}

CifTable::CifTable(std::size_t rows, int num_causes, std::size_t num_intervals)
    : CifTable(rows, num_causes, num_intervals,
               std::vector<double>(rows * static_cast<std::size_t>(num_causes) * num_intervals, 0.0)) {}

CifMatrix CifTable::subject(std::size_t row) const {
    const std::size_t width = static_cast<std::size_t>(num_causes_) * num_intervals_;
    const auto first = values_.begin() + static_cast<std::ptrdiff_t>(row * width);
    return CifMatrix(num_causes_, num_intervals_, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(width)));
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, std::vector<Tensor> parameters)
    : config_(std::move(config)), params_(std::move(parameters)) {
    config_.validate();
    const std::size_t expected = 2 * (config_.hidden_layers + 1);
    if (params_.size() != expected) {
        throw std::invalid_argument("model expects " + std::to_string(expected) + " parameter tensors, got " +
                                    std::to_string(params_.size()));
    }
    std::size_t fan_in = config_.input_dim;
    for (std::size_t l = 0; l <= config_.hidden_layers; ++l) {
        const std::size_t fan_out = l < config_.hidden_layers ? config_.hidden_width : config_.output_slots();
        if (params_[2 * l].shape() != std::vector<std::size_t>{fan_in, fan_out} ||
            params_[2 * l + 1].shape() != std::vector<std::size_t>{fan_out}) {
            throw std::invalid_argument("parameter shapes of layer " + std::to_string(l) + " do not match the config");
        }
        fan_in = fan_out;
    }
}

Model Model::init(const ModelConfig& config, Rng& rng) {
    config.validate();
    std::vector<Tensor> params;
    std::size_t fan_in = config.input_dim;
    for (std::size_t l = 0; l <= config.hidden_layers; ++l) {
        const std::size_t fan_out = l < config.hidden_layers ? config.hidden_width : config.output_slots();
        Tensor w({fan_in, fan_out});
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        for (auto& v : w.values()) v = normal(rng);
        params.push_back(std::move(w));
        params.emplace_back(std::vector<std::size_t>{fan_out});
        fan_in = fan_out;
    }
    return Model(config, std::move(params));
}

Model Model::init(const ModelConfig& config) {
    Rng rng(config.seed);
    return init(config, rng);
}

Model::Graph Model::forward(Tape& tape, std::span<const Var> params, Var x, bool training, Rng* rng) const {
    if (params.size() != params_.size()) throw std::invalid_argument("forward: parameter count mismatch");
    const Tensor& input = tape.value(x);
    if (input.rank() != 2 || input.shape()[1] != config_.input_dim) {
        throw DataError("dimension mismatch: model expects S=" + std::to_string(config_.input_dim) +
                        " covariates, found " + std::to_string(input.rank() == 2 ? input.shape()[1] : input.size()));
    }
    const bool dropout = training && config_.dropout_rate > 0.0;
    if (dropout && rng == nullptr) throw std::invalid_argument("forward: training with dropout needs an RNG");

    Var h = x;
    for (std::size_t l = 0; l < config_.hidden_layers; ++l) {
        tape.set_scope("hidden layer " + std::to_string(l + 1));
        h = tape.selu(tape.add_bias(tape.matmul(h, params[2 * l]), params[2 * l + 1]));
        if (dropout) h = tape.alpha_dropout(h, config_.dropout_rate, true, *rng);
    }
    tape.set_scope("output head");
    const std::size_t head = 2 * config_.hidden_layers;
    const Var logits = tape.add_bias(tape.matmul(h, params[head]), params[head + 1]);
    const Var probs = tape.softmax_rows(logits);
    Var cif = tape.block_prefix_sum(probs, static_cast<std::size_t>(config_.num_causes), config_.num_intervals);
    if (auto shrink = end_mass_shrink(tape.value(cif), config_.num_causes, config_.num_intervals)) {
        cif = tape.mul(cif, tape.constant(std::move(*shrink)));
    }
    tape.set_scope({});
    return {probs, cif};
}

CifTable Model::predict(const Tensor& x) const {
    Tape tape;
    std::vector<Var> params;
    params.reserve(params_.size());
    for (const auto& p : params_) params.push_back(tape.constant(p));
    const Var input = tape.constant(x);
    const auto graph = forward(tape, params, input, false, nullptr);
    const Tensor& cif = tape.value(graph.cif);
    return CifTable(cif.rows(), config_.num_causes, config_.num_intervals,
                    std::vector<double>(cif.values().begin(), cif.values().end()));
}

CifTable Model::predict(const Dataset& dataset, std::span<const std::size_t> ids) const {
    return predict(covariate_matrix(dataset, ids));
}

CifTable Model::predict(const Dataset& dataset) const {
    std::vector<std::size_t> ids(dataset.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return predict(dataset, ids);
}

CifMatrix Model::predict_one(std::span<const double> x) const {
    return predict(Tensor::matrix(1, x.size(), std::vector<double>(x.begin(), x.end()))).subject(0);
}

Tensor covariate_matrix(const Dataset& dataset, std::span<const std::size_t> ids) {
    const std::size_t dim = dataset.covariate_dim();
    Tensor x({ids.size(), dim});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const auto& cov = dataset.subjects.at(ids[r]).covariates;
        if (cov.size() != dim) throw DataError("subject " + std::to_string(ids[r]) + " has a ragged covariate vector");
        std::copy(cov.begin(), cov.end(), x.data() + r * dim);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
    return json{{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor tensor_from_json(const json& j) {
    return Tensor(j.at("shape").get<std::vector<std::size_t>>(), j.at("values").get<std::vector<double>>());
}

}  // namespace

std::string checkpoint_to_string(const Checkpoint& checkpoint) {
    const auto& cfg = checkpoint.model.config();
    json j;
    j["format"] = "pairsurv-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = {{"input_dim", cfg.input_dim},       {"hidden_layers", cfg.hidden_layers},
                   {"hidden_width", cfg.hidden_width}, {"num_causes", cfg.num_causes},
                   {"num_intervals", cfg.num_intervals}, {"dropout_rate", cfg.dropout_rate},
                   {"seed", cfg.seed}};
    j["grid"] = checkpoint.grid.boundaries();
    json schema = json::array();
    for (const auto& col : checkpoint.schema) {
        schema.push_back({{"name", col.name}, {"kind", col.kind == FeatureKind::real ? "real" : "categorical"}});
    }
    j["schema"] = schema;
    j["covariate_names"] = checkpoint.covariate_names;
    json params = json::array();
    for (const auto& p : checkpoint.model.parameters()) params.push_back(tensor_to_json(p));
    j["parameters"] = params;
    return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (j.at("format").get<std::string>() != "pairsurv-checkpoint") throw DataError("not a pairsurv checkpoint");
        if (j.at("version").get<int>() != kCheckpointVersion) {
            throw DataError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
        }
        const auto& c = j.at("config");
        ModelConfig cfg;
        cfg.input_dim = c.at("input_dim").get<std::size_t>();
        cfg.hidden_layers = c.at("hidden_layers").get<std::size_t>();
        cfg.hidden_width = c.at("hidden_width").get<std::size_t>();
        cfg.num_causes = c.at("num_causes").get<int>();
        cfg.num_intervals = c.at("num_intervals").get<std::size_t>();
        cfg.dropout_rate = c.at("dropout_rate").get<double>();
        cfg.seed = c.at("seed").get<std::uint64_t>();
        std::vector<Tensor> params;
        for (const auto& p : j.at("parameters")) params.push_back(tensor_from_json(p));
        Checkpoint out;
        out.model = Model(cfg, std::move(params));
        out.grid = TimeGrid(j.at("grid").get<std::vector<double>>());
        for (const auto& col : j.at("schema")) {
            const auto kind = col.at("kind").get<std::string>();
            out.schema.push_back({col.at("name").get<std::string>(),
                                  kind == "categorical" ? FeatureKind::categorical : FeatureKind::real});
        }
        out.covariate_names = j.at("covariate_names").get<std::vector<std::string>>();
        return out;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << checkpoint_to_string(checkpoint);
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str());
}

}  // namespace pairsurv
