#include "pairsurv/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <json.hpp>

#include "format.hpp"
#include "pairsurv/errors.hpp"
#include "pairsurv/pairs.hpp"

namespace pairsurv {

namespace {

using nlohmann::json;

// splitmix64 finalizer; derives independent stream seeds from (seed, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kInit = 1, kSample = 2, kDropout = 3, kFold = 100, kBootstrap = 200 };

std::string describe(const BatchLoss& l) {
    std::ostringstream ss;
    ss << "discrimination=" << l.discrimination << " accuracy=" << l.accuracy << " interpolation=" << l.interpolation
       << " total=" << l.total;
    return ss.str();
}

bool finite(const BatchLoss& l) {
    return std::isfinite(l.discrimination) && std::isfinite(l.accuracy) && std::isfinite(l.interpolation) &&
           std::isfinite(l.total);
}

template <class T>
void read_key(const json& obj, const char* key, T& dst) {
    if (obj.contains(key)) dst = obj.at(key).get<T>();
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw ConfigError("unknown config key '" + where + key + "'");
        }
    }
}

struct ValidationSet {
    Outcomes outcomes;
    Tensor covariates;
};

std::vector<double> validation_scores(const Model& model, const ValidationSet& val, int num_causes) {
    std::vector<double> out(static_cast<std::size_t>(num_causes), std::numeric_limits<double>::quiet_NaN());
    if (val.outcomes.events.empty()) return out;
    const auto cifs = model.predict(val.covariates);
    for (int m = 1; m <= num_causes; ++m) {
        const auto c = concordance(val.outcomes.time_index, val.outcomes.events, cifs, m);
        if (c.comparable > 0) out[static_cast<std::size_t>(m - 1)] = c.value();
    }
    return out;
}

double mean_defined(const std::vector<double>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (double x : v) {
        if (std::isnan(x)) continue;
        s += x;
        ++n;
    }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(n);
}

}  // namespace

double lr_at(const LrSchedule& schedule, std::uint64_t iteration) {
    const double i = static_cast<double>(iteration);
    if (schedule.literal) return 1.0 / (1e-3 + i);
    return schedule.base / (1.0 + i / schedule.tau);
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
    if (iterations > 0 && eval_every > iterations) {
        throw ConfigError("eval_every (" + std::to_string(eval_every) + ") exceeds iterations (" +
                          std::to_string(iterations) + ")");
    }
    if (!(lr.base >= 0.0) || !(lr.tau > 0.0)) throw ConfigError("learning-rate base must be >= 0 and tau > 0");
    if (hidden_layers > 0 && hidden_width < 1) throw ConfigError("hidden_width must be at least 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    loss.validate();
    if (num_intervals < 2) throw ConfigError("num_intervals must be at least 2");
    if (folds < 3) throw ConfigError("folds must be at least 3");
    if (bootstrap_reps < 1) throw ConfigError("bootstrap_reps must be at least 1");
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must lie in (0, 1)");
    if (threads < 1) throw ConfigError("threads must be at least 1");
}

std::string config_to_json(const TrainConfig& c) {
    json j = {
        {"batch_size", c.batch_size},
        {"iterations", c.iterations},
        {"eval_every", c.eval_every},
        {"lr", {{"base", c.lr.base}, {"tau", c.lr.tau}, {"literal", c.lr.literal}}},
        {"model", {{"hidden_layers", c.hidden_layers}, {"hidden_width", c.hidden_width}, {"dropout_rate", c.dropout_rate}}},
        {"loss", {{"alpha", c.loss.alpha}, {"kappa", c.loss.kappa}, {"beta", c.loss.beta}}},
        {"ipw", c.ipw},
        {"num_intervals", c.num_intervals},
        {"folds", c.folds},
        {"bootstrap_reps", c.bootstrap_reps},
        {"ci_level", c.ci_level},
        {"seed", c.seed},
        {"threads", c.threads},
    };
    return j.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& text) {
    TrainConfig c;
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        reject_unknown(j,
                       {"batch_size", "iterations", "eval_every", "lr", "model", "loss", "ipw", "num_intervals", "folds",
                        "bootstrap_reps", "ci_level", "seed", "threads"},
                       "");
        read_key(j, "batch_size", c.batch_size);
        read_key(j, "iterations", c.iterations);
        read_key(j, "eval_every", c.eval_every);
        if (j.contains("lr")) {
            const auto& lr = j.at("lr");
            reject_unknown(lr, {"base", "tau", "literal"}, "lr.");
            read_key(lr, "base", c.lr.base);
            read_key(lr, "tau", c.lr.tau);
            read_key(lr, "literal", c.lr.literal);
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            reject_unknown(m, {"hidden_layers", "hidden_width", "dropout_rate"}, "model.");
            read_key(m, "hidden_layers", c.hidden_layers);
            read_key(m, "hidden_width", c.hidden_width);
            read_key(m, "dropout_rate", c.dropout_rate);
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            reject_unknown(l, {"alpha", "kappa", "beta"}, "loss.");
            read_key(l, "alpha", c.loss.alpha);
            read_key(l, "kappa", c.loss.kappa);
            read_key(l, "beta", c.loss.beta);
        }
        read_key(j, "ipw", c.ipw);
        read_key(j, "num_intervals", c.num_intervals);
        read_key(j, "folds", c.folds);
        read_key(j, "bootstrap_reps", c.bootstrap_reps);
        read_key(j, "ci_level", c.ci_level);
        read_key(j, "seed", c.seed);
        read_key(j, "threads", c.threads);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

// ---------------------------------------------------------------------------

// Per-iteration tensors are a few MB each; keeping them on the heap instead of
// fresh mmaps avoids a page-fault storm on every step.
static void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 512 << 20);
    });
#endif
}

TrainResult train(const Dataset& dataset, const Split& split, const TrainConfig& config, std::uint64_t seed) {
    config.validate();
    keep_large_blocks_on_heap();
    ModelConfig mc;
    mc.input_dim = dataset.covariate_dim();
    mc.hidden_layers = config.hidden_layers;
    mc.hidden_width = config.hidden_width;
    mc.num_causes = dataset.num_causes;
    mc.num_intervals = dataset.num_intervals();
    mc.dropout_rate = config.dropout_rate;
    mc.seed = derive_seed(seed, kInit);

    TrainResult result;
    result.model = Model::init(mc);

    PairIndex index(dataset, split.train);
    if (index.size() == 0) throw DataError("training split has no comparable pairs");
    if (config.ipw) index = ipw_weights(std::move(index));
    if (config.iterations == 0) return result;

    ValidationSet val{outcomes(dataset, split.validation), covariate_matrix(dataset, split.validation)};

    Rng sample_rng(derive_seed(seed, kSample));
    Rng dropout_rng(derive_seed(seed, kDropout));
    std::vector<Tensor>& params = result.model.parameters();
    AdamState adam(params);
    std::vector<Tensor> best_params = params;
    double best_score = -std::numeric_limits<double>::infinity();

    BatchLoss window;
    std::uint64_t window_len = 0;
    std::vector<Var> vars(params.size());
    std::vector<Tensor> grads(params.size());

    for (std::uint64_t it = 0; it < config.iterations; ++it) {
        const auto pairs = sample_batch(index, config.batch_size, sample_rng);
        const auto batch = PairBatch::gather(dataset, pairs);

        Tape tape;
        for (std::size_t p = 0; p < params.size(); ++p) vars[p] = tape.parameter(params[p]);
        const Var x = tape.constant(covariate_matrix(dataset, batch.subjects()));
        BatchLoss values;
        LossGraph graph;
        try {
            const auto net = result.model.forward(tape, vars, x, true, &dropout_rng);
            graph = total_loss(tape, net.cif, batch, config.loss);
            values = graph.values(tape);
        } catch (const NumericError& e) {
            throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
        }
        if (!finite(values)) throw NumericError("iteration " + std::to_string(it) + ": non-finite loss (" + describe(values) + ")");

        tape.backward(graph.total);
        for (std::size_t p = 0; p < params.size(); ++p) {
            grads[p] = tape.grad(vars[p]);
            if (!grads[p].all_finite()) {
                throw NumericError("iteration " + std::to_string(it) + ": non-finite gradient (" + describe(values) + ")");
            }
        }
        adam_step(adam, params, grads, lr_at(config.lr, it));
        for (const auto& p : params) {
            if (!p.all_finite()) throw NumericError("iteration " + std::to_string(it) + ": update produced a non-finite parameter");
        }

        window.discrimination += values.discrimination;
        window.accuracy += values.accuracy;
        window.interpolation += values.interpolation;
        window.total += values.total;
        ++window_len;

        const std::uint64_t done = it + 1;
        if (done % config.eval_every == 0 || done == config.iterations) {
            EvalRecord rec;
            rec.iteration = done;
            const double n = static_cast<double>(window_len);
            rec.train_loss = {window.discrimination / n, window.accuracy / n, window.interpolation / n, window.total / n};
            rec.validation = validation_scores(result.model, val, dataset.num_causes);
            rec.validation_mean = mean_defined(rec.validation);
            if (!std::isnan(rec.validation_mean) && rec.validation_mean > best_score) {
                best_score = rec.validation_mean;
                best_params = params;
                result.history.best = result.history.records.size();
            }
            result.history.records.push_back(std::move(rec));
            window = {};
            window_len = 0;
        }
    }
    if (result.history.best) {
        params = std::move(best_params);
    } else {
        result.history.best = result.history.records.size() - 1;
    }
    return result;
}

std::vector<AggregateRow> aggregate_folds(const std::vector<FoldResult>& folds) {
    std::vector<AggregateRow> rows;
    if (folds.empty()) return rows;
    for (const auto& first : folds.front().test) {
        AggregateRow row;
        row.cause = first.cause;
        row.min = std::numeric_limits<double>::infinity();
        row.max = -std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (const auto& fold : folds) {
            const auto it = std::find_if(fold.test.begin(), fold.test.end(),
                                         [&](const CauseReport& r) { return r.cause == first.cause; });
            if (it == fold.test.end()) throw DataError("fold report lacks cause " + std::to_string(first.cause));
            sum += it->point;
            row.min = std::min(row.min, it->point);
            row.max = std::max(row.max, it->point);
            row.numerator += it->numerator;
            row.denominator += it->denominator;
        }
        row.mean = sum / static_cast<double>(folds.size());
        rows.push_back(row);
    }
    return rows;
}

CvResult run_cv(const Dataset& dataset, const TrainConfig& config) {
    config.validate();
    CvResult result;
    result.splits = stratified_split(dataset, config.folds, config.seed);
    result.folds.resize(result.splits.size());

    std::vector<std::exception_ptr> errors(result.splits.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t f = next++; f < result.splits.size(); f = next++) {
            try {
                const auto& split = result.splits[f];
                FoldResult fr;
                fr.fold = static_cast<int>(f);
                fr.training = train(dataset, split, config, derive_seed(config.seed, kFold + f));
                const auto cifs = fr.training.model.predict(dataset, split.test);
                const auto o = outcomes(dataset, split.test);
                BootstrapOptions boot;
                boot.reps = config.bootstrap_reps;
                boot.level = config.ci_level;
                boot.seed = derive_seed(config.seed, kBootstrap + f);
                fr.test = evaluate_ct(o.time_index, o.events, cifs, boot);
                result.folds[f] = std::move(fr);
            } catch (...) {
                errors[f] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::min(config.threads, result.splits.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    result.aggregate = aggregate_folds(result.folds);
    return result;
}

// ---------------------------------------------------------------------------
// Run directory

void write_history_csv(std::ostream& out, const std::vector<FoldResult>& folds, int num_causes) {
    out << "fold,iteration,discrimination,accuracy,interpolation,total";
    for (int m = 1; m <= num_causes; ++m) out << ",val_cause" << m;
    out << ",val_mean,best\n";
    for (const auto& fold : folds) {
        const auto& h = fold.training.history;
        for (std::size_t r = 0; r < h.records.size(); ++r) {
            const auto& rec = h.records[r];
            out << fold.fold << ',' << rec.iteration << ',' << detail::shortest(rec.train_loss.discrimination) << ','
                << detail::shortest(rec.train_loss.accuracy) << ',' << detail::shortest(rec.train_loss.interpolation)
                << ',' << detail::shortest(rec.train_loss.total);
            for (double v : rec.validation) out << ',' << detail::shortest(v);
            out << ',' << detail::shortest(rec.validation_mean) << ',' << (h.best == r ? 1 : 0) << '\n';
        }
    }
}

void write_run_report_csv(std::ostream& out, const CvResult& result) {
    out << "fold,cause,point,lo,hi,numerator,denominator\n";
    for (const auto& fold : result.folds) {
        for (const auto& r : fold.test) {
            out << fold.fold << ',' << r.cause << ',' << detail::shortest(r.point) << ',' << detail::shortest(r.lower)
                << ',' << detail::shortest(r.upper) << ',' << detail::shortest(r.numerator) << ',' << r.denominator
                << '\n';
        }
    }
    for (const auto& a : result.aggregate) {
        out << "aggregate," << a.cause << ',' << detail::shortest(a.mean) << ',' << detail::shortest(a.min) << ','
            << detail::shortest(a.max) << ',' << detail::shortest(a.numerator) << ',' << a.denominator << '\n';
    }
}

void write_run_dir(const std::filesystem::path& dir, const Dataset& dataset, const TrainConfig& config,
                   const CvResult& result) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "checkpoints", ec);
    if (ec) throw DataError("cannot create run directory " + dir.string() + ": " + ec.message());

    auto open = [](const fs::path& p) {
        std::ofstream out(p, std::ios::binary);
        if (!out) throw DataError("cannot write " + p.string());
        return out;
    };
    {
        auto out = open(dir / "config.json");
        out << config_to_json(config);
    }
    {
        auto out = open(dir / "history.csv");
        write_history_csv(out, result.folds, dataset.num_causes);
    }
    {
        auto out = open(dir / "report.csv");
        write_run_report_csv(out, result);
    }
    for (const auto& fold : result.folds) {
        Checkpoint cp{fold.training.model, dataset.grid, dataset.schema, dataset.covariate_names};
        save_checkpoint(dir / "checkpoints" / ("fold" + std::to_string(fold.fold) + ".json"), cp);
    }
}

}  // namespace pairsurv
