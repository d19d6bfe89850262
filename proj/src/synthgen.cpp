#include "pairsurv/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "format.hpp"
#include "pairsurv/errors.hpp"
#include "pairsurv/numcore.hpp"

namespace pairsurv {

void SynthConfig::validate() const {
    if (n_subjects < 2) throw ConfigError("synthetic cohort needs at least 2 subjects");
    if (!(censor_fraction >= 0.0 && censor_fraction < 1.0)) {
        throw ConfigError("censor fraction must lie in [0, 1), got " + std::to_string(censor_fraction));
    }
    if (num_intervals < 2) throw ConfigError("number of grid points must be at least 2");
}

FeatureSchema SyntheticCohort::schema() {
    return {{"x1", FeatureKind::real}, {"x2", FeatureKind::real}, {"x3", FeatureKind::real}};
}

RawTable SyntheticCohort::raw_table() const {
    RawTable raw;
    raw.times = times;
    raw.events = events;
    const auto s = schema();
    for (std::size_t c = 0; c < 3; ++c) {
        RawColumn col;
        col.spec = s[c];
        col.cells.reserve(size());
        for (const auto& x : covariates) col.cells.emplace_back(x[c]);
        raw.columns.push_back(std::move(col));
    }
    return raw;
}

SyntheticCohort generate(const SynthConfig& config) {
    config.validate();
    const std::size_t n = config.n_subjects;
    SyntheticCohort cohort;
    cohort.config = config;
    cohort.covariates.resize(n);
    cohort.latent_time1.resize(n);
    cohort.latent_time2.resize(n);
    cohort.times.resize(n);
    cohort.events.resize(n);

    Rng rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto& x = cohort.covariates[i];
        for (double& v : x) v = normal(rng);
        const double mean1 = std::exp(x[2] * x[2] + x[0]);
        const double mean2 = std::exp(x[2] * x[2] + x[1]);
        cohort.latent_time1[i] = std::exponential_distribution<double>(1.0 / mean1)(rng);
        cohort.latent_time2[i] = std::exponential_distribution<double>(1.0 / mean2)(rng);
        const bool first = cohort.latent_time1[i] <= cohort.latent_time2[i];
        cohort.events[i] = first ? 1 : 2;
        cohort.times[i] = first ? cohort.latent_time1[i] : cohort.latent_time2[i];
    }

    const auto n_censored = static_cast<std::size_t>(std::llround(config.censor_fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_censored));
    for (std::size_t c = 0; c < n_censored; ++c) {
        const std::size_t i = order[c];
        cohort.times[i] = std::uniform_real_distribution<double>(0.0, cohort.times[i])(rng);
        cohort.events[i] = 0;
    }
    return cohort;
}

Dataset to_dataset(const SyntheticCohort& cohort) {
    return build_dataset(cohort.raw_table(), SyntheticCohort::schema(), cohort.config.num_intervals, 2);
}

double oracle_risk(std::span<const double> x, int cause, double t) {
    if (x.size() != 3) throw std::invalid_argument("oracle_risk expects 3 covariates");
    if (cause != 1 && cause != 2) throw std::invalid_argument("oracle_risk: cause must be 1 or 2");
    if (t <= 0.0) return 0.0;
    const double shared = x[2] * x[2];
    const double rate1 = std::exp(-(shared + x[0]));
    const double rate2 = std::exp(-(shared + x[1]));
    const double total = rate1 + rate2;
    const double share = (cause == 1 ? rate1 : rate2) / total;
    if (std::isinf(t)) return share;
    return share * -std::expm1(-total * t);
}

CifTable oracle_cif(const Dataset& dataset, std::span<const std::size_t> ids) {
    const std::size_t K = dataset.num_intervals();
    CifTable table(ids.size(), 2, K);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const auto& x = dataset.subjects.at(ids[r]).covariates;
        for (int m = 1; m <= 2; ++m)
            for (std::size_t k = 0; k < K; ++k) table.risk(r, m, k) = oracle_risk(x, m, dataset.grid[k]);
    }
    return table;
}

void write_cohort_csv(std::ostream& out, const SyntheticCohort& cohort) {
    out << "time,event,x1,x2,x3\n";
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& x = cohort.covariates[i];
        out << detail::shortest(cohort.times[i]) << ',' << cohort.events[i] << ',' << detail::shortest(x[0]) << ','
            << detail::shortest(x[1]) << ',' << detail::shortest(x[2]) << '\n';
    }
}

void write_cohort_sidecar(std::ostream& out, const SyntheticCohort& cohort) {
    std::size_t censored = 0;
    for (int e : cohort.events) censored += e == 0;
    const nlohmann::json j = {
        {"generator", "exponential-competing-risks"},
        {"n_subjects", cohort.config.n_subjects},
        {"censor_fraction", cohort.config.censor_fraction},
        {"seed", cohort.config.seed},
        {"num_intervals", cohort.config.num_intervals},
        {"censored", censored},
    };
    out << j.dump(2) << '\n';
}

}  // namespace pairsurv
