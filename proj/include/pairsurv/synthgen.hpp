#pragma once

// Synthetic two-cause benchmark: x1, x2, x3 ~ N(0, 1) i.i.d.,
// T^k ~ Exponential(mean = exp(x3^2 + x_k)) for k = 1, 2, D = argmin, and a
// uniformly chosen censor_fraction of the cohort censored at U[0, min(T^1, T^2)].

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "pairsurv/data.hpp"
#include "pairsurv/model.hpp"

namespace pairsurv {

struct SynthConfig {
    std::size_t n_subjects = 30000;
    double censor_fraction = 0.5;
    std::uint64_t seed = 0;
    int num_intervals = 30;

    void validate() const;
};

struct SyntheticCohort {
    SynthConfig config;
    std::vector<std::array<double, 3>> covariates;
    std::vector<double> latent_time1;
    std::vector<double> latent_time2;
    std::vector<double> times;  // observed: event time or censoring time
    std::vector<int> events;

    std::size_t size() const noexcept { return times.size(); }
    RawTable raw_table() const;
    static FeatureSchema schema();
};

SyntheticCohort generate(const SynthConfig& config);

// Discretized with the cohort's num_intervals.
Dataset to_dataset(const SyntheticCohort& cohort);

// True cumulative incidence F(t, cause | x) of the generating process.
double oracle_risk(std::span<const double> x, int cause, double t);

// Oracle CIF of subjects `ids` evaluated at each grid boundary t_k (the right
// end of grid cell k).
CifTable oracle_cif(const Dataset& dataset, std::span<const std::size_t> ids);

// CSV in the data module's layout (time,event,x1,x2,x3).
void write_cohort_csv(std::ostream& out, const SyntheticCohort& cohort);
// JSON sidecar recording the generator configuration for replay.
void write_cohort_sidecar(std::ostream& out, const SyntheticCohort& cohort);

}  // namespace pairsurv
