#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "pairsurv/errors.hpp"
#include "pairsurv/metrics.hpp"
#include "pairsurv/synthgen.hpp"

using namespace pairsurv;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SyntheticCohort cohort(std::size_t n, double censor, std::uint64_t seed) {
    SynthConfig c;
    c.n_subjects = n;
    c.censor_fraction = censor;
    c.seed = seed;
    return generate(c);
}

}  // namespace

TEST_CASE("oracle risk examples") {
    const std::vector<double> zero{0, 0, 0};
    CHECK(oracle_risk(zero, 1, 0.0) == 0.0);
    CHECK(oracle_risk(zero, 2, 0.0) == 0.0);
    CHECK(oracle_risk(zero, 1, kInf) == 0.5);
    CHECK(oracle_risk(zero, 2, kInf) == 0.5);
    // lambda_1 = exp(-x1) = 2 = 2 * lambda_2
    const std::vector<double> x{-std::log(2.0), 0, 0};
    CHECK(oracle_risk(x, 1, kInf) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(oracle_risk(x, 2, kInf) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS(oracle_risk(x, 3, 1.0));
}

TEST_CASE("oracle risk is a valid cif") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 200; ++i) {
        const std::vector<double> x{nd(rng), nd(rng), nd(rng)};
        CHECK(oracle_risk(x, 1, kInf) + oracle_risk(x, 2, kInf) == doctest::Approx(1.0).epsilon(1e-14));
        double p1 = 0, p2 = 0;
        for (double t = 0; t < 20; t += 0.25) {
            const double r1 = oracle_risk(x, 1, t), r2 = oracle_risk(x, 2, t);
            CHECK(r1 >= p1);
            CHECK(r2 >= p2);
            CHECK(r1 + r2 <= 1.0 + 1e-15);
            p1 = r1;
            p2 = r2;
        }
    }
}

TEST_CASE("symmetric covariates split causes evenly") {
    // Direct Monte Carlo of the two competing exponentials with x = (0, 0, 0).
    Rng rng(4);
    std::exponential_distribution<double> e(1.0);
    std::size_t first = 0;
    const std::size_t n = 200000;
    for (std::size_t i = 0; i < n; ++i) first += e(rng) <= e(rng);
    CHECK(std::abs(static_cast<double>(first) / n - 0.5) < 0.005);
}

TEST_CASE("lambda_1 = 2 lambda_2 gives cause 1 two thirds of the time") {
    Rng rng(5);
    std::exponential_distribution<double> fast(2.0), slow(1.0);
    std::size_t first = 0;
    const std::size_t n = 200000;
    for (std::size_t i = 0; i < n; ++i) first += fast(rng) <= slow(rng);
    CHECK(std::abs(static_cast<double>(first) / n - 2.0 / 3.0) < 0.005);
}

TEST_CASE("full cohort censors exactly half") {
    const auto c = cohort(30000, 0.5, 0);
    CHECK(c.size() == 30000);
    CHECK(std::count(c.events.begin(), c.events.end(), 0) == 15000);
}

TEST_CASE("uncensored cause shares are symmetric") {
    const auto c = cohort(100000, 0.0, 7);
    const auto ones = std::count(c.events.begin(), c.events.end(), 1);
    CHECK(std::count(c.events.begin(), c.events.end(), 0) == 0);
    CHECK(std::abs(static_cast<double>(ones) / 100000.0 - 0.5) < 0.01);
}

TEST_CASE("latent times have the stated conditional mean") {
    const auto c = cohort(100000, 0.5, 11);
    // Bin: |x3| < 0.5 and x1 in [0, 0.5). Compare mean T1 with mean exp(x3^2 + x1) in the bin.
    double sum_t = 0, sum_t2 = 0, sum_mean = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto& x = c.covariates[i];
        if (std::abs(x[2]) >= 0.5 || x[0] < 0 || x[0] >= 0.5) continue;
        const double t = c.latent_time1[i];
        sum_t += t;
        sum_t2 += t * t;
        sum_mean += std::exp(x[2] * x[2] + x[0]);
        ++n;
    }
    REQUIRE(n > 1000);
    const double mean = sum_t / n;
    const double sd = std::sqrt(sum_t2 / n - mean * mean);
    CHECK(std::abs(mean - sum_mean / n) < 3 * sd / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("censoring times never exceed the latent minimum") {
    const auto c = cohort(20000, 0.5, 3);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double lo = std::min(c.latent_time1[i], c.latent_time2[i]);
        if (c.events[i] == 0) {
            CHECK(c.times[i] <= lo);
            CHECK(c.times[i] >= 0.0);
        } else {
            CHECK(c.times[i] == lo);
            CHECK(c.events[i] == (c.latent_time1[i] <= c.latent_time2[i] ? 1 : 2));
        }
    }
}

TEST_CASE("oracle ranking beats a random ranking on every seed") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto ds = to_dataset(cohort(3000, 0.5, seed));
        std::vector<std::size_t> ids(ds.size());
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        const auto o = outcomes(ds);
        const auto truth = oracle_cif(ds, ids);
        CifTable noise(ds.size(), 2, ds.num_intervals());
        Rng rng(seed);
        std::uniform_real_distribution<double> u;
        for (std::size_t r = 0; r < ds.size(); ++r)
            for (int m = 1; m <= 2; ++m)
                for (std::size_t k = 0; k < ds.num_intervals(); ++k) noise.risk(r, m, k) = u(rng);
        for (int m = 1; m <= 2; ++m) {
            const double oracle_c = c_index(o.time_index, o.events, truth, m);
            const double random_c = c_index(o.time_index, o.events, noise, m);
            CHECK(std::abs(random_c - 0.5) < 0.05);
            CHECK(oracle_c > random_c);
        }
    }
}

TEST_CASE("generation is deterministic and writes the data layout") {
    const auto a = cohort(50, 0.5, 9), b = cohort(50, 0.5, 9);
    CHECK(a.times == b.times);
    CHECK(a.events == b.events);
    std::ostringstream sa, sb;
    write_cohort_csv(sa, a);
    write_cohort_csv(sb, b);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind("time,event,x1,x2,x3\n", 0) == 0);
    std::istringstream in(sa.str());
    const auto raw = load_csv(in, SyntheticCohort::schema(), 2);
    CHECK(raw.times == a.times);
    CHECK(raw.events == a.events);
    CHECK(*raw.columns[2].cells[7] == a.covariates[7][2]);
    std::ostringstream side;
    write_cohort_sidecar(side, a);
    CHECK(side.str().find("\"seed\": 9") != std::string::npos);
}

TEST_CASE("minimum cohort and config validation") {
    const auto c = cohort(2, 0.5, 1);
    CHECK(c.size() == 2);
    CHECK(std::count(c.events.begin(), c.events.end(), 0) == 1);
    SynthConfig bad;
    bad.n_subjects = 1;
    CHECK_THROWS_AS(generate(bad), ConfigError);
    bad = {};
    bad.censor_fraction = 1.0;
    CHECK_THROWS_AS(generate(bad), ConfigError);
}
