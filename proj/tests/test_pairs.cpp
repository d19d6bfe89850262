#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include "oracles.hpp"
#include "pairsurv/errors.hpp"
#include "pairsurv/pairs.hpp"

using namespace pairsurv;

namespace {

Dataset tiny(const std::vector<std::pair<int, int>>& time_event, int M) {
    Dataset ds;
    int K = 1;
    for (auto [t, e] : time_event) K = std::max(K, t + 1);
    std::vector<double> b;
    for (int k = 0; k < std::max(K, 2); ++k) b.push_back(k);
    ds.grid = TimeGrid(b);
    ds.num_causes = M;
    ds.covariate_names = {"x"};
    for (auto [t, e] : time_event) ds.subjects.push_back({{0.0}, t, e});
    return ds;
}

std::vector<std::tuple<std::size_t, std::size_t>> ids(const std::vector<ComparablePair>& v) {
    std::vector<std::tuple<std::size_t, std::size_t>> out;
    for (const auto& p : v) out.emplace_back(p.left, p.right);
    return out;
}

}  // namespace

TEST_CASE("comparable set: small example") {
    // (T=1,D=1), (T=2,D=0), (T=3,D=2) as subjects 0, 1, 2
    const auto ds = tiny({{1, 1}, {2, 0}, {3, 2}}, 2);
    const auto x1 = build_comparable_set(ds, 1);
    CHECK(ids(x1) == std::vector<std::tuple<std::size_t, std::size_t>>{{0, 1}, {0, 2}});
    CHECK(build_comparable_set(ds, 2).empty());
    for (const auto& p : x1) CHECK(p.cause == 1);
}

TEST_CASE("comparable set: degenerate cases") {
    CHECK(build_comparable_set(tiny({{1, 0}, {2, 0}, {3, 0}}, 2), 1).empty());
    CHECK(build_comparable_set(tiny({{1, 0}, {2, 0}, {3, 0}}, 2), 2).empty());
    CHECK(build_comparable_set(tiny({{2, 1}, {2, 0}}, 1), 1).empty());
    CHECK_THROWS_AS(build_comparable_set(tiny({{1, 1}}, 1), 0), ConfigError);
    CHECK_THROWS_AS(build_comparable_set(tiny({{1, 1}}, 1), 2), ConfigError);
}

TEST_CASE("comparable set and pair index match the double loop") {
    std::mt19937_64 rng(123);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng() % 500;
        const int M = 1 + static_cast<int>(rng() % 3);
        const int K = 2 + static_cast<int>(rng() % 15);
        const auto ds = oracle::random_dataset(n, M, K, 1, 0.4, rng);
        const PairIndex index(ds);
        std::uint64_t total = 0;
        for (int m = 1; m <= M; ++m) {
            const auto expected = oracle::comparable_pairs(ds, m);
            const auto got = build_comparable_set(ds, m);
            REQUIRE(got.size() == expected.size());
            // Sorted by (left time, left id, right id); compare as sets and check order.
            std::set<std::pair<std::size_t, std::size_t>> a, b;
            for (const auto& p : expected) a.insert({p.left, p.right});
            for (const auto& p : got) b.insert({p.left, p.right});
            CHECK(a == b);
            CHECK(std::is_sorted(got.begin(), got.end(), [&](const ComparablePair& x, const ComparablePair& y) {
                return std::tuple(ds.subjects[x.left].time_index, x.left, x.right) <
                       std::tuple(ds.subjects[y.left].time_index, y.left, y.right);
            }));
            CHECK(index.size(m) == expected.size());
            std::set<std::pair<std::size_t, std::size_t>> c;
            for (const auto& p : index.pairs(m)) {
                c.insert({p.left, p.right});
                CHECK(ds.subjects[p.left].event == m);
                CHECK(ds.subjects[p.right].time_index > ds.subjects[p.left].time_index);
                CHECK(p.weight > 0);
            }
            CHECK(c == a);
            total += expected.size();
        }
        CHECK(index.size() == total);
    }
}

TEST_CASE("pair index over a member subset") {
    std::mt19937_64 rng(5);
    const auto ds = oracle::random_dataset(200, 2, 8, 1, 0.3, rng);
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); i += 3) members.push_back(i);
    const PairIndex index(ds, members);
    std::vector<int> t, e;
    for (auto i : members) {
        t.push_back(ds.subjects[i].time_index);
        e.push_back(ds.subjects[i].event);
    }
    for (int m = 1; m <= 2; ++m) {
        const auto expected = oracle::comparable_pairs(t, e, m);
        std::set<std::pair<std::size_t, std::size_t>> a, b;
        for (const auto& p : expected) a.insert({members[p.left], members[p.right]});
        for (const auto& p : index.pairs(m)) b.insert({p.left, p.right});
        CHECK(a == b);
        CHECK(build_comparable_set(ds, members, m).size() == expected.size());
    }
}

TEST_CASE("pair index flat access enumerates every pair once") {
    std::mt19937_64 rng(6);
    const auto ds = oracle::random_dataset(60, 3, 6, 1, 0.3, rng);
    const PairIndex index(ds);
    std::set<std::tuple<std::size_t, std::size_t, int>> seen;
    for (std::uint64_t f = 0; f < index.size(); ++f) {
        const auto p = index.at(f);
        CHECK(seen.insert({p.left, p.right, p.cause}).second);
    }
    CHECK(seen.size() == index.size());
    CHECK_THROWS(index.at(index.size()));
    std::uint64_t by_cells = 0;
    for (int m = 1; m <= 3; ++m)
        for (int k = 0; k < 6; ++k) by_cells += index.count(m, k);
    CHECK(by_cells == index.size());
}

TEST_CASE("ipw: single occupied cell gives unit weights") {
    const auto ds = tiny({{1, 1}, {1, 1}, {2, 0}, {3, 2}, {3, 0}}, 2);
    const auto w = ipw_weights(PairIndex(ds));
    CHECK(w.occupied_cells() == 1);
    for (const auto& p : w.pairs(1)) CHECK(p.weight == 1.0);
}

TEST_CASE("ipw: 75/25 split gives 4/3 and 4") {
    // Cell (1,0): subject 0 at k=0 with 3 later subjects. Cell (2,1): subject 1 at k=1 with 1 later subject.
    const auto ds = tiny({{0, 1}, {1, 2}, {1, 0}, {2, 0}}, 2);
    const PairIndex index(ds);
    REQUIRE(index.count(1, 0) == 3);
    REQUIRE(index.count(2, 1) == 1);
    const auto w = ipw_weights(index);
    CHECK(w.weight(1, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
    CHECK(w.weight(2, 1) == 4.0);
    for (const auto& p : w.pairs(1)) CHECK(p.weight == w.weight(1, 0));
    for (const auto& p : w.pairs(2)) CHECK(p.weight == 4.0);
}

TEST_CASE("ipw: weight * frequency * total summed over pairs equals cells * total") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        const auto ds = oracle::random_dataset(300, 3, 10, 1, 0.5, rng);
        const auto w = ipw_weights(PairIndex(ds));
        const double total = static_cast<double>(w.size());
        double sum = 0;
        std::map<std::pair<int, int>, double> cell_weight;
        for (int m = 1; m <= 3; ++m) {
            for (const auto& p : w.pairs(m)) {
                const int k = ds.subjects[p.left].time_index;
                const double f = static_cast<double>(w.count(m, k)) / total;
                sum += p.weight * f * total;
                auto [it, fresh] = cell_weight.emplace(std::pair{m, k}, p.weight);
                if (!fresh) CHECK(it->second == p.weight);
                CHECK(std::isfinite(p.weight));
            }
        }
        // Each pair contributes total / count * count / total * total; cell sums are count * total / count.
        const double cells = static_cast<double>(w.occupied_cells());
        CHECK(sum / total == doctest::Approx(static_cast<double>(w.size())));
        double per_cell = 0;
        for (int m = 1; m <= 3; ++m)
            for (int k = 0; k < 10; ++k)
                if (w.count(m, k) > 0) per_cell += w.weight(m, k) * static_cast<double>(w.count(m, k)) / total * total;
        CHECK(per_cell == doctest::Approx(cells * total).epsilon(1e-12));
    }
}

TEST_CASE("sampling: forced single pair") {
    const auto ds = tiny({{0, 1}, {1, 0}}, 1);
    const PairIndex index(ds);
    Rng rng(3);
    const auto batch = sample_batch(index, 3, rng);
    REQUIRE(batch.size() == 3);
    for (const auto& p : batch) CHECK(p == ComparablePair{0, 1, 1, 1.0});
}

TEST_CASE("sampling: errors") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_batch(PairIndex(tiny({{0, 0}, {1, 0}}, 1)), 3, rng), DataError);
    CHECK_THROWS_AS(sample_batch(PairIndex(tiny({{0, 1}, {1, 0}}, 1)), 0, rng), ConfigError);
}

TEST_CASE("sampling: uniform over four equal cause lists") {
    // One left subject per cause at k=0, and 5 later subjects: 5 pairs per cause.
    const auto ds = tiny({{0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 0}, {1, 0}, {2, 0}, {2, 0}, {3, 0}}, 4);
    const PairIndex index(ds);
    for (int m = 1; m <= 4; ++m) REQUIRE(index.size(m) == 5);
    Rng rng(99);
    std::array<double, 5> hits{};
    const std::size_t draws = 1000000;
    for (const auto& p : sample_batch(index, draws, rng)) hits[static_cast<std::size_t>(p.cause)] += 1;
    for (int m = 1; m <= 4; ++m) CHECK(std::abs(hits[static_cast<std::size_t>(m)] / draws - 0.25) < 0.005);
}

TEST_CASE("sampling: deterministic under seed") {
    std::mt19937_64 g(4);
    const auto ds = oracle::random_dataset(100, 2, 5, 1, 0.3, g);
    const PairIndex index(ds);
    Rng a(8), b(8), c(9);
    const auto x = sample_batch(index, 50, a);
    CHECK(x == sample_batch(index, 50, b));
    CHECK(x != sample_batch(index, 50, c));
}
