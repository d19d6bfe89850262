#include "pairsurv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "format.hpp"
#include "pairsurv/errors.hpp"
#include "pairsurv/numcore.hpp"

namespace pairsurv {

namespace {

void check_inputs(std::span<const int> time_index, std::span<const int> events, const CifTable& risks, int cause) {
    if (time_index.size() != events.size() || risks.rows() != time_index.size()) {
        throw std::invalid_argument("concordance: " + std::to_string(time_index.size()) + " times, " +
                                    std::to_string(events.size()) + " events, " + std::to_string(risks.rows()) +
                                    " risk rows");
    }
    if (cause < 1 || cause > risks.num_causes()) {
        throw ConfigError("cause " + std::to_string(cause) + " outside 1.." + std::to_string(risks.num_causes()));
    }
    for (int k : time_index) {
        if (k < 0 || static_cast<std::size_t>(k) >= risks.num_intervals()) {
            throw DataError("time index " + std::to_string(k) + " outside the risk table's grid");
        }
    }
}

double percentile(const std::vector<double>& sorted, double level) {
    const double pos = level * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

ConcordanceCounter::ConcordanceCounter(std::span<const int> time_index, std::span<const int> events,
                                       const CifTable& risks, int cause)
    : n_(time_index.size()), cause_(cause) {
    check_inputs(time_index, events, risks, cause);
    const std::size_t K = risks.num_intervals();
    slices_.resize(K);
    for (std::size_t i = 0; i < n_; ++i) {
        if (events[i] == cause) slices_[static_cast<std::size_t>(time_index[i])].lefts.push_back(static_cast<std::uint32_t>(i));
    }
    for (std::size_t k = 0; k < K; ++k) {
        Slice& s = slices_[k];
        if (s.lefts.empty()) continue;
        for (std::size_t j = 0; j < n_; ++j) {
            if (static_cast<std::size_t>(time_index[j]) > k) s.later.push_back(static_cast<std::uint32_t>(j));
        }
        if (s.later.empty()) {
            s.lefts.clear();
            continue;
        }
        std::vector<double> r;
        r.reserve(s.later.size());
        std::stable_sort(s.later.begin(), s.later.end(), [&](std::uint32_t a, std::uint32_t b) {
            return risks.risk(a, cause, k) < risks.risk(b, cause, k);
        });
        for (std::uint32_t j : s.later) r.push_back(risks.risk(j, cause, k));
        s.below.reserve(s.lefts.size());
        s.upto.reserve(s.lefts.size());
        for (std::uint32_t i : s.lefts) {
            const double ri = risks.risk(i, cause, k);
            s.below.push_back(static_cast<std::uint32_t>(std::lower_bound(r.begin(), r.end(), ri) - r.begin()));
            s.upto.push_back(static_cast<std::uint32_t>(std::upper_bound(r.begin(), r.end(), ri) - r.begin()));
        }
    }
}

ConcordanceCount ConcordanceCounter::count() const {
    ConcordanceCount c;
    for (const auto& s : slices_) {
        for (std::size_t l = 0; l < s.lefts.size(); ++l) {
            c.concordant += s.below[l];
            c.tied += s.upto[l] - s.below[l];
            c.comparable += s.later.size();
        }
    }
    return c;
}

ConcordanceCount ConcordanceCounter::count(std::span<const std::uint32_t> multiplicity) const {
    if (multiplicity.size() != n_) throw std::invalid_argument("multiplicity vector has the wrong length");
    ConcordanceCount c;
    std::vector<std::uint64_t> prefix;
    for (const auto& s : slices_) {
        if (s.lefts.empty()) continue;
        prefix.assign(s.later.size() + 1, 0);
        for (std::size_t r = 0; r < s.later.size(); ++r) prefix[r + 1] = prefix[r] + multiplicity[s.later[r]];
        for (std::size_t l = 0; l < s.lefts.size(); ++l) {
            const std::uint64_t w = multiplicity[s.lefts[l]];
            if (w == 0) continue;
            c.concordant += w * prefix[s.below[l]];
            c.tied += w * (prefix[s.upto[l]] - prefix[s.below[l]]);
            c.comparable += w * prefix.back();
        }
    }
    return c;
}

ConcordanceCount concordance(std::span<const int> time_index, std::span<const int> events, const CifTable& risks,
                             int cause) {
    return ConcordanceCounter(time_index, events, risks, cause).count();
}

double c_index(std::span<const int> time_index, std::span<const int> events, const CifTable& risks, int cause,
               TiePolicy ties) {
    const auto c = concordance(time_index, events, risks, cause);
    if (c.comparable == 0) throw DataError("C-index undefined for cause " + std::to_string(cause) + ": no comparable pairs");
    return c.value(ties);
}

Outcomes outcomes(const Dataset& dataset, std::span<const std::size_t> ids) {
    Outcomes o;
    o.time_index.reserve(ids.size());
    o.events.reserve(ids.size());
    for (std::size_t id : ids) {
        o.time_index.push_back(dataset.subjects.at(id).time_index);
        o.events.push_back(dataset.subjects.at(id).event);
    }
    return o;
}

Outcomes outcomes(const Dataset& dataset) {
    std::vector<std::size_t> ids(dataset.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return outcomes(dataset, ids);
}

Interval bootstrap_ci(std::span<const int> time_index, std::span<const int> events, const CifTable& risks, int cause,
                      const BootstrapOptions& options) {
    if (options.reps == 0) throw ConfigError("bootstrap needs at least one replicate");
    if (!(options.level > 0.0 && options.level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
    const ConcordanceCounter counter(time_index, events, risks, cause);
    if (counter.count().comparable == 0) {
        throw DataError("C-index undefined for cause " + std::to_string(cause) + ": no comparable pairs");
    }
    const std::size_t n = counter.subjects();
    Rng rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::uint32_t> mult(n);
    std::vector<double> values;
    values.reserve(options.reps);
    Interval out;
    for (std::size_t rep = 0; rep < options.reps; ++rep) {
        std::fill(mult.begin(), mult.end(), 0u);
        for (std::size_t d = 0; d < n; ++d) ++mult[pick(rng)];
        const auto c = counter.count(mult);
        if (c.comparable == 0) {
            ++out.discarded;
            continue;
        }
        values.push_back(c.value(options.ties));
    }
    if (2 * out.discarded > options.reps) {
        throw DataError("bootstrap for cause " + std::to_string(cause) + ": " + std::to_string(out.discarded) + " of " +
                        std::to_string(options.reps) + " replicates had no comparable pairs");
    }
    std::sort(values.begin(), values.end());
    out.used = values.size();
    out.lower = percentile(values, (1.0 - options.level) / 2.0);
    out.upper = percentile(values, (1.0 + options.level) / 2.0);
    return out;
}

CtReport evaluate_ct(std::span<const int> time_index, std::span<const int> events, const CifTable& risks,
                     const BootstrapOptions& options) {
    CtReport report;
    for (int m = 1; m <= risks.num_causes(); ++m) {
        const auto c = concordance(time_index, events, risks, m);
        if (c.comparable == 0) throw DataError("C-index undefined for cause " + std::to_string(m) + ": no comparable pairs");
        CauseReport r;
        r.cause = m;
        r.numerator = c.numerator(options.ties);
        r.denominator = c.comparable;
        r.point = c.value(options.ties);
        BootstrapOptions per_cause = options;
        per_cause.seed = options.seed + static_cast<std::uint64_t>(m);
        const auto ci = bootstrap_ci(time_index, events, risks, m, per_cause);
        r.lower = std::min(ci.lower, r.point);
        r.upper = std::max(ci.upper, r.point);
        report.push_back(r);
    }
    return report;
}

void write_report_csv(std::ostream& out, const CtReport& report) {
    out << "cause,point,lo,hi,numerator,denominator\n";
    for (const auto& r : report) {
        out << r.cause << ',' << detail::shortest(r.point) << ',' << detail::shortest(r.lower) << ','
            << detail::shortest(r.upper) << ',' << detail::shortest(r.numerator) << ',' << r.denominator << '\n';
    }
}

CtReport read_report_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("cause,point,lo,hi,numerator,denominator", 0) != 0) {
        throw DataError("report CSV lacks the expected header");
    }
    CtReport report;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::istringstream ss(line);
        CauseReport r;
        char c1, c2, c3, c4, c5;
        if (!(ss >> r.cause >> c1 >> r.point >> c2 >> r.lower >> c3 >> r.upper >> c4 >> r.numerator >> c5 >> r.denominator)) {
            throw DataError("malformed report row: " + line);
        }
        report.push_back(r);
    }
    return report;
}

std::string format_estimate(double point, double lower, double upper) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f [%.3f-%.3f]", point, lower, upper);
    return buf;
}

}  // namespace pairsurv
