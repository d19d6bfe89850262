#pragma once

// Time-dependent concordance (C_t) per cause: over comparable pairs (i, j) with
// D_i = m and T_j > T_i, the share where R^m(T_i, x_i) > R^m(T_i, x_j).
// Pairs are unweighted here; IPW is only a training device.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pairsurv/data.hpp"
#include "pairsurv/model.hpp"

namespace pairsurv {

enum class TiePolicy {
    strict,  // exact risk ties earn nothing
    half,    // exact risk ties earn 1/2
};

struct ConcordanceCount {
    std::uint64_t concordant = 0;
    std::uint64_t tied = 0;
    std::uint64_t comparable = 0;

    double numerator(TiePolicy ties = TiePolicy::strict) const noexcept {
        return static_cast<double>(concordant) + (ties == TiePolicy::half ? 0.5 * static_cast<double>(tied) : 0.0);
    }
    double value(TiePolicy ties = TiePolicy::strict) const noexcept {
        return numerator(ties) / static_cast<double>(comparable);
    }
};

// Precomputes, per grid index, the later subjects sorted by their risk at that
// index, so a concordance count under any subject multiplicities costs O(n K).
class ConcordanceCounter {
public:
    // risks.rows() must equal time_index.size(); row r describes subject r.
    ConcordanceCounter(std::span<const int> time_index, std::span<const int> events, const CifTable& risks, int cause);

    std::size_t subjects() const noexcept { return n_; }
    int cause() const noexcept { return cause_; }
    ConcordanceCount count() const;
    // Each subject r contributes multiplicity[r] copies (bootstrap resamples).
    ConcordanceCount count(std::span<const std::uint32_t> multiplicity) const;

private:
    struct Slice {
        std::vector<std::uint32_t> later;  // subjects with time index > k, by ascending risk at k
        std::vector<std::uint32_t> lefts;  // subjects with D = cause and time index == k
        std::vector<std::uint32_t> below;  // per left: # of `later` with strictly smaller risk
        std::vector<std::uint32_t> upto;   // per left: # of `later` with risk <= its own
    };

    std::size_t n_;
    int cause_;
    std::vector<Slice> slices_;
};

ConcordanceCount concordance(std::span<const int> time_index, std::span<const int> events, const CifTable& risks,
                             int cause);

// Throws DataError when the cause has no comparable pairs.
double c_index(std::span<const int> time_index, std::span<const int> events, const CifTable& risks, int cause,
               TiePolicy ties = TiePolicy::strict);

// Subjects `ids` of a dataset; risks row r belongs to ids[r].
struct Outcomes {
    std::vector<int> time_index;
    std::vector<int> events;
};
Outcomes outcomes(const Dataset& dataset, std::span<const std::size_t> ids);
Outcomes outcomes(const Dataset& dataset);

struct BootstrapOptions {
    std::size_t reps = 1000;
    double level = 0.95;
    std::uint64_t seed = 0;
    TiePolicy ties = TiePolicy::strict;
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t used = 0;
    std::size_t discarded = 0;  // replicates without any comparable pair
};

// Percentile interval from resampling subjects with replacement. Fails when more
// than half the replicates have no comparable pair.
Interval bootstrap_ci(std::span<const int> time_index, std::span<const int> events, const CifTable& risks, int cause,
                      const BootstrapOptions& options);

struct CauseReport {
    int cause = 0;
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double numerator = 0.0;
    std::uint64_t denominator = 0;
};
using CtReport = std::vector<CauseReport>;

// Point estimate and bootstrap interval for every cause 1..risks.num_causes().
// The interval is widened to contain the point estimate if needed.
CtReport evaluate_ct(std::span<const int> time_index, std::span<const int> events, const CifTable& risks,
                     const BootstrapOptions& options);

// `cause,point,lo,hi,numerator,denominator`
void write_report_csv(std::ostream& out, const CtReport& report);
CtReport read_report_csv(std::istream& in);

// "0.603 [0.593-0.613]"
std::string format_estimate(double point, double lower, double upper);

}  // namespace pairsurv
