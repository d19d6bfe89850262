#include "pairsurv/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pairsurv/errors.hpp"
#include "pairsurv/numcore.hpp"

namespace pairsurv {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cell));
            cell.clear();
        } else {
            cell += c;
        }
    }
    out.push_back(trim(cell));
    return out;
}

std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) return std::nullopt;
    return v;
}

std::optional<long long> parse_int(const std::string& s) {
    if (s.empty()) return std::nullopt;
    long long v = 0;
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) return std::nullopt;
    return v;
}

std::string where(std::size_t row, const std::string& column) {
    return "row " + std::to_string(row) + ", column '" + column + "'";
}

// Numeric order when both parse, otherwise lexicographic; numbers sort first.
bool level_less(const std::string& a, const std::string& b) {
    const auto na = parse_double(a);
    const auto nb = parse_double(b);
    if (na && nb) return *na < *nb || (*na == *nb && a < b);
    if (na != nb) return static_cast<bool>(na);
    return a < b;
}

double type7_quantile(const std::vector<double>& sorted, double level) {
    const double pos = level * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema

FeatureSchema parse_schema(std::istream& in) {
    FeatureSchema schema;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto colon = t.rfind(':');
        if (colon == std::string::npos) {
            throw DataError("schema line " + std::to_string(lineno) + ": expected name:kind, got '" + t + "'");
        }
        FeatureColumn col{trim(t.substr(0, colon)), FeatureKind::real};
        const std::string kind = trim(t.substr(colon + 1));
        if (kind == "real") {
            col.kind = FeatureKind::real;
        } else if (kind == "categorical") {
            col.kind = FeatureKind::categorical;
        } else {
            throw DataError("schema line " + std::to_string(lineno) + ": unknown kind '" + kind + "'");
        }
        if (col.name.empty() || col.name == "time" || col.name == "event") {
            throw DataError("schema line " + std::to_string(lineno) + ": invalid column name '" + col.name + "'");
        }
        for (const auto& existing : schema) {
            if (existing.name == col.name) throw DataError("schema: duplicate column '" + col.name + "'");
        }
        schema.push_back(std::move(col));
    }
    return schema;
}

FeatureSchema load_schema(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open schema file " + path.string());
    return parse_schema(in);
}

void write_schema(std::ostream& out, const FeatureSchema& schema) {
    for (const auto& col : schema) {
        out << col.name << ':' << (col.kind == FeatureKind::real ? "real" : "categorical") << '\n';
    }
}

// ---------------------------------------------------------------------------
// CSV

RawTable load_csv(std::istream& in, const FeatureSchema& schema, std::optional<int> max_cause) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV: missing header row");
    const auto header = split_csv_line(line);

    std::optional<std::size_t> time_col, event_col;
    std::vector<std::optional<std::size_t>> schema_pos(header.size());
    std::vector<bool> seen(schema.size(), false);
    for (std::size_t c = 0; c < header.size(); ++c) {
        const auto& name = header[c];
        if (name == "time") {
            time_col = c;
            continue;
        }
        if (name == "event") {
            event_col = c;
            continue;
        }
        auto it = std::find_if(schema.begin(), schema.end(), [&](const FeatureColumn& f) { return f.name == name; });
        if (it == schema.end()) throw DataError("unknown column '" + name + "' in CSV header");
        const auto idx = static_cast<std::size_t>(it - schema.begin());
        if (seen[idx]) throw DataError("duplicate column '" + name + "' in CSV header");
        seen[idx] = true;
        schema_pos[c] = idx;
    }
    if (!time_col) throw DataError("CSV header lacks a 'time' column");
    if (!event_col) throw DataError("CSV header lacks an 'event' column");
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (!seen[i]) throw DataError("schema column '" + schema[i].name + "' missing from CSV header");
    }

    RawTable table;
    table.columns.resize(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) table.columns[i].spec = schema[i];
    std::vector<std::vector<std::optional<std::string>>> categorical_text(schema.size());

    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                            " cells, found " + std::to_string(cells.size()));
        }
        const auto t = parse_double(cells[*time_col]);
        if (!t || !std::isfinite(*t)) throw DataError(where(row, "time") + ": unparseable time '" + cells[*time_col] + "'");
        if (*t < 0.0) throw DataError(where(row, "time") + ": negative time " + cells[*time_col]);
        const auto e = parse_int(cells[*event_col]);
        if (!e) throw DataError(where(row, "event") + ": unparseable event '" + cells[*event_col] + "'");
        if (*e < 0 || (max_cause && *e > *max_cause)) {
            throw DataError(where(row, "event") + ": event " + cells[*event_col] + " outside 0.." +
                            (max_cause ? std::to_string(*max_cause) : std::string("M")));
        }
        table.times.push_back(*t);
        table.events.push_back(static_cast<int>(*e));

        for (std::size_t c = 0; c < header.size(); ++c) {
            if (!schema_pos[c]) continue;
            const std::size_t idx = *schema_pos[c];
            const std::string& cell = cells[c];
            if (schema[idx].kind == FeatureKind::real) {
                if (cell.empty()) {
                    table.columns[idx].cells.emplace_back(std::nullopt);
                    continue;
                }
                const auto v = parse_double(cell);
                if (!v || !std::isfinite(*v)) throw DataError(where(row, schema[idx].name) + ": unparseable value '" + cell + "'");
                table.columns[idx].cells.emplace_back(*v);
            } else {
                categorical_text[idx].push_back(cell.empty() ? std::nullopt : std::optional<std::string>(cell));
            }
        }
    }

    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (schema[i].kind != FeatureKind::categorical) continue;
        auto& column = table.columns[i];
        for (const auto& v : categorical_text[i])
            if (v) column.levels.push_back(*v);
        std::sort(column.levels.begin(), column.levels.end(), level_less);
        column.levels.erase(std::unique(column.levels.begin(), column.levels.end()), column.levels.end());
        column.cells.reserve(categorical_text[i].size());
        for (const auto& v : categorical_text[i]) {
            if (!v) {
                column.cells.emplace_back(std::nullopt);
                continue;
            }
            const auto it = std::lower_bound(column.levels.begin(), column.levels.end(), *v, level_less);
            column.cells.emplace_back(static_cast<double>(it - column.levels.begin()));
        }
    }
    return table;
}

RawTable load_csv(const std::filesystem::path& path, const FeatureSchema& schema, std::optional<int> max_cause) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file " + path.string());
    return load_csv(in, schema, max_cause);
}

// ---------------------------------------------------------------------------
// Imputation and encoding

RawTable impute(const RawTable& raw) {
    RawTable out = raw;
    for (auto& column : out.columns) {
        std::size_t observed = 0;
        for (const auto& c : column.cells) observed += c.has_value();
        if (observed == column.cells.size()) continue;
        if (observed == 0) throw DataError("column '" + column.spec.name + "' has no observed values to impute from");

        double fill = 0.0;
        if (column.spec.kind == FeatureKind::real) {
            double total = 0.0;
            for (const auto& c : column.cells)
                if (c) total += *c;
            fill = total / static_cast<double>(observed);
        } else {
            std::map<double, std::size_t> counts;  // ordered by code
            for (const auto& c : column.cells)
                if (c) ++counts[*c];
            std::size_t best = 0;
            for (const auto& [code, n] : counts) {
                if (n > best) {
                    best = n;
                    fill = code;
                }
            }
        }
        for (auto& c : column.cells)
            if (!c) c = fill;
    }
    return out;
}

EncodedCovariates encode(const RawTable& complete) {
    EncodedCovariates enc;
    enc.rows = complete.rows();
    for (const auto& column : complete.columns) {
        if (column.cells.size() != enc.rows) throw DataError("column '" + column.spec.name + "' has a ragged length");
        if (column.spec.kind == FeatureKind::real) {
            enc.names.push_back(column.spec.name);
        } else {
            for (const auto& level : column.levels) enc.names.push_back(column.spec.name + "=" + level);
        }
    }
    enc.dim = enc.names.size();
    enc.values.assign(enc.rows * enc.dim, 0.0);
    std::size_t offset = 0;
    for (const auto& column : complete.columns) {
        for (std::size_t r = 0; r < enc.rows; ++r) {
            const auto& cell = column.cells[r];
            if (!cell) throw DataError("column '" + column.spec.name + "' still has missing values; impute first");
            if (column.spec.kind == FeatureKind::real) {
                enc.values[r * enc.dim + offset] = *cell;
            } else {
                enc.values[r * enc.dim + offset + static_cast<std::size_t>(*cell)] = 1.0;
            }
        }
        offset += column.spec.kind == FeatureKind::real ? 1 : column.levels.size();
    }
    return enc;
}

// ---------------------------------------------------------------------------
// Time grid

TimeGrid::TimeGrid(std::vector<double> boundaries) : boundaries_(std::move(boundaries)) {
    if (boundaries_.size() < 2) throw DataError("time grid needs at least 2 points");
    if (boundaries_[0] != 0.0) throw DataError("time grid must start at 0");
    for (std::size_t k = 1; k < boundaries_.size(); ++k) {
        if (!(boundaries_[k] > boundaries_[k - 1])) throw DataError("time grid must be strictly increasing");
    }
}

int TimeGrid::index_of(double t) const {
    const auto it = std::lower_bound(boundaries_.begin(), boundaries_.end(), t);
    if (it == boundaries_.end()) return static_cast<int>(boundaries_.size()) - 1;
    return static_cast<int>(it - boundaries_.begin());
}

Discretization discretize(std::span<const double> times, int num_intervals) {
    if (num_intervals < 2) throw ConfigError("number of grid points must be at least 2, got " + std::to_string(num_intervals));
    if (times.empty()) throw DataError("cannot discretize an empty set of times");
    std::vector<double> sorted(times.begin(), times.end());
    for (double t : sorted) {
        if (!(t >= 0.0) || !std::isfinite(t)) throw DataError("times must be finite and nonnegative");
    }
    std::sort(sorted.begin(), sorted.end());

    std::vector<double> bounds;
    bounds.reserve(static_cast<std::size_t>(num_intervals));
    for (int j = 0; j < num_intervals; ++j) {
        const double level = static_cast<double>(j) / static_cast<double>(num_intervals - 1);
        bounds.push_back(type7_quantile(sorted, level));
    }
    bounds[0] = 0.0;
    bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());

    Discretization out;
    if (bounds.size() < 2) {
        // Every time is 0; keep a valid two-point grid.
        bounds = {0.0, 1.0};
    }
    if (bounds.size() < static_cast<std::size_t>(num_intervals)) {
        out.warnings.push_back("time grid collapsed from " + std::to_string(num_intervals) + " to " +
                               std::to_string(bounds.size()) + " points (duplicate quantiles)");
    }
    out.grid = TimeGrid(std::move(bounds));
    out.time_index.reserve(times.size());
    for (double t : times) out.time_index.push_back(out.grid.index_of(t));
    return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly

namespace {

Dataset assemble(const RawTable& raw, const FeatureSchema& schema, TimeGrid grid, std::vector<int> time_index,
                 int num_causes) {
    const auto complete = impute(raw);
    const auto enc = encode(complete);
    Dataset ds;
    ds.grid = std::move(grid);
    ds.schema = schema;
    ds.covariate_names = enc.names;
    ds.num_causes = num_causes;
    ds.subjects.resize(raw.rows());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        auto& s = ds.subjects[i];
        s.covariates.assign(enc.values.begin() + static_cast<std::ptrdiff_t>(i * enc.dim),
                            enc.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * enc.dim));
        s.time_index = time_index[i];
        s.event = raw.events[i];
        if (s.event > num_causes) {
            throw DataError("row " + std::to_string(i + 1) + ": event " + std::to_string(s.event) + " exceeds M=" +
                            std::to_string(num_causes));
        }
    }
    return ds;
}

}  // namespace

Dataset build_dataset(const RawTable& raw, const FeatureSchema& schema, int num_intervals,
                      std::optional<int> num_causes, std::vector<std::string>* warnings) {
    if (raw.rows() == 0) throw DataError("dataset has no rows");
    const int m = num_causes.value_or(std::max(1, *std::max_element(raw.events.begin(), raw.events.end())));
    if (m < 1) throw ConfigError("number of causes must be at least 1");
    auto disc = discretize(raw.times, num_intervals);
    if (warnings) warnings->insert(warnings->end(), disc.warnings.begin(), disc.warnings.end());
    return assemble(raw, schema, std::move(disc.grid), std::move(disc.time_index), m);
}

Dataset build_dataset_on_grid(const RawTable& raw, const FeatureSchema& schema, const TimeGrid& grid, int num_causes) {
    if (raw.rows() == 0) throw DataError("dataset has no rows");
    std::vector<int> index;
    index.reserve(raw.rows());
    for (double t : raw.times) index.push_back(grid.index_of(t));
    return assemble(raw, schema, grid, std::move(index), num_causes);
}

// ---------------------------------------------------------------------------
// Splitting

std::vector<Split> stratified_split(std::span<const int> events, int folds, std::uint64_t seed) {
    if (folds < 3) throw ConfigError("need at least 3 folds for train/validation/test, got " + std::to_string(folds));
    std::map<int, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < events.size(); ++i) strata[events[i]].push_back(i);

    std::string small;
    for (const auto& [label, members] : strata) {
        if (members.size() < static_cast<std::size_t>(folds)) {
            small += (small.empty() ? "" : ", ") + ("event " + std::to_string(label) + " (" +
                                                   std::to_string(members.size()) + " subjects)");
        }
    }
    if (!small.empty()) throw DataError("strata smaller than the fold count " + std::to_string(folds) + ": " + small);

    Rng rng(seed);
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(folds));
    std::size_t deal = 0;
    for (auto& [label, members] : strata) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t id : members) groups[deal++ % groups.size()].push_back(id);
    }
    for (auto& g : groups) std::sort(g.begin(), g.end());

    std::vector<Split> splits(groups.size());
    for (std::size_t f = 0; f < groups.size(); ++f) {
        const std::size_t val = (f + 1) % groups.size();
        splits[f].test = groups[f];
        splits[f].validation = groups[val];
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (g == f || g == val) continue;
            splits[f].train.insert(splits[f].train.end(), groups[g].begin(), groups[g].end());
        }
        std::sort(splits[f].train.begin(), splits[f].train.end());
    }
    return splits;
}

std::vector<Split> stratified_split(const Dataset& dataset, int folds, std::uint64_t seed) {
    std::vector<int> events;
    events.reserve(dataset.size());
    for (const auto& s : dataset.subjects) events.push_back(s.event);
    return stratified_split(events, folds, seed);
}

}  // namespace pairsurv
