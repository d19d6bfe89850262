#include "pairsurv/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "pairsurv/data.hpp"
#include "pairsurv/errors.hpp"
#include "pairsurv/metrics.hpp"
#include "pairsurv/model.hpp"
#include "pairsurv/synthgen.hpp"
#include "pairsurv/trainer.hpp"

namespace pairsurv {

namespace fs = std::filesystem;

namespace {

std::string percent(std::size_t part, std::size_t whole) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole));
    return buf;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

// --- generate -------------------------------------------------------------

struct GenerateArgs {
    std::size_t n = 30000;
    double censor_frac = 0.5;
    std::uint64_t seed = 0;
    int k = 30;
    std::string out;
};

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
    SynthConfig cfg;
    cfg.n_subjects = a.n;
    cfg.censor_fraction = a.censor_frac;
    cfg.seed = a.seed;
    cfg.num_intervals = a.k;
    const auto cohort = generate(cfg);

    const fs::path path(a.out);
    {
        auto csv = open_output(path);
        write_cohort_csv(csv, cohort);
        if (!csv) throw DataError("failed writing " + path.string());
    }
    {
        auto side = open_output(fs::path(a.out + ".meta.json"));
        write_cohort_sidecar(side, cohort);
    }
    {
        auto schema = open_output(fs::path(a.out + ".schema"));
        write_schema(schema, SyntheticCohort::schema());
    }
    std::size_t counts[3] = {0, 0, 0};
    for (int e : cohort.events) ++counts[e];
    out << "wrote " << cohort.size() << " subjects to " << path.string() << '\n'
        << "  censored: " << counts[0] << " (" << percent(counts[0], cohort.size()) << ")\n"
        << "  cause 1:  " << counts[1] << " (" << percent(counts[1], cohort.size()) << ")\n"
        << "  cause 2:  " << counts[2] << " (" << percent(counts[2], cohort.size()) << ")\n";
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string schema;
    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    bool full_budget = false;
};

void cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    if (a.threads) cfg.threads = *a.threads;
    if (a.full_budget) cfg.iterations = kFullIterationBudget;
    cfg.validate();

    const auto schema = load_schema(a.schema);
    const auto raw = load_csv(fs::path(a.data), schema);
    std::vector<std::string> warnings;
    const auto dataset = build_dataset(raw, schema, cfg.num_intervals, std::nullopt, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << '\n';

    out << "training " << cfg.folds << " folds on " << dataset.size() << " subjects (S=" << dataset.covariate_dim()
        << ", M=" << dataset.num_causes << ", K=" << dataset.num_intervals() << ", " << cfg.iterations
        << " iterations)\n";
    const auto result = run_cv(dataset, cfg);
    write_run_dir(a.out_dir, dataset, cfg, result);
    for (const auto& row : result.aggregate) {
        out << "cause " << row.cause << ": mean test C_t " << format_estimate(row.mean, row.min, row.max)
            << " (across-fold range)\n";
    }
    out << "run written to " << a.out_dir << '\n';
}

// --- evaluate -------------------------------------------------------------

struct EvaluateArgs {
    std::string data;
    std::string checkpoint;
    std::string out;
    std::size_t reps = 1000;
    std::uint64_t seed = 0;
};

std::size_t covariate_columns_in_header(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file " + path.string());
    std::string header;
    if (!std::getline(in, header)) throw DataError("empty data file " + path.string());
    std::size_t columns = 1;
    for (char c : header) columns += c == ',';
    std::size_t reserved = 0;
    std::istringstream ss(header);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        reserved += cell == "time" || cell == "event";
    }
    return columns - reserved;
}

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
    const auto cp = load_checkpoint(a.checkpoint);
    const std::size_t expected = cp.model.config().input_dim;
    const std::size_t found_columns = covariate_columns_in_header(a.data);
    if (found_columns != cp.schema.size()) {
        throw DataError("dimension mismatch: checkpoint expects S=" + std::to_string(expected) + " from " +
                        std::to_string(cp.schema.size()) + " covariate columns, data file has " +
                        std::to_string(found_columns) + " covariate columns");
    }
    const auto raw = load_csv(fs::path(a.data), cp.schema, cp.model.config().num_causes);
    if (raw.rows() == 0) throw DataError("data file " + a.data + " has no rows");
    const auto dataset = build_dataset_on_grid(raw, cp.schema, cp.grid, cp.model.config().num_causes);
    if (dataset.covariate_names != cp.covariate_names) {
        throw DataError("dimension mismatch: checkpoint expects S=" + std::to_string(expected) +
                        " encoded covariates, data encodes to S=" + std::to_string(dataset.covariate_names.size()));
    }
    const auto cifs = cp.model.predict(dataset);
    const auto o = outcomes(dataset);
    BootstrapOptions boot;
    boot.reps = a.reps;
    boot.seed = a.seed;
    const auto report = evaluate_ct(o.time_index, o.events, cifs, boot);
    {
        auto csv = open_output(a.out);
        write_report_csv(csv, report);
    }
    for (const auto& r : report) {
        out << "cause " << r.cause << ": C_t " << format_estimate(r.point, r.lower, r.upper) << " over "
            << r.denominator << " comparable pairs\n";
    }
}

// --- report ---------------------------------------------------------------

void cmd_report(const std::string& run_dir, std::ostream& out) {
    const fs::path dir(run_dir);
    std::string missing;
    for (const char* name : {"config.json", "history.csv", "report.csv"}) {
        if (!fs::exists(dir / name)) missing += (missing.empty() ? "" : ", ") + std::string(name);
    }
    if (!missing.empty()) throw DataError("incomplete run directory " + run_dir + ": missing " + missing);

    std::ifstream in(dir / "report.csv");
    std::string line;
    if (!std::getline(in, line) || line != "fold,cause,point,lo,hi,numerator,denominator") {
        throw DataError("unexpected header in " + (dir / "report.csv").string());
    }
    std::vector<std::string> rows;
    while (std::getline(in, line)) {
        if (line.rfind("aggregate,", 0) != 0) continue;
        std::istringstream ss(line.substr(10));
        int cause = 0;
        double point = 0, lo = 0, hi = 0;
        char c1, c2, c3;
        if (!(ss >> cause >> c1 >> point >> c2 >> lo >> c3 >> hi)) throw DataError("malformed report row: " + line);
        rows.push_back("cause " + std::to_string(cause) + "  " + format_estimate(point, lo, hi));
    }
    if (rows.empty()) throw DataError("report.csv in " + run_dir + " has no aggregate rows");
    out << "cause  C_t [lo-hi]\n";
    for (const auto& r : rows) out << r << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pairwise competing-risks survival training and C_t evaluation", "pairsurv"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic two-cause competing-risks cohort");
    g->add_option("--n", gen.n, "Number of subjects");
    g->add_option("--censor-frac", gen.censor_frac, "Fraction of subjects censored, in [0, 1)");
    g->add_option("--seed", gen.seed, "Generator seed");
    g->add_option("--k", gen.k, "Time grid size recorded in the sidecar");
    g->add_option("--out", gen.out, "Output CSV (sidecars: <out>.meta.json, <out>.schema)")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Cross-validated training; writes a run directory");
    t->add_option("--data", tr.data, "Input CSV (time,event,covariates...)")->required();
    t->add_option("--schema", tr.schema, "Feature schema sidecar (name:kind per line)")->required();
    t->add_option("--config", tr.config, "JSON training config; defaults apply when omitted");
    t->add_option("--out-dir", tr.out_dir, "Run directory to create")->required();
    t->add_option("--seed", tr.seed, "Override the config seed");
    t->add_option("--threads", tr.threads, "Override the number of folds trained concurrently");
    t->add_flag("--full-budget", tr.full_budget, "Train for 100000 iterations");

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "Score a data file with a checkpoint");
    e->add_option("--data", ev.data, "Input CSV")->required();
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON from a run directory")->required();
    e->add_option("--out", ev.out, "Output report CSV")->required();
    e->add_option("--reps", ev.reps, "Bootstrap replicates");
    e->add_option("--seed", ev.seed, "Bootstrap seed");

    std::string run_dir;
    auto* r = app.add_subcommand("report", "Print the per-cause C_t table of a run");
    r->add_option("--run-dir", run_dir, "Run directory written by train")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (g->parsed()) {
            cmd_generate(gen, out);
        } else if (t->parsed()) {
            cmd_train(tr, out, err);
        } else if (e->parsed()) {
            cmd_evaluate(ev, out);
        } else if (r->parsed()) {
            cmd_report(run_dir, out);
        }
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& ex) {
        err << "numeric failure: " << ex.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitData;
    }
    return kExitOk;
}

}  // namespace pairsurv
