#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <sys/wait.h>

#include "pairsurv/cli.hpp"
#include "pairsurv/metrics.hpp"
#include "pairsurv/model.hpp"
#include "pairsurv/synthgen.hpp"
#include "pairsurv/trainer.hpp"

using namespace pairsurv;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("pairsurv_cli_" + name)) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

const char* kSmallConfig = R"({"iterations": 20, "eval_every": 10, "batch_size": 2048,
  "model": {"hidden_layers": 1, "hidden_width": 8}, "num_intervals": 10, "bootstrap_reps": 50})";

}  // namespace

TEST_CASE("generate: minimum cohort and determinism") {
    Scratch s("generate");
    auto r = cli({"generate", "--n", "2", "--seed", "4", "--out", s / "a.csv"});
    REQUIRE(r.code == 0);
    const auto a = slurp(s / "a.csv");
    CHECK(std::count(a.begin(), a.end(), '\n') == 3);
    CHECK(r.out.find("wrote 2 subjects") != std::string::npos);
    r = cli({"generate", "--n", "2", "--seed", "4", "--out", s / "b.csv"});
    REQUIRE(r.code == 0);
    CHECK(slurp(s / "b.csv") == a);
    CHECK(slurp(s / "b.csv.meta.json") == slurp(s / "a.csv.meta.json"));
    CHECK(fs::exists(s / "a.csv.schema"));
}

TEST_CASE("generate: default cohort censors half") {
    Scratch s("generate_full");
    const auto r = cli({"generate", "--n", "30000", "--censor-frac", "0.5", "--out", s / "c.csv"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("censored: 15000 (50.00%)") != std::string::npos);
    const auto text = slurp(s / "c.csv");
    CHECK(std::count(text.begin(), text.end(), '\n') == 30001);
}

TEST_CASE("generate: invalid flag values and unwritable paths") {
    CHECK(cli({"generate", "--n", "1", "--out", "/tmp/x.csv"}).code == kExitUsage);
    CHECK(cli({"generate", "--censor-frac", "1.5", "--out", "/tmp/x.csv"}).code == kExitUsage);
    CHECK(cli({"generate", "--n", "abc", "--out", "/tmp/x.csv"}).code == kExitUsage);
    const auto r = cli({"generate", "--n", "5", "--out", "/nonexistent_dir/x.csv"});
    CHECK(r.code == kExitData);
    CHECK(r.err.find("/nonexistent_dir/x.csv") != std::string::npos);
}

TEST_CASE("usage errors") {
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"fit"}).code == kExitUsage);
    CHECK(cli({"report", "--run-dir", "x", "--bogus"}).code == kExitUsage);
    CHECK(cli({"train", "--data", "x.csv"}).code == kExitUsage);
}

TEST_CASE("--help on every subcommand lists the flags with defaults") {
    auto r = cli({"generate", "--help"});
    CHECK(r.code == 0);
    for (const char* f : {"--n", "--censor-frac", "--seed", "--k", "--out"}) CHECK(r.out.find(f) != std::string::npos);
    CHECK(r.out.find("30000") != std::string::npos);
    CHECK(r.out.find("0.5") != std::string::npos);
    r = cli({"train", "--help"});
    CHECK(r.code == 0);
    for (const char* f : {"--data", "--schema", "--config", "--out-dir", "--seed", "--threads", "--full-budget"})
        CHECK(r.out.find(f) != std::string::npos);
    r = cli({"evaluate", "--help"});
    CHECK(r.code == 0);
    for (const char* f : {"--data", "--checkpoint", "--out", "--reps", "--seed"}) CHECK(r.out.find(f) != std::string::npos);
    CHECK(r.out.find("1000") != std::string::npos);
    r = cli({"report", "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("--run-dir") != std::string::npos);
}

TEST_CASE("train: missing schema names the path") {
    Scratch s("train_missing");
    REQUIRE(cli({"generate", "--n", "50", "--out", s / "d.csv"}).code == 0);
    const auto r = cli({"train", "--data", s / "d.csv", "--schema", s / "nope.schema", "--out-dir", s / "run"});
    CHECK(r.code != 0);
    CHECK(r.err.find(s / "nope.schema") != std::string::npos);
    CHECK_FALSE(fs::exists(s / "run"));
}

TEST_CASE("train, report and evaluate round trip") {
    Scratch s("train");
    REQUIRE(cli({"generate", "--n", "1500", "--seed", "3", "--out", s / "d.csv"}).code == 0);
    spit(s / "cfg.json", kSmallConfig);
    auto r = cli({"train", "--data", s / "d.csv", "--schema", s / "d.csv.schema", "--config", s / "cfg.json",
                  "--out-dir", s / "run"});
    INFO(r.err);
    REQUIRE(r.code == 0);

    const auto snapshot = slurp(s / "run/config.json");
    CHECK(config_from_json(snapshot).batch_size == 2048);
    const auto report = slurp(s / "run/report.csv");
    CHECK(report.find("\naggregate,1,") != std::string::npos);
    CHECK(report.find("\naggregate,2,") != std::string::npos);

    r = cli({"report", "--run-dir", s / "run"});
    REQUIRE(r.code == 0);
    const std::regex row(R"(cause [12]  \d\.\d{3} \[\d\.\d{3}-\d\.\d{3}\])");
    std::size_t rows = 0;
    for (auto it = std::sregex_iterator(r.out.begin(), r.out.end(), row); it != std::sregex_iterator(); ++it) ++rows;
    CHECK(rows == 2);

    r = cli({"evaluate", "--data", s / "d.csv", "--checkpoint", s / "run/checkpoints/fold0.json", "--out",
             s / "eval.csv", "--reps", "100"});
    REQUIRE(r.code == 0);
    std::istringstream in(slurp(s / "eval.csv"));
    const auto back = read_report_csv(in);
    REQUIRE(back.size() == 2);
    CHECK(r.out.find("cause 1: C_t ") != std::string::npos);

    // Same flags twice reproduce the report byte for byte.
    r = cli({"train", "--data", s / "d.csv", "--schema", s / "d.csv.schema", "--config", s / "cfg.json", "--out-dir",
             s / "run2"});
    REQUIRE(r.code == 0);
    CHECK(slurp(s / "run2/report.csv") == report);
    CHECK(slurp(s / "run2/history.csv") == slurp(s / "run/history.csv"));
}

TEST_CASE("train: a bad config is a usage error, a diverging one a numeric error") {
    Scratch s("train_bad");
    REQUIRE(cli({"generate", "--n", "300", "--out", s / "d.csv"}).code == 0);
    spit(s / "bad.json", R"({"batch_sz": 10})");
    auto r = cli({"train", "--data", s / "d.csv", "--schema", s / "d.csv.schema", "--config", s / "bad.json",
                  "--out-dir", s / "run"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("batch_sz") != std::string::npos);
    spit(s / "huge.json", R"({"iterations": 20, "eval_every": 10, "lr": {"base": 1e306}, "bootstrap_reps": 20})");
    r = cli({"train", "--data", s / "d.csv", "--schema", s / "d.csv.schema", "--config", s / "huge.json",
             "--out-dir", s / "run"});
    CHECK(r.code == kExitNumeric);
    CHECK(r.err.find("iteration") != std::string::npos);
}

TEST_CASE("report formatting and incomplete run directories") {
    Scratch s("report");
    spit(s / "config.json", "{}");
    spit(s / "report.csv",
         "fold,cause,point,lo,hi,numerator,denominator\n"
         "0,1,0.61,0.6,0.62,61,100\n"
         "aggregate,1,0.603,0.593,0.613,603,1000\n"
         "aggregate,2,0.613,0.598,0.627,613,1000\n");
    auto r = cli({"report", "--run-dir", s.dir.string()});
    CHECK(r.code == kExitData);
    CHECK(r.err.find("history.csv") != std::string::npos);
    spit(s / "history.csv", "fold,iteration\n");
    r = cli({"report", "--run-dir", s.dir.string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("cause 1  0.603 [0.593-0.613]\n") != std::string::npos);
    CHECK(r.out.find("cause 2  0.613 [0.598-0.627]\n") != std::string::npos);
}

TEST_CASE("evaluate: empty file, header only, and dimension mismatch") {
    Scratch s("evaluate_errors");
    SynthConfig sc;
    sc.n_subjects = 200;
    const auto ds = to_dataset(generate(sc));
    ModelConfig mc;
    mc.input_dim = 3;
    mc.num_intervals = ds.num_intervals();
    save_checkpoint(s / "cp.json", Checkpoint{Model::init(mc), ds.grid, ds.schema, ds.covariate_names});

    spit(s / "empty.csv", "");
    auto r = cli({"evaluate", "--data", s / "empty.csv", "--checkpoint", s / "cp.json", "--out", s / "o.csv"});
    CHECK(r.code == kExitData);
    spit(s / "header.csv", "time,event,x1,x2,x3\n");
    r = cli({"evaluate", "--data", s / "header.csv", "--checkpoint", s / "cp.json", "--out", s / "o.csv"});
    CHECK(r.code == kExitData);
    spit(s / "wide.csv", "time,event,x1,x2,x3,x4\n1,1,0,0,0,0\n2,0,0,0,0,0\n");
    r = cli({"evaluate", "--data", s / "wide.csv", "--checkpoint", s / "cp.json", "--out", s / "o.csv"});
    CHECK(r.code == kExitData);
    CHECK(r.err.find("S=3") != std::string::npos);
    r = cli({"evaluate", "--data", s / "header.csv", "--checkpoint", s / "missing.json", "--out", s / "o.csv"});
    CHECK(r.code == kExitData);
}

TEST_CASE("evaluate: untrained checkpoints rank at random") {
    // A single random init is a fixed random function of x and can land
    // anywhere in roughly [0.3, 0.7]; the baseline holds over inits.
    Scratch s("evaluate_untrained");
    REQUIRE(cli({"generate", "--n", "5000", "--seed", "8", "--out", s / "d.csv"}).code == 0);
    const auto raw = load_csv(fs::path(s / "d.csv"), SyntheticCohort::schema(), 2);
    const auto ds = build_dataset(raw, SyntheticCohort::schema(), 20, 2);
    const int inits = 40;
    std::map<int, double> mean;
    for (int seed = 0; seed < inits; ++seed) {
        ModelConfig mc;
        mc.input_dim = 3;
        mc.num_intervals = ds.num_intervals();
        mc.seed = static_cast<std::uint64_t>(seed);
        save_checkpoint(s / "cp.json", Checkpoint{Model::init(mc), ds.grid, ds.schema, ds.covariate_names});
        const auto r = cli(
            {"evaluate", "--data", s / "d.csv", "--checkpoint", s / "cp.json", "--out", s / "o.csv", "--reps", "10"});
        REQUIRE(r.code == 0);
        std::istringstream in(slurp(s / "o.csv"));
        for (const auto& row : read_report_csv(in)) mean[row.cause] += row.point / inits;
    }
    REQUIRE(mean.size() == 2);
    for (const auto& [cause, c] : mean) {
        INFO("cause " << cause << " mean C " << c);
        CHECK(c >= 0.45);
        CHECK(c <= 0.55);
    }
}

TEST_CASE("evaluate on the training file is no worse than the test fold") {
    Scratch s("optimism");
    REQUIRE(cli({"generate", "--n", "3000", "--seed", "1", "--out", s / "d.csv"}).code == 0);
    spit(s / "cfg.json", R"({"iterations": 300, "eval_every": 50, "batch_size": 512, "num_intervals": 20,
        "model": {"hidden_width": 20}, "lr": {"base": 3e-3}, "bootstrap_reps": 50, "folds": 5})");
    auto r = cli({"train", "--data", s / "d.csv", "--schema", s / "d.csv.schema", "--config", s / "cfg.json",
                  "--out-dir", s / "run"});
    REQUIRE(r.code == 0);
    std::map<int, double> fold0;
    std::istringstream rep(slurp(s / "run/report.csv"));
    std::string line;
    std::getline(rep, line);
    while (std::getline(rep, line)) {
        if (line.rfind("0,", 0) != 0) continue;
        std::istringstream ss(line.substr(2));
        int cause;
        char c;
        double point;
        ss >> cause >> c >> point;
        fold0[cause] = point;
    }
    REQUIRE(fold0.size() == 2);
    r = cli({"evaluate", "--data", s / "d.csv", "--checkpoint", s / "run/checkpoints/fold0.json", "--out",
             s / "o.csv", "--reps", "50"});
    REQUIRE(r.code == 0);
    std::istringstream in(slurp(s / "o.csv"));
    for (const auto& row : read_report_csv(in)) {
        INFO("cause " << row.cause << " in-sample " << row.point << " test " << fold0[row.cause]);
        CHECK(row.point >= fold0[row.cause] - 0.02);
    }
}

TEST_CASE("installed binary reports exit codes") {
    const char* bin = std::getenv("PAIRSURV_BIN");
    if (bin == nullptr) return;
    auto status = [&](const std::string& args) {
        const int raw = std::system((std::string(bin) + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status("--help") == 0);
    CHECK(status("") == 1);
    CHECK(status("report --run-dir /nonexistent_run_dir") == 2);
}
