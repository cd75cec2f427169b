#include "gbmc/experiments.hpp"
#include "gbmc/io.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

using namespace gbmc;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("gbmc_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    [[nodiscard]] const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

struct CliResult {
    int code;
    std::string err;
};

CliResult run_cli(const fs::path& run_file, const fs::path& out, const std::string& extra = "") {
    const fs::path err = out.parent_path() / (out.filename().string() + ".stderr");
    const std::string cmd = std::string(GBMC_CLI_PATH) + " --run '" + run_file.string() + "' --out '" + out.string() +
                            "' " + extra + " 2> '" + err.string() + "' > /dev/null";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

fs::path write_run(const fs::path& dir, const std::string& name, const io::json& j) {
    const fs::path p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

io::json derive_run() {
    return io::json::parse(R"({"experiment": "derive",
        "spec": {"x": 2, "y": 1, "a1": 0, "a2": 0, "sigma1": 1, "sigma2": 1},
        "params": {"q": [0.5, 2], "T": [1]}})");
}

io::json simulate_run() {
    return io::json::parse(R"({"experiment": "simulate",
        "spec": {"x": 2, "y": 1, "a1": 0, "a2": 0.2, "sigma1": 1, "sigma2": 1.4},
        "params": {"policy": {"type": "constant", "c": 0.3},
                   "cfg": {"n_paths": 3000, "dt": 0.01, "horizon": 2, "seed": 5},
                   "survival_times": [0.5, 1, 2], "laplace_q": [1], "dump_hit_times": true}})");
}

// Shrinks Monte Carlo and grid sizes so every shipped run file finishes quickly.
void shrink(io::json& j) {
    if (!j.is_object()) return;
    for (auto& [key, value] : j.items()) {
        if (key == "n_paths") value = 2000;
        else if (key == "n_z") value = 64;
        else if (key == "n_t") value = 256;
        else shrink(value);
    }
}

}  // namespace

TEST(Cli, DeriveWritesArtifacts) {
    TempDir tmp;
    const CliResult r = run_cli(write_run(tmp.path(), "run.json", derive_run()), tmp.path() / "out");
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"derived.json", "psi.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(tmp.path() / "out" / f));
    const io::json m = io::json::parse(slurp(tmp.path() / "out" / "manifest.json"));
    EXPECT_EQ(m["status"], "ok");
    EXPECT_EQ(m["exit_code"], 0);
    EXPECT_EQ(m["experiment"], "derive");
}

TEST(Cli, UnknownFieldIsInputError) {
    TempDir tmp;
    io::json j = derive_run();
    j["spec"]["sigma3"] = 1;
    const CliResult r = run_cli(write_run(tmp.path(), "run.json", j), tmp.path() / "out");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("unknown_field"), std::string::npos) << r.err;

    io::json k = derive_run();
    k["params"]["bogus"] = true;
    EXPECT_EQ(run_cli(write_run(tmp.path(), "run2.json", k), tmp.path() / "out2").code, 1);
}

TEST(Cli, InvalidInputsExitOne) {
    TempDir tmp;
    io::json j = derive_run();
    j["spec"]["sigma2"] = -1;
    EXPECT_EQ(run_cli(write_run(tmp.path(), "a.json", j), tmp.path() / "a").code, 1);
    j = derive_run();
    j["spec"].erase("x");
    EXPECT_EQ(run_cli(write_run(tmp.path(), "b.json", j), tmp.path() / "b").code, 1);
    j = derive_run();
    j["experiment"] = "nope";
    EXPECT_EQ(run_cli(write_run(tmp.path(), "c.json", j), tmp.path() / "c").code, 1);
    std::ofstream(tmp.path() / "d.json") << "{ not json";
    EXPECT_EQ(run_cli(tmp.path() / "d.json", tmp.path() / "d").code, 1);
    EXPECT_EQ(run_cli(tmp.path() / "missing.json", tmp.path() / "e").code, 1);
}

TEST(Cli, ConsistencyFailureExitsTwo) {
    // mu > 0 needs a long horizon before every coupling has happened; 0.2 is far too short.
    TempDir tmp;
    const io::json j = io::json::parse(R"({"experiment": "reproduce-stationary",
        "spec": {"x": 2, "y": 1, "a1": 0, "a2": 1, "sigma1": 1, "sigma2": 1},
        "params": {"cfg": {"n_paths": 2000, "dt": 0.01, "horizon": 0.2, "seed": 1}}})");
    const CliResult r = run_cli(write_run(tmp.path(), "run.json", j), tmp.path() / "out");
    EXPECT_EQ(r.code, 2) << r.err;
    const io::json m = io::json::parse(slurp(tmp.path() / "out" / "manifest.json"));
    EXPECT_EQ(m["status"], "inconsistent");
}

TEST(Cli, ArtifactsStayInsideOutputDirectory) {
    TempDir tmp;
    const fs::path run = write_run(tmp.path(), "run.json", simulate_run());
    ASSERT_EQ(run_cli(run, tmp.path() / "out").code, 0);
    for (const auto& e : fs::directory_iterator(tmp.path())) {
        const std::string name = e.path().filename().string();
        EXPECT_TRUE(name == "out" || name == "run.json" || name == "out.stderr") << name;
    }
    ArtifactSink sink(tmp.path() / "out");
    EXPECT_THROW(sink.write("../escape.txt", "x"), InputError);
    EXPECT_THROW(sink.write("/tmp/escape.txt", "x"), InputError);
    EXPECT_THROW(sink.write("a/../../escape.txt", "x"), InputError);
    EXPECT_FALSE(fs::exists(tmp.path() / "escape.txt"));
}

TEST(Cli, RerunsAndThreadCountsAreBitIdentical) {
    TempDir tmp;
    const fs::path run = write_run(tmp.path(), "run.json", simulate_run());
    ASSERT_EQ(run_cli(run, tmp.path() / "a", "--threads 1").code, 0);
    ASSERT_EQ(run_cli(run, tmp.path() / "b", "--threads 1").code, 0);
    ASSERT_EQ(run_cli(run, tmp.path() / "c", "--threads 5").code, 0);
    for (const char* f : {"survival.csv", "laplace.csv", "simulate.json", "hit_times.bin", "hit_times.txt"}) {
        const std::string a = slurp(tmp.path() / "a" / f);
        EXPECT_FALSE(a.empty()) << f;
        EXPECT_EQ(a, slurp(tmp.path() / "b" / f)) << f;
        EXPECT_EQ(a, slurp(tmp.path() / "c" / f)) << f;
    }
}

TEST(Cli, OutputFieldUsedWithoutFlag) {
    TempDir tmp;
    io::json j = derive_run();
    j["output"] = (tmp.path() / "from_file").string();
    const fs::path run = write_run(tmp.path(), "run.json", j);
    const std::string cmd = std::string(GBMC_CLI_PATH) + " --run '" + run.string() + "' > /dev/null 2>&1";
    EXPECT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_TRUE(fs::exists(tmp.path() / "from_file" / "manifest.json"));
}

TEST(Cli, ShippedRunFilesSucceedWhenShrunk) {
    TempDir tmp;
    std::size_t count = 0;
    for (const auto& e : fs::directory_iterator(GBMC_RUNS_DIR)) {
        if (e.path().extension() != ".json") continue;
        io::json j = io::read_json_file(e.path().string());
        shrink(j);
        const std::string stem = e.path().stem().string();
        RunContext ctx;
        ctx.threads = 2;
        const RunOutcome r = gbmc::run(j, tmp.path() / stem, ctx);
        EXPECT_EQ(r.exit_code, 0) << stem << ": " << r.reason << " " << r.message;
        EXPECT_TRUE(fs::exists(tmp.path() / stem / "manifest.json")) << stem;
        ++count;
    }
    EXPECT_GE(count, 8u);
}

TEST(Cli, SwapSweepRowsMatch) {
    TempDir tmp;
    const io::json j = io::read_json_file(std::string(GBMC_RUNS_DIR) + "/sweep_swap.json");
    const RunOutcome r = gbmc::run(j, tmp.path(), RunContext{});
    ASSERT_EQ(r.exit_code, 0);
    EXPECT_EQ(slurp(tmp.path() / "row_0" / "psi.csv"), slurp(tmp.path() / "row_1" / "psi.csv"));
    std::istringstream csv(slurp(tmp.path() / "sweep.csv"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(csv, line)) ++lines;
    EXPECT_EQ(lines, 3u);
}

TEST(Io, ParseSpecStrict) {
    const io::json ok = io::json::parse(R"({"x": 2, "y": 1, "a1": 0, "a2": 0, "sigma1": 1, "sigma2": 1})");
    EXPECT_EQ(io::parse_spec(ok), (ProblemSpec{2, 1, 0, 0, 1, 1}));
    io::json extra = ok;
    extra["z"] = 1;
    try {
        io::parse_spec(extra);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_EQ(e.tag(), "unknown_field");
    }
    io::json missing = ok;
    missing.erase("a1");
    try {
        io::parse_spec(missing);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_EQ(e.tag(), "missing_field");
    }
    io::json text = ok;
    text["x"] = "2";
    EXPECT_THROW(io::parse_spec(text), InputError);
}

TEST(Io, ParsePolicies) {
    const DerivedConstants d = derive({2, 1, 0, 1, 1, 1});
    EXPECT_TRUE(std::holds_alternative<Mirror>(io::parse_policy(io::json::parse(R"({"type": "mirror"})"), d)));
    EXPECT_TRUE(
        std::holds_alternative<Synchronous>(io::parse_policy(io::json::parse(R"({"type": "synchronous"})"), d)));
    const auto c = io::parse_policy(io::json::parse(R"({"type": "constant", "c": -0.25})"), d);
    EXPECT_EQ(std::get<Constant>(c).c, -0.25);
    EXPECT_THROW(io::parse_policy(io::json::parse(R"({"type": "constant", "c": 2})"), d), InputError);
    EXPECT_THROW(io::parse_policy(io::json::parse(R"({"type": "teleport"})"), d), InputError);
    const auto s = io::parse_policy(io::json::parse(R"({"type": "switching-auto", "horizon": 1})"), d);
    EXPECT_TRUE(std::holds_alternative<Switching>(s));
    EXPECT_THROW(io::parse_policy(io::json::parse(R"({"type": "switching-auto", "horizon": 1})"), derive({2, 1, 0, -1, 1, 1})),
                 InputError);
}

TEST(Io, NumberFormatting) {
    EXPECT_EQ(io::fmt(0.1), "0.10000000000000001");
    EXPECT_EQ(io::fmt(kInf), "inf");
    EXPECT_EQ(io::fmt(-kInf), "-inf");
    EXPECT_EQ(io::num(-kInf), "-inf");
    EXPECT_EQ(io::num(0.5), 0.5);
}
