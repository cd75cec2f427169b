#include "gbmc/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <thread>

int main(int argc, char** argv) {
    CLI::App app{"Coupling of two geometric Brownian motions: analytic values, Monte Carlo and HJB experiments"};
    std::string run_path;
    std::string out_dir;
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    bool verbose = false;
    app.add_option("--run", run_path, "JSON run file")->required();
    app.add_option("--out", out_dir, "output directory (overrides the run file's \"output\")");
    app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--verbose", verbose, "progress messages on stderr");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    gbmc::io::json run_file;
    try {
        run_file = gbmc::io::read_json_file(run_path);
    } catch (const gbmc::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    if (out_dir.empty()) {
        const auto it = run_file.find("output");
        if (it != run_file.end() && it->is_string()) out_dir = it->get<std::string>();
    }
    if (out_dir.empty()) {
        std::cerr << "error: missing_output: pass --out or set \"output\" in the run file\n";
        return 1;
    }

    gbmc::RunContext ctx;
    ctx.threads = threads;
    ctx.verbose = verbose;
    try {
        const auto outcome = gbmc::run(run_file, out_dir, ctx);
        if (outcome.exit_code != 0)
            std::cerr << "error: " << (outcome.message.empty() ? outcome.reason : outcome.message) << '\n';
        else if (verbose)
            std::cerr << "[gbmc] done, artifacts in " << out_dir << '\n';
        return outcome.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: io_error: " << e.what() << '\n';
        return 1;
    }
}
