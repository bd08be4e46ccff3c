#include <CLI11.hpp>

#include "netstab/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Distributed online stabilization workbench"};
    app.require_subcommand(1);

    std::vector<std::string> scenario_paths;
    std::string out_dir = ".";
    int jobs = 1;
    CLI::App* run = app.add_subcommand("run", "Simulate scenarios into run directories");
    run->add_option("scenario", scenario_paths, "Scenario JSON file(s)")
        ->required()
        ->expected(-1);
    run->add_option("-o,--out", out_dir, "Output directory (per-scenario subdirs for batches)");
    run->add_option("--jobs", jobs, "Parallel workers for multi-scenario batches");

    std::string verify_dir;
    CLI::App* verify = app.add_subcommand("verify", "Re-check a stored run directory");
    verify->add_option("dir", verify_dir, "Run directory")->required();

    std::string probe_path;
    int trials = 32;
    CLI::App* probe = app.add_subcommand("probe", "Feasibility and sensitivity probe");
    probe->add_option("scenario", probe_path, "Scenario JSON file")->required();
    probe->add_option("--trials", trials, "Sampled models");

    std::string dir_a, dir_b, compare_out;
    CLI::App* compare = app.add_subcommand("compare", "Compare two stored runs");
    compare->add_option("dirA", dir_a, "First run directory")->required();
    compare->add_option("dirB", dir_b, "Second run directory")->required();
    compare->add_option("-o,--out", compare_out, "Write the CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? netstab::kExitOk : netstab::kExitUsage;
    }

    try {
        if (run->parsed()) return netstab::cmd_run(scenario_paths, out_dir, jobs);
        if (verify->parsed()) return netstab::cmd_verify(verify_dir, std::cout);
        if (probe->parsed()) return netstab::cmd_probe(probe_path, trials, std::cout);
        if (compare->parsed()) return netstab::cmd_compare(dir_a, dir_b, compare_out, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "netstab: " << e.what() << '\n';
        return netstab::kExitUsage;
    }
    return netstab::kExitUsage;
}
