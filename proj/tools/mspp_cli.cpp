#include "mspp/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Joint multispecies presence-only / presence-absence point-process models"};
    app.require_subcommand(1, 1);

    mspp::CommandLine cli;
    std::uint64_t seed = 0;
    unsigned threads = 0;
    std::string out;

    const std::vector<std::pair<const char*, const char*>> commands = {
        {"simulate", "Simulate a synthetic data set"},
        {"fit", "Fit the joint model and write coefficients"},
        {"predict", "Write per-cell predictions from a coefficient file"},
        {"bootstrap", "Spatial block bootstrap percentile intervals"},
        {"cv", "Block cross-validation metrics"},
        {"compare", "Cross-validated comparison of methods"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", cli.config_path, "JSON config file")->required();
        sub->add_option("--seed", seed, "Override the config seed");
        sub->add_option("--threads", threads, "Worker threads (overrides MSPP_THREADS)");
        sub->add_option("--out", out, "Output directory");
        sub->add_flag("--deterministic", cli.deterministic, "Request reproducible reductions");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << mspp::error_record("usage", mspp::exit_config, e.what()) << "\n";
        return mspp::exit_config;
    }

    const CLI::App* chosen = app.get_subcommands().front();
    cli.command = chosen->get_name();
    if (chosen->count("--seed")) cli.seed = seed;
    if (chosen->count("--threads")) cli.threads = threads;
    if (chosen->count("--out")) cli.out = out;
    return mspp::run_command(cli, std::cerr);
}
