/*
   Copyright 2026 The smeadmm Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

// smeadmm command-line front end.
//
//   smeadmm run [--preset NAME] [--config PATH] [--seed N] [--runs N] [--out DIR] [--threads N]
//   smeadmm validate [same flags]
//   smeadmm list-presets [FILTER]

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "smeadmm/errors.hpp"
#include "smeadmm/experiment.hpp"

namespace {

struct Flags {
    std::optional<std::string> preset;
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> runs;
    std::optional<std::string> out;
    std::optional<std::size_t> threads;
};

void add_flags(CLI::App* cmd, Flags& f)
{
    cmd->add_option("--preset", f.preset, "Built-in config (see list-presets)");
    cmd->add_option("--config", f.config, "JSON config or manifest file");
    cmd->add_option("--seed", f.seed, "Master seed");
    cmd->add_option("--runs", f.runs, "Number of runs (n_runs)");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--threads", f.threads, "Worker threads (0: machine parallelism)");
}

smeadmm::ExperimentConfig resolve(const Flags& f)
{
    smeadmm::ConfigSources src;
    src.preset = f.preset;
    src.config_path = f.config;
    if (const char* env = std::getenv("SME_ADMM_SEED"); env != nullptr && *env != '\0') src.env_seed = env;
    if (f.seed) src.overrides["seed"] = *f.seed;
    if (f.runs) src.overrides["n_runs"] = *f.runs;
    if (f.out) src.overrides["output_dir"] = *f.out;
    if (f.threads) src.overrides["threads"] = *f.threads;
    return smeadmm::resolve_config(src);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Stochastic ADMM and its modified equation: experiment runner"};
    app.set_version_flag("--version", std::string(smeadmm::kToolVersion));
    app.require_subcommand(1);

    Flags run_flags, validate_flags;
    auto* run_cmd = app.add_subcommand("run", "Run an experiment and write CSVs and manifest.json");
    add_flags(run_cmd, run_flags);
    auto* validate_cmd = app.add_subcommand("validate", "Resolve and check a config, print it as JSON");
    add_flags(validate_cmd, validate_flags);
    std::string filter;
    auto* list_cmd = app.add_subcommand("list-presets", "List built-in configs");
    list_cmd->add_option("filter", filter, "Substring of the preset name");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*list_cmd) {
            std::cout << smeadmm::list_presets(filter);
            return 0;
        }
        if (*validate_cmd) {
            std::cout << smeadmm::to_json(resolve(validate_flags)).dump(2) << "\n";
            return 0;
        }
        const smeadmm::ExperimentConfig cfg = resolve(run_flags);
        const smeadmm::Json manifest = smeadmm::run(cfg);
        std::cout << "wrote " << cfg.output_dir << "/manifest.json\n" << manifest["results"].dump() << "\n";
        return 0;
    } catch (const smeadmm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const smeadmm::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
