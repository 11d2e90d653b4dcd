#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "brainattr/io_util.hpp"
#include "brainattr/pipeline.hpp"

namespace {

using brainattr::RunConfig;

struct CliOverrides {
    std::string config_path = "brainattr.json";
    int64_t seed = -1;
    int jobs = 0;
    std::string method;
    std::string layers;
    std::string thresholds;
};

RunConfig resolve_config(const CliOverrides& cli) {
    RunConfig config = RunConfig::load(cli.config_path);
    if (cli.seed >= 0) config.seed = static_cast<uint64_t>(cli.seed);
    if (cli.jobs > 0) config.jobs = cli.jobs;
    if (!cli.method.empty()) config.attribution.methods = {cli.method};
    if (!cli.layers.empty()) config.attribution.layers = cli.layers;
    if (!cli.thresholds.empty()) {
        std::vector<double> list;
        std::stringstream ss(cli.thresholds);
        std::string tok;
        while (std::getline(ss, tok, ',')) list.push_back(std::stod(tok));
        config.pipeline.thresholds = list;
    }
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient input attribution for brain-encoding and next-word prediction"};
    app.require_subcommand(1);

    CliOverrides cli;
    app.add_option("--config", cli.config_path, "path to the run configuration JSON")
        ->capture_default_str();
    app.add_option("--seed", cli.seed, "override the global seed");
    app.add_option("--jobs", cli.jobs, "cap on worker threads");
    app.add_option("--method", cli.method, "attribution method override (gxi|ig)");
    app.add_option("--layers", cli.layers, "attribution layers override (auto or comma-separated ids)");
    app.add_option("--thresholds", cli.thresholds, "comma-separated top-t%% threshold list");

    auto* config_cmd = app.add_subcommand("config", "configuration utilities");
    auto* config_init = config_cmd->add_subcommand("init", "write a default configuration file");
    bool force = false;
    config_init->add_flag("--force", force, "overwrite an existing file");

    std::function<void(const RunConfig&)> selected;
    struct Verb {
        const char* name;
        const char* help;
        void (*fn)(const RunConfig&);
    };
    const Verb verbs[] = {
        {"synth", "generate the synthetic corpus and (once designs exist) responses", brainattr::cmd_synth},
        {"train", "train the toy language model on the corpus", brainattr::cmd_train},
        {"embed", "build per-layer delayed design matrices", brainattr::cmd_embed},
        {"fit", "fit voxelwise ridge encoders with nested cross-validation", brainattr::cmd_fit},
        {"attribute", "compute word attributions for both tasks", brainattr::cmd_attribute},
        {"analyze", "compute IoU/CoM/spread/positional/feature metrics", brainattr::cmd_analyze},
        {"mask", "run the top-word masking experiments", brainattr::cmd_mask},
        {"report", "verify artifact digests and collate the summary", brainattr::cmd_report},
    };
    for (const auto& verb : verbs) {
        auto* sub = app.add_subcommand(verb.name, verb.help);
        sub->callback([&selected, fn = verb.fn] { selected = fn; });
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (config_init->parsed()) {
            if (brainattr::file_exists(cli.config_path) && !force) {
                std::cerr << "error: " << cli.config_path << " exists (use --force to overwrite)\n";
                return 2;
            }
            brainattr::write_file_atomic(cli.config_path, RunConfig().to_json());
            std::cout << "wrote default configuration to " << cli.config_path << "\n";
            return 0;
        }
        if (config_cmd->parsed()) {
            std::cerr << "error: unknown config subcommand (did you mean 'config init'?)\n";
            return 2;
        }
        selected(resolve_config(cli));
        return 0;
    } catch (const brainattr::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const brainattr::invalid_input& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const brainattr::dependency_error& e) {
        std::cerr << "dependency error: " << e.what() << "\n";
        return 3;
    } catch (const brainattr::numerical_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
