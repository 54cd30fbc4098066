#include <exception>
#include <iostream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <incise/config.hpp>
#include <incise/errors.hpp>
#include <incise/pipeline.hpp>
#include <incise/util.hpp>

namespace {

// exit codes: 0 ok, 2 config, 3 data, 4 numerical
constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;
constexpr int kNumericalExit = 4;

struct SubArgs {
    std::string config;
    int threads = 0;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fluvial covariates and spatial point-process models for landslide inventories"};
    app.require_subcommand(1);

    struct Cmd {
        const char* name;
        const char* help;
        void (*run)(const incise::Config&, std::ostream&);
    };
    const Cmd cmds[] = {
        {"terrain", "derive flow routing, channels and steepness covariates", incise::cmd_terrain},
        {"mesh", "triangulate the study region for quadrature", incise::cmd_mesh},
        {"fit", "fit model presets and map posterior surfaces", incise::cmd_fit},
        {"cv", "cross-validate presets with proper scoring rules", incise::cmd_cv},
        {"sweep", "concavity sensitivity of the steepness ranking", incise::cmd_sweep},
        {"simulate", "generate synthetic inputs for pipeline exercises", incise::cmd_simulate},
    };

    std::vector<std::shared_ptr<SubArgs>> args;
    for (const Cmd& c : cmds) {
        auto a = std::make_shared<SubArgs>();
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", a->config, "flat key=value config file")->required();
        sub->add_option("--threads", a->threads, "cap worker threads (0 = hardware)");
        args.push_back(std::move(a));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << "config: " << e.what() << "\n";
        return kConfigExit;
    }

    try {
        for (std::size_t i = 0; i < std::size(cmds); ++i) {
            CLI::App* sub = app.get_subcommand(cmds[i].name);
            if (!sub->parsed()) continue;
            if (args[i]->threads > 0) incise::worker_threads() = args[i]->threads;
            const incise::Config cfg = incise::load_config(args[i]->config);
            cmds[i].run(cfg, std::cout);
            return 0;
        }
    } catch (const incise::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kConfigExit;
    } catch (const incise::DataError& e) {
        std::cerr << e.what() << "\n";
        return kDataExit;
    } catch (const incise::NumericalError& e) {
        std::cerr << e.what() << "\n";
        return kNumericalExit;
    } catch (const std::exception& e) {
        std::cerr << "numerical: " << e.what() << "\n";
        return kNumericalExit;
    }
    return kConfigExit;
}
