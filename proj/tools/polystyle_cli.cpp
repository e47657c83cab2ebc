#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "polystyle/error.hpp"
#include "polystyle/log.hpp"
#include "polystyle/pipeline.hpp"

namespace fs = std::filesystem;
using namespace polystyle;

namespace {

struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> inputs;
    std::optional<std::string> output;
    bool verbose = false;
    std::optional<std::string> speaker;
    std::optional<std::string> language;
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("--config", f.config, "pipeline config JSON");
    sub->add_option("--seed", f.seed, "root seed (overrides the config)");
    sub->add_option("--input", f.inputs, "input paths, replacing the stage defaults in order");
    sub->add_option("--output", f.output, "output directory (overrides the config)");
    sub->add_flag("--verbose", f.verbose, "progress on stderr");
}

int exit_code(const Error& e) {
    if (is_provider_error(e.code())) return 3;
    if (e.code() == Errc::ConfigInvalid) return 1;
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Speaker style profiles from text embeddings"};
    app.require_subcommand(1);
    Flags flags;
    std::vector<std::pair<std::string, CLI::App*>> subs;
    auto add = [&](const std::string& name, const std::string& help) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub, flags);
        subs.emplace_back(name, sub);
        return sub;
    };
    add("synth", "generate a synthetic corpus with known style factors");
    add("embed", "embed corpus records");
    add("cluster", "agglomerative clustering of the embeddings");
    add("augment", "keep stylistically consistent external text per cluster");
    add("pairs", "triplets, contrastive pairs and stratified splits");
    add("train-snn", "train the Siamese encoder");
    add("train-rfc", "train the random forest pair classifier");
    add("profile", "build speaker style profiles");
    CLI::App* rank = add("rank", "rank candidate texts against a profile");
    rank->add_option("--speaker", flags.speaker, "profile speaker");
    rank->add_option("--language", flags.language, "profile language, or * for pooled");
    add("eval", "validation and test metrics");
    add("pipeline", "run every stage in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    log::set_verbose(flags.verbose);

    std::string stage;
    for (const auto& [name, sub] : subs) {
        if (sub->parsed()) stage = name;
    }

    try {
        PipelineConfig cfg = flags.config ? load_pipeline_config(*flags.config) : PipelineConfig{};
        if (flags.seed) cfg.seed = *flags.seed;
        if (flags.output) cfg.output_dir = *flags.output;
        if (flags.speaker) cfg.rank.speaker = *flags.speaker;
        if (flags.language) cfg.rank.language = *flags.language;

        if (stage == "pipeline") {
            if (!flags.inputs.empty()) {
                std::cerr << "error: pipeline takes no --input; set \"corpus\" in the config\n";
                return 1;
            }
            run_pipeline(cfg);
        } else {
            std::vector<fs::path> inputs(flags.inputs.begin(), flags.inputs.end());
            run_stage(stage, cfg, inputs);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
