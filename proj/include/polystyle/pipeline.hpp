#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "polystyle/augment.hpp"
#include "polystyle/cluster.hpp"
#include "polystyle/embedder.hpp"
#include "polystyle/forest.hpp"
#include "polystyle/pairs.hpp"
#include "polystyle/siamese.hpp"

namespace polystyle {

struct ProfileStageConfig {
    bool forest_gating = true;
    double gate_max_proba = 0.5;
    bool include_external = false;
};

struct RankStageConfig {
    std::optional<std::string> speaker;  // first profiled speaker when unset
    std::string language = "*";
};

/// One section per stage. Paths are relative to the working directory.
struct PipelineConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    std::optional<std::filesystem::path> corpus;  // synthesized into output_dir when unset

    SynthConfig synth;
    EmbedderConfig embedder;
    ClusterConfig cluster;
    AugmentConfig augment;
    SplitConfig split;
    TrainConfig snn;
    ForestConfig forest;
    ProfileStageConfig profile;
    RankStageConfig rank;
};

/// Unknown keys are rejected with ConfigInvalid. Absent keys keep defaults.
PipelineConfig parse_pipeline_config(const std::string& json_text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
std::string pipeline_config_json(const PipelineConfig& cfg);

/// Stage names in pipeline order.
const std::vector<std::string>& stage_names();

/// Runs one stage. `inputs` replace the stage's default input paths
/// positionally; see stage_inputs for the order.
void run_stage(const std::string& stage, const PipelineConfig& cfg,
               const std::vector<std::filesystem::path>& inputs = {});

std::vector<std::filesystem::path> stage_inputs(const std::string& stage, const PipelineConfig& cfg);

/// synth (when no corpus is configured) through eval, then rank when
/// held-out candidates exist.
void run_pipeline(const PipelineConfig& cfg);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace polystyle
