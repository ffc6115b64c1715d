#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capl/eval_runner.hpp"
#include "capl/postprocess.hpp"
#include "capl/trainer.hpp"

namespace capl {

/// End-to-end experiment: generate both domains, train the ablation ladder
/// (source-only, class-agnostic baseline, class-aware stage 1, stage-2
/// pseudo-labelling), and evaluate every variant on the target test split.
struct PipelineConfig {
    std::uint64_t seed = 42;
    std::filesystem::path out_dir;
    std::size_t n_train = 64;
    std::size_t n_test = 32;
    std::size_t patch_size = 64;
    TrainConfig train;
    PostprocessConfig post;
    double match_radius = kDefaultMatchRadius;
    std::size_t pseudo_min_pixels = 3;
    bool skip_stage2 = false;
    std::size_t threads = 0;
};

struct PipelineResult {
    std::vector<std::pair<std::string, MetricReport>> rows;  // variant -> target-test metrics
    std::vector<double> learned_weights;                     // omega after class-aware stage 1
    std::string comparison_table;
};

PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace capl
