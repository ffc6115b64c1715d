#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "capl/metrics.hpp"

namespace capl {

struct EvalOptions {
    double radius = kDefaultMatchRadius;
    std::size_t threads = 0;
};

struct EvalRunResult {
    MetricReport aggregate;
    std::vector<std::pair<std::string, MetricReport>> per_image;
    std::vector<std::string> missing_ids;  // ids absent from the prediction dir

    bool ok() const { return missing_ids.empty(); }
};

/// Evaluates <id>_instances.caplt / <id>_classes.caplt pairs from two
/// directories. Ids come from the ground-truth directory's manifest.json
/// when present, otherwise from its *_instances.caplt files.
EvalRunResult evaluate_dirs(const std::filesystem::path& pred_dir,
                            const std::filesystem::path& gt_dir, const EvalOptions& opts = {});

/// Writes per_image/<id>.json, aggregate.json and table.txt under out_dir.
void write_eval_outputs(const std::filesystem::path& out_dir, const EvalRunResult& result);

}  // namespace capl
