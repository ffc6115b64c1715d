#include "capl/eval_runner.hpp"

#include <algorithm>
#include <fstream>

#include "capl/caplt_io.hpp"
#include "capl/dataset.hpp"
#include "capl/threading.hpp"

namespace capl {

namespace {

std::vector<std::string> ids_in_dir(const std::filesystem::path& dir) {
    if (std::filesystem::exists(dir / "manifest.json")) return dataset_ids(dir);
    std::vector<std::string> ids;
    const std::string suffix = "_instances.caplt";
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > suffix.size() && name.ends_with(suffix))
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace

EvalRunResult evaluate_dirs(const std::filesystem::path& pred_dir,
                            const std::filesystem::path& gt_dir, const EvalOptions& opts) {
    EvalRunResult result;
    const auto ids = ids_in_dir(gt_dir);
    for (const auto& id : ids)
        if (!std::filesystem::exists(pred_dir / (id + "_instances.caplt")) ||
            !std::filesystem::exists(pred_dir / (id + "_classes.caplt")))
            result.missing_ids.push_back(id);
    if (!result.ok()) return result;

    std::vector<SampleEval> evals(ids.size());
    parallel_for(ids.size(), opts.threads, [&](std::size_t i) {
        const auto gt_inst = read_caplt_instances(gt_dir / (ids[i] + "_instances.caplt"));
        const auto gt_cls = read_caplt_classes(gt_dir / (ids[i] + "_classes.caplt"));
        const auto pred_inst = read_caplt_instances(pred_dir / (ids[i] + "_instances.caplt"));
        const auto pred_cls = read_caplt_classes(pred_dir / (ids[i] + "_classes.caplt"));
        evals[i] = evaluate_pair(relabel_canonical(gt_inst), gt_cls,
                                 relabel_canonical(pred_inst), pred_cls, opts.radius);
    });

    EvalAccumulator acc;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        acc.add(evals[i]);
        result.per_image.emplace_back(ids[i], evals[i].report);
    }
    result.aggregate = acc.aggregate();
    return result;
}

void write_eval_outputs(const std::filesystem::path& out_dir, const EvalRunResult& result) {
    std::filesystem::create_directories(out_dir / "per_image");
    for (const auto& [id, report] : result.per_image) {
        std::ofstream os(out_dir / "per_image" / (id + ".json"));
        os << report.to_json() << '\n';
    }
    {
        std::ofstream os(out_dir / "aggregate.json");
        os << result.aggregate.to_json() << '\n';
    }
    {
        std::ofstream os(out_dir / "table.txt");
        os << MetricReport::table_header() << '\n'
           << result.aggregate.table_row("corpus") << '\n';
    }
}

}  // namespace capl
